//! Runtime self-check of the loss: gradient against central differences and
//! invariance under a shared feature permutation.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{barlow_twins_loss, bt_loss_gradient, cross_correlation, BtLossConfig};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelfCheck {
    pub instances: usize,
    pub max_gradient_error: f64,
    pub max_permutation_change: f64,
}

impl SelfCheck {
    pub fn passed(&self) -> bool {
        self.max_gradient_error < 1e-4 && self.max_permutation_change < 1e-12
    }
}

/// Relative error between an analytic and a central-difference derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn self_check(seed: u64, instances: usize, cfg: &BtLossConfig) -> Result<SelfCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SelfCheck {
        instances,
        max_gradient_error: 0.0,
        max_permutation_change: 0.0,
    };
    for _ in 0..instances {
        let n = rng.random_range(8..16);
        let d = rng.random_range(2..7);
        let za = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
        let zb = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
        let (loss, da, db) = bt_loss_gradient(&za, &zb, cfg)?;
        let h = 1e-6;
        for (which, grad) in [(0, &da), (1, &db)] {
            for i in 0..n {
                for j in 0..d {
                    let shifted = |delta: f64| -> Result<f64> {
                        let (mut a, mut b) = (za.clone(), zb.clone());
                        if which == 0 {
                            a[(i, j)] += delta;
                        } else {
                            b[(i, j)] += delta;
                        }
                        Ok(bt_loss_gradient(&a, &b, cfg)?.0.loss)
                    };
                    let fd = (shifted(h)? - shifted(-h)?) / (2.0 * h);
                    out.max_gradient_error = out.max_gradient_error.max(relative_error(grad[(i, j)], fd));
                }
            }
        }
        let perm: Vec<usize> = (0..d).rev().collect();
        let c = cross_correlation(&za.select_columns(&perm), &zb.select_columns(&perm), cfg.eps)?;
        let permuted = barlow_twins_loss(&c, cfg)?.loss;
        out.max_permutation_change = out
            .max_permutation_change
            .max((permuted - loss.loss).abs() / loss.loss.abs().max(1.0));
    }
    Ok(out)
}

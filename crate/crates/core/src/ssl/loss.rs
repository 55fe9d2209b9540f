//! Barlow Twins objective over two batches of view embeddings.
//!
//! Each feature column is standardized over the batch before the
//! cross-correlation is formed, so the loss does not depend on the scale or
//! offset of individual features.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{PrlError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BtLossConfig {
    /// Weight of the off-diagonal (redundancy) term.
    pub lambda: f64,
    /// Standard-deviation floor: columns are divided by `sqrt(var + eps^2)`.
    pub eps: f64,
}

impl Default for BtLossConfig {
    fn default() -> Self {
        BtLossConfig { lambda: 0.005, eps: 1e-5 }
    }
}

impl BtLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !(self.eps > 0.0) {
            return Err(PrlError::Validation(format!(
                "lambda and eps must be positive, got {} and {}",
                self.lambda, self.eps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BtLoss {
    pub loss: f64,
    pub invariance: f64,
    /// Unweighted sum of squared off-diagonal entries.
    pub redundancy: f64,
}

/// Batch-standardized columns together with the per-column scale used.
struct Standardized {
    z: DMatrix<f64>,
    scale: Vec<f64>,
}

fn standardize(x: &DMatrix<f64>, eps: f64) -> Standardized {
    let n = x.nrows() as f64;
    let mut z = x.clone();
    let mut scale = Vec::with_capacity(x.ncols());
    for mut col in z.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
        let var = col.norm_squared() / n;
        let s = (var + eps * eps).sqrt();
        col /= s;
        scale.push(s);
    }
    Standardized { z, scale }
}

fn check_pair(za: &DMatrix<f64>, zb: &DMatrix<f64>) -> Result<()> {
    if za.shape() != zb.shape() {
        return Err(PrlError::Dimension(format!(
            "view batches have shapes {:?} and {:?}",
            za.shape(),
            zb.shape()
        )));
    }
    if za.nrows() < 2 {
        return Err(PrlError::Precondition(format!(
            "batch size {} < 2: per-feature variance undefined",
            za.nrows()
        )));
    }
    if za.iter().chain(zb.iter()).any(|v| !v.is_finite()) {
        return Err(PrlError::Validation("non-finite value in view batch".into()));
    }
    Ok(())
}

/// Cross-correlation of the batch-standardized views, `D x D`.
pub fn cross_correlation(za: &DMatrix<f64>, zb: &DMatrix<f64>, eps: f64) -> Result<DMatrix<f64>> {
    check_pair(za, zb)?;
    let a = standardize(za, eps);
    let b = standardize(zb, eps);
    Ok(a.z.transpose() * &b.z / za.nrows() as f64)
}

pub fn barlow_twins_loss(c: &DMatrix<f64>, cfg: &BtLossConfig) -> Result<BtLoss> {
    if !c.is_square() {
        return Err(PrlError::Dimension(format!("cross-correlation must be square, got {:?}", c.shape())));
    }
    let mut invariance = 0.0;
    let mut redundancy = 0.0;
    for j in 0..c.ncols() {
        for i in 0..c.nrows() {
            let v = c[(i, j)];
            if i == j {
                invariance += (1.0 - v) * (1.0 - v);
            } else {
                redundancy += v * v;
            }
        }
    }
    Ok(BtLoss {
        loss: invariance + cfg.lambda * redundancy,
        invariance,
        redundancy,
    })
}

/// Loss and its gradient with respect to the raw (pre-standardization) view
/// batches.
pub fn bt_loss_gradient(
    za: &DMatrix<f64>,
    zb: &DMatrix<f64>,
    cfg: &BtLossConfig,
) -> Result<(BtLoss, DMatrix<f64>, DMatrix<f64>)> {
    check_pair(za, zb)?;
    let n = za.nrows() as f64;
    let a = standardize(za, cfg.eps);
    let b = standardize(zb, cfg.eps);
    let c = a.z.transpose() * &b.z / n;
    let loss = barlow_twins_loss(&c, cfg)?;

    // dL/dC
    let mut g = c.map(|v| 2.0 * cfg.lambda * v);
    for i in 0..g.nrows() {
        g[(i, i)] = -2.0 * (1.0 - c[(i, i)]);
    }
    let d_ahat = &b.z * g.transpose() / n;
    let d_bhat = &a.z * &g / n;
    Ok((loss, standardize_backward(&a, d_ahat), standardize_backward(&b, d_bhat)))
}

/// Backpropagates through column standardization:
/// `dx = (g - mean(g) - x_hat * mean(g * x_hat)) / s`.
fn standardize_backward(fwd: &Standardized, mut g: DMatrix<f64>) -> DMatrix<f64> {
    let n = g.nrows() as f64;
    for (j, mut col) in g.column_iter_mut().enumerate() {
        let xhat = fwd.z.column(j);
        let mean_g = col.sum() / n;
        let mean_gx = col.dot(&xhat) / n;
        for (v, xh) in col.iter_mut().zip(xhat.iter()) {
            *v = (*v - mean_g - xh * mean_gx) / fwd.scale[j];
        }
    }
    g
}


#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
    }

    #[test]
    fn self_and_anti_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = randn(&mut rng, 200, 4);
        let c = cross_correlation(&z, &z, 1e-5).unwrap();
        for i in 0..4 {
            assert!((c[(i, i)] - 1.0).abs() < 1e-6);
        }
        let c = cross_correlation(&z, &(-&z), 1e-5).unwrap();
        for i in 0..4 {
            assert!((c[(i, i)] + 1.0).abs() < 1e-6);
        }
        assert!(c.iter().all(|v| v.abs() <= 1.0 + 1e-6));
    }

    #[test]
    fn hand_computed_four_by_three() {
        // columns: a0 = (1,2,3,4), a1 = (0,0,1,1), a2 = (2,0,2,0); b = a reversed rows
        let a = DMatrix::from_row_slice(4, 3, &[1., 0., 2., 2., 0., 0., 3., 1., 2., 4., 1., 0.]);
        let b = DMatrix::from_row_slice(4, 3, &[4., 1., 0., 3., 1., 2., 2., 0., 0., 1., 0., 2.]);
        let c = cross_correlation(&a, &b, 1e-5).unwrap();
        // standardized a0 = (-3,-1,1,3)/sqrt(5); b0 = -a0 -> C00 = -1
        assert!((c[(0, 0)] + 1.0).abs() < 1e-9);
        // a0 . b1: b1 = (1,1,0,0) std -> (1,1,-1,-1); sum(-3-1-1-3)/(4*sqrt5) = -2/sqrt5
        assert!((c[(0, 1)] + 2.0 / 5f64.sqrt()).abs() < 1e-9);
        // a2 = (1,-1,1,-1) std; b2 = (-1,1,-1,1) -> -1
        assert!((c[(2, 2)] + 1.0).abs() < 1e-9);
        let oracle = oracle::correlation_loops(&rows(&a), &rows(&b), 1e-5);
        for i in 0..3 {
            for j in 0..3 {
                assert!((c[(i, j)] - oracle[i][j]).abs() < 1e-12);
            }
        }
        let cfg = BtLossConfig::default();
        let direct = barlow_twins_loss(&c, &cfg).unwrap().loss;
        assert!((direct - oracle::loss_from_rows(&rows(&a), &rows(&b), &cfg)).abs() < 1e-12);
    }

    #[test]
    fn loss_special_cases() {
        let cfg = BtLossConfig::default();
        assert_eq!(barlow_twins_loss(&DMatrix::identity(5, 5), &cfg).unwrap().loss, 0.0);
        assert_eq!(barlow_twins_loss(&DMatrix::zeros(8, 8), &cfg).unwrap().loss, 8.0);
        assert!(barlow_twins_loss(&DMatrix::zeros(2, 3), &cfg).is_err());
    }

    #[test]
    fn batch_of_one_rejected() {
        let z = DMatrix::zeros(1, 3);
        assert!(matches!(cross_correlation(&z, &z, 1e-5), Err(PrlError::Precondition(_))));
    }

    #[test]
    fn gradient_vanishes_at_minimum() {
        // orthogonal, zero-mean, equal-norm columns: C = I exactly
        let z = DMatrix::from_row_slice(4, 2, &[1., 1., 1., -1., -1., 1., -1., -1.]);
        let cfg = BtLossConfig::default();
        let (loss, ga, gb) = bt_loss_gradient(&z, &z, &cfg).unwrap();
        assert!(loss.loss < 1e-9);
        assert!(ga.norm() < 1e-8 && gb.norm() < 1e-8);
    }

    #[test]
    fn column_scaling_is_invisible() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = BtLossConfig::default();
        let za = randn(&mut rng, 8, 4);
        let zb = randn(&mut rng, 8, 4);
        let base = barlow_twins_loss(&cross_correlation(&za, &zb, cfg.eps).unwrap(), &cfg).unwrap().loss;
        let mut scaled = za.clone();
        scaled.column_mut(2).scale_mut(10.0);
        let l = barlow_twins_loss(&cross_correlation(&scaled, &zb, cfg.eps).unwrap(), &cfg).unwrap().loss;
        assert!((l - base).abs() < 1e-6);
        let (_, ga, _) = bt_loss_gradient(&za, &zb, &cfg).unwrap();
        let directional = ga.column(2).dot(&za.column(2));
        assert!(directional.abs() < 1e-6, "{directional}");
    }
}

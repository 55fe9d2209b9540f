//! Logistic regression by iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector};

use super::design::{check_rank, diverging_features, parameter_map, report, DesignMatrix, FitOptions, ModelFit, Response, INTERCEPT};
use crate::error::{PrlError, Result};

/// Linear predictors beyond this magnitude put fitted probabilities within
/// `1e-13` of 0 or 1, which only happens when the data are separated.
const SEPARATION_ETA: f64 = 30.0;

fn log1pexp(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else if x < -35.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct Problem<'a> {
    z: DMatrix<f64>,
    y: &'a [bool],
    pen: DMatrix<f64>,
}

impl Problem<'_> {
    fn eta(&self, phi: &DVector<f64>) -> DVector<f64> {
        &self.z * phi
    }

    fn ll(&self, phi: &DVector<f64>) -> f64 {
        let eta = self.eta(phi);
        let data: f64 = eta
            .iter()
            .zip(self.y)
            .map(|(&e, &y)| if y { -log1pexp(-e) } else { -log1pexp(e) })
            .sum();
        data - 0.5 * (phi.transpose() * &self.pen * phi)[(0, 0)]
    }

    fn grad_info(&self, phi: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>, f64) {
        let eta = self.eta(phi);
        let n = eta.len();
        let mut resid = DVector::zeros(n);
        let mut wz = self.z.clone();
        for i in 0..n {
            let mu = sigmoid(eta[i]);
            resid[i] = f64::from(u8::from(self.y[i])) - mu;
            let w = mu * (1.0 - mu);
            wz.row_mut(i).scale_mut(w);
        }
        let g = self.z.transpose() * resid - &self.pen * phi;
        let h = self.z.transpose() * wz + &self.pen;
        (g, h, eta.amax())
    }
}

/// Maximum-likelihood (or ridge-penalized) logistic fit with an intercept.
pub fn fit_logistic(d: &DesignMatrix, opts: &FitOptions) -> Result<ModelFit> {
    let Response::Binary(y) = &d.response else {
        return Err(PrlError::Precondition("logistic fit needs a binary response".into()));
    };
    let positives = y.iter().filter(|v| **v).count();
    if positives == 0 || positives == y.len() {
        return Err(PrlError::Precondition("both classes must be present".into()));
    }
    let p = d.p();
    if d.n() <= p + 1 {
        log::warn!("logistic fit with {} rows for {} features", d.n(), p);
    }
    let t = parameter_map(p, 1, d.sum_to_zero && p > 1);
    let mut full = DMatrix::zeros(d.n(), p + 1);
    full.column_mut(0).fill(1.0);
    full.view_mut((0, 1), (d.n(), p)).copy_from(&d.x);
    let z = &full * &t;
    let names = |j: usize| {
        if j == 0 || t.ncols() != t.nrows() {
            format!("parameter {j}")
        } else {
            d.features[j - 1].clone()
        }
    };
    if opts.ridge == 0.0 {
        check_rank(&z, &names)?;
    }
    let mut pen_full = DMatrix::identity(p + 1, p + 1) * opts.ridge;
    pen_full[(0, 0)] = 0.0;
    let pen = t.transpose() * pen_full * &t;
    let prob = Problem { z, y, pen };

    let q = t.ncols();
    let mut phi = DVector::zeros(q);
    let mut ll = prob.ll(&phi);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    let mut plateau = 0;
    let separation = |phi: &DVector<f64>| PrlError::Separation {
        features: diverging_features(d, (&t * phi).as_slice(), 1),
    };
    let (mut g, mut h, mut max_eta) = prob.grad_info(&phi);
    while iterations < opts.max_iter {
        if g.norm() < opts.grad_tol {
            converged = true;
            break;
        }
        let Some(chol) = h.clone().cholesky() else {
            if max_eta > SEPARATION_ETA / 2.0 {
                return Err(separation(&phi));
            }
            return Err(PrlError::Singular("information matrix not positive definite".into()));
        };
        let step = chol.solve(&g);
        let mut scale = 1.0;
        let mut next = &phi + &step;
        let mut ll_next = prob.ll(&next);
        let slack = 1e-12 * (1.0 + ll.abs());
        while !(ll_next >= ll - slack) && scale > 1e-10 {
            scale *= 0.5;
            next = &phi + &step * scale;
            ll_next = prob.ll(&next);
        }
        iterations += 1;
        if !(ll_next >= ll - slack) {
            break;
        }
        let rel = (ll_next - ll).abs() / (ll.abs() + opts.ll_tol);
        phi = next;
        ll = ll_next;
        trace.push(ll);
        (g, h, max_eta) = prob.grad_info(&phi);
        if opts.ridge == 0.0 && max_eta > SEPARATION_ETA {
            return Err(separation(&phi));
        }
        plateau = if rel < opts.ll_tol { plateau + 1 } else { 0 };
        if plateau >= 3 {
            converged = true;
            break;
        }
    }
    if !converged && opts.ridge == 0.0 && max_eta > SEPARATION_ETA / 2.0 {
        return Err(separation(&phi));
    }
    if !converged {
        log::warn!("logistic fit stopped after {iterations} iterations without converging");
    }
    let cov_phi = h
        .cholesky()
        .ok_or_else(|| PrlError::Singular("information matrix not positive definite".into()))?
        .inverse();
    let mut feature_names = vec![INTERCEPT.to_string()];
    feature_names.extend(d.features.iter().cloned());
    Ok(report(
        feature_names,
        &t,
        &phi,
        &cov_phi,
        converged,
        iterations,
        ll,
        g.norm(),
        opts.ridge > 0.0,
        trace,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn design(rows: Vec<Vec<f64>>, y: Vec<bool>, sum_to_zero: bool) -> DesignMatrix {
        let p = rows[0].len();
        DesignMatrix::new(
            (0..rows.len()).map(|i| format!("o{i}")).collect(),
            (0..p).map(|j| format!("f{j}")).collect(),
            &rows,
            Response::Binary(y),
            sum_to_zero,
        )
        .unwrap()
    }

    #[test]
    fn symmetric_data_zero_intercept() {
        let rows: Vec<Vec<f64>> = [-2.0, -1.0, 1.0, 2.0, -2.0, -1.0, 1.0, 2.0].iter().map(|x| vec![*x]).collect();
        let y = vec![false, false, true, true, false, true, false, true];
        let f = fit_logistic(&design(rows, y, false), &FitOptions::default()).unwrap();
        assert!(f.coefficients[0].abs() < 1e-6);
        assert!(f.converged && f.gradient_norm < 1e-8);
        assert!(f.ll_trace.windows(2).all(|w| w[1] >= w[0] - 1e-12 * w[0].abs()));
    }

    #[test]
    fn planted_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let beta = [0.3, 1.5, -2.0];
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..2000 {
            let x = [rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)];
            let eta = beta[0] + beta[1] * x[0] + beta[2] * x[1];
            y.push(rng.random::<f64>() < sigmoid(eta));
            rows.push(x.to_vec());
        }
        let f = fit_logistic(&design(rows, y, false), &FitOptions::default()).unwrap();
        // joint check: Mahalanobis distance against chi-square(3) at 3 sigma
        let b = DVector::from_iterator(3, f.coefficients.iter().zip(&beta).map(|(a, b)| a - b));
        let cov = DMatrix::from_fn(3, 3, |i, j| f.covariance[i][j]);
        let m2 = (b.transpose() * cov.try_inverse().unwrap() * &b)[(0, 0)];
        assert!(m2 < 14.16, "{m2}");
        assert!(f.converged && f.gradient_norm < 1e-8);
    }

    #[test]
    fn constant_feature_is_singular() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0]).collect();
        let y = (0..10).map(|i| i % 3 == 0).collect();
        let e = fit_logistic(&design(rows, y, false), &FitOptions::default()).unwrap_err();
        assert!(matches!(e, PrlError::Singular(_)), "{e}");
    }

    #[test]
    fn separation_detected_and_ridge_rescues() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, ((i * 7) % 5) as f64]).collect();
        let y: Vec<bool> = (0..20).map(|i| i >= 10).collect();
        let d = design(rows, y, false);
        match fit_logistic(&d, &FitOptions::default()) {
            Err(PrlError::Separation { features }) => assert!(features.contains(&"f0".to_string())),
            other => panic!("{other:?}"),
        }
        let f = fit_logistic(&d, &FitOptions { ridge: 1.0, ..Default::default() }).unwrap();
        assert!(f.penalized && f.coefficients[1] > 0.0);
    }

    #[test]
    fn sum_to_zero_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..400 {
            let raw: Vec<f64> = (0..3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let m = raw.iter().sum::<f64>() / 3.0;
            let x: Vec<f64> = raw.iter().map(|v| v - m).collect();
            y.push(rng.random::<f64>() < sigmoid(2.0 * x[0] - 2.0 * x[1]));
            rows.push(x);
        }
        assert!(matches!(
            fit_logistic(&design(rows.clone(), y.clone(), false), &FitOptions::default()),
            Err(PrlError::Singular(_))
        ));
        let f = fit_logistic(&design(rows, y, true), &FitOptions::default()).unwrap();
        let s: f64 = f.coefficients[1..].iter().sum();
        assert!(s.abs() < 1e-10);
        assert!(f.coefficients[1] > 1.0 && f.coefficients[2] < -1.0);
    }
}

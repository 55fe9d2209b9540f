//! Cox proportional hazards with Efron's tie correction.

use nalgebra::{DMatrix, DVector};

use super::design::{check_rank, diverging_features, parameter_map, report, DesignMatrix, FitOptions, ModelFit, Response};
use crate::error::{PrlError, Result};

/// A coefficient this many standard deviations of its feature per unit log
/// hazard only arises when the partial likelihood has no finite maximum.
const MONOTONE_SCALED_BETA: f64 = 20.0;

struct Problem {
    z: DMatrix<f64>,
    /// Row indices grouped by distinct time, latest time first; each group is
    /// `(all rows at that time, rows with an event at that time)`.
    groups: Vec<(Vec<usize>, Vec<usize>)>,
    pen: DMatrix<f64>,
}

impl Problem {
    fn new(z: DMatrix<f64>, surv: &[(f64, bool)], pen: DMatrix<f64>) -> Self {
        let mut order: Vec<usize> = (0..surv.len()).collect();
        order.sort_by(|&a, &b| surv[b].0.total_cmp(&surv[a].0).then(a.cmp(&b)));
        let mut groups: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
        let mut last = f64::NAN;
        for i in order {
            if surv[i].0 != last {
                groups.push((Vec::new(), Vec::new()));
                last = surv[i].0;
            }
            let g = groups.last_mut().expect("pushed above");
            g.0.push(i);
            if surv[i].1 {
                g.1.push(i);
            }
        }
        Problem { z, groups, pen }
    }

    /// Penalized log partial likelihood, its gradient and the information.
    fn eval(&self, phi: &DVector<f64>, derivs: bool) -> (f64, DVector<f64>, DMatrix<f64>) {
        let q = phi.len();
        let eta = &self.z * phi;
        let shift = eta.max();
        let r: Vec<f64> = eta.iter().map(|e| (e - shift).exp()).collect();
        let mut s0 = 0.0;
        let mut s1 = DVector::zeros(q);
        let mut s2 = DMatrix::zeros(q, q);
        let mut ll = 0.0;
        let mut grad = DVector::zeros(q);
        let mut info = DMatrix::zeros(q, q);
        for (rows, events) in &self.groups {
            for &i in rows {
                let zi = self.z.row(i).transpose();
                s0 += r[i];
                if derivs {
                    s1.axpy(r[i], &zi, 1.0);
                    s2.ger(r[i], &zi, &zi, 1.0);
                }
            }
            let d = events.len();
            if d == 0 {
                continue;
            }
            let mut d0 = 0.0;
            let mut d1 = DVector::zeros(q);
            let mut d2 = DMatrix::zeros(q, q);
            for &i in events {
                let zi = self.z.row(i).transpose();
                ll += eta[i] - shift;
                d0 += r[i];
                if derivs {
                    grad += &zi;
                    d1.axpy(r[i], &zi, 1.0);
                    d2.ger(r[i], &zi, &zi, 1.0);
                }
            }
            for l in 0..d {
                let f = l as f64 / d as f64;
                let den = s0 - f * d0;
                ll -= den.ln();
                if derivs {
                    let a = (&s1 - &d1 * f) / den;
                    grad -= &a;
                    info += (&s2 - &d2 * f) / den - &a * a.transpose();
                }
            }
        }
        ll -= 0.5 * (phi.transpose() * &self.pen * phi)[(0, 0)];
        if derivs {
            grad -= &self.pen * phi;
            info += &self.pen;
        }
        (ll, grad, info)
    }
}

/// Newton maximization of the Efron partial likelihood. No intercept.
pub fn fit_cox(d: &DesignMatrix, opts: &FitOptions) -> Result<ModelFit> {
    let Response::Survival(surv) = &d.response else {
        return Err(PrlError::Precondition("cox fit needs a survival response".into()));
    };
    if !surv.iter().any(|s| s.1) {
        return Err(PrlError::NoEvents("every observation is censored".into()));
    }
    let p = d.p();
    let t = parameter_map(p, 0, d.sum_to_zero && p > 1);
    let z = &d.x * &t;
    if opts.ridge == 0.0 {
        let names = |j: usize| {
            if t.ncols() == p {
                d.features[j].clone()
            } else {
                format!("parameter {j}")
            }
        };
        check_rank(&z, &names)?;
    }
    let pen = t.transpose() * &t * opts.ridge;
    let prob = Problem::new(z, surv, pen);
    let sd = d.column_sd();
    let runaway = |phi: &DVector<f64>| {
        let beta = &t * phi;
        beta.iter().zip(&sd).any(|(b, s)| (b * s).abs() > MONOTONE_SCALED_BETA)
    };
    let monotone = |phi: &DVector<f64>| PrlError::MonotoneLikelihood {
        features: diverging_features(d, (&t * phi).as_slice(), 0),
    };

    let q = t.ncols();
    let mut phi = DVector::zeros(q);
    let (mut ll, mut g, mut h) = prob.eval(&phi, true);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    let mut plateau = 0;
    while iterations < opts.max_iter {
        if g.norm() < opts.grad_tol {
            converged = true;
            break;
        }
        let Some(chol) = h.clone().cholesky() else {
            if opts.ridge == 0.0 && iterations > 0 {
                return Err(monotone(&phi));
            }
            return Err(PrlError::Singular("information matrix not positive definite".into()));
        };
        let step = chol.solve(&g);
        let mut scale = 1.0;
        let mut next = &phi + &step;
        let mut ll_next = prob.eval(&next, false).0;
        let slack = 1e-12 * (1.0 + ll.abs());
        while !(ll_next >= ll - slack) && scale > 1e-10 {
            scale *= 0.5;
            next = &phi + &step * scale;
            ll_next = prob.eval(&next, false).0;
        }
        iterations += 1;
        if !(ll_next >= ll - slack) {
            break;
        }
        let rel = (ll_next - ll).abs() / (ll.abs() + opts.ll_tol);
        phi = next;
        (ll, g, h) = prob.eval(&phi, true);
        trace.push(ll);
        if opts.ridge == 0.0 && runaway(&phi) {
            return Err(monotone(&phi));
        }
        plateau = if rel < opts.ll_tol { plateau + 1 } else { 0 };
        if plateau >= 3 {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("cox fit stopped after {iterations} iterations without converging");
    }
    let cov_phi = h
        .cholesky()
        .ok_or_else(|| PrlError::Singular("information matrix not positive definite".into()))?
        .inverse();
    let fit = report(
        d.features.clone(),
        &t,
        &phi,
        &cov_phi,
        converged,
        iterations,
        ll,
        g.norm(),
        opts.ridge > 0.0,
        trace,
    );
    // a large coefficient whose information has collapsed is the signature of
    // a likelihood that keeps rising towards infinity
    let flat = fit
        .coefficients
        .iter()
        .zip(&fit.std_errors)
        .zip(&sd)
        .any(|((b, se), s)| (b * s).abs() > 5.0 && se * s > 100.0);
    if opts.ridge == 0.0 && flat {
        return Err(monotone(&phi));
    }
    Ok(fit)
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Efron partial likelihood evaluated term by term from the definition.
    pub fn efron_loglik(x: &[Vec<f64>], surv: &[(f64, bool)], beta: &[f64]) -> f64 {
        let eta: Vec<f64> = x.iter().map(|r| r.iter().zip(beta).map(|(a, b)| a * b).sum()).collect();
        let mut times: Vec<f64> = surv.iter().filter(|s| s.1).map(|s| s.0).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        let mut ll = 0.0;
        for t in times {
            let dset: Vec<usize> = (0..surv.len()).filter(|&i| surv[i].1 && surv[i].0 == t).collect();
            let risk: f64 = (0..surv.len()).filter(|&i| surv[i].0 >= t).map(|i| eta[i].exp()).sum();
            let dsum: f64 = dset.iter().map(|&i| eta[i].exp()).sum();
            let d = dset.len() as f64;
            for &i in &dset {
                ll += eta[i];
            }
            for l in 0..dset.len() {
                ll -= (risk - l as f64 / d * dsum).ln();
            }
        }
        ll
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Exp, StandardNormal};

    fn design(rows: &[Vec<f64>], surv: Vec<(f64, bool)>) -> DesignMatrix {
        DesignMatrix::new(
            (0..rows.len()).map(|i| format!("o{i}")).collect(),
            (0..rows[0].len()).map(|j| format!("f{j}")).collect(),
            rows,
            Response::Survival(surv),
            false,
        )
        .unwrap()
    }

    #[test]
    fn likelihood_matches_definition_with_ties() {
        let rows = vec![vec![0.5, 1.0], vec![-1.0, 0.2], vec![0.3, -0.7], vec![1.2, 0.0], vec![-0.4, 0.9]];
        let surv = vec![(2.0, true), (2.0, true), (3.0, false), (1.0, true), (2.0, false)];
        let d = design(&rows, surv.clone());
        let t = parameter_map(2, 0, false);
        let prob = Problem::new(&d.x * &t, &surv, DMatrix::zeros(2, 2));
        let beta = [0.4, -0.3];
        let ll = prob.eval(&DVector::from_column_slice(&beta), false).0;
        assert!((ll - oracle::efron_loglik(&rows, &surv, &beta)).abs() < 1e-12);
        // analytic gradient against central differences
        let (_, g, _) = prob.eval(&DVector::from_column_slice(&beta), true);
        for j in 0..2 {
            let mut b = beta;
            b[j] += 1e-6;
            let up = oracle::efron_loglik(&rows, &surv, &b);
            b[j] -= 2e-6;
            let dn = oracle::efron_loglik(&rows, &surv, &b);
            assert!((g[j] - (up - dn) / 2e-6).abs() < 1e-6);
        }
    }

    #[test]
    fn ordered_groups_are_monotone() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![f64::from(u8::from(i < 5))]).collect();
        let surv = (0..10).map(|i| ((i + 1) as f64, true)).collect();
        let d = design(&rows, surv);
        assert!(matches!(fit_cox(&d, &FitOptions::default()), Err(PrlError::MonotoneLikelihood { .. })));
        let f = fit_cox(&d, &FitOptions { ridge: 0.1, ..Default::default() }).unwrap();
        assert!(f.coefficients[0] > 0.0);
    }

    #[test]
    fn all_censored_errors() {
        let rows = vec![vec![1.0], vec![0.0]];
        let d = design(&rows, vec![(1.0, false), (2.0, false)]);
        assert!(matches!(fit_cox(&d, &FitOptions::default()), Err(PrlError::NoEvents(_))));
    }

    fn simulate(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<(f64, bool)>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut surv = Vec::new();
        for _ in 0..n {
            let x: f64 = rng.sample(StandardNormal);
            let t = rng.sample(Exp::new(x.exp()).unwrap());
            // censoring rate near 30%
            let c = rng.sample(Exp::new(0.43).unwrap());
            rows.push(vec![x]);
            surv.push((t.min(c), t <= c));
        }
        (rows, surv)
    }

    #[test]
    fn exponential_recovery() {
        let (rows, surv) = simulate(1000, 3);
        let cens = surv.iter().filter(|s| !s.1).count() as f64 / 1000.0;
        assert!((cens - 0.3).abs() < 0.06, "{cens}");
        let f = fit_cox(&design(&rows, surv), &FitOptions::default()).unwrap();
        assert!((f.coefficients[0] - 1.0).abs() < 3.0 * f.std_errors[0]);
        assert!(f.converged && f.gradient_norm < 1e-8, "{} {} {}", f.converged, f.gradient_norm, f.iterations);
    }

    #[test]
    fn shift_invariance() {
        let (rows, surv) = simulate(200, 4);
        let shifted: Vec<Vec<f64>> = rows.iter().map(|r| vec![r[0] + 3.5]).collect();
        let a = fit_cox(&design(&rows, surv.clone()), &FitOptions::default()).unwrap();
        let b = fit_cox(&design(&shifted, surv), &FitOptions::default()).unwrap();
        assert!((a.coefficients[0] - b.coefficients[0]).abs() < 1e-8);
    }
}

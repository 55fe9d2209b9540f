//! Design matrices, fit options and the shared fit report.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::special::wald_p;
use crate::error::{PrlError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Binary(Vec<bool>),
    /// `(time, event)` per row.
    Survival(Vec<(f64, bool)>),
}

impl Response {
    pub fn len(&self) -> usize {
        match self {
            Response::Binary(v) => v.len(),
            Response::Survival(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub owners: Vec<String>,
    pub features: Vec<String>,
    /// `n x p`, one row per owner.
    pub x: DMatrix<f64>,
    pub response: Response,
    /// Rows of `x` sum to zero (CLR features). The coefficient vector is then
    /// only identified up to a multiple of the ones vector, and is fitted in
    /// the sum-to-zero subspace.
    pub sum_to_zero: bool,
}

impl DesignMatrix {
    pub fn new(
        owners: Vec<String>,
        features: Vec<String>,
        rows: &[Vec<f64>],
        response: Response,
        sum_to_zero: bool,
    ) -> Result<Self> {
        let n = rows.len();
        let p = features.len();
        if owners.len() != n || response.len() != n {
            return Err(PrlError::Dimension(format!(
                "{n} rows, {} owners, {} responses",
                owners.len(),
                response.len()
            )));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != p) {
            return Err(PrlError::Dimension(format!("row of width {} for {p} features", r.len())));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(PrlError::Validation("design matrix has non-finite entries".into()));
        }
        if let Response::Survival(s) = &response {
            if s.iter().any(|(t, _)| !(*t > 0.0) || !t.is_finite()) {
                return Err(PrlError::Validation("survival times must be positive and finite".into()));
            }
        }
        let x = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
        Ok(DesignMatrix {
            owners,
            features,
            x,
            response,
            sum_to_zero,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Column standard deviations, used to judge coefficient divergence.
    pub(crate) fn column_sd(&self) -> Vec<f64> {
        let n = self.n() as f64;
        (0..self.p())
            .map(|j| {
                let c = self.x.column(j);
                let m = c.sum() / n;
                (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// L2 penalty on feature coefficients; 0 fits plain maximum likelihood.
    pub ridge: f64,
    pub max_iter: usize,
    pub ll_tol: f64,
    pub grad_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            ridge: 0.0,
            max_iter: 100,
            ll_tol: 1e-10,
            grad_tol: 1e-8,
        }
    }
}

pub const INTERCEPT: &str = "(intercept)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    /// Names aligned with the coefficient vectors; logistic fits lead with
    /// the intercept.
    pub features: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub p_values: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
    pub gradient_norm: f64,
    pub penalized: bool,
    /// Log-likelihood after each accepted step, starting at the origin.
    pub ll_trace: Vec<f64>,
}

impl ModelFit {
    pub fn coefficient(&self, feature: &str) -> Option<f64> {
        self.features.iter().position(|f| f == feature).map(|i| self.coefficients[i])
    }

    /// Entries excluding a leading intercept.
    pub fn feature_range(&self) -> std::ops::Range<usize> {
        let start = usize::from(self.features.first().map(String::as_str) == Some(INTERCEPT));
        start..self.features.len()
    }

    /// Linear predictor `x . beta` for feature rows (intercept included when
    /// the fit has one).
    pub fn linear_predictor(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        let r = self.feature_range();
        let b0 = if r.start == 1 { self.coefficients[0] } else { 0.0 };
        rows.iter()
            .map(|x| b0 + x.iter().zip(&self.coefficients[r.clone()]).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }
}

/// Orthonormal Helmert basis of the subspace orthogonal to the ones vector in
/// `R^p`, as a `p x (p-1)` matrix.
pub fn helmert_basis(p: usize) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(p, p.saturating_sub(1));
    for k in 1..p {
        let s = ((k * (k + 1)) as f64).sqrt();
        for i in 0..k {
            b[(i, k - 1)] = 1.0 / s;
        }
        b[(k, k - 1)] = -(k as f64) / s;
    }
    b
}

/// Map from fitted parameters to reported coefficients. `lead` unpenalized
/// leading columns (the intercept) pass through unchanged.
pub(crate) fn parameter_map(p: usize, lead: usize, sum_to_zero: bool) -> DMatrix<f64> {
    if !sum_to_zero {
        return DMatrix::identity(p + lead, p + lead);
    }
    let b = helmert_basis(p);
    let mut t = DMatrix::zeros(p + lead, p - 1 + lead);
    for i in 0..lead {
        t[(i, i)] = 1.0;
    }
    t.view_mut((lead, lead), (p, p - 1)).copy_from(&b);
    t
}

/// Rejects designs whose columns are linearly dependent (after the
/// sum-to-zero reduction when requested).
pub(crate) fn check_rank(z: &DMatrix<f64>, names: &dyn Fn(usize) -> String) -> Result<()> {
    if z.ncols() == 0 {
        return Ok(());
    }
    if z.nrows() < z.ncols() {
        return Err(PrlError::Singular(format!(
            "{} rows cannot identify {} parameters",
            z.nrows(),
            z.ncols()
        )));
    }
    let svd = z.clone().svd(false, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-10 * z.nrows().max(z.ncols()) as f64;
    let (imin, smin) = svd.singular_values.argmin();
    if smax == 0.0 || smin <= tol {
        let v_t = svd.v_t.expect("requested");
        let null = v_t.row(imin);
        let involved: Vec<String> = (0..z.ncols()).filter(|&j| null[j].abs() > 1e-6).map(names).collect();
        return Err(PrlError::Singular(format!("collinear columns: {}", involved.join(", "))));
    }
    Ok(())
}

/// Assembles the report from parameters fitted in the reduced space.
#[allow(clippy::too_many_arguments)]
pub(crate) fn report(
    names: Vec<String>,
    t: &DMatrix<f64>,
    phi: &DVector<f64>,
    cov_phi: &DMatrix<f64>,
    converged: bool,
    iterations: usize,
    ll: f64,
    gradient_norm: f64,
    penalized: bool,
    ll_trace: Vec<f64>,
) -> ModelFit {
    let beta = t * phi;
    let cov = t * cov_phi * t.transpose();
    let se: Vec<f64> = (0..beta.len()).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
    let p_values = beta.iter().zip(&se).map(|(b, s)| wald_p(b / s)).collect();
    ModelFit {
        features: names,
        coefficients: beta.iter().copied().collect(),
        std_errors: se,
        p_values,
        covariance: (0..cov.nrows()).map(|i| cov.row(i).iter().copied().collect()).collect(),
        converged,
        iterations,
        log_likelihood: ll,
        gradient_norm,
        penalized,
        ll_trace,
    }
}

/// Features whose standardized coefficient has run away.
pub(crate) fn diverging_features(d: &DesignMatrix, beta: &[f64], lead: usize) -> Vec<String> {
    let sd = d.column_sd();
    let scaled: Vec<f64> = beta[lead..].iter().zip(&sd).map(|(b, s)| (b * s).abs()).collect();
    let max = scaled.iter().cloned().fold(0.0, f64::max);
    let mut out: Vec<String> = scaled
        .iter()
        .enumerate()
        .filter(|(_, v)| **v >= 0.25 * max && **v > 0.0)
        .map(|(j, _)| d.features[j].clone())
        .collect();
    if out.is_empty() {
        out = d.features.clone();
    }
    out
}

//! Pooling results across folds.

use serde::{Deserialize, Serialize};

use super::design::ModelFit;
use super::special::chi2_even_sf;
use crate::error::{PrlError, Result};

pub const P_FLOOR: f64 = 1e-300;
pub const SIGNIFICANCE: f64 = 0.05;

/// Fisher's method: `-2 sum ln p` against chi-square with `2k` degrees of
/// freedom. Zero p-values are clamped to [`P_FLOOR`].
pub fn fisher_combine(p_values: &[f64]) -> Result<(f64, f64)> {
    if p_values.is_empty() {
        return Err(PrlError::Precondition("no p-values to combine".into()));
    }
    let mut chi2 = 0.0;
    for &p in p_values {
        if !(0.0..=1.0).contains(&p) {
            return Err(PrlError::Validation(format!("p-value {p} outside [0, 1]")));
        }
        if p < P_FLOOR {
            log::warn!("p-value {p} clamped to {P_FLOOR}");
        }
        chi2 -= 2.0 * p.max(P_FLOOR).ln();
    }
    Ok((chi2, chi2_even_sf(chi2, p_values.len())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedCoefficient {
    pub feature: String,
    pub coefficient: f64,
    /// Mean of the per-fold standard errors, for display.
    pub std_error: f64,
    pub p_value: f64,
    pub significant: bool,
}

/// Mean coefficient and Fisher-combined p-value per feature.
pub fn average_coefficients(fits: &[ModelFit]) -> Result<Vec<CombinedCoefficient>> {
    let first = fits
        .first()
        .ok_or_else(|| PrlError::Precondition("no fits to average".into()))?;
    if let Some(f) = fits.iter().find(|f| f.features != first.features) {
        return Err(PrlError::Validation(format!(
            "feature sets differ: {:?} vs {:?}",
            first.features, f.features
        )));
    }
    let k = fits.len() as f64;
    (0..first.features.len())
        .map(|j| {
            let ps: Vec<f64> = fits.iter().map(|f| f.p_values[j]).collect();
            let (_, p) = fisher_combine(&ps)?;
            Ok(CombinedCoefficient {
                feature: first.features[j].clone(),
                coefficient: fits.iter().map(|f| f.coefficients[j]).sum::<f64>() / k,
                std_error: fits.iter().map(|f| f.std_errors[j]).sum::<f64>() / k,
                p_value: p,
                significant: p < SIGNIFICANCE,
            })
        })
        .collect()
}

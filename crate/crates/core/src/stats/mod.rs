//! Downstream models over composition features and their evaluation.

mod combine;
mod cox;
mod design;
mod logistic;
mod roc;
pub mod special;
mod survival;

pub use combine::{average_coefficients, fisher_combine, CombinedCoefficient, P_FLOOR, SIGNIFICANCE};
pub use cox::fit_cox;
pub use design::{helmert_basis, DesignMatrix, FitOptions, ModelFit, Response, INTERCEPT};
pub use logistic::fit_logistic;
pub use roc::{roc_auc, trapezoid_area, Roc};
pub use survival::{
    apply_threshold, concordance_index, kaplan_meier, logrank_test, median, split_risk_groups, KmCurve, KmStep,
    LogrankResult, RiskGroup, RiskGroups,
};

//! End-to-end evaluation protocols, synthetic cohorts and reports.

pub mod characterize;
pub mod classify;
pub mod config;
pub mod data;
pub mod folds;
pub mod report;
pub mod run;
pub mod survival;
pub mod synth;

pub use characterize::{run_characterization, CharacterizationRun};
pub use classify::{run_classification, ClassFoldMetrics, ClassificationRun};
pub use config::RunConfig;
pub use data::Cohort;
pub use folds::{audit_fold_plan, make_folds, split_fractions, Fold, FoldConstraint, FoldPlan, Split};
pub use report::{emit_reports, read_summary, RunKind, RunSummary};
pub use run::{read_locked, LockedClusterConfig};
pub use survival::{run_survival, SurvFoldMetrics, SurvivalRun};
pub use synth::{generate_synthetic_cohort, write_synthetic_cohort, GroundTruth, SyntheticCohort, SyntheticCohortSpec};

//! Statistical characterization of clusters against external annotations.

mod characterize;
mod tests_stats;

pub use characterize::{cluster_characterize, write_characterization, Characterization, CharacterizeOptions, TileAnnotation};
pub use tests_stats::{
    average_ranks, hypergeom_fold, hypergeom_pmf, ks_critical_value, ks_two_sample_signed, spearman, FoldResult,
    Sidedness, SignedKsResult, SpearmanResult,
};

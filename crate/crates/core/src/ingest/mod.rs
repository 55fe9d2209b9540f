//! Loading, validation and persistence of cohort inputs and pipeline artifacts.

pub mod annotations;
pub mod artifact;
pub mod embedding;
pub mod manifest;
pub mod survival;
pub mod tiles;
pub mod tsv;

use std::collections::{HashMap, HashSet};

pub use annotations::{CellCounts, ExternalAnnotations, GrowthPattern, CELL_TYPES};
pub use artifact::{load_artifact, persist_artifact, Artifact};
pub use embedding::{load_embeddings, write_embeddings, EmbeddingMatrix};
pub use manifest::{load_manifest, load_manifest_with_labels, CohortManifest, SlideEntry};
pub use survival::{load_survival, Endpoint, SurvivalRecord, SurvivalTable};
pub use tiles::{load_tiles, write_tiles, TileRecord};

use crate::error::{PrlError, Result};

/// Resolves each embedding row to its slide index in `manifest`.
///
/// Fails unless every embedded tile belongs to exactly one known slide.
pub fn resolve_tile_slides(
    embeddings: &EmbeddingMatrix,
    tiles: &[TileRecord],
    manifest: &CohortManifest,
) -> Result<Vec<usize>> {
    let slide_idx = manifest.slide_index();
    let tile_slide: HashMap<&str, &str> = tiles.iter().map(|t| (t.tile_id.as_str(), t.slide_id.as_str())).collect();
    let mut seen = HashSet::new();
    embeddings
        .tile_ids()
        .iter()
        .map(|id| {
            if !seen.insert(id.as_str()) {
                return Err(PrlError::Referential(format!("tile '{id}' embedded twice")));
            }
            let slide = tile_slide
                .get(id.as_str())
                .ok_or_else(|| PrlError::Referential(format!("embedded tile '{id}' has no tile record")))?;
            slide_idx
                .get(slide)
                .copied()
                .ok_or_else(|| PrlError::Referential(format!("tile '{id}' references unknown slide '{slide}'")))
        })
        .collect()
}

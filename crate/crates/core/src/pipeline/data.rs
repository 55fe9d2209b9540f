//! Loading a cohort and mapping its tiles to slides and patients.

use std::collections::HashMap;

use super::config::{require, CohortPaths};
use crate::error::{PrlError, Result, ResultExt};
use crate::ingest::{
    load_embeddings, load_manifest, load_survival, load_tiles, resolve_tile_slides, CohortManifest, EmbeddingMatrix,
    SurvivalTable,
};

#[derive(Debug, Clone)]
pub struct Cohort {
    pub manifest: CohortManifest,
    pub embeddings: EmbeddingMatrix,
    /// Slide index (into `manifest.slides`) per embedding row.
    pub tile_slide: Vec<usize>,
    /// Tissue fraction per embedding row.
    pub tissue: Vec<f64>,
    pub survival: Option<SurvivalTable>,
}

impl Cohort {
    pub fn load(paths: &CohortPaths) -> Result<Self> {
        let manifest = load_manifest(require(&paths.manifest, "manifest")?)?;
        let tiles = load_tiles(require(&paths.tiles, "tiles")?)?;
        let embeddings = load_embeddings(require(&paths.embeddings, "embeddings")?)?;
        let survival = match &paths.survival {
            Some(p) => {
                let s = load_survival(p)?;
                s.validate()?;
                Some(s)
            }
            None => None,
        };
        let tile_slide = resolve_tile_slides(&embeddings, &tiles, &manifest)
            .context(|| format!("cohort '{}'", manifest.cohort_id))?;
        let tissue_of: HashMap<&str, f64> = tiles.iter().map(|t| (t.tile_id.as_str(), t.tissue_fraction)).collect();
        let tissue = embeddings.tile_ids().iter().map(|id| tissue_of[id.as_str()]).collect();
        Ok(Cohort {
            manifest,
            embeddings,
            tile_slide,
            tissue,
            survival,
        })
    }

    pub fn slide_of(&self, row: usize) -> &str {
        &self.manifest.slides[self.tile_slide[row]].slide_id
    }

    pub fn patient_of(&self, row: usize) -> &str {
        &self.manifest.slides[self.tile_slide[row]].patient_id
    }

    pub fn survival(&self) -> Result<&SurvivalTable> {
        self.survival
            .as_ref()
            .ok_or_else(|| PrlError::MissingArtifact(format!("no survival table for cohort '{}'", self.manifest.cohort_id)))
    }
}

//! Characterization of the locked clusters against external annotations.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::config::RunConfig;
use super::data::Cohort;
use super::run::{label_cohort, owner_compositions, read_locked, LockedClusterConfig};
use crate::composition::Grouping;
use crate::enrichment::{cluster_characterize, write_characterization, Characterization, TileAnnotation};
use crate::error::Result;
use crate::ingest::annotations::{load_cell_counts, load_growth_patterns, load_signatures};
use crate::ingest::tsv::{fmt_f64, TsvWriter};

#[derive(Debug, Clone)]
pub struct CharacterizationRun {
    pub locked: LockedClusterConfig,
    pub characterization: Characterization,
    /// Dominant slide label and its tile share per cluster; `None` for
    /// clusters that received no tiles.
    pub purity: Vec<Option<(String, f64)>>,
}

pub fn run_characterization(cfg: &RunConfig, locked_dir: &Path, out: &Path) -> Result<CharacterizationRun> {
    let (locked, model) = read_locked(locked_dir)?;
    let cohort = Cohort::load(&cfg.data.primary)?;
    let labels = label_cohort(&model, &cohort, &[])?;
    let patients: BTreeSet<String> = cohort.manifest.patients().into_iter().map(str::to_string).collect();
    let comps = owner_compositions(&cohort, &labels, &model, Grouping::Patient, &patients)?;

    let cell_counts = cfg.data.cell_counts.as_deref().map(load_cell_counts).transpose()?.unwrap_or_default();
    let patterns = cfg.data.growth_patterns.as_deref().map(load_growth_patterns).transpose()?.unwrap_or_default();
    let (signature_names, signatures) = match cfg.data.signatures.as_deref() {
        Some(p) => load_signatures(p)?,
        None => (Vec::new(), BTreeMap::new()),
    };

    let mut tiles = Vec::new();
    let mut purity_counts: Vec<BTreeMap<&str, usize>> = vec![BTreeMap::new(); model.n_clusters];
    for (r, &l) in labels.iter().enumerate() {
        if model.is_artifact(l) {
            continue;
        }
        let id = cohort.embeddings.tile_ids()[r].as_str();
        tiles.push(TileAnnotation {
            cluster: l,
            cell_counts: cell_counts.get(id),
            pattern: patterns.get(id).copied(),
        });
        let slide = &cohort.manifest.slides[cohort.tile_slide[r]];
        if let Some(label) = slide.label.as_deref() {
            *purity_counts[l as usize].entry(label).or_insert(0) += 1;
        }
    }
    let characterization = cluster_characterize(
        model.n_clusters,
        &comps,
        &tiles,
        &signature_names,
        &signatures,
        &cfg.enrichment.options(),
    )?;
    write_characterization(&characterization, &out.join("characterization.tsv"))?;

    let purity: Vec<Option<(String, f64)>> = purity_counts
        .iter()
        .map(|m| {
            let total: usize = m.values().sum();
            m.iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(l, n)| (l.to_string(), *n as f64 / total as f64))
        })
        .collect();
    let mut w = TsvWriter::new(&["cluster", "tiles", "dominant_label", "purity"]);
    for (c, p) in purity.iter().enumerate() {
        let n: usize = purity_counts[c].values().sum();
        match p {
            Some((l, v)) => w.row(&[c.to_string(), n.to_string(), l.clone(), fmt_f64(*v)]),
            None => w.row(&[c.to_string(), n.to_string(), "NA".to_string(), "NA".to_string()]),
        }
    }
    w.write(&out.join("purity.tsv"))?;
    Ok(CharacterizationRun {
        locked,
        characterization,
        purity,
    })
}

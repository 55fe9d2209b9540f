//! Per-cluster characterization matrix.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tests_stats::{hypergeom_fold, ks_two_sample_signed, spearman, FoldResult, Sidedness, SignedKsResult, SpearmanResult};
use crate::composition::CompositionVector;
use crate::error::{PrlError, Result};
use crate::ingest::tsv::{fmt_f64, TsvWriter};
use crate::ingest::{CellCounts, GrowthPattern, CELL_TYPES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharacterizeOptions {
    pub alpha: f64,
    /// Minimum fraction of tiles or patients an annotation must cover.
    pub min_coverage: f64,
    /// Leave a cluster's own tiles out of the K-S reference population.
    pub exclude_own: bool,
    pub sided: Sidedness,
}

impl Default for CharacterizeOptions {
    fn default() -> Self {
        CharacterizeOptions {
            alpha: 0.01,
            min_coverage: 0.5,
            exclude_own: false,
            sided: Sidedness::TwoSided,
        }
    }
}

/// What is known about one clustered tile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TileAnnotation<'a> {
    pub cluster: u32,
    pub cell_counts: Option<&'a CellCounts>,
    pub pattern: Option<GrowthPattern>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Characterization {
    pub n_clusters: usize,
    pub signature_names: Vec<String>,
    /// `[cluster][signature]`; `None` when the correlation is undefined.
    pub spearman: Vec<Vec<Option<SpearmanResult>>>,
    /// `[cluster][cell type]`; `None` when no counts are available.
    pub ks: Vec<Vec<Option<SignedKsResult>>>,
    /// `[cluster][growth pattern]`; `None` when no patterns are available.
    pub folds: Vec<Vec<Option<FoldResult>>>,
}

fn check_coverage(what: &str, covered: usize, total: usize, min: f64) -> Result<()> {
    if covered > 0 && total > 0 && (covered as f64 / total as f64) < min {
        return Err(PrlError::Validation(format!(
            "{what} cover {covered} of {total}, below the required fraction {min}"
        )));
    }
    Ok(())
}

pub fn cluster_characterize(
    n_clusters: usize,
    patient_compositions: &[CompositionVector],
    tiles: &[TileAnnotation],
    signature_names: &[String],
    signatures: &BTreeMap<String, Vec<f64>>,
    opts: &CharacterizeOptions,
) -> Result<Characterization> {
    if let Some(t) = tiles.iter().find(|t| t.cluster as usize >= n_clusters) {
        return Err(PrlError::Validation(format!("tile cluster {} outside 0..{n_clusters}", t.cluster)));
    }
    let with_sig = patient_compositions
        .iter()
        .filter(|c| signatures.contains_key(&c.owner_id))
        .count();
    if !signature_names.is_empty() {
        check_coverage("signatures", with_sig, patient_compositions.len(), opts.min_coverage)?;
    }
    let counted = tiles.iter().filter(|t| t.cell_counts.is_some()).count();
    check_coverage("cell counts", counted, tiles.len(), opts.min_coverage)?;
    let patterned = tiles.iter().filter(|t| t.pattern.is_some()).count();
    check_coverage("growth patterns", patterned, tiles.len(), opts.min_coverage)?;

    let spearman_rows = (0..n_clusters)
        .map(|c| {
            (0..signature_names.len())
                .map(|s| {
                    let (xs, ys): (Vec<f64>, Vec<f64>) = patient_compositions
                        .iter()
                        .filter_map(|comp| {
                            let v = signatures.get(&comp.owner_id)?[s];
                            (!v.is_nan()).then_some((comp.w[c], v))
                        })
                        .unzip();
                    spearman(&xs, &ys, opts.alpha).ok()
                })
                .collect()
        })
        .collect();

    let ks = (0..n_clusters)
        .map(|c| {
            (0..CELL_TYPES.len())
                .map(|ct| {
                    let mut inside = Vec::new();
                    let mut population = Vec::new();
                    for t in tiles {
                        let Some(cc) = t.cell_counts else { continue };
                        let v = f64::from(cc.get(ct));
                        let own = t.cluster as usize == c;
                        if own {
                            inside.push(v);
                        }
                        if !(own && opts.exclude_own) {
                            population.push(v);
                        }
                    }
                    ks_two_sample_signed(&inside, &population, opts.alpha).ok()
                })
                .collect()
        })
        .collect();

    let big_n = patterned as u64;
    let mut pattern_totals = [0u64; GrowthPattern::ALL.len()];
    let mut cluster_pattern = vec![[0u64; GrowthPattern::ALL.len()]; n_clusters];
    let mut cluster_annotated = vec![0u64; n_clusters];
    for t in tiles {
        if let Some(p) = t.pattern {
            let pi = GrowthPattern::ALL.iter().position(|q| *q == p).expect("listed");
            pattern_totals[pi] += 1;
            cluster_pattern[t.cluster as usize][pi] += 1;
            cluster_annotated[t.cluster as usize] += 1;
        }
    }
    let folds = (0..n_clusters)
        .map(|c| {
            (0..GrowthPattern::ALL.len())
                .map(|pi| {
                    if big_n == 0 {
                        return Ok(None);
                    }
                    hypergeom_fold(
                        cluster_pattern[c][pi],
                        cluster_annotated[c],
                        pattern_totals[pi],
                        big_n,
                        opts.alpha,
                        opts.sided,
                    )
                    .map(Some)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Characterization {
        n_clusters,
        signature_names: signature_names.to_vec(),
        spearman: spearman_rows,
        ks,
        folds,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), fmt_f64)
}

fn flag(v: Option<bool>) -> String {
    v.map_or_else(|| "NA".to_string(), |b| u8::from(b).to_string())
}

/// Matrix TSV: one row per cluster, value/p-value/flag column triples.
pub fn write_characterization(c: &Characterization, path: &Path) -> Result<()> {
    let mut header = vec!["cluster".to_string()];
    for s in &c.signature_names {
        header.extend([format!("rho:{s}"), format!("p:rho:{s}"), format!("sig:rho:{s}")]);
    }
    for ct in CELL_TYPES {
        header.extend([format!("ks:{ct}"), format!("sig:ks:{ct}")]);
    }
    for p in GrowthPattern::ALL {
        let p = p.as_str();
        header.extend([format!("fold:{p}"), format!("p:fold:{p}"), format!("sig:fold:{p}")]);
    }
    let mut w = TsvWriter::new(&header);
    for cl in 0..c.n_clusters {
        let mut row = vec![format!("cluster_{cl}")];
        for r in &c.spearman[cl] {
            row.extend([opt(r.map(|r| r.rho)), opt(r.map(|r| r.p_value)), flag(r.map(|r| r.significant))]);
        }
        for k in &c.ks[cl] {
            row.extend([opt(k.map(|k| k.signed())), flag(k.map(|k| k.significant))]);
        }
        for f in &c.folds[cl] {
            row.extend([opt(f.map(|f| f.fold)), opt(f.map(|f| f.p_value)), flag(f.map(|f| f.significant))]);
        }
        w.row(&row);
    }
    w.write(path)
}

//! Pieces shared by the classification and survival protocols.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::data::Cohort;
use crate::composition::{clr_all, compose, default_delta, ClrVector, CompositionVector, Grouping};
use crate::error::{PrlError, Result};
use crate::graph::{
    assign_clusters, cluster_once, subsample_indices, two_pass_cluster, ClusterModel,
};
use crate::ingest::tsv::{fmt_f64, TsvWriter};
use crate::ingest::{load_artifact, persist_artifact, Artifact};
use crate::stats::{ModelFit, SIGNIFICANCE};

/// Per-fold seed derived from the run seed.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(fold as u64 + 1)
}

/// Clusters a sample of the training rows. Returns the model and the labels
/// it already knows for the sampled rows.
pub fn cluster_training(cfg: &RunConfig, cohort: &Cohort, train_rows: &[usize], seed: u64) -> Result<(ClusterModel, Vec<(usize, u32)>)> {
    let n = cfg.cluster.sample.min(train_rows.len());
    let rows: Vec<usize> = subsample_indices(train_rows.len(), n, seed)?
        .into_iter()
        .map(|i| train_rows[i])
        .collect();
    let sample = cohort.embeddings.select(&rows);
    let ccfg = cfg.cluster.cluster_config(seed);
    let model = if cfg.cluster.two_pass {
        let tissue: Vec<f64> = rows.iter().map(|&r| cohort.tissue[r]).collect();
        let r = two_pass_cluster(&sample, &tissue, &ccfg, &cfg.cluster.artifact_rule())?;
        ClusterModel::from_two_pass(&sample, &r, cfg.cluster.k_assign, cfg.cluster.metric)?
    } else {
        let p = cluster_once(&sample, &ccfg)?;
        ClusterModel::new(&sample, &p, cfg.cluster.k_assign, cfg.cluster.metric)?
    };
    let known = rows.iter().copied().zip(model.labels.iter().copied()).collect();
    Ok((model, known))
}

/// Labels every row of `cohort`, reusing labels already fixed by training.
pub fn label_cohort(model: &ClusterModel, cohort: &Cohort, known: &[(usize, u32)]) -> Result<Vec<u32>> {
    let mut labels = vec![u32::MAX; cohort.embeddings.len()];
    for &(r, l) in known {
        labels[r] = l;
    }
    let todo: Vec<usize> = (0..labels.len()).filter(|&r| labels[r] == u32::MAX).collect();
    let assigned = assign_clusters(model, &cohort.embeddings.select(&todo))?;
    for (r, l) in todo.into_iter().zip(assigned) {
        labels[r] = l;
    }
    Ok(labels)
}

/// Composition vectors for the given owners. Owners left with no phenotype
/// tiles are dropped with a warning.
pub fn owner_compositions(
    cohort: &Cohort,
    labels: &[u32],
    model: &ClusterModel,
    grouping: Grouping,
    owners: &BTreeSet<String>,
) -> Result<Vec<CompositionVector>> {
    let mut tile_owner = Vec::new();
    let mut kept_labels = Vec::new();
    let mut present = BTreeSet::new();
    for (r, &l) in labels.iter().enumerate() {
        if model.is_artifact(l) {
            continue;
        }
        let owner = match grouping {
            Grouping::Slide => cohort.slide_of(r),
            Grouping::Patient => cohort.patient_of(r),
        };
        if owners.contains(owner) {
            tile_owner.push(owner);
            kept_labels.push(l);
            present.insert(owner.to_string());
        }
    }
    for o in owners.difference(&present) {
        log::warn!("'{o}' has no phenotype tiles and is left out");
    }
    let list: Vec<String> = present.into_iter().collect();
    compose(&list, &tile_owner, &kept_labels, model.n_clusters)
}

/// Replacement value: the configured one, or the rule applied to training.
pub fn choose_delta(cfg: &RunConfig, train: &[CompositionVector], n_clusters: usize) -> f64 {
    cfg.composition.delta.unwrap_or_else(|| default_delta(train, n_clusters))
}

pub fn clr_map(ws: &[CompositionVector], delta: f64) -> Result<BTreeMap<String, Vec<f64>>> {
    Ok(clr_all(ws, delta)?
        .into_iter()
        .map(|ClrVector { owner_id, values }| (owner_id, values))
        .collect())
}

/// Identifies the shared cluster model used for coefficient averaging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LockedClusterConfig {
    pub fold: usize,
    pub seed: u64,
    pub criterion: String,
    pub model_file: String,
    pub checksum: String,
    pub n_clusters: usize,
}

impl Artifact for LockedClusterConfig {
    const KIND: &'static str = "locked_cluster_config";
}

pub const LOCKED_MODEL: &str = "locked_cluster_model.prla";
pub const LOCKED_CONFIG: &str = "locked_cluster_config.prla";

pub fn write_locked(dir: &Path, model: &ClusterModel, fold: usize, seed: u64, criterion: &str) -> Result<LockedClusterConfig> {
    let checksum = persist_artifact(model, &dir.join(LOCKED_MODEL))?;
    let locked = LockedClusterConfig {
        fold,
        seed,
        criterion: criterion.to_string(),
        model_file: LOCKED_MODEL.to_string(),
        checksum,
        n_clusters: model.n_clusters,
    };
    persist_artifact(&locked, &dir.join(LOCKED_CONFIG))?;
    Ok(locked)
}

pub fn read_locked(dir: &Path) -> Result<(LockedClusterConfig, ClusterModel)> {
    let cfg_path = dir.join(LOCKED_CONFIG);
    if !cfg_path.exists() {
        return Err(PrlError::MissingArtifact(format!("{} not found", cfg_path.display())));
    }
    let locked: LockedClusterConfig = load_artifact(&cfg_path)?;
    let model: ClusterModel = load_artifact(&dir.join(&locked.model_file))?;
    Ok((locked, model))
}

/// Index of the fold whose metric is the lower median among `metrics`.
pub fn median_fold(metrics: &[(usize, f64)]) -> Option<usize> {
    let mut m: Vec<(usize, f64)> = metrics.iter().copied().filter(|(_, v)| v.is_finite()).collect();
    if m.is_empty() {
        return None;
    }
    m.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Some(m[(m.len() - 1) / 2].0)
}

pub fn opt_f64(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), fmt_f64)
}

pub fn fit_table(fit: &ModelFit) -> TsvWriter {
    let mut w = TsvWriter::new(&["feature", "coefficient", "std_error", "p_value", "significant"]);
    for i in 0..fit.features.len() {
        w.row(&[
            fit.features[i].clone(),
            fmt_f64(fit.coefficients[i]),
            fmt_f64(fit.std_errors[i]),
            fmt_f64(fit.p_values[i]),
            u8::from(fit.p_values[i] < SIGNIFICANCE).to_string(),
        ]);
    }
    w
}

pub fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().filter(|x| x.is_finite()).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Rows of a design matrix in owner order, skipping owners without a value.
pub fn rows_for<'a, T>(
    clr: &'a BTreeMap<String, Vec<f64>>,
    owners: impl Iterator<Item = &'a str>,
    response: impl Fn(&str) -> Option<T>,
) -> (Vec<String>, Vec<Vec<f64>>, Vec<T>) {
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut ys = Vec::new();
    for o in owners {
        if let (Some(x), Some(y)) = (clr.get(o), response(o)) {
            ids.push(o.to_string());
            rows.push(x.clone());
            ys.push(y);
        }
    }
    (ids, rows, ys)
}

//! Sampling, two-pass artifact removal, and label transfer to new tiles.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::knn::{build_knn_graph, Metric, PointSet};
use super::leiden::{leiden, LeidenConfig, Partition};
use crate::error::{PrlError, Result};
use crate::ingest::{Artifact, EmbeddingMatrix};

/// Uniform sample of `n` rows without replacement, kept in original order.
pub fn subsample_indices(total: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n > total {
        return Err(PrlError::Precondition(format!("cannot sample {n} of {total} rows")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, total, n).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

pub fn subsample_vectors(e: &EmbeddingMatrix, n: usize, seed: u64) -> Result<EmbeddingMatrix> {
    Ok(e.select(&subsample_indices(e.len(), n, seed)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRule {
    /// Clusters whose mean tissue fraction falls below this are flagged.
    pub tissue_threshold: f64,
    /// First-pass cluster ids flagged regardless of tissue fraction.
    pub manual: Vec<u32>,
}

impl Default for ArtifactRule {
    fn default() -> Self {
        ArtifactRule {
            tissue_threshold: 0.3,
            manual: Vec::new(),
        }
    }
}

impl ArtifactRule {
    pub fn flags(&self, p: &Partition, tissue_fraction: &[f64]) -> Vec<bool> {
        let mut sum = vec![0.0; p.n_clusters()];
        for (&l, &t) in p.labels.iter().zip(tissue_fraction) {
            sum[l as usize] += t;
        }
        (0..p.n_clusters())
            .map(|c| sum[c] / (p.cluster_sizes[c] as f64) < self.tissue_threshold || self.manual.contains(&(c as u32)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub k: usize,
    pub gamma: f64,
    pub seed: u64,
    pub max_iters: usize,
    pub n_starts: usize,
    pub metric: Metric,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            k: 250,
            gamma: 1.0,
            seed: 0,
            max_iters: 10,
            n_starts: 10,
            metric: Metric::Euclidean,
        }
    }
}

impl ClusterConfig {
    fn leiden(&self) -> LeidenConfig {
        LeidenConfig {
            gamma: self.gamma,
            seed: self.seed,
            max_iters: self.max_iters,
            n_starts: self.n_starts,
        }
    }
}

/// Single Leiden pass over a kNN graph of `e`.
pub fn cluster_once(e: &EmbeddingMatrix, cfg: &ClusterConfig) -> Result<Partition> {
    let g = build_knn_graph(e, cfg.k, cfg.metric)?;
    Ok(leiden(&g, &cfg.leiden()).partition)
}

#[derive(Debug, Clone)]
pub struct TwoPassResult {
    /// First pass with `artifact_flags` set.
    pub first: Partition,
    /// Rows of the input kept for the second pass.
    pub kept_rows: Vec<usize>,
    pub clean: EmbeddingMatrix,
    /// Second-pass partition over `clean`.
    pub partition: Partition,
}

/// Clusters, drops flagged clusters, and clusters the remaining rows again.
pub fn two_pass_cluster(
    e: &EmbeddingMatrix,
    tissue_fraction: &[f64],
    cfg: &ClusterConfig,
    rule: &ArtifactRule,
) -> Result<TwoPassResult> {
    if tissue_fraction.len() != e.len() {
        return Err(PrlError::Dimension(format!(
            "{} tissue fractions for {} embeddings",
            tissue_fraction.len(),
            e.len()
        )));
    }
    let mut first = cluster_once(e, cfg)?;
    first.artifact_flags = rule.flags(&first, tissue_fraction);
    let kept_rows: Vec<usize> = (0..e.len())
        .filter(|&i| !first.artifact_flags[first.labels[i] as usize])
        .collect();
    if kept_rows.is_empty() {
        return Err(PrlError::Infeasible("artifact rule flagged every cluster".into()));
    }
    log::info!(
        "two-pass: {} of {} first-pass clusters flagged, {} rows kept",
        first.artifact_flags.iter().filter(|f| **f).count(),
        first.n_clusters(),
        kept_rows.len()
    );
    let clean = e.select(&kept_rows);
    let partition = cluster_once(&clean, cfg)?;
    Ok(TwoPassResult {
        first,
        kept_rows,
        clean,
        partition,
    })
}

/// Labelled training vectors used to transfer clusters to unseen tiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub tile_ids: Vec<String>,
    pub data: Vec<f32>,
    pub dim: usize,
    pub labels: Vec<u32>,
    /// Number of phenotype clusters; ids `0..n_clusters`.
    pub n_clusters: usize,
    /// Label carried by artifact rows, equal to `n_clusters` when present.
    pub artifact_label: Option<u32>,
    pub k_assign: usize,
    pub metric: Metric,
}

impl Artifact for ClusterModel {
    const KIND: &'static str = "cluster_model";
}

impl ClusterModel {
    pub fn new(e: &EmbeddingMatrix, p: &Partition, k_assign: usize, metric: Metric) -> Result<Self> {
        if p.labels.len() != e.len() {
            return Err(PrlError::Dimension(format!("{} labels for {} rows", p.labels.len(), e.len())));
        }
        if k_assign == 0 {
            return Err(PrlError::Precondition("k_assign must be at least 1".into()));
        }
        Ok(ClusterModel {
            tile_ids: e.tile_ids().to_vec(),
            data: e.data().to_vec(),
            dim: e.dim(),
            labels: p.labels.clone(),
            n_clusters: p.n_clusters(),
            artifact_label: None,
            k_assign,
            metric,
        })
    }

    /// Model over the whole first-pass sample: clean rows keep their
    /// second-pass label, removed rows vote for a dedicated artifact label.
    pub fn from_two_pass(e: &EmbeddingMatrix, r: &TwoPassResult, k_assign: usize, metric: Metric) -> Result<Self> {
        let mut m = ClusterModel::new(&r.clean, &r.partition, k_assign, metric)?;
        if r.kept_rows.len() < e.len() {
            let artifact = m.n_clusters as u32;
            let mut labels = vec![artifact; e.len()];
            for (&row, &l) in r.kept_rows.iter().zip(&r.partition.labels) {
                labels[row] = l;
            }
            m.tile_ids = e.tile_ids().to_vec();
            m.data = e.data().to_vec();
            m.labels = labels;
            m.artifact_label = Some(artifact);
        }
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn is_artifact(&self, label: u32) -> bool {
        self.artifact_label == Some(label)
    }

    /// Training rows that carry a phenotype label, with their labels.
    pub fn phenotype_rows(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| !self.is_artifact(**l))
            .map(|(i, l)| (i, *l))
    }
}

/// Majority label among the `k_assign` nearest training rows of each new
/// vector; ties go to the smallest label.
pub fn assign_clusters(model: &ClusterModel, e: &EmbeddingMatrix) -> Result<Vec<u32>> {
    if e.dim() != model.dim {
        return Err(PrlError::Dimension(format!(
            "model dimension {} but embeddings have {}",
            model.dim,
            e.dim()
        )));
    }
    let points = PointSet::new(&model.data, model.dim, model.metric);
    let n_labels = model.n_clusters + model.artifact_label.is_some() as usize;
    let mut votes = vec![0usize; n_labels];
    let mut scratch = Vec::with_capacity(model.len());
    let mut out = Vec::with_capacity(e.len());
    for i in 0..e.len() {
        let q = points.prepare_query(e.row(i));
        votes.iter_mut().for_each(|v| *v = 0);
        for j in points.nearest(&q, model.k_assign, None, &mut scratch) {
            votes[model.labels[j] as usize] += 1;
        }
        let best = votes
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map_or(0, |p| p.0);
        out.push(best as u32);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Purity {
    pub dominant: String,
    pub purity: f64,
}

/// Dominant tile label and its share for every cluster of `p`. Ties go to
/// the lexicographically smallest label.
pub fn cluster_purity(p: &Partition, tile_labels: &[String]) -> Result<Vec<Purity>> {
    if tile_labels.len() != p.labels.len() {
        return Err(PrlError::Dimension(format!(
            "{} tile labels for {} partition nodes",
            tile_labels.len(),
            p.labels.len()
        )));
    }
    let mut counts: Vec<BTreeMap<&str, usize>> = vec![BTreeMap::new(); p.n_clusters()];
    for (&c, l) in p.labels.iter().zip(tile_labels) {
        *counts[c as usize].entry(l.as_str()).or_insert(0) += 1;
    }
    counts
        .iter()
        .enumerate()
        .map(|(c, m)| {
            let total: usize = m.values().sum();
            let (label, n) = m
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .ok_or_else(|| PrlError::Validation(format!("cluster {c} is empty")))?;
            Ok(Purity {
                dominant: label.to_string(),
                purity: *n as f64 / total as f64,
            })
        })
        .collect()
}

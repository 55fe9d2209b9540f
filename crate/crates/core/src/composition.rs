//! Cluster-proportion vectors per slide or patient and their log-ratio image.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PrlError, Result};
use crate::ingest::tsv::{fmt_f64, Table, TsvWriter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grouping {
    Slide,
    Patient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionVector {
    pub owner_id: String,
    pub w: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClrVector {
    pub owner_id: String,
    pub values: Vec<f64>,
}

/// Tile counts per cluster for every owner in `owners`, in that order.
///
/// `tile_owner[i]` names the owner of tile `i`; labels must lie in
/// `0..n_clusters` (artifact tiles are dropped before this point).
pub fn cluster_counts(
    owners: &[String],
    tile_owner: &[&str],
    labels: &[u32],
    n_clusters: usize,
) -> Result<Vec<Vec<usize>>> {
    if tile_owner.len() != labels.len() {
        return Err(PrlError::Dimension(format!(
            "{} tile owners for {} labels",
            tile_owner.len(),
            labels.len()
        )));
    }
    let index: BTreeMap<&str, usize> = owners.iter().enumerate().map(|(i, o)| (o.as_str(), i)).collect();
    let mut counts = vec![vec![0usize; n_clusters]; owners.len()];
    for (&owner, &l) in tile_owner.iter().zip(labels) {
        let &o = index
            .get(owner)
            .ok_or_else(|| PrlError::Referential(format!("tile owner '{owner}' not among composition owners")))?;
        if l as usize >= n_clusters {
            return Err(PrlError::Validation(format!("cluster label {l} outside 0..{n_clusters}")));
        }
        counts[o][l as usize] += 1;
    }
    Ok(counts)
}

/// Proportion of each owner's tiles falling in each cluster. Tiles of a
/// patient are pooled across all of that patient's slides.
pub fn compose(owners: &[String], tile_owner: &[&str], labels: &[u32], n_clusters: usize) -> Result<Vec<CompositionVector>> {
    let counts = cluster_counts(owners, tile_owner, labels, n_clusters)?;
    owners
        .iter()
        .zip(counts)
        .map(|(owner, c)| {
            let total: usize = c.iter().sum();
            if total == 0 {
                return Err(PrlError::Validation(format!("owner '{owner}' has no tiles")));
            }
            Ok(CompositionVector {
                owner_id: owner.clone(),
                w: c.iter().map(|&x| x as f64 / total as f64).collect(),
            })
        })
        .collect()
}

/// Replaces zeros by `delta` and shrinks the nonzero parts by `1 - z*delta`.
pub fn multiplicative_replacement(w: &CompositionVector, delta: f64) -> Result<CompositionVector> {
    if !(delta > 0.0) {
        return Err(PrlError::Precondition(format!("delta must be positive, got {delta}")));
    }
    let zeros = w.w.iter().filter(|&&x| x == 0.0).count();
    let scale = 1.0 - zeros as f64 * delta;
    if scale <= 0.0 {
        return Err(PrlError::Infeasible(format!(
            "delta {delta} with {zeros} zeros leaves no mass for '{}'",
            w.owner_id
        )));
    }
    Ok(CompositionVector {
        owner_id: w.owner_id.clone(),
        w: w.w.iter().map(|&x| if x == 0.0 { delta } else { x * scale }).collect(),
    })
}

/// Centered log-ratio, `ln w_i - mean_j ln w_j`.
pub fn clr_transform(w: &CompositionVector) -> Result<ClrVector> {
    if w.w.is_empty() {
        return Err(PrlError::Precondition(format!("'{}' has an empty composition", w.owner_id)));
    }
    if let Some(bad) = w.w.iter().find(|&&x| !(x > 0.0)) {
        return Err(PrlError::Precondition(format!(
            "clr needs strictly positive parts, '{}' has {bad}",
            w.owner_id
        )));
    }
    let logs: Vec<f64> = w.w.iter().map(|x| x.ln()).collect();
    // centred on the first entry so equal parts give an exact zero
    let mean = logs[0] + logs.iter().map(|l| l - logs[0]).sum::<f64>() / logs.len() as f64;
    Ok(ClrVector {
        owner_id: w.owner_id.clone(),
        values: logs.iter().map(|l| l - mean).collect(),
    })
}

/// Half the smallest nonzero proportion seen in `training`, capped at
/// `1/(2C)`.
pub fn default_delta(training: &[CompositionVector], n_clusters: usize) -> f64 {
    let min_nz = training
        .iter()
        .flat_map(|v| v.w.iter().copied())
        .filter(|&x| x > 0.0)
        .fold(f64::INFINITY, f64::min);
    let cap = 0.5 / n_clusters as f64;
    if min_nz.is_finite() {
        (0.5 * min_nz).min(cap)
    } else {
        cap
    }
}

/// Replacement followed by CLR for every vector.
pub fn clr_all(ws: &[CompositionVector], delta: f64) -> Result<Vec<ClrVector>> {
    ws.iter()
        .map(|w| clr_transform(&multiplicative_replacement(w, delta)?))
        .collect()
}

pub fn cluster_header(n_clusters: usize) -> Vec<String> {
    (0..n_clusters).map(|c| format!("cluster_{c}")).collect()
}

fn write_rows<'a>(path: &Path, n: usize, rows: impl Iterator<Item = (&'a str, &'a [f64])>, delta: Option<f64>) -> Result<()> {
    let mut header = vec!["owner_id".to_string()];
    header.extend(cluster_header(n));
    let mut w = TsvWriter::new(&header);
    if let Some(d) = delta {
        w.directive(&format!("delta={}", fmt_f64(d)));
    }
    for (owner, values) in rows {
        let mut r = vec![owner.to_string()];
        r.extend(values.iter().map(|v| fmt_f64(*v)));
        w.row(&r);
    }
    w.write(path)
}

pub fn write_compositions(path: &Path, ws: &[CompositionVector], n_clusters: usize) -> Result<()> {
    write_rows(path, n_clusters, ws.iter().map(|v| (v.owner_id.as_str(), v.w.as_slice())), None)
}

pub fn write_clr(path: &Path, cs: &[ClrVector], n_clusters: usize, delta: f64) -> Result<()> {
    write_rows(path, n_clusters, cs.iter().map(|v| (v.owner_id.as_str(), v.values.as_slice())), Some(delta))
}

/// Reads a composition TSV written by [`write_compositions`].
pub fn load_compositions(path: &Path) -> Result<Vec<CompositionVector>> {
    let t = Table::read(path)?;
    let owner = t.require("owner_id")?;
    let cols: Vec<usize> = (0..t.header.len()).filter(|&c| c != owner).collect();
    t.rows
        .iter()
        .map(|(line, r)| {
            let w = cols
                .iter()
                .map(|&c| t.parse_field::<f64>(*line, &t.header[c], &r[c]))
                .collect::<Result<Vec<f64>>>()?;
            let sum: f64 = w.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || w.iter().any(|x| *x < 0.0) {
                return Err(t.parse_error(*line, format!("proportions must be non-negative and sum to 1, got {sum}")));
            }
            Ok(CompositionVector {
                owner_id: r[owner].clone(),
                w,
            })
        })
        .collect()
}

//! Exact k-nearest-neighbour search and the symmetrized neighbour graph.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{PrlError, Result};
use crate::ingest::EmbeddingMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    Cosine,
}

impl std::str::FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            o => Err(format!("unknown metric '{o}'")),
        }
    }
}

/// Row-major f64 copy of a point set, prepared for one metric.
#[derive(Debug, Clone)]
pub struct PointSet {
    data: Vec<f64>,
    dim: usize,
    metric: Metric,
}

fn normalize(row: &mut [f64]) {
    let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        row.iter_mut().for_each(|v| *v /= n);
    }
}

impl PointSet {
    pub fn new(values: &[f32], dim: usize, metric: Metric) -> Self {
        let mut data: Vec<f64> = values.iter().map(|v| *v as f64).collect();
        if metric == Metric::Cosine {
            data.chunks_exact_mut(dim).for_each(normalize);
        }
        PointSet { data, dim, metric }
    }

    pub fn from_embeddings(e: &EmbeddingMatrix, metric: Metric) -> Self {
        PointSet::new(e.data(), e.dim(), metric)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Squared Euclidean distance, or `1 - cos` for the cosine metric.
    #[inline]
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.metric {
            Metric::Euclidean => sq_dist(a, b),
            Metric::Cosine => 1.0 - dot(a, b),
        }
    }

    pub fn prepare_query(&self, q: &[f32]) -> Vec<f64> {
        let mut v: Vec<f64> = q.iter().map(|x| *x as f64).collect();
        if self.metric == Metric::Cosine {
            normalize(&mut v);
        }
        v
    }

    /// The `k` nearest rows to `query` ordered by (distance, index), skipping
    /// row `exclude` when given.
    pub fn nearest(&self, query: &[f64], k: usize, exclude: Option<usize>, scratch: &mut Vec<(f64, usize)>) -> Vec<usize> {
        scratch.clear();
        for i in 0..self.len() {
            if Some(i) != exclude {
                scratch.push((self.distance(query, self.row(i)), i));
            }
        }
        let k = k.min(scratch.len());
        if k == 0 {
            return Vec::new();
        }
        if k < scratch.len() {
            scratch.select_nth_unstable_by(k - 1, cmp_pair);
            scratch.truncate(k);
        }
        scratch.sort_unstable_by(cmp_pair);
        scratch.iter().map(|p| p.1).collect()
    }
}

fn cmp_pair(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            let d = x[l] - y[l];
            acc[l] += d * d;
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += (x - y) * (x - y);
    }
    s
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Directed kNN lists: for each row, its `k` nearest other rows ordered by
/// distance, ties broken by index.
pub fn knn_lists(points: &PointSet, k: usize) -> Result<Vec<Vec<usize>>> {
    let n = points.len();
    if k == 0 || k >= n {
        return Err(PrlError::Precondition(format!("k = {k} must satisfy 0 < k < N = {n}")));
    }
    let mut scratch = Vec::with_capacity(n);
    Ok((0..n)
        .map(|i| points.nearest(points.row(i), k, Some(i), &mut scratch))
        .collect())
}

/// Undirected, unit-weight neighbour graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborGraph {
    pub node_ids: Vec<String>,
    /// Sorted neighbour lists with edge weights; symmetric, no self-loops.
    pub adjacency: Vec<Vec<(u32, f64)>>,
    pub k: usize,
}

impl NeighborGraph {
    /// Builds a graph from an undirected edge list (duplicates merged).
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut adjacency: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a != b {
                adjacency[a].push((b as u32, 1.0));
                adjacency[b].push((a as u32, 1.0));
            }
        }
        for list in adjacency.iter_mut() {
            list.sort_by_key(|p| p.0);
            list.dedup_by_key(|p| p.0);
        }
        NeighborGraph {
            node_ids: (0..n).map(|i| i.to_string()).collect(),
            adjacency,
            k: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    /// Undirected edge count.
    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency[i].iter().map(|p| p.0 as usize)
    }
}

/// Links every row to its `k` nearest others and takes the union of both
/// directions. All edges carry weight 1.
pub fn build_knn_graph(e: &EmbeddingMatrix, k: usize, metric: Metric) -> Result<NeighborGraph> {
    let points = PointSet::from_embeddings(e, metric);
    let lists = knn_lists(&points, k)?;
    let n = lists.len();
    let mut adjacency: Vec<Vec<(u32, f64)>> = vec![Vec::with_capacity(k); n];
    for (i, list) in lists.iter().enumerate() {
        for &j in list {
            adjacency[i].push((j as u32, 1.0));
            adjacency[j].push((i as u32, 1.0));
        }
    }
    for list in adjacency.iter_mut() {
        list.sort_unstable_by_key(|p| p.0);
        list.dedup_by_key(|p| p.0);
    }
    Ok(NeighborGraph {
        node_ids: e.tile_ids().to_vec(),
        adjacency,
        k,
    })
}

//! Modularity and Leiden community detection.
//!
//! Modularity of a partition is
//! `H = 1/(2m) * sum_c (e_c - gamma * K_c^2 / (2m))`, where `e_c` sums the
//! adjacency entries inside community `c` (each internal edge counted from
//! both endpoints), `K_c` is the summed degree of `c` and `m` the edge count.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::knn::NeighborGraph;
use crate::error::{PrlError, Result};
use crate::ingest::Artifact;

/// Cluster label per node plus cluster-level metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub labels: Vec<u32>,
    pub cluster_sizes: Vec<usize>,
    pub gamma: f64,
    pub seed: u64,
    pub artifact_flags: Vec<bool>,
}

impl Artifact for Partition {
    const KIND: &'static str = "partition";
}

impl Partition {
    /// Builds a partition from arbitrary community ids, relabelled densely by
    /// decreasing size (ties: smallest member index first).
    pub fn from_assignment(raw: &[usize], gamma: f64, seed: u64) -> Self {
        let labels = canonical_labels(raw);
        let n_clusters = labels.iter().map(|l| *l as usize + 1).max().unwrap_or(0);
        let mut cluster_sizes = vec![0usize; n_clusters];
        for &l in &labels {
            cluster_sizes[l as usize] += 1;
        }
        Partition {
            labels,
            cluster_sizes,
            gamma,
            seed,
            artifact_flags: vec![false; n_clusters],
        }
    }

    /// Keeps the given ids as they are; clusters may be empty.
    pub fn from_labels(labels: Vec<u32>, n_clusters: usize, gamma: f64, seed: u64) -> Result<Self> {
        let mut cluster_sizes = vec![0usize; n_clusters];
        for &l in &labels {
            *cluster_sizes
                .get_mut(l as usize)
                .ok_or_else(|| PrlError::Validation(format!("label {l} outside 0..{n_clusters}")))? += 1;
        }
        Ok(Partition {
            labels,
            cluster_sizes,
            gamma,
            seed,
            artifact_flags: vec![false; n_clusters],
        })
    }

    pub fn n_clusters(&self) -> usize {
        self.cluster_sizes.len()
    }

    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.n_clusters()];
        for (i, &l) in self.labels.iter().enumerate() {
            m[l as usize].push(i);
        }
        m
    }
}

fn canonical_labels(raw: &[usize]) -> Vec<u32> {
    let mut groups: std::collections::BTreeMap<usize, (usize, usize)> = Default::default();
    for (i, &c) in raw.iter().enumerate() {
        let e = groups.entry(c).or_insert((0, i));
        e.0 += 1;
    }
    let mut order: Vec<(usize, usize, usize)> = groups.into_iter().map(|(c, (size, first))| (c, size, first)).collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    let mut map = std::collections::HashMap::new();
    for (new, (c, _, _)) in order.into_iter().enumerate() {
        map.insert(c, new as u32);
    }
    raw.iter().map(|c| map[c]).collect()
}

/// Weighted graph with explicit self-loops, the working representation for
/// every aggregation level.
#[derive(Debug, Clone)]
pub(crate) struct WeightedGraph {
    adj: Vec<Vec<(usize, f64)>>,
    /// `A_ii`: adjacency mass internal to an aggregated node.
    self_loop: Vec<f64>,
    degree: Vec<f64>,
    /// `2m`: sum of all adjacency entries.
    total: f64,
}

impl WeightedGraph {
    pub(crate) fn from_neighbor_graph(g: &NeighborGraph) -> Self {
        let adj: Vec<Vec<(usize, f64)>> = g
            .adjacency
            .iter()
            .map(|l| l.iter().map(|&(j, w)| (j as usize, w)).collect())
            .collect();
        Self::new(adj, vec![0.0; g.len()])
    }

    fn new(adj: Vec<Vec<(usize, f64)>>, self_loop: Vec<f64>) -> Self {
        let degree: Vec<f64> = adj
            .iter()
            .zip(&self_loop)
            .map(|(l, s)| l.iter().map(|p| p.1).sum::<f64>() + s)
            .collect();
        let total = degree.iter().sum();
        WeightedGraph {
            adj,
            self_loop,
            degree,
            total,
        }
    }

    fn len(&self) -> usize {
        self.adj.len()
    }

    pub(crate) fn quality(&self, comm: &[usize], gamma: f64) -> f64 {
        let n_c = comm.iter().max().map_or(0, |m| m + 1);
        let mut internal = vec![0.0; n_c];
        let mut tot = vec![0.0; n_c];
        for v in 0..self.len() {
            let c = comm[v];
            tot[c] += self.degree[v];
            internal[c] += self.self_loop[v];
            for &(u, w) in &self.adj[v] {
                if comm[u] == c {
                    internal[c] += w;
                }
            }
        }
        let m2 = self.total;
        internal
            .iter()
            .zip(&tot)
            .map(|(e, k)| e - gamma * k * k / m2)
            .sum::<f64>()
            / m2
    }

    /// Collapses every group of `groups` (dense ids) into one node.
    fn aggregate(&self, groups: &[usize], n_groups: usize) -> WeightedGraph {
        let mut self_loop = vec![0.0; n_groups];
        let mut maps: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); n_groups];
        for v in 0..self.len() {
            let gv = groups[v];
            self_loop[gv] += self.self_loop[v];
            for &(u, w) in &self.adj[v] {
                let gu = groups[u];
                if gu == gv {
                    self_loop[gv] += w;
                } else {
                    *maps[gv].entry(gu).or_insert(0.0) += w;
                }
            }
        }
        let adj = maps.into_iter().map(|m| m.into_iter().collect()).collect();
        WeightedGraph::new(adj, self_loop)
    }
}

/// Modularity of `p` on `g` at resolution `gamma`.
pub fn modularity(g: &NeighborGraph, p: &Partition, gamma: f64) -> Result<f64> {
    if p.labels.len() != g.len() {
        return Err(PrlError::Dimension(format!(
            "partition covers {} nodes, graph has {}",
            p.labels.len(),
            g.len()
        )));
    }
    if g.edge_count() == 0 {
        return Err(PrlError::Precondition("modularity undefined on a graph without edges".into()));
    }
    let wg = WeightedGraph::from_neighbor_graph(g);
    let comm: Vec<usize> = p.labels.iter().map(|&l| l as usize).collect();
    Ok(wg.quality(&comm, gamma))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeidenConfig {
    pub gamma: f64,
    pub seed: u64,
    /// Upper bound on outer iterations; iteration stops earlier once the
    /// partition no longer changes.
    pub max_iters: usize,
    /// Independent random starts; the highest-quality result is kept.
    pub n_starts: usize,
}

impl Default for LeidenConfig {
    fn default() -> Self {
        LeidenConfig {
            gamma: 1.0,
            seed: 0,
            max_iters: 10,
            n_starts: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeidenResult {
    pub partition: Partition,
    /// Modularity of the singleton start followed by the value after every
    /// outer iteration; the final entry is the returned partition.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

/// Scratch accumulator of edge weight from one node into each community.
struct Accumulator {
    weight: Vec<f64>,
    touched: Vec<usize>,
}

impl Accumulator {
    fn new(n: usize) -> Self {
        Accumulator {
            weight: vec![0.0; n],
            touched: Vec::new(),
        }
    }

    fn add(&mut self, c: usize, w: f64) {
        if self.weight[c] == 0.0 {
            self.touched.push(c);
        }
        self.weight[c] += w;
    }

    fn clear(&mut self) {
        for &c in &self.touched {
            self.weight[c] = 0.0;
        }
        self.touched.clear();
    }
}

/// Queue-based local moving. Moves each node to the neighbouring community
/// with the largest strictly positive gain; returns whether anything moved.
fn move_nodes(g: &WeightedGraph, comm: &mut [usize], gamma: f64, rng: &mut ChaCha8Rng) -> bool {
    let n = g.len();
    let m2 = g.total;
    let mut tot = vec![0.0; n];
    let mut size = vec![0usize; n];
    for v in 0..n {
        tot[comm[v]] += g.degree[v];
        size[comm[v]] += 1;
    }
    let mut empty: Vec<usize> = (0..n).filter(|c| size[*c] == 0).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut queue: VecDeque<usize> = order.into_iter().collect();
    let mut queued = vec![true; n];
    let mut acc = Accumulator::new(n);
    let mut moved = false;

    while let Some(v) = queue.pop_front() {
        queued[v] = false;
        let kv = g.degree[v];
        let old = comm[v];
        for &(u, w) in &g.adj[v] {
            acc.add(comm[u], w);
        }
        tot[old] -= kv;
        size[old] -= 1;
        let gain = |c: usize, w: f64| w - gamma * kv * tot[c] / m2;
        let mut best = old;
        let mut best_gain = gain(old, acc.weight[old]);
        for &c in &acc.touched {
            let gc = gain(c, acc.weight[c]);
            if gc > best_gain + 1e-12 {
                best = c;
                best_gain = gc;
            }
        }
        if best_gain < -1e-12 {
            if size[old] == 0 {
                best = old;
            } else if let Some(&c) = empty.last() {
                best = c;
            }
        }
        acc.clear();
        if size[old] == 0 && best != old {
            empty.push(old);
        }
        if size[best] == 0 && best != old {
            empty.retain(|c| *c != best);
        }
        tot[best] += kv;
        size[best] += 1;
        comm[v] = best;
        if best != old {
            moved = true;
            for &(u, _) in &g.adj[v] {
                if !queued[u] && comm[u] != best {
                    queued[u] = true;
                    queue.push_back(u);
                }
            }
        }
    }
    moved
}

/// Splits each community of `comm` into well-connected sub-communities by
/// randomized merges. Returns dense refined ids.
fn refine(g: &WeightedGraph, comm: &[usize], gamma: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = g.len();
    let m2 = g.total;
    let n_c = comm.iter().max().map_or(0, |m| m + 1);
    let mut members = vec![Vec::new(); n_c];
    for v in 0..n {
        members[comm[v]].push(v);
    }
    let mut refined: Vec<usize> = (0..n).collect();
    let mut r_tot: Vec<f64> = g.degree.clone();
    let mut r_size = vec![1usize; n];
    // edge weight from each refined community to the rest of its parent
    let mut r_ext = vec![0.0; n];
    let mut acc = Accumulator::new(n);

    for nodes in members.iter_mut().filter(|m| m.len() > 1) {
        let k_s: f64 = nodes.iter().map(|&v| g.degree[v]).sum();
        let parent = comm[nodes[0]];
        for &v in nodes.iter() {
            r_ext[v] = g.adj[v].iter().filter(|(u, _)| comm[*u] == parent).map(|p| p.1).sum();
        }
        nodes.shuffle(rng);
        for &v in nodes.iter() {
            if r_size[refined[v]] != 1 {
                continue;
            }
            let kv = g.degree[v];
            let ext_v = r_ext[refined[v]];
            if ext_v < gamma * kv * (k_s - kv) / m2 {
                continue;
            }
            for &(u, w) in &g.adj[v] {
                if comm[u] == parent {
                    acc.add(refined[u], w);
                }
            }
            let own = refined[v];
            let candidates: Vec<usize> = acc
                .touched
                .iter()
                .copied()
                .filter(|&t| {
                    t != own
                        && r_ext[t] >= gamma * r_tot[t] * (k_s - r_tot[t]) / m2
                        && acc.weight[t] - gamma * kv * r_tot[t] / m2 >= 0.0
                })
                .collect();
            if !candidates.is_empty() {
                let t = candidates[rng.random_range(0..candidates.len())];
                let w_vt = acc.weight[t];
                r_tot[own] -= kv;
                r_size[own] -= 1;
                r_tot[t] += kv;
                r_size[t] += 1;
                r_ext[t] += ext_v - 2.0 * w_vt;
                refined[v] = t;
            }
            acc.clear();
        }
    }
    densify(&refined).0
}

fn densify(ids: &[usize]) -> (Vec<usize>, usize) {
    let mut map = std::collections::HashMap::new();
    let out = ids
        .iter()
        .map(|&c| {
            let next = map.len();
            *map.entry(c).or_insert(next)
        })
        .collect();
    (out, map.len())
}

/// One Leiden iteration starting from `start` (node -> community).
fn leiden_iteration(base: &WeightedGraph, start: &[usize], gamma: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut graph = base.clone();
    let mut comm = densify(start).0;
    // membership of every original node in the current level's nodes
    let mut node_of: Vec<usize> = (0..base.len()).collect();
    loop {
        move_nodes(&graph, &mut comm, gamma, rng);
        let (dense, n_comm) = densify(&comm);
        comm = dense;
        if n_comm == graph.len() {
            break;
        }
        let (mut groups, mut n_groups) = densify(&refine(&graph, &comm, gamma, rng));
        if n_groups == graph.len() {
            // refinement split everything back to singletons; aggregate on the
            // unrefined partition instead so the level still shrinks
            groups = comm.clone();
            n_groups = n_comm;
        }
        let mut next_comm = vec![0usize; n_groups];
        for v in 0..graph.len() {
            next_comm[groups[v]] = comm[v];
        }
        graph = graph.aggregate(&groups, n_groups);
        for x in node_of.iter_mut() {
            *x = groups[*x];
        }
        comm = next_comm;
    }
    node_of.iter().map(|&x| comm[x]).collect()
}

/// Splits every community that is not connected into its components.
fn split_disconnected(g: &WeightedGraph, comm: &[usize]) -> Vec<usize> {
    let n = g.len();
    let mut out = vec![usize::MAX; n];
    let mut next = 0;
    for s in 0..n {
        if out[s] != usize::MAX {
            continue;
        }
        out[s] = next;
        let mut stack = vec![s];
        while let Some(v) = stack.pop() {
            for &(u, _) in &g.adj[v] {
                if out[u] == usize::MAX && comm[u] == comm[s] {
                    out[u] = next;
                    stack.push(u);
                }
            }
        }
        next += 1;
    }
    out
}

/// Leiden community detection. Outer iterations restart from the previous
/// partition until it stops changing or `max_iters` is reached.
pub fn leiden(g: &NeighborGraph, cfg: &LeidenConfig) -> LeidenResult {
    let n = g.len();
    let wg = WeightedGraph::from_neighbor_graph(g);
    let singletons: Vec<usize> = (0..n).collect();
    if n <= 1 || wg.total == 0.0 {
        return LeidenResult {
            partition: Partition::from_assignment(&singletons, cfg.gamma, cfg.seed),
            trace: Vec::new(),
            iterations: 0,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(f64, Vec<usize>, Vec<f64>, usize)> = None;
    for _ in 0..cfg.n_starts.max(1) {
        let mut comm = singletons.clone();
        let mut trace = vec![wg.quality(&comm, cfg.gamma)];
        let mut iterations = 0;
        for _ in 0..cfg.max_iters.max(1) {
            let next = leiden_iteration(&wg, &comm, cfg.gamma, &mut rng);
            let next = split_disconnected(&wg, &next);
            iterations += 1;
            let changed = canonical_labels(&next) != canonical_labels(&comm);
            trace.push(wg.quality(&next, cfg.gamma));
            comm = next;
            if !changed {
                break;
            }
        }
        let q = *trace.last().unwrap();
        if best.as_ref().is_none_or(|b| q > b.0 + 1e-12) {
            best = Some((q, comm, trace, iterations));
        }
    }
    let (_, comm, trace, iterations) = best.unwrap();
    LeidenResult {
        partition: Partition::from_assignment(&comm, cfg.gamma, cfg.seed),
        trace,
        iterations,
    }
}

/// True when every community of `p` induces a connected subgraph of `g`.
pub fn communities_connected(g: &NeighborGraph, p: &Partition) -> bool {
    let wg = WeightedGraph::from_neighbor_graph(g);
    let comm: Vec<usize> = p.labels.iter().map(|&l| l as usize).collect();
    let split = split_disconnected(&wg, &comm);
    let n_split = split.iter().max().map_or(0, |m| m + 1);
    n_split == p.n_clusters()
}


#[cfg(test)]
mod tests {
    use super::*;

    fn cliques(sizes: &[usize], bridges: &[(usize, usize)]) -> (usize, Vec<(usize, usize)>) {
        let mut edges = Vec::new();
        let mut off = 0;
        for &s in sizes {
            for a in 0..s {
                for b in a + 1..s {
                    edges.push((off + a, off + b));
                }
            }
            off += s;
        }
        edges.extend_from_slice(bridges);
        (off, edges)
    }

    #[test]
    fn two_triangles_half() {
        let (n, e) = cliques(&[3, 3], &[]);
        let g = NeighborGraph::from_edges(n, &e);
        let p = Partition::from_assignment(&[0, 0, 0, 1, 1, 1], 1.0, 0);
        assert!((modularity(&g, &p, 1.0).unwrap() - 0.5).abs() < 1e-15);
        let one = Partition::from_assignment(&[0; 6], 1.0, 0);
        assert!(modularity(&g, &one, 1.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn empty_graph_modularity_errors() {
        let g = NeighborGraph::from_edges(3, &[]);
        let p = Partition::from_assignment(&[0, 1, 2], 1.0, 0);
        assert!(modularity(&g, &p, 1.0).is_err());
    }

    #[test]
    fn two_four_cliques() {
        let (n, e) = cliques(&[4, 4], &[]);
        let r = leiden(&NeighborGraph::from_edges(n, &e), &LeidenConfig::default());
        assert_eq!(r.partition.n_clusters(), 2);
        assert_eq!(&r.partition.labels[..4], &[r.partition.labels[0]; 4]);
        assert_eq!(&r.partition.labels[4..], &[r.partition.labels[4]; 4]);
        assert_ne!(r.partition.labels[0], r.partition.labels[4]);
    }

    #[test]
    fn barbell_and_pair_reach_optimum() {
        for (sizes, bridges) in [(vec![4, 4], vec![(3, 4)]), (vec![2], vec![])] {
            let (n, e) = cliques(&sizes, &bridges);
            let g = NeighborGraph::from_edges(n, &e);
            let r = leiden(&g, &LeidenConfig::default());
            let q = modularity(&g, &r.partition, 1.0).unwrap();
            assert!((q - oracle::best_modularity(n, &e, 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn singleton_and_trace() {
        let g = NeighborGraph::from_edges(1, &[]);
        assert_eq!(leiden(&g, &LeidenConfig::default()).partition.n_clusters(), 1);
        let (n, e) = cliques(&[5, 4, 3], &[(0, 5), (5, 9)]);
        let r = leiden(&NeighborGraph::from_edges(n, &e), &LeidenConfig::default());
        assert!(r.trace.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }

    #[test]
    fn resolution_monotone_on_two_cliques() {
        let (n, e) = cliques(&[5, 5], &[(0, 5)]);
        let g = NeighborGraph::from_edges(n, &e);
        let counts: Vec<usize> = [0.5, 1.0, 2.0]
            .iter()
            .map(|&gamma| {
                leiden(&g, &LeidenConfig { gamma, ..Default::default() })
                    .partition
                    .n_clusters()
            })
            .collect();
        assert!(counts.windows(2).all(|w| w[1] >= w[0]), "{counts:?}");
    }
}

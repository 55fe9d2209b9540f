use std::collections::BTreeSet;

use prl_core::graph::{
    assign_clusters, build_knn_graph, cluster_once, communities_connected, knn_lists, leiden, modularity,
    two_pass_cluster, ArtifactRule, ClusterConfig, ClusterModel, LeidenConfig, Metric, NeighborGraph, Partition,
    PointSet,
};
use prl_core::ingest::EmbeddingMatrix;
use prl_core::pipeline::synth::mixture_centres;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random_embeddings(n: usize, d: usize, seed: u64) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f32> = (0..n * d).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
    EmbeddingMatrix::new((0..n).map(|i| format!("t{i}")).collect(), data, d).unwrap()
}

fn brute_neighbours(e: &EmbeddingMatrix, k: usize, metric: Metric) -> Vec<BTreeSet<usize>> {
    let unit = |r: &[f32]| -> Vec<f64> {
        let v: Vec<f64> = r.iter().map(|x| *x as f64).collect();
        match metric {
            Metric::Euclidean => v,
            Metric::Cosine => {
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter().map(|x| x / n).collect()
            }
        }
    };
    let rows: Vec<Vec<f64>> = (0..e.len()).map(|i| unit(e.row(i))).collect();
    rows.iter()
        .enumerate()
        .map(|(i, a)| {
            let mut d: Vec<(f64, usize)> = rows
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(j, b)| {
                    let dist = match metric {
                        Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
                        Metric::Cosine => 1.0 - a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>(),
                    };
                    (dist, j)
                })
                .collect();
            d.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            d.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

#[test]
fn knn_matches_brute_force_for_both_metrics() {
    let e = random_embeddings(300, 8, 1);
    for metric in [Metric::Euclidean, Metric::Cosine] {
        let expected = brute_neighbours(&e, 7, metric);
        let lists = knn_lists(&PointSet::from_embeddings(&e, metric), 7).unwrap();
        for (i, l) in lists.iter().enumerate() {
            assert_eq!(&l.iter().copied().collect::<BTreeSet<_>>(), &expected[i], "row {i}");
        }
        let g = build_knn_graph(&e, 7, metric).unwrap();
        for i in 0..e.len() {
            let union: BTreeSet<usize> = (0..e.len())
                .filter(|&j| expected[i].contains(&j) || expected[j].contains(&i))
                .collect();
            assert_eq!(g.neighbors(i).collect::<BTreeSet<_>>(), union);
        }
    }
}

fn direct_modularity(n: usize, edges: &[(usize, usize)], labels: &[u32], gamma: f64) -> f64 {
    let m = edges.len() as f64;
    let mut deg = vec![0.0; n];
    for &(a, b) in edges {
        deg[a] += 1.0;
        deg[b] += 1.0;
    }
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            if labels[i] != labels[j] {
                continue;
            }
            let a = edges.iter().filter(|&&(x, y)| (x == i && y == j) || (x == j && y == i)).count() as f64;
            q += a - gamma * deg[i] * deg[j] / (2.0 * m);
        }
    }
    q / (2.0 * m)
}

fn exhaustive_optimum(n: usize, edges: &[(usize, usize)]) -> f64 {
    fn rec(i: usize, max: u32, labels: &mut Vec<u32>, n: usize, edges: &[(usize, usize)], best: &mut f64) {
        if i == n {
            *best = best.max(direct_modularity(n, edges, labels, 1.0));
            return;
        }
        for c in 0..=max + 1 {
            labels[i] = c;
            rec(i + 1, max.max(c), labels, n, edges, best);
        }
    }
    let mut labels = vec![0u32; n];
    let mut best = f64::NEG_INFINITY;
    rec(1, 0, &mut labels, n, edges, &mut best);
    best
}

fn random_graph(rng: &mut ChaCha8Rng) -> (usize, Vec<(usize, usize)>) {
    loop {
        let n = rng.random_range(3..=8);
        let p = rng.random_range(0.2..0.7);
        let edges: Vec<(usize, usize)> = (0..n)
            .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
            .filter(|_| rng.random_bool(p))
            .collect();
        if !edges.is_empty() {
            return (n, edges);
        }
    }
}

#[test]
fn leiden_reaches_the_exhaustive_optimum_on_small_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut optimal = 0;
    let runs = 100;
    for run in 0..runs {
        let (n, edges) = random_graph(&mut rng);
        let g = NeighborGraph::from_edges(n, &edges);
        let r = leiden(&g, &LeidenConfig { seed: run, ..Default::default() });
        let q = modularity(&g, &r.partition, 1.0).unwrap();
        assert!((q - direct_modularity(n, &edges, &r.partition.labels, 1.0)).abs() < 1e-12);
        assert!(r.trace.windows(2).all(|w| w[1] >= w[0] - 1e-12), "run {run}: {:?}", r.trace);
        assert!(communities_connected(&g, &r.partition), "run {run}");
        if q >= exhaustive_optimum(n, &edges) - 1e-12 {
            optimal += 1;
        }
    }
    assert!(optimal >= 95, "{optimal} of {runs}");
}

#[test]
fn planted_mixture_is_recovered_by_assignment() {
    let centres = mixture_centres(9, 8, 6.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let per = 150;
    let mut data = Vec::new();
    let mut truth = Vec::new();
    for (k, c) in centres.iter().enumerate() {
        for _ in 0..2 * per {
            data.extend(c.iter().map(|m| (m + rng.sample::<f64, _>(StandardNormal)) as f32));
            truth.push(k);
        }
    }
    let n = truth.len();
    let e = EmbeddingMatrix::new((0..n).map(|i| format!("t{i}")).collect(), data, 8).unwrap();
    let train: Vec<usize> = (0..n).filter(|i| i % 2 == 0).collect();
    let test: Vec<usize> = (0..n).filter(|i| i % 2 == 1).collect();
    let cfg = ClusterConfig { k: 15, ..Default::default() };
    let te = e.select(&train);
    let p = cluster_once(&te, &cfg).unwrap();
    assert_eq!(p.n_clusters(), 9);
    let model = ClusterModel::new(&te, &p, 15, Metric::Euclidean).unwrap();
    // map each found cluster to its majority component
    let mut votes = vec![vec![0usize; 9]; p.n_clusters()];
    for (i, &r) in train.iter().enumerate() {
        votes[p.labels[i] as usize][truth[r]] += 1;
    }
    let to_comp: Vec<usize> = votes
        .iter()
        .map(|v| (0..9).max_by_key(|&k| v[k]).unwrap())
        .collect();
    let assigned = assign_clusters(&model, &e.select(&test)).unwrap();
    let hits = test
        .iter()
        .zip(&assigned)
        .filter(|(&r, &l)| to_comp[l as usize] == truth[r])
        .count();
    assert!(hits as f64 / test.len() as f64 >= 0.99, "{hits} of {}", test.len());
}

#[test]
fn two_pass_removes_a_low_tissue_blob() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let centres = [[0.0, 0.0, 0.0], [8.0, 0.0, 0.0], [0.0, 8.0, 0.0], [0.0, 0.0, 8.0]];
    let mut data = Vec::new();
    let mut tissue = Vec::new();
    for (k, c) in centres.iter().enumerate() {
        for _ in 0..120 {
            data.extend(c.iter().map(|m| (m + rng.sample::<f64, _>(StandardNormal)) as f32));
            tissue.push(if k == 3 { 0.1 } else { 0.9 });
        }
    }
    let n = tissue.len();
    let e = EmbeddingMatrix::new((0..n).map(|i| format!("t{i}")).collect(), data, 3).unwrap();
    let cfg = ClusterConfig { k: 10, ..Default::default() };
    let r = two_pass_cluster(&e, &tissue, &cfg, &ArtifactRule::default()).unwrap();
    assert_eq!(r.kept_rows, (0..360).collect::<Vec<_>>());
    let clean = cluster_once(&e.select(&(0..360).collect::<Vec<_>>()), &cfg).unwrap();
    assert_eq!(clean.labels, r.partition.labels);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn modularity_matches_the_pairwise_sum(seed in 0u64..10_000, gamma in 0.2f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, edges) = random_graph(&mut rng);
        let raw: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let p = Partition::from_assignment(&raw, gamma, 0);
        let g = NeighborGraph::from_edges(n, &edges);
        let q = modularity(&g, &p, gamma).unwrap();
        prop_assert!((q - direct_modularity(n, &edges, &p.labels, gamma)).abs() < 1e-12);
    }

    #[test]
    fn modularity_ignores_label_names(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, edges) = random_graph(&mut rng);
        let raw: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let renamed: Vec<usize> = raw.iter().map(|c| 10 - c).collect();
        let g = NeighborGraph::from_edges(n, &edges);
        let a = modularity(&g, &Partition::from_assignment(&raw, 1.0, 0), 1.0).unwrap();
        let b = modularity(&g, &Partition::from_assignment(&renamed, 1.0, 0), 1.0).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn leiden_is_deterministic_per_seed(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 77);
        let (n, edges) = random_graph(&mut rng);
        let g = NeighborGraph::from_edges(n, &edges);
        let cfg = LeidenConfig { seed, ..Default::default() };
        prop_assert_eq!(leiden(&g, &cfg), leiden(&g, &cfg));
    }
}


use nalgebra::DMatrix;
use prl_core::composition::{clr_transform, multiplicative_replacement, CompositionVector};
use prl_core::enrichment::{hypergeom_fold, hypergeom_pmf, ks_critical_value, ks_two_sample_signed, Sidedness};
use prl_core::ssl::{barlow_twins_loss, bt_loss_gradient, cross_correlation, BtLossConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn comp(w: Vec<f64>) -> CompositionVector {
    CompositionVector { owner_id: "x".into(), w }
}

fn sparse_composition() -> impl Strategy<Value = Vec<f64>> {
    prop_oneof![Just(2usize), Just(46), Just(100)].prop_flat_map(|c| {
        proptest::collection::vec((0u32..20, proptest::bool::weighted(0.3)), c).prop_filter_map("all zero", |v| {
            let raw: Vec<f64> = v.iter().map(|&(x, z)| if z { 0.0 } else { x as f64 }).collect();
            let s: f64 = raw.iter().sum();
            (s > 0.0).then(|| raw.iter().map(|x| x / s).collect())
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn replacement_keeps_unit_sum_and_clr_sums_to_zero(w in sparse_composition()) {
        let delta = 1.0 / (2.0 * w.len() as f64 * 10.0);
        let r = multiplicative_replacement(&comp(w), delta).unwrap();
        prop_assert!((r.w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(r.w.iter().all(|&x| x > 0.0));
        let c = clr_transform(&r).unwrap();
        prop_assert!(c.values.iter().sum::<f64>().abs() < 1e-9);
    }

    #[test]
    fn clr_ignores_overall_scale(w in sparse_composition(), s in 0.1f64..10.0) {
        let r = multiplicative_replacement(&comp(w), 1e-4).unwrap();
        let scaled = comp(r.w.iter().map(|x| x * s).collect());
        let a = clr_transform(&r).unwrap();
        let b = clr_transform(&scaled).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}

#[test]
fn uniform_composition_maps_to_zero() {
    for c in [2usize, 3, 7, 46, 100] {
        let c = clr_transform(&comp(vec![1.0 / c as f64; c])).unwrap();
        assert!(c.values.iter().all(|&v| v == 0.0));
    }
}

fn loss_by_loops(a: &DMatrix<f64>, b: &DMatrix<f64>, cfg: &BtLossConfig) -> (f64, f64, f64) {
    let (n, d) = a.shape();
    let stat = |m: &DMatrix<f64>, j: usize| {
        let mean = (0..n).map(|r| m[(r, j)]).sum::<f64>() / n as f64;
        let var = (0..n).map(|r| (m[(r, j)] - mean).powi(2)).sum::<f64>() / n as f64;
        (mean, (var + cfg.eps * cfg.eps).sqrt())
    };
    let (mut inv, mut red) = (0.0, 0.0);
    for i in 0..d {
        let (ma, sa) = stat(a, i);
        for j in 0..d {
            let (mb, sb) = stat(b, j);
            let mut c = 0.0;
            for r in 0..n {
                c += (a[(r, i)] - ma) / sa * (b[(r, j)] - mb) / sb;
            }
            c /= n as f64;
            if i == j {
                inv += (1.0 - c).powi(2);
            } else {
                red += c * c;
            }
        }
    }
    (inv + cfg.lambda * red, inv, red)
}

#[test]
fn bt_loss_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let d = rng.random_range(1..=6);
        let n = rng.random_range(4..20);
        let a = DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
        let b = DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
        let cfg = BtLossConfig { lambda: rng.random_range(0.001..1.0), eps: 1e-5 };
        let l = barlow_twins_loss(&cross_correlation(&a, &b, cfg.eps).unwrap(), &cfg).unwrap();
        let (loss, inv, red) = loss_by_loops(&a, &b, &cfg);
        assert!((l.loss - loss).abs() < 1e-12);
        assert!((l.invariance - inv).abs() < 1e-12);
        assert!((l.redundancy - red).abs() < 1e-12);
        assert!((l.loss - (l.invariance + cfg.lambda * l.redundancy)).abs() < 1e-12);
    }
}

#[test]
fn bt_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = BtLossConfig { lambda: 0.05, eps: 1e-3 };
    for _ in 0..20 {
        let d = rng.random_range(2..=5);
        let n = rng.random_range(6..12);
        let a = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
        let b = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
        let (_, ga, gb) = bt_loss_gradient(&a, &b, &cfg).unwrap();
        let h = 1e-5;
        for (which, g) in [(0, &ga), (1, &gb)] {
            for r in 0..n {
                for c in 0..d {
                    let bump = |s: f64| {
                        let (mut x, mut y) = (a.clone(), b.clone());
                        if which == 0 { x[(r, c)] += s } else { y[(r, c)] += s }
                        loss_by_loops(&x, &y, &cfg).0
                    };
                    let num = (bump(h) - bump(-h)) / (2.0 * h);
                    let err = (g[(r, c)] - num).abs() / g[(r, c)].abs().max(num.abs()).max(1e-6);
                    assert!(err < 1e-4, "{} vs {num}", g[(r, c)]);
                }
            }
        }
    }
}

#[test]
fn bt_loss_ignores_row_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = BtLossConfig::default();
    let a = DMatrix::from_fn(16, 4, |_, _| rng.random_range(-1.0..1.0));
    let b = DMatrix::from_fn(16, 4, |_, _| rng.random_range(-1.0..1.0));
    let perm: Vec<usize> = (0..16).rev().collect();
    let pa = a.select_rows(&perm);
    let pb = b.select_rows(&perm);
    let l1 = barlow_twins_loss(&cross_correlation(&a, &b, cfg.eps).unwrap(), &cfg).unwrap().loss;
    let l2 = barlow_twins_loss(&cross_correlation(&pa, &pb, cfg.eps).unwrap(), &cfg).unwrap().loss;
    assert!((l1 - l2).abs() < 1e-12);
}

fn ks_brute(a: &[f64], b: &[f64]) -> f64 {
    let cdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
    a.iter().chain(b).map(|&x| (cdf(a, x) - cdf(b, x)).abs()).fold(0.0, f64::max)
}

#[test]
fn ks_matches_grid_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let a: Vec<f64> = (0..rng.random_range(1..40)).map(|_| rng.random_range(0..15) as f64 / 2.0).collect();
        let b: Vec<f64> = (0..rng.random_range(1..60)).map(|_| rng.random_range(0..15) as f64 / 2.0 + 0.5).collect();
        let r = ks_two_sample_signed(&a, &b, 0.01).unwrap();
        assert_eq!(r.statistic, ks_brute(&a, &b));
        let scale = ((a.len() * b.len()) as f64 / (a.len() + b.len()) as f64).sqrt();
        assert_eq!(r.significant, r.statistic * scale > ks_critical_value(0.01));
    }
    assert_eq!(ks_critical_value(0.01), (-0.5 * 0.005f64.ln()).sqrt());
}

#[test]
fn hypergeometric_examples() {
    for (n, k, big_n) in [(4u64, 5u64, 20u64), (30, 40, 100), (500, 3000, 10000)] {
        let s: f64 = (0..=n).map(|x| hypergeom_pmf(x, n, k, big_n)).sum();
        assert!((s - 1.0).abs() < 1e-12, "{s}");
    }
    let r = hypergeom_fold(4, 4, 5, 20, 0.05, Sidedness::OneSided).unwrap();
    assert_eq!(r.p_value, 5.0 / 4845.0);
    assert_eq!(r.fold, 4.0);
}

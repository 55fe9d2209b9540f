use prl_core::stats::{
    average_coefficients, concordance_index, fisher_combine, fit_cox, fit_logistic, kaplan_meier, logrank_test,
    roc_auc, DesignMatrix, FitOptions, Response,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

fn brute_c(s: &[f64], t: &[f64], e: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            // i fails first and j is still at risk
            if e[i] && (t[i] < t[j] || (t[i] == t[j] && !e[j])) {
                den += 1.0;
                if s[i] > s[j] {
                    num += 1.0;
                } else if s[i] == s[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

fn brute_auc(s: &[f64], l: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if l[i] && !l[j] {
                den += 1.0;
                if s[i] > s[j] {
                    num += 1.0;
                } else if s[i] == s[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

#[test]
fn concordance_and_auc_match_pair_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for rep in 0..200 {
        let n = rng.random_range(5..=200);
        // coarse grids force ties in scores and times
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(0..20) as f64 / 4.0).collect();
        let t: Vec<f64> = (0..n).map(|_| rng.random_range(1..30) as f64).collect();
        let e: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
        if e.iter().any(|x| *x) {
            if let Ok(c) = concordance_index(&s, &t, &e) {
                assert_eq!(c, brute_c(&s, &t, &e), "rep {rep}");
            }
        }
        let l: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        if l.iter().any(|x| *x) && l.iter().any(|x| !*x) {
            assert_eq!(roc_auc(&s, &l).unwrap().auc, brute_auc(&s, &l), "rep {rep}");
        }
    }
}

#[test]
fn uninformative_scores_give_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let reps = 200;
    let (mut c_sum, mut a_sum) = (0.0, 0.0);
    for _ in 0..reps {
        let n = 100;
        let s: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let t: Vec<f64> = (0..n).map(|_| Exp::new(1.0).unwrap().sample(&mut rng)).collect();
        let e: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
        let l: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        c_sum += concordance_index(&s, &t, &e).unwrap();
        a_sum += roc_auc(&s, &l).unwrap().auc;
    }
    assert!((c_sum / reps as f64 - 0.5).abs() < 0.01);
    assert!((a_sum / reps as f64 - 0.5).abs() < 0.01);
}

#[test]
fn logrank_detects_hazard_ratio_three() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut hits = 0;
    for _ in 0..100 {
        let draw = |rate: f64, rng: &mut ChaCha8Rng| -> (Vec<f64>, Vec<bool>) {
            (0..60)
                .map(|_| {
                    let t: f64 = Exp::new(rate).unwrap().sample(rng);
                    let c: f64 = Exp::new(0.3).unwrap().sample(rng);
                    (t.min(c), t <= c)
                })
                .unzip()
        };
        let (ta, ea) = draw(3.0, &mut rng);
        let (tb, eb) = draw(1.0, &mut rng);
        let r = logrank_test((&ta, &ea), (&tb, &eb)).unwrap();
        assert!(r.observed_a > r.expected_a);
        if r.p_value < 0.01 {
            hits += 1;
        }
    }
    assert!(hits >= 95, "{hits}");
}

#[test]
fn logrank_null_size_is_nominal() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let reps = 1000;
    let mut rejections = 0;
    for _ in 0..reps {
        let (t, e): (Vec<f64>, Vec<bool>) = (0..80)
            .map(|_| {
                let t: f64 = Exp::new(1.0).unwrap().sample(&mut rng);
                let c: f64 = Exp::new(0.5).unwrap().sample(&mut rng);
                (t.min(c), t <= c)
            })
            .unzip();
        let r = logrank_test((&t[..40], &e[..40]), (&t[40..], &e[40..])).unwrap();
        if r.p_value < 0.05 {
            rejections += 1;
        }
    }
    let rate = rejections as f64 / reps as f64;
    assert!((0.03..0.07).contains(&rate), "{rate}");
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("o{i}")).collect()
}

#[test]
fn refits_average_to_the_planted_logistic_model() {
    let beta = [0.3, -0.8];
    let mut fits = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..5 {
        let n = 800;
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.sample(StandardNormal), rng.sample(StandardNormal)]).collect();
        let y: Vec<bool> = rows
            .iter()
            .map(|r| {
                let eta = 0.2 + beta[0] * r[0] + beta[1] * r[1];
                rng.random::<f64>() < 1.0 / (1.0 + (-eta).exp())
            })
            .collect();
        let d = DesignMatrix::new(ids(n), vec!["a".into(), "b".into()], &rows, Response::Binary(y), false).unwrap();
        fits.push(fit_logistic(&d, &FitOptions::default()).unwrap());
    }
    let avg = average_coefficients(&fits).unwrap();
    let a = avg.iter().find(|c| c.feature == "a").unwrap();
    let b = avg.iter().find(|c| c.feature == "b").unwrap();
    assert!((a.coefficient - beta[0]).abs() < 3.0 * a.std_error);
    assert!((b.coefficient - beta[1]).abs() < 3.0 * b.std_error);
    assert!(a.significant && b.significant);
}

#[test]
fn cox_fit_is_invariant_to_time_rescaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 300;
    let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.sample(StandardNormal)]).collect();
    let surv: Vec<(f64, bool)> = rows
        .iter()
        .map(|r| {
            let t: f64 = Exp::new((0.7 * r[0]).exp()).unwrap().sample(&mut rng);
            let c: f64 = Exp::new(0.4).unwrap().sample(&mut rng);
            (t.min(c), t <= c)
        })
        .collect();
    let scaled: Vec<(f64, bool)> = surv.iter().map(|(t, e)| (t * 12.0, *e)).collect();
    let fit = |s: Vec<(f64, bool)>| {
        let d = DesignMatrix::new(ids(n), vec!["x".into()], &rows, Response::Survival(s), false).unwrap();
        fit_cox(&d, &FitOptions::default()).unwrap()
    };
    let a = fit(surv);
    let b = fit(scaled);
    assert!((a.coefficients[0] - b.coefficients[0]).abs() < 1e-9);
    assert!((a.log_likelihood - b.log_likelihood).abs() < 1e-8);
}

proptest! {
    #[test]
    fn km_is_non_increasing(raw in prop::collection::vec((0.1f64..50.0, any::<bool>()), 1..60)) {
        let (t, e): (Vec<f64>, Vec<bool>) = raw.into_iter().unzip();
        let c = kaplan_meier(&t, &e).unwrap();
        for w in c.steps.windows(2) {
            prop_assert!(w[1].time > w[0].time);
            prop_assert!(w[1].survival <= w[0].survival + 1e-15);
        }
        prop_assert!(c.steps.iter().all(|s| (0.0..=1.0).contains(&s.survival)));
    }

    #[test]
    fn concordance_is_rank_invariant(raw in prop::collection::vec((-5.0f64..5.0, 0.1f64..20.0, any::<bool>()), 3..60)) {
        let s: Vec<f64> = raw.iter().map(|r| r.0).collect();
        let t: Vec<f64> = raw.iter().map(|r| r.1).collect();
        let e: Vec<bool> = raw.iter().map(|r| r.2).collect();
        if let Ok(c) = concordance_index(&s, &t, &e) {
            let warped: Vec<f64> = s.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
            prop_assert_eq!(c, concordance_index(&warped, &t, &e).unwrap());
            let flipped: Vec<f64> = s.iter().map(|v| -v).collect();
            prop_assert!((c + concordance_index(&flipped, &t, &e).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn logrank_is_symmetric(
        a in prop::collection::vec((0.1f64..20.0, any::<bool>()), 2..30),
        b in prop::collection::vec((0.1f64..20.0, any::<bool>()), 2..30),
    ) {
        let (ta, ea): (Vec<f64>, Vec<bool>) = a.into_iter().unzip();
        let (tb, eb): (Vec<f64>, Vec<bool>) = b.into_iter().unzip();
        if let Ok(x) = logrank_test((&ta, &ea), (&tb, &eb)) {
            let y = logrank_test((&tb, &eb), (&ta, &ea)).unwrap();
            prop_assert!((x.chi2 - y.chi2).abs() <= 1e-9 * (1.0 + x.chi2));
            prop_assert!((0.0..=1.0).contains(&x.p_value));
        }
    }

    #[test]
    fn fisher_combination_is_monotone(ps in prop::collection::vec(1e-6f64..1.0, 1..8), i in 0usize..8) {
        let (_, p) = fisher_combine(&ps).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
        let mut smaller = ps.clone();
        let k = i % ps.len();
        smaller[k] *= 0.5;
        prop_assert!(fisher_combine(&smaller).unwrap().1 <= p + 1e-15);
    }
}

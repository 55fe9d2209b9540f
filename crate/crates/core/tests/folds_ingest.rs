use std::collections::{BTreeMap, BTreeSet};

use prl_core::graph::{cluster_once, ClusterConfig, ClusterModel, Metric, Partition};
use prl_core::ingest::{
    load_artifact, load_embeddings, load_manifest, persist_artifact, write_embeddings, CohortManifest,
    EmbeddingMatrix, SlideEntry,
};
use prl_core::pipeline::{audit_fold_plan, make_folds, split_fractions, FoldConstraint, Split};
use prl_core::tile::{tissue_fraction, RasterImage, TissueRule};
use prl_core::PrlError;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_manifest(rng: &mut ChaCha8Rng) -> CohortManifest {
    let n_inst = rng.random_range(15..30);
    let mut slides = Vec::new();
    for i in 0..n_inst {
        for p in 0..rng.random_range(4..12) {
            let patient = format!("I{i}P{p}");
            for s in 0..rng.random_range(1..=2) {
                slides.push(SlideEntry {
                    slide_id: format!("{patient}S{s}"),
                    patient_id: patient.clone(),
                    institution_id: format!("I{i}"),
                    label: Some(if rng.random_bool(0.5) { "LUAD" } else { "LUSC" }.into()),
                    extra: BTreeMap::new(),
                });
            }
        }
    }
    CohortManifest::new("rand".into(), slides, None).unwrap()
}

#[test]
fn institution_folds_are_disjoint_and_balanced() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for seed in 0..100 {
        let m = random_manifest(&mut rng);
        let plan = make_folds(&m, 5, FoldConstraint::Institution, seed).unwrap();
        audit_fold_plan(&plan, &m).unwrap();
        let inst_of: BTreeMap<&str, &str> =
            m.slides.iter().map(|s| (s.patient_id.as_str(), s.institution_id.as_str())).collect();
        for fold in &plan.folds {
            let mut split_of_inst: BTreeMap<&str, Split> = BTreeMap::new();
            for (p, &split) in &fold.patients {
                let prev = split_of_inst.insert(inst_of[p.as_str()], split);
                assert!(prev.is_none_or(|s| s == split), "institution shared across splits");
            }
            let tests: BTreeSet<_> = fold.patients_in(Split::Test).into_iter().collect();
            assert!(!tests.is_empty());
        }
        for fr in split_fractions(&plan, &m) {
            let get = |s| fr.get(&s).copied().unwrap_or(0.0);
            assert!((get(Split::Test) - 0.2).abs() <= 0.1, "{fr:?}");
            assert!((get(Split::Val) - 0.2).abs() <= 0.1, "{fr:?}");
            assert!((get(Split::Train) - 0.6).abs() <= 0.1, "{fr:?}");
        }
    }
}

#[test]
fn patient_folds_keep_slides_together_and_cover_everyone_once() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for seed in 0..20 {
        let m = random_manifest(&mut rng);
        let plan = make_folds(&m, 5, FoldConstraint::Patient, seed).unwrap();
        let mut tested = BTreeMap::new();
        for fold in &plan.folds {
            assert!(fold.patients_in(Split::Val).is_empty());
            for p in fold.patients_in(Split::Test) {
                *tested.entry(p.to_string()).or_insert(0) += 1;
            }
        }
        assert_eq!(tested.len(), m.patients().len());
        assert!(tested.values().all(|&c| c == 1));
    }
}

#[test]
fn audit_rejects_a_leaky_plan() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let m = random_manifest(&mut rng);
    let mut plan = make_folds(&m, 5, FoldConstraint::Institution, 0).unwrap();
    let fold = &mut plan.folds[0];
    let victim = fold.patients_in(Split::Test)[0].to_string();
    fold.patients.insert(victim, Split::Train);
    assert!(audit_fold_plan(&plan, &m).is_err());
}

#[test]
fn embeddings_and_manifest_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let e = EmbeddingMatrix::new(
        (0..50).map(|i| format!("t{i}")).collect(),
        (0..50 * 6).map(|_| rng.random_range(-3.0f32..3.0)).collect(),
        6,
    )
    .unwrap();
    let p = dir.path().join("e.prle");
    write_embeddings(&e, &p).unwrap();
    assert_eq!(load_embeddings(&p).unwrap(), e);

    let m = random_manifest(&mut rng);
    let mp = dir.path().join("manifest.tsv");
    m.write(&mp).unwrap();
    let back = load_manifest(&mp).unwrap();
    assert_eq!(back.slides, m.slides);
}

#[test]
fn artifacts_roundtrip_and_detect_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let e = EmbeddingMatrix::new(
        (0..120).map(|i| format!("t{i}")).collect(),
        (0..120 * 3).map(|i| rng.random_range(-1.0f32..1.0) + if i / 3 < 60 { 0.0 } else { 6.0 }).collect(),
        3,
    )
    .unwrap();
    let p = cluster_once(&e, &ClusterConfig { k: 8, ..Default::default() }).unwrap();
    let model = ClusterModel::new(&e, &p, 8, Metric::Euclidean).unwrap();
    let pp = dir.path().join("partition.prla");
    let mp = dir.path().join("model.prla");
    persist_artifact(&p, &pp).unwrap();
    persist_artifact(&model, &mp).unwrap();
    assert_eq!(load_artifact::<Partition>(&pp).unwrap(), p);
    assert_eq!(load_artifact::<ClusterModel>(&mp).unwrap(), model);
    assert!(load_artifact::<ClusterModel>(&pp).is_err());

    let mut bytes = std::fs::read(&pp).unwrap();
    let at = bytes.len() - 80;
    bytes[at] ^= 0x01;
    std::fs::write(&pp, &bytes).unwrap();
    assert!(matches!(load_artifact::<Partition>(&pp), Err(PrlError::Checksum { .. })));
}

fn raster(w: u32, h: u32, seed: u64) -> RasterImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..w * h)
        .flat_map(|_| {
            if rng.random_bool(0.4) {
                [245, 246, 244]
            } else {
                [rng.random_range(120..230), rng.random_range(40..160), rng.random_range(120..220)]
            }
        })
        .collect();
    RasterImage::from_raw(w, h, data, 0.5).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn tissue_fraction_ignores_rotation_and_flips(seed in 0u64..1000, w in 4u32..40, h in 4u32..40) {
        let img = raster(w, h, seed);
        let rule = TissueRule::default();
        let f = tissue_fraction(&img, &rule);
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert_eq!(f, tissue_fraction(&img.rotate90(), &rule));
        prop_assert_eq!(f, tissue_fraction(&img.flip_horizontal(), &rule));
        prop_assert_eq!(f, tissue_fraction(&img.flip_vertical(), &rule));
    }
}

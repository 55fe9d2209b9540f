//! Synthetic cohorts with planted structure, used to validate the pipeline
//! end to end.

use std::collections::BTreeMap;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{PrlError, Result};
use crate::ingest::annotations::{write_cell_counts, write_growth_patterns, write_signatures};
use crate::ingest::tsv::{write_text, TsvWriter};
use crate::ingest::{
    write_embeddings, write_tiles, CellCounts, CohortManifest, Endpoint, GrowthPattern, SlideEntry, SurvivalRecord,
    SurvivalTable, TileRecord,
};
use crate::ingest::EmbeddingMatrix;

pub const LABELS: [&str; 2] = ["LUAD", "LUSC"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticCohortSpec {
    pub n_patients: usize,
    pub external_patients: usize,
    pub n_institutions: usize,
    /// Share of patients contributing a second slide.
    pub second_slide_fraction: f64,
    pub tiles_per_slide: usize,
    pub n_clusters: usize,
    pub dim: usize,
    /// Distance between mixture centres in units of the within-cluster sd.
    pub separation: f64,
    /// Dirichlet concentration per cluster before effects.
    pub concentration: f64,
    /// `(cluster, effect)`: concentration multiplied by `exp(effect)` for the
    /// second label.
    pub subtype_effects: Vec<(usize, f64)>,
    /// `(cluster, log hazard ratio)` per unit of the cluster's CLR value.
    pub hazard_effects: Vec<(usize, f64)>,
    pub baseline_hazard: f64,
    pub censoring_rate: f64,
    /// Share of tiles drawn from a low-tissue artifact component.
    pub artifact_fraction: f64,
    /// Cluster whose tiles carry high inflammatory cell counts.
    pub inflammatory_cluster: Option<usize>,
    /// Mean shift of external-cohort embeddings, in sd units.
    pub external_shift: f64,
    pub seed: u64,
}

impl Default for SyntheticCohortSpec {
    fn default() -> Self {
        SyntheticCohortSpec {
            n_patients: 200,
            external_patients: 60,
            n_institutions: 12,
            second_slide_fraction: 0.2,
            tiles_per_slide: 500,
            n_clusters: 20,
            dim: 16,
            separation: 6.0,
            concentration: 0.5,
            subtype_effects: vec![(0, 3.0), (1, -3.0)],
            hazard_effects: vec![(2, 1.0)],
            baseline_hazard: 0.02,
            censoring_rate: 0.3,
            artifact_fraction: 0.03,
            inflammatory_cluster: Some(3),
            external_shift: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticCohortSpec {
    /// Same cohort shape with every planted effect removed.
    pub fn null(&self) -> Self {
        SyntheticCohortSpec {
            subtype_effects: self.subtype_effects.iter().map(|(c, _)| (*c, 0.0)).collect(),
            hazard_effects: self.hazard_effects.iter().map(|(c, _)| (*c, 0.0)).collect(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PrlError::Infeasible(m));
        if self.n_clusters < 2 || self.tiles_per_slide == 0 || self.n_patients < 2 {
            return bad("need at least 2 clusters, 2 patients and 1 tile per slide".into());
        }
        if self.dim < 2 {
            return bad("embedding dim must be at least 2".into());
        }
        if let Some((c, _)) = self
            .subtype_effects
            .iter()
            .chain(&self.hazard_effects)
            .find(|(c, _)| *c >= self.n_clusters)
        {
            return bad(format!("effect on nonexistent cluster {c}"));
        }
        if self.inflammatory_cluster.is_some_and(|c| c >= self.n_clusters) {
            return bad("inflammatory cluster out of range".into());
        }
        if !(0.0..1.0).contains(&self.censoring_rate) || !(0.0..1.0).contains(&self.artifact_fraction) {
            return bad("censoring rate and artifact fraction must lie in [0, 1)".into());
        }
        if !(self.concentration > 0.0) || !(self.baseline_hazard > 0.0) || !(0.0..=1.0).contains(&self.second_slide_fraction) {
            return bad("concentration and baseline hazard must be positive".into());
        }
        if self.n_institutions < 2 {
            return bad("need at least 2 institutions".into());
        }
        Ok(())
    }
}

/// Mixture centres on a square grid in the first two coordinates with
/// spacing `separation`, so each centre has at most four neighbours at the
/// minimum distance.
pub fn mixture_centres(n_clusters: usize, dim: usize, separation: f64) -> Vec<Vec<f64>> {
    let cols = (n_clusters as f64).sqrt().ceil() as usize;
    (0..n_clusters)
        .map(|k| {
            let mut c = vec![0.0; dim];
            c[0] = separation * (k % cols) as f64;
            c[1] = separation * (k / cols) as f64;
            c
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: SyntheticCohortSpec,
    pub positive_label: String,
    pub centres: Vec<Vec<f64>>,
    pub artifact_centre: Vec<f64>,
    pub censoring_hazard: BTreeMap<String, f64>,
    pub realized_censoring: BTreeMap<String, f64>,
    /// Signature equal to the inflammatory cluster's patient proportion plus
    /// small noise.
    pub planted_signature: Option<String>,
}

/// One generated cohort held in memory.
#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    pub manifest: CohortManifest,
    pub tiles: Vec<TileRecord>,
    pub embeddings: EmbeddingMatrix,
    pub survival: SurvivalTable,
    /// Generating component per tile; `None` for artifact tiles.
    pub components: Vec<Option<usize>>,
    pub cell_counts: BTreeMap<String, CellCounts>,
    pub growth_patterns: BTreeMap<String, GrowthPattern>,
    /// True patient compositions.
    pub compositions: BTreeMap<String, Vec<f64>>,
}

fn dirichlet(alpha: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let draws: Vec<f64> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("positive shape").sample(rng).max(1e-300))
        .collect();
    let s: f64 = draws.iter().sum();
    draws.iter().map(|d| d / s).collect()
}

fn clr(w: &[f64]) -> Vec<f64> {
    let logs: Vec<f64> = w.iter().map(|x| x.ln()).collect();
    let m = logs.iter().sum::<f64>() / logs.len() as f64;
    logs.iter().map(|l| l - m).collect()
}

/// Censoring hazard giving the requested expected censored share under
/// independent exponential censoring, found by bisection.
fn censoring_hazard(event_hazards: &[f64], rate: f64) -> f64 {
    if rate == 0.0 {
        return 0.0;
    }
    let share = |mu: f64| event_hazards.iter().map(|l| mu / (mu + l)).sum::<f64>() / event_hazards.len() as f64;
    let (mut lo, mut hi) = (0.0, 1.0);
    while share(hi) < rate {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if share(mid) < rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

struct CohortDraw<'a> {
    spec: &'a SyntheticCohortSpec,
    centres: &'a [Vec<f64>],
    artifact_centre: &'a [f64],
    shift: f64,
}

impl CohortDraw<'_> {
    fn draw(
        &self,
        cohort_id: &str,
        prefix: &str,
        n_patients: usize,
        institutions: &[String],
        rng: &mut ChaCha8Rng,
    ) -> Result<(SyntheticCohort, BTreeMap<Endpoint, f64>, BTreeMap<Endpoint, f64>)> {
        let spec = self.spec;
        let c = spec.n_clusters;
        // skewed institution sizes
        let inst_w: Vec<f64> = institutions.iter().map(|_| rng.random_range(0.5..2.0)).collect();
        let inst_pick = WeightedIndex::new(&inst_w).map_err(|e| PrlError::Infeasible(e.to_string()))?;
        let tissue_ok = rand::distr::Uniform::new(0.6, 1.0).expect("valid range");
        let tissue_bad = rand::distr::Uniform::new(0.02, 0.25).expect("valid range");

        let mut slides = Vec::new();
        let mut tiles = Vec::new();
        let mut data: Vec<f32> = Vec::new();
        let mut components = Vec::new();
        let mut cell_counts = BTreeMap::new();
        let mut growth = BTreeMap::new();
        let mut compositions = BTreeMap::new();
        let mut linear = Vec::new();
        let poisson = |m: f64, rng: &mut ChaCha8Rng| Poisson::new(m).expect("positive mean").sample(rng) as u32;

        for p in 0..n_patients {
            let patient = format!("{prefix}{p:04}");
            let label = rng.random_range(0..2usize);
            let inst = &institutions[inst_pick.sample(rng)];
            let mut alpha = vec![spec.concentration; c];
            if label == 1 {
                for &(k, e) in &spec.subtype_effects {
                    alpha[k] *= e.exp();
                }
            }
            let w = dirichlet(&alpha, rng);
            let z = clr(&w);
            linear.push((patient.clone(), spec.hazard_effects.iter().map(|&(k, b)| b * z[k]).sum::<f64>()));
            let cat = WeightedIndex::new(&w).map_err(|e| PrlError::Infeasible(e.to_string()))?;
            let n_slides = 1 + usize::from(rng.random::<f64>() < spec.second_slide_fraction);
            for s in 0..n_slides {
                let slide = format!("{patient}_S{s}");
                slides.push(SlideEntry {
                    slide_id: slide.clone(),
                    patient_id: patient.clone(),
                    institution_id: inst.clone(),
                    label: Some(LABELS[label].to_string()),
                    extra: BTreeMap::new(),
                });
                let side = (spec.tiles_per_slide as f64).sqrt().ceil() as usize;
                for t in 0..spec.tiles_per_slide {
                    let tile_id = format!("{slide}_{}_{}", t / side, t % side);
                    let artifact = rng.random::<f64>() < spec.artifact_fraction;
                    let comp = if artifact { None } else { Some(cat.sample(rng)) };
                    let centre: &[f64] = comp.map_or(self.artifact_centre, |k| &self.centres[k]);
                    for &m in centre {
                        data.push((m + self.shift + rng.sample::<f64, _>(StandardNormal)) as f32);
                    }
                    let tissue = if artifact { rng.sample(tissue_bad) } else { rng.sample(tissue_ok) };
                    tiles.push(TileRecord {
                        tile_id: tile_id.clone(),
                        slide_id: slide.clone(),
                        row: (t / side) as u32,
                        col: (t % side) as u32,
                        tissue_fraction: tissue,
                        path: None,
                    });
                    let inflamed = comp.is_some() && comp == spec.inflammatory_cluster;
                    let subtype = comp.is_some_and(|k| spec.subtype_effects.iter().any(|e| e.0 == k));
                    cell_counts.insert(
                        tile_id.clone(),
                        CellCounts {
                            neoplastic: poisson(if subtype { 30.0 } else { 10.0 }, rng),
                            connective: poisson(8.0, rng),
                            inflammatory: poisson(if inflamed { 25.0 } else { 5.0 }, rng),
                            dead: poisson(1.0, rng),
                        },
                    );
                    if label == 0 {
                        let pattern = match comp {
                            Some(k) if rng.random::<f64>() < 0.6 => GrowthPattern::ALL[k % GrowthPattern::ALL.len()],
                            _ => GrowthPattern::ALL[rng.random_range(0..GrowthPattern::ALL.len())],
                        };
                        growth.insert(tile_id.clone(), pattern);
                    }
                    components.push(comp);
                }
            }
            compositions.insert(patient, w);
        }

        let mut survival = SurvivalTable::default();
        let mut mus = BTreeMap::new();
        let mut realized = BTreeMap::new();
        for (endpoint, base, scale) in [
            (Endpoint::OverallSurvival, spec.baseline_hazard, 1.0),
            (Endpoint::RecurrenceFree, 2.0 * spec.baseline_hazard, 1.2),
        ] {
            let hazards: Vec<f64> = linear.iter().map(|(_, eta)| base * (scale * eta).exp()).collect();
            let mu = censoring_hazard(&hazards, spec.censoring_rate);
            let mut censored = 0usize;
            for ((patient, _), &h) in linear.iter().zip(&hazards) {
                let t = Exp::new(h).expect("positive hazard").sample(rng);
                let cens = if mu > 0.0 { Exp::new(mu).expect("positive").sample(rng) } else { f64::INFINITY };
                let event = t <= cens;
                censored += usize::from(!event);
                let time = t.min(cens).max(1e-3);
                survival.insert(patient, endpoint, SurvivalRecord { time, event })?;
            }
            mus.insert(endpoint, mu);
            realized.insert(endpoint, censored as f64 / linear.len() as f64);
        }
        let ids = tiles.iter().map(|t| t.tile_id.clone()).collect();
        let embeddings = EmbeddingMatrix::new(ids, data, spec.dim)?;
        let manifest = CohortManifest::new(
            cohort_id.to_string(),
            slides,
            Some(LABELS.iter().map(|s| s.to_string()).collect()),
        )?;
        Ok((
            SyntheticCohort {
                manifest,
                tiles,
                embeddings,
                survival,
                components,
                cell_counts,
                growth_patterns: growth,
                compositions,
            },
            mus,
            realized,
        ))
    }
}

pub const SIGNATURE_NAMES: [&str; 3] = ["lymphocyte_infiltration", "wound_healing", "ifn_gamma_response"];

/// Generates the primary and external cohorts plus annotations.
pub fn generate_synthetic_cohort(spec: &SyntheticCohortSpec) -> Result<(SyntheticCohort, SyntheticCohort, BTreeMap<String, Vec<f64>>, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centres = mixture_centres(spec.n_clusters, spec.dim, spec.separation);
    let mut artifact_centre = vec![spec.separation; spec.dim];
    artifact_centre[0] = -2.0 * spec.separation;
    artifact_centre[1] = -2.0 * spec.separation;
    let institutions: Vec<String> = (0..spec.n_institutions).map(|i| format!("I{i:02}")).collect();
    let draw = CohortDraw {
        spec,
        centres: &centres,
        artifact_centre: &artifact_centre,
        shift: 0.0,
    };
    let (primary, mus, realized) = draw.draw("primary", "P", spec.n_patients, &institutions, &mut rng)?;
    let ext_inst: Vec<String> = (0..3).map(|i| format!("X{i:02}")).collect();
    let ext_draw = CohortDraw {
        shift: spec.external_shift,
        ..draw
    };
    let (external, _, _) = ext_draw.draw("external", "E", spec.external_patients.max(2), &ext_inst, &mut rng)?;

    let noise = Normal::new(0.0, 0.01).expect("valid sd");
    let signatures: BTreeMap<String, Vec<f64>> = primary
        .compositions
        .iter()
        .map(|(p, w)| {
            let planted = spec.inflammatory_cluster.map_or(f64::NAN, |k| w[k] + noise.sample(&mut rng));
            let row = vec![
                planted,
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
            ];
            (p.clone(), row)
        })
        .collect();
    let truth = GroundTruth {
        spec: spec.clone(),
        positive_label: LABELS[1].to_string(),
        centres,
        artifact_centre,
        censoring_hazard: mus.iter().map(|(e, m)| (e.as_str().to_string(), *m)).collect(),
        realized_censoring: realized.iter().map(|(e, m)| (e.as_str().to_string(), *m)).collect(),
        planted_signature: spec.inflammatory_cluster.map(|_| SIGNATURE_NAMES[0].to_string()),
    };
    Ok((primary, external, signatures, truth))
}

fn write_cohort(c: &SyntheticCohort, dir: &Path) -> Result<()> {
    c.manifest.write(&dir.join("manifest.tsv"))?;
    write_tiles(&c.tiles, &dir.join("tiles.tsv"))?;
    write_embeddings(&c.embeddings, &dir.join("embeddings.prle"))?;
    c.survival.write(&dir.join("survival.tsv"))?;
    let mut w = TsvWriter::new(&["tile_id", "component"]);
    for (id, comp) in c.embeddings.tile_ids().iter().zip(&c.components) {
        w.row(&[id.clone(), comp.map_or_else(|| "artifact".to_string(), |k| k.to_string())]);
    }
    w.write(&dir.join("tile_truth.tsv"))
}

/// Cluster settings scaled to a synthetic cohort of this size.
pub fn suggested_config(spec: &SyntheticCohortSpec) -> String {
    format!(
        "seed = {seed}\n\n\
         [data]\nmanifest = \"manifest.tsv\"\ntiles = \"tiles.tsv\"\nembeddings = \"embeddings.prle\"\nsurvival = \"survival.tsv\"\n\
         cell_counts = \"cell_counts.tsv\"\nsignatures = \"signatures.tsv\"\ngrowth_patterns = \"growth_patterns.tsv\"\n\n\
         [data.external]\nmanifest = \"external/manifest.tsv\"\ntiles = \"external/tiles.tsv\"\n\
         embeddings = \"external/embeddings.prle\"\nsurvival = \"external/survival.tsv\"\n\n\
         [cluster]\nk = 15\ngamma = 1.0\nsample = 5000\nk_assign = 15\n\n\
         [classify]\nfolds = 5\nridge = 1.0\n\n\
         [survival]\nfolds = 5\nridge = 0.1\n\n\
         [enrichment]\nalpha = 0.01\nmin_coverage = 0.3\n",
        seed = spec.seed
    )
}

/// Writes both cohorts, annotations, ground truth and a runnable config.
pub fn write_synthetic_cohort(spec: &SyntheticCohortSpec, dir: &Path) -> Result<GroundTruth> {
    let (primary, external, signatures, truth) = generate_synthetic_cohort(spec)?;
    write_cohort(&primary, dir)?;
    write_cohort(&external, &dir.join("external"))?;
    write_cell_counts(&primary.cell_counts, &dir.join("cell_counts.tsv"))?;
    write_growth_patterns(&primary.growth_patterns, &dir.join("growth_patterns.tsv"))?;
    let names: Vec<String> = SIGNATURE_NAMES.iter().map(|s| s.to_string()).collect();
    write_signatures(&names, &signatures, &dir.join("signatures.tsv"))?;
    write_text(&dir.join("ground_truth.json"), &serde_json::to_string_pretty(&truth)?)?;
    write_text(&dir.join("config.toml"), &suggested_config(spec))?;
    Ok(truth)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticCohortSpec {
        SyntheticCohortSpec {
            n_patients: 30,
            external_patients: 5,
            tiles_per_slide: 40,
            ..Default::default()
        }
    }

    #[test]
    fn rejects_bad_effects() {
        let s = SyntheticCohortSpec {
            hazard_effects: vec![(99, 1.0)],
            ..small()
        };
        assert!(matches!(s.validate(), Err(PrlError::Infeasible(_))));
    }

    #[test]
    fn deterministic_and_consistent() {
        let a = generate_synthetic_cohort(&small()).unwrap();
        let b = generate_synthetic_cohort(&small()).unwrap();
        assert_eq!(a.0.embeddings, b.0.embeddings);
        assert_eq!(a.0.tiles.len(), a.0.embeddings.len());
        assert_eq!(a.0.manifest.patients().len(), 30);
        let centres = mixture_centres(20, 16, 6.0);
        for i in 0..20 {
            for j in 0..i {
                let d: f64 = centres[i].iter().zip(&centres[j]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                assert!(d >= 6.0 - 1e-12);
            }
        }
    }

    #[test]
    fn censoring_hazard_hits_rate() {
        let h = vec![0.01, 0.05, 0.2, 1.0];
        let mu = censoring_hazard(&h, 0.3);
        let share: f64 = h.iter().map(|l| mu / (mu + l)).sum::<f64>() / 4.0;
        assert!((share - 0.3).abs() < 1e-12);
    }
}

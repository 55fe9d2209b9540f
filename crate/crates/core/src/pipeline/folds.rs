//! Cross-validation fold plans that never share a patient (or institution)
//! between splits.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PrlError, Result};
use crate::ingest::tsv::TsvWriter;
use crate::ingest::CohortManifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FoldConstraint {
    /// Whole institutions move between splits; train/validation/test.
    Institution,
    /// Whole patients move between splits; train/test only.
    Patient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    /// Split of every patient in the cohort.
    pub patients: BTreeMap<String, Split>,
}

impl Fold {
    pub fn patients_in(&self, split: Split) -> Vec<&str> {
        self.patients
            .iter()
            .filter(|(_, s)| **s == split)
            .map(|(p, _)| p.as_str())
            .collect()
    }

    pub fn split_of(&self, patient: &str) -> Option<Split> {
        self.patients.get(patient).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub constraint: FoldConstraint,
    pub seed: u64,
    /// Units (institutions or patients) per group; fold `f` tests group `f`.
    pub groups: Vec<Vec<String>>,
    pub folds: Vec<Fold>,
}

/// Packs weighted units into `k` groups, largest first, each into the
/// currently lightest group. Equal weights are ordered by a seeded shuffle.
fn pack(units: Vec<(String, usize)>, k: usize, seed: u64) -> Vec<Vec<String>> {
    let mut units = units;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    units.shuffle(&mut rng);
    units.sort_by(|a, b| b.1.cmp(&a.1));
    let mut groups = vec![Vec::new(); k];
    let mut load = vec![0usize; k];
    for (u, w) in units {
        let g = (0..k).min_by_key(|&g| (load[g], g)).expect("k > 0");
        load[g] += w;
        groups[g].push(u);
    }
    groups.iter_mut().for_each(|g| g.sort());
    groups
}

/// Builds `k` folds. Institution folds test group `f`, validate on group
/// `f + 1` and train on the rest; patient folds have no validation split.
pub fn make_folds(manifest: &CohortManifest, k: usize, constraint: FoldConstraint, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(PrlError::Precondition(format!("need at least 2 folds, got {k}")));
    }
    let mut patient_inst: BTreeMap<&str, &str> = BTreeMap::new();
    let mut weight: BTreeMap<&str, usize> = BTreeMap::new();
    for s in &manifest.slides {
        patient_inst.insert(&s.patient_id, &s.institution_id);
        let unit = match constraint {
            FoldConstraint::Institution => s.institution_id.as_str(),
            FoldConstraint::Patient => s.patient_id.as_str(),
        };
        *weight.entry(unit).or_insert(0) += 1;
    }
    let needed = match constraint {
        FoldConstraint::Institution => k.max(3),
        FoldConstraint::Patient => k,
    };
    if weight.len() < needed {
        return Err(PrlError::Infeasible(format!(
            "{} {:?} units cannot fill {k} disjoint folds",
            weight.len(),
            constraint
        )));
    }
    let units = match constraint {
        FoldConstraint::Institution => weight.iter().map(|(u, w)| (u.to_string(), *w)).collect(),
        // patients are spread evenly by count, not by slide weight
        FoldConstraint::Patient => weight.keys().map(|u| (u.to_string(), 1)).collect(),
    };
    let groups = pack(units, k, seed);
    let mut group_of: BTreeMap<&str, usize> = BTreeMap::new();
    for (g, members) in groups.iter().enumerate() {
        for u in members {
            group_of.insert(u.as_str(), g);
        }
    }
    let folds = (0..k)
        .map(|f| {
            let patients = patient_inst
                .iter()
                .map(|(p, inst)| {
                    let g = match constraint {
                        FoldConstraint::Institution => group_of[inst],
                        FoldConstraint::Patient => group_of[p],
                    };
                    let split = if g == f {
                        Split::Test
                    } else if constraint == FoldConstraint::Institution && g == (f + 1) % k {
                        Split::Val
                    } else {
                        Split::Train
                    };
                    (p.to_string(), split)
                })
                .collect();
            Fold { patients }
        })
        .collect();
    let plan = FoldPlan {
        k,
        constraint,
        seed,
        groups,
        folds,
    };
    audit_fold_plan(&plan, manifest)?;
    Ok(plan)
}

/// Fails when any patient, or under the institution constraint any
/// institution, appears in more than one split of a fold.
pub fn audit_fold_plan(plan: &FoldPlan, manifest: &CohortManifest) -> Result<()> {
    for (f, fold) in plan.folds.iter().enumerate() {
        let mut inst_splits: BTreeMap<&str, BTreeSet<Split>> = BTreeMap::new();
        for s in &manifest.slides {
            let split = fold
                .split_of(&s.patient_id)
                .ok_or_else(|| PrlError::Validation(format!("fold {f}: patient '{}' unassigned", s.patient_id)))?;
            inst_splits.entry(&s.institution_id).or_default().insert(split);
        }
        if plan.constraint == FoldConstraint::Institution {
            if let Some((inst, splits)) = inst_splits.iter().find(|(_, s)| s.len() > 1) {
                return Err(PrlError::Validation(format!(
                    "fold {f}: institution '{inst}' appears in splits {splits:?}"
                )));
            }
        }
        if fold.patients_in(Split::Train).is_empty() || fold.patients_in(Split::Test).is_empty() {
            return Err(PrlError::Validation(format!("fold {f}: empty train or test split")));
        }
    }
    Ok(())
}

/// Fraction of slides in each split, per fold.
pub fn split_fractions(plan: &FoldPlan, manifest: &CohortManifest) -> Vec<BTreeMap<Split, f64>> {
    let n = manifest.slides.len() as f64;
    plan.folds
        .iter()
        .map(|fold| {
            let mut m = BTreeMap::new();
            for s in &manifest.slides {
                *m.entry(fold.split_of(&s.patient_id).expect("audited")).or_insert(0.0) += 1.0 / n;
            }
            m
        })
        .collect()
}

pub fn fold_plan_table(plan: &FoldPlan) -> TsvWriter {
    let mut w = TsvWriter::new(&["fold", "patient_id", "split"]);
    for (f, fold) in plan.folds.iter().enumerate() {
        for (p, s) in &fold.patients {
            w.row(&[f.to_string(), p.clone(), s.as_str().to_string()]);
        }
    }
    w
}

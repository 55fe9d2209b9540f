//! Institution-disjoint cross-validated subtype classification.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{fit_options, RunConfig};
use super::data::Cohort;
use super::folds::{fold_plan_table, make_folds, FoldConstraint, Split};
use super::report::{emit_reports, write_summary, RunKind, RunSummary};
use super::run::{
    choose_delta, clr_map, cluster_training, fit_table, fold_seed, label_cohort, mean, median_fold, opt_f64,
    owner_compositions, rows_for, write_locked, LockedClusterConfig,
};
use crate::composition::{cluster_header, write_clr, write_compositions, Grouping};
use crate::error::{PrlError, Result, ResultExt};
use crate::ingest::tsv::{fmt_f64, TsvWriter};
use crate::stats::{average_coefficients, fit_logistic, roc_auc, CombinedCoefficient, DesignMatrix, ModelFit, Response};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassFoldMetrics {
    pub fold: usize,
    pub n_clusters: usize,
    pub delta: f64,
    pub train_auc: Option<f64>,
    pub val_auc: Option<f64>,
    pub test_auc: Option<f64>,
    pub external_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationRun {
    pub folds: Vec<ClassFoldMetrics>,
    pub locked: LockedClusterConfig,
    /// Locked-configuration coefficients averaged over folds, intercept
    /// excluded.
    pub combined: Vec<CombinedCoefficient>,
    pub mean_test_auc: Option<f64>,
    pub mean_val_auc: Option<f64>,
    pub mean_external_auc: Option<f64>,
}

pub fn positive_label(cfg: &RunConfig, cohort: &Cohort) -> Result<String> {
    let label = match &cfg.classify.positive_label {
        Some(l) => l.clone(),
        None => cohort
            .manifest
            .label_set
            .last()
            .cloned()
            .ok_or_else(|| PrlError::Precondition("manifest declares no labels".into()))?,
    };
    if !cohort.manifest.label_set.contains(&label) {
        return Err(PrlError::Referential(format!("positive label '{label}' not in the label set")));
    }
    Ok(label)
}

struct Scored {
    owner: String,
    cohort: &'static str,
    split: Split,
    label: bool,
    score: f64,
}

fn auc_of(scored: &[Scored], cohort: &str, split: Option<Split>) -> Option<f64> {
    let (s, l): (Vec<f64>, Vec<bool>) = scored
        .iter()
        .filter(|x| x.cohort == cohort && split.is_none_or(|sp| x.split == sp))
        .map(|x| (x.score, x.label))
        .unzip();
    roc_auc(&s, &l).ok().map(|r| r.auc)
}

/// Fits on the training slides of one fold and scores every slide.
#[allow(clippy::too_many_arguments)]
fn fit_and_score(
    cfg: &RunConfig,
    cohort: &Cohort,
    labels: &[u32],
    external: Option<(&Cohort, &[u32])>,
    model: &crate::graph::ClusterModel,
    split_of_slide: &BTreeMap<String, Split>,
    positive: &str,
) -> Result<(ModelFit, f64, Vec<Scored>)> {
    let all: BTreeSet<String> = split_of_slide.keys().cloned().collect();
    let comps = owner_compositions(cohort, labels, model, Grouping::Slide, &all)?;
    let train: Vec<_> = comps
        .iter()
        .filter(|c| split_of_slide[&c.owner_id] == Split::Train)
        .cloned()
        .collect();
    let delta = choose_delta(cfg, &train, model.n_clusters);
    let clr = clr_map(&comps, delta)?;
    let is_pos = |c: &Cohort, s: &str| c.manifest.slide(s).and_then(|e| e.label.as_deref()).map(|l| l == positive);
    let (ids, rows, ys) = rows_for(
        &clr,
        split_of_slide.iter().filter(|(_, s)| **s == Split::Train).map(|(k, _)| k.as_str()),
        |s| is_pos(cohort, s),
    );
    let design = DesignMatrix::new(ids, cluster_header(model.n_clusters), &rows, Response::Binary(ys), true)?;
    let fit = fit_logistic(&design, &fit_options(cfg.classify.ridge))?;
    let mut scored = Vec::new();
    for (owner, x) in &clr {
        if let Some(label) = is_pos(cohort, owner) {
            scored.push(Scored {
                owner: owner.clone(),
                cohort: "primary",
                split: split_of_slide[owner],
                label,
                score: fit.linear_predictor(std::slice::from_ref(x))[0],
            });
        }
    }
    if let Some((ext, ext_labels)) = external {
        let owners: BTreeSet<String> = ext.manifest.slides.iter().map(|s| s.slide_id.clone()).collect();
        let ext_comps = owner_compositions(ext, ext_labels, model, Grouping::Slide, &owners)?;
        for (owner, x) in clr_map(&ext_comps, delta)? {
            if let Some(label) = is_pos(ext, &owner) {
                scored.push(Scored {
                    owner,
                    cohort: "external",
                    split: Split::Test,
                    label,
                    score: fit.linear_predictor(&[x])[0],
                });
            }
        }
    }
    Ok((fit, delta, scored))
}

fn predictions_table(scored: &[Scored], positive: &str) -> TsvWriter {
    let mut w = TsvWriter::new(&["owner_id", "cohort", "split", "positive", "score"]);
    w.directive(&format!("positive_label={positive}"));
    for s in scored {
        w.row(&[
            s.owner.clone(),
            s.cohort.to_string(),
            s.split.as_str().to_string(),
            u8::from(s.label).to_string(),
            fmt_f64(s.score),
        ]);
    }
    w
}

fn roc_rows(w: &mut TsvWriter, fold: usize, cohort: &str, scored: &[Scored], split: Split) {
    let (s, l): (Vec<f64>, Vec<bool>) = scored
        .iter()
        .filter(|x| x.cohort == cohort && x.split == split)
        .map(|x| (x.score, x.label))
        .unzip();
    if let Ok(r) = roc_auc(&s, &l) {
        for (fpr, tpr) in r.points {
            w.row(&[fold.to_string(), cohort.to_string(), fmt_f64(fpr), fmt_f64(tpr)]);
        }
    }
}

pub fn forest_table(combined: &[CombinedCoefficient]) -> TsvWriter {
    let mut w = TsvWriter::new(&["feature", "coefficient", "std_error", "p_value", "significant"]);
    for c in combined {
        w.row(&[
            c.feature.clone(),
            fmt_f64(c.coefficient),
            fmt_f64(c.std_error),
            fmt_f64(c.p_value),
            u8::from(c.significant).to_string(),
        ]);
    }
    w
}

/// Full classification protocol; writes every table and figure to `out`.
pub fn run_classification(cfg: &RunConfig, out: &Path) -> Result<ClassificationRun> {
    let primary = Cohort::load(&cfg.data.primary)?;
    let external = cfg.data.external.as_ref().map(Cohort::load).transpose()?;
    let positive = positive_label(cfg, &primary)?;
    let k = cfg.classify.folds;
    let plan = make_folds(&primary.manifest, k, FoldConstraint::Institution, cfg.seed)?;
    fold_plan_table(&plan).write(&out.join("folds.tsv"))?;

    let mut metrics = Vec::new();
    let mut models = Vec::new();
    let mut fold_labels = Vec::new();
    let mut ext_fold_labels = Vec::new();
    let mut roc = TsvWriter::new(&["fold", "cohort", "fpr", "tpr"]);
    for (f, fold) in plan.folds.iter().enumerate() {
        let ctx = || format!("classification fold {f}");
        let seed = fold_seed(cfg.seed, f);
        let split_of_slide: BTreeMap<String, Split> = primary
            .manifest
            .slides
            .iter()
            .map(|s| (s.slide_id.clone(), fold.split_of(&s.patient_id).expect("audited plan")))
            .collect();
        let train_rows: Vec<usize> = (0..primary.embeddings.len())
            .filter(|&r| split_of_slide[primary.slide_of(r)] == Split::Train)
            .collect();
        let (model, known) = cluster_training(cfg, &primary, &train_rows, seed).context(ctx)?;
        let labels = label_cohort(&model, &primary, &known).context(ctx)?;
        let ext_labels = external.as_ref().map(|e| label_cohort(&model, e, &[])).transpose().context(ctx)?;
        let (fit, delta, scored) = fit_and_score(
            cfg,
            &primary,
            &labels,
            external.as_ref().zip(ext_labels.as_deref()),
            &model,
            &split_of_slide,
            &positive,
        )
        .context(ctx)?;
        log::info!("fold {f}: {} clusters, delta {delta}", model.n_clusters);
        let dir = out.join(format!("fold_{f}"));
        fit_table(&fit).write(&dir.join("fit.tsv"))?;
        predictions_table(&scored, &positive).write(&dir.join("predictions.tsv"))?;
        roc_rows(&mut roc, f, "primary", &scored, Split::Test);
        roc_rows(&mut roc, f, "external", &scored, Split::Test);
        metrics.push(ClassFoldMetrics {
            fold: f,
            n_clusters: model.n_clusters,
            delta,
            train_auc: auc_of(&scored, "primary", Some(Split::Train)),
            val_auc: auc_of(&scored, "primary", Some(Split::Val)),
            test_auc: auc_of(&scored, "primary", Some(Split::Test)),
            external_auc: auc_of(&scored, "external", None),
        });
        models.push(model);
        fold_labels.push(labels);
        ext_fold_labels.push(ext_labels);
    }
    roc.write(&out.join("roc.tsv"))?;

    let by_val: Vec<(usize, f64)> = metrics.iter().filter_map(|m| m.val_auc.map(|v| (m.fold, v))).collect();
    let locked_fold = median_fold(&by_val)
        .or_else(|| median_fold(&metrics.iter().filter_map(|m| m.test_auc.map(|v| (m.fold, v))).collect::<Vec<_>>()))
        .unwrap_or(0);
    let locked = write_locked(out, &models[locked_fold], locked_fold, fold_seed(cfg.seed, locked_fold), "median validation AUC")?;
    let locked_model = &models[locked_fold];
    let locked_labels = &fold_labels[locked_fold];

    // every fold refit over the shared cluster configuration
    let mut fits = Vec::new();
    for (f, fold) in plan.folds.iter().enumerate() {
        let split_of_slide: BTreeMap<String, Split> = primary
            .manifest
            .slides
            .iter()
            .map(|s| (s.slide_id.clone(), fold.split_of(&s.patient_id).expect("audited plan")))
            .collect();
        let (fit, _, _) = fit_and_score(cfg, &primary, locked_labels, None, locked_model, &split_of_slide, &positive)
            .context(|| format!("locked refit, fold {f}"))?;
        fit_table(&fit).write(&out.join(format!("fold_{f}")).join("locked_fit.tsv"))?;
        fits.push(fit);
    }
    let combined: Vec<CombinedCoefficient> = average_coefficients(&fits)?
        .into_iter()
        .filter(|c| c.feature != crate::stats::INTERCEPT)
        .collect();
    forest_table(&combined).write(&out.join("forest.tsv"))?;

    let all: BTreeSet<String> = primary.manifest.slides.iter().map(|s| s.slide_id.clone()).collect();
    let comps = owner_compositions(&primary, locked_labels, locked_model, Grouping::Slide, &all)?;
    let delta = metrics[locked_fold].delta;
    write_compositions(&out.join("compositions.tsv"), &comps, locked_model.n_clusters)?;
    write_clr(
        &out.join("clr.tsv"),
        &crate::composition::clr_all(&comps, delta)?,
        locked_model.n_clusters,
        delta,
    )?;

    let mut table = TsvWriter::new(&["fold", "n_clusters", "delta", "train_auc", "val_auc", "test_auc", "external_auc"]);
    for m in &metrics {
        table.row(&[
            m.fold.to_string(),
            m.n_clusters.to_string(),
            fmt_f64(m.delta),
            opt_f64(m.train_auc),
            opt_f64(m.val_auc),
            opt_f64(m.test_auc),
            opt_f64(m.external_auc),
        ]);
    }
    table.write(&out.join("fold_metrics.tsv"))?;

    let run = ClassificationRun {
        mean_test_auc: mean(metrics.iter().map(|m| m.test_auc)),
        mean_val_auc: mean(metrics.iter().map(|m| m.val_auc)),
        mean_external_auc: mean(metrics.iter().map(|m| m.external_auc)),
        folds: metrics,
        locked,
        combined,
    };
    let mut summary = RunSummary::new(RunKind::Classification, cfg);
    summary.deltas = run.folds.iter().map(|m| m.delta).collect();
    summary.n_clusters = run.folds.iter().map(|m| m.n_clusters).collect();
    summary.locked_fold = Some(run.locked.fold);
    summary.metrics.insert("mean_test_auc".into(), run.mean_test_auc);
    summary.metrics.insert("mean_val_auc".into(), run.mean_val_auc);
    summary.metrics.insert("mean_external_auc".into(), run.mean_external_auc);
    summary.significant = run.combined.iter().filter(|c| c.significant).map(|c| c.feature.clone()).collect();
    write_summary(out, &summary)?;
    emit_reports(out)?;
    Ok(run)
}

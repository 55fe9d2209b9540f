//! Patient-level cross-validated survival modelling.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::classify::forest_table;
use super::config::{fit_options, RunConfig};
use super::data::Cohort;
use super::folds::{fold_plan_table, make_folds, FoldConstraint, Split};
use super::report::{emit_reports, write_summary, RunKind, RunSummary};
use super::run::{
    choose_delta, clr_map, cluster_training, fit_table, fold_seed, label_cohort, mean, median_fold, opt_f64,
    owner_compositions, read_locked, rows_for, write_locked, LockedClusterConfig,
};
use crate::composition::{cluster_header, Grouping};
use crate::error::{Result, ResultExt};
use crate::graph::ClusterModel;
use crate::ingest::tsv::{fmt_f64, TsvWriter};
use crate::ingest::{Endpoint, SurvivalRecord};
use crate::stats::{
    apply_threshold, average_coefficients, concordance_index, fit_cox, kaplan_meier, logrank_test, median,
    CombinedCoefficient, DesignMatrix, ModelFit, Response, RiskGroup,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvFoldMetrics {
    pub fold: usize,
    pub n_clusters: usize,
    pub delta: f64,
    pub threshold: f64,
    pub train_c: Option<f64>,
    pub test_c: Option<f64>,
    pub external_c: Option<f64>,
    pub test_logrank_p: Option<f64>,
    pub external_logrank_p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRun {
    pub endpoint: Endpoint,
    pub folds: Vec<SurvFoldMetrics>,
    pub locked: LockedClusterConfig,
    pub combined: Vec<CombinedCoefficient>,
    pub mean_train_c: Option<f64>,
    pub mean_test_c: Option<f64>,
    pub mean_external_c: Option<f64>,
    /// Logrank p between risk groups pooled over all held-out patients.
    pub pooled_logrank_p: Option<f64>,
    pub external_logrank_p: Option<f64>,
}

struct Scored {
    owner: String,
    cohort: &'static str,
    split: Split,
    rec: SurvivalRecord,
    score: f64,
}

fn c_index(scored: &[Scored], cohort: &str, split: Option<Split>) -> Option<f64> {
    let sel: Vec<&Scored> = scored
        .iter()
        .filter(|x| x.cohort == cohort && split.is_none_or(|s| x.split == s))
        .collect();
    let s: Vec<f64> = sel.iter().map(|x| x.score).collect();
    let t: Vec<f64> = sel.iter().map(|x| x.rec.time).collect();
    let e: Vec<bool> = sel.iter().map(|x| x.rec.event).collect();
    concordance_index(&s, &t, &e).ok()
}

fn group_logrank(recs: &[(SurvivalRecord, RiskGroup)]) -> Option<f64> {
    let pick = |g: RiskGroup| -> (Vec<f64>, Vec<bool>) {
        recs.iter().filter(|(_, x)| *x == g).map(|(r, _)| (r.time, r.event)).unzip()
    };
    let (ht, he) = pick(RiskGroup::High);
    let (lt, le) = pick(RiskGroup::Low);
    logrank_test((&ht, &he), (&lt, &le)).ok().map(|r| r.p_value)
}

fn group_name(g: RiskGroup) -> &'static str {
    match g {
        RiskGroup::High => "high",
        RiskGroup::Low => "low",
    }
}

/// Patient CLR features under one labelling, the Cox fit on the training
/// patients and the risk score of every patient.
#[allow(clippy::too_many_arguments)]
fn fit_and_score(
    cfg: &RunConfig,
    endpoint: Endpoint,
    cohort: &Cohort,
    labels: &[u32],
    external: Option<(&Cohort, &[u32])>,
    model: &ClusterModel,
    split_of: &BTreeMap<String, Split>,
) -> Result<(ModelFit, f64, Vec<Scored>)> {
    let table = cohort.survival()?;
    let owners: BTreeSet<String> = split_of
        .keys()
        .filter(|p| table.get(p, endpoint).is_some())
        .cloned()
        .collect();
    let comps = owner_compositions(cohort, labels, model, Grouping::Patient, &owners)?;
    let train: Vec<_> = comps.iter().filter(|c| split_of[&c.owner_id] == Split::Train).cloned().collect();
    let delta = choose_delta(cfg, &train, model.n_clusters);
    let clr = clr_map(&comps, delta)?;
    let (ids, rows, ys) = rows_for(
        &clr,
        owners.iter().filter(|p| split_of[*p] == Split::Train).map(String::as_str),
        |p| table.get(p, endpoint).map(|r| (r.time, r.event)),
    );
    let design = DesignMatrix::new(ids, cluster_header(model.n_clusters), &rows, Response::Survival(ys), true)?;
    let fit = fit_cox(&design, &fit_options(cfg.survival.ridge))?;
    let mut scored = Vec::new();
    for (owner, x) in &clr {
        if let Some(rec) = table.get(owner, endpoint) {
            scored.push(Scored {
                owner: owner.clone(),
                cohort: "primary",
                split: split_of[owner],
                rec,
                score: fit.linear_predictor(std::slice::from_ref(x))[0],
            });
        }
    }
    if let Some((ext, ext_labels)) = external {
        if let Some(ext_table) = &ext.survival {
            let owners: BTreeSet<String> = ext
                .manifest
                .patients()
                .into_iter()
                .filter(|p| ext_table.get(p, endpoint).is_some())
                .map(str::to_string)
                .collect();
            let ext_comps = owner_compositions(ext, ext_labels, model, Grouping::Patient, &owners)?;
            for (owner, x) in clr_map(&ext_comps, delta)? {
                let rec = ext_table.get(&owner, endpoint).expect("filtered above");
                scored.push(Scored {
                    owner,
                    cohort: "external",
                    split: Split::Test,
                    rec,
                    score: fit.linear_predictor(&[x])[0],
                });
            }
        }
    }
    Ok((fit, delta, scored))
}

pub fn run_kind(endpoint: Endpoint) -> RunKind {
    match endpoint {
        Endpoint::OverallSurvival => RunKind::SurvivalOs,
        Endpoint::RecurrenceFree => RunKind::SurvivalRfs,
    }
}

/// Full survival protocol for one endpoint.
///
/// With `locked_from` set, the locked cluster model found there is reused in
/// every fold instead of reclustering.
pub fn run_survival(cfg: &RunConfig, endpoint: Endpoint, out: &Path, locked_from: Option<&Path>) -> Result<SurvivalRun> {
    let primary = Cohort::load(&cfg.data.primary)?;
    primary.survival()?;
    let external = cfg.data.external.as_ref().map(Cohort::load).transpose()?;
    let k = cfg.survival.folds;
    let plan = make_folds(&primary.manifest, k, FoldConstraint::Patient, cfg.seed)?;
    fold_plan_table(&plan).write(&out.join("folds.tsv"))?;
    let reused = locked_from.map(read_locked).transpose()?;
    let reused_labels = match &reused {
        Some((_, model)) => Some((
            label_cohort(model, &primary, &[])?,
            external.as_ref().map(|e| label_cohort(model, e, &[])).transpose()?,
        )),
        None => None,
    };

    let mut metrics = Vec::new();
    let mut models = Vec::new();
    let mut fold_labels = Vec::new();
    let mut pooled: Vec<(SurvivalRecord, RiskGroup)> = Vec::new();
    let mut pooled_ext: Vec<(SurvivalRecord, RiskGroup)> = Vec::new();
    for (f, fold) in plan.folds.iter().enumerate() {
        let ctx = || format!("{} fold {f}", endpoint.short());
        let seed = fold_seed(cfg.seed, f);
        let split_of = fold.patients.clone();
        let (model, labels, ext_labels) = match (&reused, &reused_labels) {
            (Some((_, m)), Some((l, el))) => (m.clone(), l.clone(), el.clone()),
            _ => {
                let train_rows: Vec<usize> = (0..primary.embeddings.len())
                    .filter(|&r| split_of.get(primary.patient_of(r)) == Some(&Split::Train))
                    .collect();
                let (model, known) = cluster_training(cfg, &primary, &train_rows, seed).context(ctx)?;
                let labels = label_cohort(&model, &primary, &known).context(ctx)?;
                let ext_labels = external.as_ref().map(|e| label_cohort(&model, e, &[])).transpose().context(ctx)?;
                (model, labels, ext_labels)
            }
        };
        let (fit, delta, scored) = fit_and_score(
            cfg,
            endpoint,
            &primary,
            &labels,
            external.as_ref().zip(ext_labels.as_deref()),
            &model,
            &split_of,
        )
        .context(ctx)?;
        let train_scores: Vec<f64> = scored
            .iter()
            .filter(|s| s.cohort == "primary" && s.split == Split::Train)
            .map(|s| s.score)
            .collect();
        let threshold = median(&train_scores).unwrap_or(0.0);
        let groups = apply_threshold(threshold, &scored.iter().map(|s| s.score).collect::<Vec<_>>());
        let mut test_recs = Vec::new();
        let mut ext_recs = Vec::new();
        let mut risk = TsvWriter::new(&["owner_id", "cohort", "split", "time", "event", "score", "group"]);
        risk.directive(&format!("threshold={}", fmt_f64(threshold)));
        for (s, g) in scored.iter().zip(&groups) {
            risk.row(&[
                s.owner.clone(),
                s.cohort.to_string(),
                s.split.as_str().to_string(),
                fmt_f64(s.rec.time),
                u8::from(s.rec.event).to_string(),
                fmt_f64(s.score),
                group_name(*g).to_string(),
            ]);
            match (s.cohort, s.split) {
                ("primary", Split::Test) => test_recs.push((s.rec, *g)),
                ("external", _) => ext_recs.push((s.rec, *g)),
                _ => {}
            }
        }
        let dir = out.join(format!("fold_{f}"));
        risk.write(&dir.join("risk.tsv"))?;
        fit_table(&fit).write(&dir.join("fit.tsv"))?;
        log::info!("{} fold {f}: {} clusters, delta {delta}", endpoint.short(), model.n_clusters);
        metrics.push(SurvFoldMetrics {
            fold: f,
            n_clusters: model.n_clusters,
            delta,
            threshold,
            train_c: c_index(&scored, "primary", Some(Split::Train)),
            test_c: c_index(&scored, "primary", Some(Split::Test)),
            external_c: c_index(&scored, "external", None),
            test_logrank_p: group_logrank(&test_recs),
            external_logrank_p: group_logrank(&ext_recs),
        });
        pooled.extend(test_recs);
        pooled_ext.extend(ext_recs);
        if reused.is_none() {
            models.push(model);
            fold_labels.push(labels);
        }
    }

    let (locked, locked_model, locked_labels) = match (reused, reused_labels) {
        (Some((lc, model)), Some((labels, _))) => {
            let mut locked = write_locked(out, &model, lc.fold, lc.seed, &lc.criterion)?;
            locked.criterion = format!("{} (reused)", lc.criterion);
            (locked, model, labels)
        }
        _ => {
            let by_train: Vec<(usize, f64)> = metrics.iter().filter_map(|m| m.train_c.map(|c| (m.fold, c))).collect();
            let fold = median_fold(&by_train).unwrap_or(0);
            let locked = write_locked(out, &models[fold], fold, fold_seed(cfg.seed, fold), "median training c-index")?;
            (locked, models.swap_remove(fold), fold_labels.swap_remove(fold))
        }
    };

    let mut fits = Vec::new();
    for (f, fold) in plan.folds.iter().enumerate() {
        let (fit, _, _) = fit_and_score(cfg, endpoint, &primary, &locked_labels, None, &locked_model, &fold.patients)
            .context(|| format!("locked refit, fold {f}"))?;
        fit_table(&fit).write(&out.join(format!("fold_{f}")).join("locked_fit.tsv"))?;
        fits.push(fit);
    }
    let combined = average_coefficients(&fits)?;
    forest_table(&combined).write(&out.join("forest.tsv"))?;

    let mut km = TsvWriter::new(&["group", "time", "survival", "at_risk", "events", "censored"]);
    for g in [RiskGroup::High, RiskGroup::Low] {
        let (t, e): (Vec<f64>, Vec<bool>) = pooled.iter().filter(|(_, x)| *x == g).map(|(r, _)| (r.time, r.event)).unzip();
        if let Ok(curve) = kaplan_meier(&t, &e) {
            for s in &curve.steps {
                km.row(&[
                    group_name(g).to_string(),
                    fmt_f64(s.time),
                    fmt_f64(s.survival),
                    s.at_risk.to_string(),
                    s.events.to_string(),
                    s.censored.to_string(),
                ]);
            }
        }
    }
    km.write(&out.join("km.tsv"))?;

    let mut table = TsvWriter::new(&[
        "fold",
        "n_clusters",
        "delta",
        "threshold",
        "train_c",
        "test_c",
        "external_c",
        "test_logrank_p",
        "external_logrank_p",
    ]);
    for m in &metrics {
        table.row(&[
            m.fold.to_string(),
            m.n_clusters.to_string(),
            fmt_f64(m.delta),
            fmt_f64(m.threshold),
            opt_f64(m.train_c),
            opt_f64(m.test_c),
            opt_f64(m.external_c),
            opt_f64(m.test_logrank_p),
            opt_f64(m.external_logrank_p),
        ]);
    }
    table.write(&out.join("fold_metrics.tsv"))?;

    let run = SurvivalRun {
        endpoint,
        mean_train_c: mean(metrics.iter().map(|m| m.train_c)),
        mean_test_c: mean(metrics.iter().map(|m| m.test_c)),
        mean_external_c: mean(metrics.iter().map(|m| m.external_c)),
        pooled_logrank_p: group_logrank(&pooled),
        external_logrank_p: group_logrank(&pooled_ext),
        folds: metrics,
        locked,
        combined,
    };
    let mut summary = RunSummary::new(run_kind(endpoint), cfg);
    summary.deltas = run.folds.iter().map(|m| m.delta).collect();
    summary.n_clusters = run.folds.iter().map(|m| m.n_clusters).collect();
    summary.locked_fold = Some(run.locked.fold);
    summary.metrics.insert("mean_train_c".into(), run.mean_train_c);
    summary.metrics.insert("mean_test_c".into(), run.mean_test_c);
    summary.metrics.insert("mean_external_c".into(), run.mean_external_c);
    summary.metrics.insert("pooled_logrank_p".into(), run.pooled_logrank_p);
    summary.metrics.insert("external_logrank_p".into(), run.external_logrank_p);
    summary.significant = run.combined.iter().filter(|c| c.significant).map(|c| c.feature.clone()).collect();
    write_summary(out, &summary)?;
    emit_reports(out)?;
    Ok(run)
}

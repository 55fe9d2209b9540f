//! `prl`: command-line driver for the phenotype representation pipeline.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use prl_core::composition::{clr_all, compose, default_delta, write_clr, write_compositions};
use prl_core::graph::{assign_clusters, cluster_once, subsample_indices, two_pass_cluster, ClusterModel, Metric};
use prl_core::ingest::annotations::{load_cell_counts, load_growth_patterns, load_signatures};
use prl_core::ingest::tsv::{fmt_f64, write_text, Table, TsvWriter};
use prl_core::ingest::{
    load_embeddings, load_manifest, load_tiles, persist_artifact, write_embeddings, write_tiles,
    EmbeddingMatrix, Endpoint, ExternalAnnotations,
};
use prl_core::pipeline::config::{require, CohortPaths};
use prl_core::pipeline::{
    emit_reports, run_characterization, run_classification, run_survival, Cohort, RunConfig, SyntheticCohortSpec,
};
use prl_core::ssl::{self_check, train_toy_encoder, BtLossConfig, TrainConfig, VectorViews};
use prl_core::tile::{reinhard_normalize, tile_image, RasterImage, StainReference, TissueRule};
use prl_core::{PrlError, Result};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "prl", version, about = "Phenotype clustering and interpretable models over tile embeddings")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "prl_out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a cohort's manifest, tiles, embeddings, survival and annotations.
    Ingest,
    /// Cut a PNG image into tiles at a fixed resolution.
    Tile {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        slide_id: String,
        /// Microns per pixel of the input image.
        #[arg(long)]
        mpp: f64,
        #[arg(long, default_value_t = prl_core::tile::DEFAULT_TILE_PX)]
        tile_px: u32,
        #[arg(long, default_value_t = prl_core::tile::DEFAULT_TARGET_MPP)]
        target_mpp: f64,
        /// Tiles below this tissue fraction are dropped.
        #[arg(long, default_value_t = prl_core::tile::DEFAULT_MIN_TISSUE)]
        min_tissue: f64,
        /// Stain-normalize kept tiles against the default reference.
        #[arg(long)]
        normalize: bool,
    },
    /// Check the loss gradient against finite differences and its invariances.
    SslCheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
    /// Train the toy encoder on planted-factor vectors.
    SslTrainToy {
        #[arg(long, default_value_t = 60)]
        epochs: usize,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        #[arg(long, default_value_t = 0.005)]
        lambda: f64,
        #[arg(long, default_value_t = 512)]
        samples: usize,
    },
    /// Cluster embeddings and assign every tile.
    Cluster {
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Tile table supplying tissue fractions for artifact removal.
        #[arg(long)]
        tiles: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        sample: Option<usize>,
        #[arg(long)]
        k_assign: Option<usize>,
        #[arg(long, value_enum)]
        metric: Option<MetricArg>,
        /// Remove artifact clusters and recluster.
        #[arg(long)]
        two_pass: bool,
    },
    /// Turn tile assignments into composition and CLR tables.
    Compose {
        /// Assignment table written by `cluster`.
        #[arg(long)]
        assignments: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        tiles: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "slide")]
        grouping: GroupingArg,
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Institution-disjoint cross-validated subtype classification.
    Classify,
    /// Patient-level cross-validated survival modelling.
    Survival {
        #[arg(long, value_enum, default_value = "os")]
        endpoint: EndpointArg,
    },
    /// Characterize locked clusters against annotations.
    Characterize {
        /// Run directory holding the locked cluster model.
        #[arg(long)]
        locked: Option<PathBuf>,
    },
    /// Write a synthetic cohort with planted structure.
    Synth {
        /// Zero every planted effect.
        #[arg(long)]
        null: bool,
        #[arg(long)]
        patients: Option<usize>,
        #[arg(long)]
        tiles_per_slide: Option<usize>,
        /// JSON file with generator settings.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Re-render figures for finished runs.
    Report {
        /// A single run directory; every run under the output directory otherwise.
        #[arg(long)]
        run: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MetricArg {
    Euclidean,
    Cosine,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GroupingArg {
    Slide,
    Patient,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EndpointArg {
    Os,
    Rfs,
}

const RUN_DIRS: [&str; 3] = ["classify", "survival_os", "survival_rfs"];

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn print_json(v: &serde_json::Value) {
    println!("{v}");
}

fn ingest(cfg: &RunConfig, out: &Path) -> Result<()> {
    let mut report = serde_json::Map::new();
    let mut cohorts = vec![("primary", &cfg.data.primary)];
    if let Some(e) = &cfg.data.external {
        cohorts.push(("external", e));
    }
    for (name, paths) in cohorts {
        let c = Cohort::load(paths)?;
        let endpoints: BTreeMap<String, usize> = c
            .survival
            .iter()
            .flat_map(|s| s.records.iter().map(|(e, r)| (e.short().to_string(), r.len())))
            .collect();
        report.insert(
            name.to_string(),
            json!({
                "cohort_id": c.manifest.cohort_id,
                "slides": c.manifest.slides.len(),
                "patients": c.manifest.patients().len(),
                "institutions": c.manifest.institutions().len(),
                "labels": c.manifest.label_set,
                "tiles": c.embeddings.len(),
                "dim": c.embeddings.dim(),
                "survival": endpoints,
            }),
        );
        if name == "primary" {
            let annotations = ExternalAnnotations {
                cell_counts: cfg.data.cell_counts.as_deref().map(load_cell_counts).transpose()?.unwrap_or_default(),
                growth_patterns: cfg
                    .data
                    .growth_patterns
                    .as_deref()
                    .map(load_growth_patterns)
                    .transpose()?
                    .unwrap_or_default(),
                ..Default::default()
            };
            let (signature_names, signatures) = match cfg.data.signatures.as_deref() {
                Some(p) => load_signatures(p)?,
                None => (Vec::new(), BTreeMap::new()),
            };
            let annotations = ExternalAnnotations {
                signature_names,
                signatures,
                ..annotations
            };
            let tiles: HashSet<&str> = c.embeddings.tile_ids().iter().map(String::as_str).collect();
            let patients: HashSet<&str> = c.manifest.patients().into_iter().collect();
            annotations.check_references(&tiles, &patients)?;
            report.insert(
                "annotations".into(),
                json!({
                    "cell_counts": annotations.cell_counts.len(),
                    "growth_patterns": annotations.growth_patterns.len(),
                    "signatures": annotations.signature_names,
                    "signature_rows": annotations.signatures.len(),
                }),
            );
        }
    }
    let v = serde_json::Value::Object(report);
    write_text(&out.join("ingest_summary.json"), &format!("{}\n", serde_json::to_string_pretty(&v)?))?;
    print_json(&v);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn tile(
    out: &Path,
    image: &Path,
    slide_id: &str,
    mpp: f64,
    tile_px: u32,
    target_mpp: f64,
    min_tissue: f64,
    normalize: bool,
) -> Result<()> {
    let img = RasterImage::load_png(image, mpp)?;
    let reference = StainReference::default_he();
    let dir = out.join("tiles");
    let mut kept = Vec::new();
    let all = tile_image(&img, slide_id, tile_px, target_mpp, &TissueRule::default())?;
    let total = all.len();
    for (mut rec, t) in all {
        if rec.tissue_fraction < min_tissue {
            continue;
        }
        let t = if normalize { reinhard_normalize(&t, &reference) } else { t };
        let name = format!("{}.png", rec.tile_id);
        t.save_png(&dir.join(&name))?;
        rec.path = Some(format!("tiles/{name}"));
        kept.push(rec);
    }
    write_tiles(&kept, &out.join("tiles.tsv"))?;
    print_json(&json!({"tiles": total, "kept": kept.len()}));
    Ok(())
}

fn ssl_check(seed: u64, instances: usize) -> Result<()> {
    let r = self_check(seed, instances, &BtLossConfig::default())?;
    print_json(&json!({
        "instances": r.instances,
        "max_gradient_relative_error": r.max_gradient_error,
        "max_permutation_change": r.max_permutation_change,
        "pass": r.passed(),
    }));
    if r.passed() {
        Ok(())
    } else {
        Err(PrlError::Validation("loss self-check failed".into()))
    }
}

fn ssl_train_toy(out: &Path, seed: u64, epochs: usize, batch_size: usize, lambda: f64, samples: usize) -> Result<()> {
    let data = prl_core::ssl::planted_factor_data(samples, 16, 4, 0.05, seed);
    let src = VectorViews { data, noise_std: 0.1 };
    let cfg = TrainConfig {
        epochs,
        batch_size,
        loss: BtLossConfig {
            lambda,
            ..BtLossConfig::default()
        },
        seed,
        ..TrainConfig::default()
    };
    let trained = train_toy_encoder(&src, &cfg)?;
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in trained.loss_trace.iter().enumerate() {
        csv.push_str(&format!("{i},{}\n", fmt_f64(*l)));
    }
    write_text(&out.join("loss_trace.csv"), &csv)?;
    let z = trained.project_source(&src);
    let ids: Vec<String> = (0..z.nrows()).map(|i| format!("toy_{i}")).collect();
    let data: Vec<f32> = (0..z.nrows()).flat_map(|i| (0..z.ncols()).map(move |j| (i, j))).map(|(i, j)| z[(i, j)] as f32).collect();
    let e = EmbeddingMatrix::new(ids, data, z.ncols())?;
    write_embeddings(&e, &out.join("toy_embeddings.prle"))?;
    persist_artifact(&trained, &out.join("toy_encoder.prla"))?;
    print_json(&json!({
        "epochs": epochs,
        "first_loss": trained.loss_trace.first(),
        "final_loss": trained.loss_trace.last(),
    }));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cluster(
    cfg: &RunConfig,
    out: &Path,
    embeddings: Option<PathBuf>,
    tiles: Option<PathBuf>,
    overrides: (Option<usize>, Option<f64>, Option<usize>, Option<usize>, Option<MetricArg>),
    two_pass: bool,
) -> Result<()> {
    let mut section = cfg.cluster.clone();
    let (k, gamma, sample, k_assign, metric) = overrides;
    section.k = k.unwrap_or(section.k);
    section.gamma = gamma.unwrap_or(section.gamma);
    section.sample = sample.unwrap_or(section.sample);
    section.k_assign = k_assign.unwrap_or(section.k_assign);
    if let Some(m) = metric {
        section.metric = match m {
            MetricArg::Euclidean => Metric::Euclidean,
            MetricArg::Cosine => Metric::Cosine,
        };
    }
    section.two_pass = two_pass;
    let emb_path = embeddings.or_else(|| cfg.data.primary.embeddings.clone());
    let e = load_embeddings(require(&emb_path, "embeddings")?)?;
    let tissue_of: HashMap<String, f64> = match tiles.or_else(|| cfg.data.primary.tiles.clone()) {
        Some(p) => load_tiles(&p)?.into_iter().map(|t| (t.tile_id, t.tissue_fraction)).collect(),
        None => HashMap::new(),
    };
    let rows = subsample_indices(e.len(), section.sample.min(e.len()), cfg.seed)?;
    let sample = e.select(&rows);
    let ccfg = section.cluster_config(cfg.seed);
    let model = if two_pass {
        let tissue: Vec<f64> = sample
            .tile_ids()
            .iter()
            .map(|id| tissue_of.get(id).copied().unwrap_or(1.0))
            .collect();
        let r = two_pass_cluster(&sample, &tissue, &ccfg, &section.artifact_rule())?;
        persist_artifact(&r.partition, &out.join("partition.prla"))?;
        ClusterModel::from_two_pass(&sample, &r, section.k_assign, section.metric)?
    } else {
        let p = cluster_once(&sample, &ccfg)?;
        persist_artifact(&p, &out.join("partition.prla"))?;
        ClusterModel::new(&sample, &p, section.k_assign, section.metric)?
    };
    let mut labels = vec![u32::MAX; e.len()];
    for (&r, &l) in rows.iter().zip(&model.labels) {
        labels[r] = l;
    }
    let todo: Vec<usize> = (0..e.len()).filter(|&r| labels[r] == u32::MAX).collect();
    for (r, l) in todo.iter().zip(assign_clusters(&model, &e.select(&todo))?) {
        labels[*r] = l;
    }
    let checksum = persist_artifact(&model, &out.join("cluster_model.prla"))?;
    let mut w = TsvWriter::new(&["tile_id", "cluster"]);
    w.directive(&format!("n_clusters={}", model.n_clusters));
    for (id, &l) in e.tile_ids().iter().zip(&labels) {
        let c = if model.is_artifact(l) { "artifact".to_string() } else { l.to_string() };
        w.row(&[id.as_str(), c.as_str()]);
    }
    w.write(&out.join("assignments.tsv"))?;
    print_json(&json!({
        "tiles": e.len(),
        "sampled": rows.len(),
        "n_clusters": model.n_clusters,
        "artifact_tiles": labels.iter().filter(|&&l| model.is_artifact(l)).count(),
        "model_checksum": checksum,
    }));
    Ok(())
}

fn compose_cmd(
    cfg: &RunConfig,
    out: &Path,
    assignments: Option<PathBuf>,
    paths: CohortPaths,
    grouping: GroupingArg,
    delta: Option<f64>,
) -> Result<()> {
    let a_path = assignments.unwrap_or_else(|| out.join("assignments.tsv"));
    let t = Table::read(&a_path)?;
    let n_clusters: usize = t
        .directives
        .iter()
        .find_map(|d| d.strip_prefix("n_clusters=").and_then(|v| v.parse().ok()))
        .ok_or_else(|| PrlError::Validation(format!("{}: missing n_clusters directive", a_path.display())))?;
    let (ti, ci) = (t.require("tile_id")?, t.require("cluster")?);
    let mut label_of = HashMap::new();
    for (line, r) in &t.rows {
        if r[ci] != "artifact" {
            let l: u32 = t.parse_field(*line, "cluster", &r[ci])?;
            label_of.insert(r[ti].clone(), l);
        }
    }
    let manifest = load_manifest(require(&paths.manifest.or_else(|| cfg.data.primary.manifest.clone()), "manifest")?)?;
    let tiles = load_tiles(require(&paths.tiles.or_else(|| cfg.data.primary.tiles.clone()), "tiles")?)?;
    let slide_idx = manifest.slide_index();
    let mut tile_owner = Vec::new();
    let mut labels = Vec::new();
    let mut owners = BTreeSet::new();
    for tr in &tiles {
        let Some(&l) = label_of.get(&tr.tile_id) else { continue };
        let s = slide_idx
            .get(tr.slide_id.as_str())
            .ok_or_else(|| PrlError::Referential(format!("tile '{}' names unknown slide '{}'", tr.tile_id, tr.slide_id)))?;
        let entry = &manifest.slides[*s];
        let owner = match grouping {
            GroupingArg::Slide => entry.slide_id.as_str(),
            GroupingArg::Patient => entry.patient_id.as_str(),
        };
        tile_owner.push(owner);
        labels.push(l);
        owners.insert(owner.to_string());
    }
    let owners: Vec<String> = owners.into_iter().collect();
    let ws = compose(&owners, &tile_owner, &labels, n_clusters)?;
    let delta = delta.or(cfg.composition.delta).unwrap_or_else(|| default_delta(&ws, n_clusters));
    write_compositions(&out.join("compositions.tsv"), &ws, n_clusters)?;
    write_clr(&out.join("clr.tsv"), &clr_all(&ws, delta)?, n_clusters, delta)?;
    print_json(&json!({"owners": ws.len(), "n_clusters": n_clusters, "delta": delta}));
    Ok(())
}

fn synth(cfg: &RunConfig, out: &Path, null: bool, patients: Option<usize>, tiles: Option<usize>, spec: Option<PathBuf>) -> Result<()> {
    let mut s: SyntheticCohortSpec = match spec {
        Some(p) => {
            let text = std::fs::read_to_string(&p).map_err(|e| PrlError::io(&p, e))?;
            serde_json::from_str(&text)?
        }
        None => SyntheticCohortSpec::default(),
    };
    s.seed = cfg.seed;
    if let Some(n) = patients {
        s.n_patients = n;
    }
    if let Some(n) = tiles {
        s.tiles_per_slide = n;
    }
    if null {
        s = s.null();
    }
    let truth = prl_core::pipeline::write_synthetic_cohort(&s, out)?;
    print_json(&json!({
        "dir": out.display().to_string(),
        "patients": s.n_patients,
        "positive_label": truth.positive_label,
        "subtype_effects": s.subtype_effects,
        "hazard_effects": s.hazard_effects,
    }));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let out = cli.out_dir.clone();
    match cli.command {
        Command::Ingest => ingest(&load_config(&cli)?, &out),
        Command::Tile {
            ref image,
            ref slide_id,
            mpp,
            tile_px,
            target_mpp,
            min_tissue,
            normalize,
        } => tile(&out, image, slide_id, mpp, tile_px, target_mpp, min_tissue, normalize),
        Command::SslCheck { instances } => ssl_check(cli.seed.unwrap_or(0), instances),
        Command::SslTrainToy {
            epochs,
            batch_size,
            lambda,
            samples,
        } => ssl_train_toy(&out, cli.seed.unwrap_or(0), epochs, batch_size, lambda, samples),
        Command::Cluster {
            ref embeddings,
            ref tiles,
            k,
            gamma,
            sample,
            k_assign,
            metric,
            two_pass,
        } => cluster(
            &load_config(&cli)?,
            &out,
            embeddings.clone(),
            tiles.clone(),
            (k, gamma, sample, k_assign, metric),
            two_pass,
        ),
        Command::Compose {
            ref assignments,
            ref manifest,
            ref tiles,
            grouping,
            delta,
        } => {
            let paths = CohortPaths {
                manifest: manifest.clone(),
                tiles: tiles.clone(),
                ..Default::default()
            };
            compose_cmd(&load_config(&cli)?, &out, assignments.clone(), paths, grouping, delta)
        }
        Command::Classify => {
            let r = run_classification(&load_config(&cli)?, &out.join("classify"))?;
            print_json(&json!({
                "mean_test_auc": r.mean_test_auc,
                "mean_val_auc": r.mean_val_auc,
                "mean_external_auc": r.mean_external_auc,
                "locked_fold": r.locked.fold,
                "significant": r.combined.iter().filter(|c| c.significant).map(|c| &c.feature).collect::<Vec<_>>(),
            }));
            Ok(())
        }
        Command::Survival { endpoint } => {
            let cfg = load_config(&cli)?;
            let r = match endpoint {
                EndpointArg::Os => run_survival(&cfg, Endpoint::OverallSurvival, &out.join("survival_os"), None)?,
                EndpointArg::Rfs => run_survival(
                    &cfg,
                    Endpoint::RecurrenceFree,
                    &out.join("survival_rfs"),
                    Some(&out.join("survival_os")),
                )?,
            };
            print_json(&json!({
                "endpoint": r.endpoint.short(),
                "mean_test_c": r.mean_test_c,
                "mean_external_c": r.mean_external_c,
                "pooled_logrank_p": r.pooled_logrank_p,
                "locked_fold": r.locked.fold,
                "significant": r.combined.iter().filter(|c| c.significant).map(|c| &c.feature).collect::<Vec<_>>(),
            }));
            Ok(())
        }
        Command::Characterize { ref locked } => {
            let cfg = load_config(&cli)?;
            let locked_dir = locked.clone().unwrap_or_else(|| out.join("classify"));
            let r = run_characterization(&cfg, &locked_dir, &out.join("characterize"))?;
            print_json(&json!({
                "n_clusters": r.characterization.n_clusters,
                "locked_fold": r.locked.fold,
            }));
            Ok(())
        }
        Command::Synth {
            null,
            patients,
            tiles_per_slide,
            ref spec,
        } => synth(&load_config(&cli)?, &out, null, patients, tiles_per_slide, spec.clone()),
        Command::Report { ref run } => {
            let dirs: Vec<PathBuf> = match run {
                Some(d) => vec![d.clone()],
                None => RUN_DIRS.iter().map(|d| out.join(d)).filter(|d| d.is_dir()).collect(),
            };
            if dirs.is_empty() {
                return Err(PrlError::MissingArtifact(format!("no run directories under {}", out.display())));
            }
            for d in dirs {
                let written = emit_reports(&d)?;
                print_json(&json!({"run": d.display().to_string(), "written": written}));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            eprintln!("{}", json!({"kind": "usage", "error": e.to_string().trim()}));
            return ExitCode::from(2);
        }
    };
    log::info!("{:?}", cli.command);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({"kind": e.kind(), "error": e.to_string()}));
            ExitCode::FAILURE
        }
    }
}

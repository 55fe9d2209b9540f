//! Run configuration, read from TOML with one table per stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::enrichment::{CharacterizeOptions, Sidedness};
use crate::error::{PrlError, Result};
use crate::graph::{ArtifactRule, ClusterConfig, Metric};
use crate::ingest::artifact::sha256_hex;
use crate::stats::FitOptions;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortPaths {
    pub manifest: Option<PathBuf>,
    pub tiles: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub survival: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    #[serde(flatten)]
    pub primary: CohortPaths,
    pub external: Option<CohortPaths>,
    pub cell_counts: Option<PathBuf>,
    pub signatures: Option<PathBuf>,
    pub growth_patterns: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSection {
    pub k: usize,
    pub gamma: f64,
    pub sample: usize,
    pub k_assign: usize,
    pub metric: Metric,
    pub max_iters: usize,
    pub n_starts: usize,
    pub two_pass: bool,
    pub tissue_threshold: f64,
    pub manual_artifacts: Vec<u32>,
}

impl Default for ClusterSection {
    fn default() -> Self {
        ClusterSection {
            k: 250,
            gamma: 1.0,
            sample: 200_000,
            k_assign: 250,
            metric: Metric::Euclidean,
            max_iters: 10,
            n_starts: 10,
            two_pass: true,
            tissue_threshold: 0.3,
            manual_artifacts: Vec::new(),
        }
    }
}

impl ClusterSection {
    pub fn cluster_config(&self, seed: u64) -> ClusterConfig {
        ClusterConfig {
            k: self.k,
            gamma: self.gamma,
            seed,
            max_iters: self.max_iters,
            n_starts: self.n_starts,
            metric: self.metric,
        }
    }

    pub fn artifact_rule(&self) -> ArtifactRule {
        ArtifactRule {
            tissue_threshold: if self.two_pass { self.tissue_threshold } else { f64::NEG_INFINITY },
            manual: if self.two_pass { self.manual_artifacts.clone() } else { Vec::new() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompositionSection {
    /// Fixed replacement value; derived from each training set when absent.
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifySection {
    pub folds: usize,
    pub ridge: f64,
    /// Label treated as the positive class; the last declared label when
    /// absent.
    pub positive_label: Option<String>,
}

impl Default for ClassifySection {
    fn default() -> Self {
        ClassifySection {
            folds: 5,
            ridge: 0.0,
            positive_label: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurvivalSection {
    pub folds: usize,
    pub ridge: f64,
}

impl Default for SurvivalSection {
    fn default() -> Self {
        SurvivalSection { folds: 5, ridge: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnrichmentSection {
    pub alpha: f64,
    pub min_coverage: f64,
    pub exclude_own: bool,
    pub one_sided: bool,
}

impl Default for EnrichmentSection {
    fn default() -> Self {
        EnrichmentSection {
            alpha: 0.01,
            min_coverage: 0.5,
            exclude_own: false,
            one_sided: false,
        }
    }
}

impl EnrichmentSection {
    pub fn options(&self) -> CharacterizeOptions {
        CharacterizeOptions {
            alpha: self.alpha,
            min_coverage: self.min_coverage,
            exclude_own: self.exclude_own,
            sided: if self.one_sided { Sidedness::OneSided } else { Sidedness::TwoSided },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub cluster: ClusterSection,
    pub composition: CompositionSection,
    pub classify: ClassifySection,
    pub survival: SurvivalSection,
    pub enrichment: EnrichmentSection,
}

pub fn fit_options(ridge: f64) -> FitOptions {
    FitOptions {
        ridge,
        ..FitOptions::default()
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| PrlError::Config(e.to_string()))
    }

    /// Reads a config and resolves relative data paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PrlError::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(x) = p {
                if x.is_relative() {
                    *x = base.join(&*x);
                }
            }
        };
        let fix_cohort = |c: &mut CohortPaths| {
            fix(&mut c.manifest);
            fix(&mut c.tiles);
            fix(&mut c.embeddings);
            fix(&mut c.survival);
        };
        fix_cohort(&mut self.data.primary);
        if let Some(e) = self.data.external.as_mut() {
            fix_cohort(e);
        }
        fix(&mut self.data.cell_counts);
        fix(&mut self.data.signatures);
        fix(&mut self.data.growth_patterns);
    }

    /// The effective configuration with every default filled in.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hash of the effective configuration with data paths left out, so the
    /// same settings hash identically wherever the data live.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.data = DataConfig::default();
        sha256_hex(c.to_toml().as_bytes())
    }
}

pub fn require<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| PrlError::Config(format!("missing path for {what}")))
}

//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::HIDDEN_SIZE_GRID;
use crate::metrics::Metric;
use crate::models::{ModelKind, TransformerConfig};
use crate::panel::{PanelSchema, TaskMode};
use crate::splits::{Regime, StratificationSpec};
use crate::synthetic::CohortSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum PanelSource {
    Synthetic(CohortSpec),
    File {
        path: PathBuf,
        study_length: u32,
        feature_dim: usize,
        #[serde(default = "default_outcome_min")]
        outcome_min: f64,
        #[serde(default = "default_outcome_max")]
        outcome_max: f64,
    },
}

fn default_outcome_min() -> f64 {
    1.0
}

fn default_outcome_max() -> f64 {
    5.0
}

impl PanelSource {
    pub fn schema(&self) -> PanelSchema {
        match self {
            PanelSource::Synthetic(spec) => spec.schema(),
            PanelSource::File {
                study_length,
                feature_dim,
                outcome_min,
                outcome_max,
                ..
            } => {
                PanelSchema::new(*study_length, *feature_dim).with_outcome_bounds(*outcome_min, *outcome_max)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortConfig {
    pub n_bins: usize,
    pub per_bin_sample: usize,
    #[serde(default = "default_variation_floor")]
    pub variation_floor: f64,
    #[serde(default = "default_variation_split_day")]
    pub variation_split_day: u32,
}

fn default_variation_floor() -> f64 {
    0.01
}

fn default_variation_split_day() -> u32 {
    60
}

impl CohortConfig {
    pub fn stratification(&self) -> StratificationSpec {
        StratificationSpec {
            variation_split_day: self.variation_split_day,
            ..StratificationSpec::new(self.n_bins, self.per_bin_sample)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Instance share held out by the traditional split.
    pub traditional_test_fraction: f64,
    /// Person share held out by the person-level splits.
    pub person_test_fraction: f64,
    /// Mean-outcome strata for choosing test persons; `None` samples uniformly.
    pub strata: Option<usize>,
    /// Last training day of the time-based splits.
    pub cutoff: u32,
    pub dev_fraction: f64,
    /// Mask instances so every regime has the same train and test counts.
    pub mask_to_match: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            traditional_test_fraction: 0.3,
            person_test_fraction: 0.3,
            strata: Some(5),
            cutoff: 63,
            dev_fraction: 0.2,
            mask_to_match: false,
        }
    }
}

/// Named seeds. Any seed left out is derived from `master`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedConfig {
    pub master: u64,
    pub cohort: Option<u64>,
    pub split: Option<u64>,
    pub mask: Option<u64>,
    pub dev: Option<u64>,
    pub model: Option<u64>,
}

impl SeedConfig {
    pub fn cohort(&self) -> u64 {
        self.cohort.unwrap_or(self.master.wrapping_add(1))
    }

    pub fn split(&self) -> u64 {
        self.split.unwrap_or(self.master.wrapping_add(2))
    }

    pub fn mask(&self) -> u64 {
        self.mask.unwrap_or(self.master.wrapping_add(3))
    }

    pub fn dev(&self) -> u64 {
        self.dev.unwrap_or(self.master.wrapping_add(4))
    }

    pub fn model(&self) -> u64 {
        self.model.unwrap_or(self.master.wrapping_add(5))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub panel: PanelSource,
    #[serde(default = "default_task_mode")]
    pub task_mode: TaskMode,
    /// Drop persons with fewer observed outcome days than this share.
    #[serde(default)]
    pub min_coverage: Option<f64>,
    #[serde(default)]
    pub cohort: Option<CohortConfig>,
    #[serde(default = "default_regimes")]
    pub regimes: Vec<Regime>,
    #[serde(default = "default_models")]
    pub models: Vec<ModelKind>,
    #[serde(default = "default_hidden_sizes")]
    pub hidden_sizes: Vec<usize>,
    #[serde(default = "default_history_lengths")]
    pub history_lengths: Vec<usize>,
    /// Metrics listed in the scope table.
    #[serde(default = "default_metrics")]
    pub metrics: Vec<Metric>,
    /// Train one model per cell on the person-and-time split and score it on
    /// the other three quadrants.
    #[serde(default)]
    pub shared_model: bool,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub seeds: SeedConfig,
    #[serde(default)]
    pub transformer: TransformerConfig,
    #[serde(default)]
    pub smape_eps: f64,
    /// Write every trained model's text form under `models/`.
    #[serde(default = "default_true")]
    pub save_models: bool,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_task_mode() -> TaskMode {
    TaskMode::Nowcast
}

fn default_regimes() -> Vec<Regime> {
    vec![Regime::Traditional, Regime::CrossSectional, Regime::Prospective]
}

fn default_models() -> Vec<ModelKind> {
    vec![ModelKind::Ar]
}

fn default_hidden_sizes() -> Vec<usize> {
    vec![HIDDEN_SIZE_GRID[0]]
}

fn default_history_lengths() -> Vec<usize> {
    vec![1]
}

fn default_metrics() -> Vec<Metric> {
    Metric::ALL.to_vec()
}

fn default_true() -> bool {
    true
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config; relative panel paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text)?;
        if let PanelSource::File { path: p, .. } = &mut cfg.panel {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let schema = self.panel.schema();
        schema.validate()?;
        if let PanelSource::Synthetic(spec) = &self.panel {
            spec.validate()?;
        }
        if let PanelSource::File { path, .. } = &self.panel {
            if !path.is_file() {
                return Err(Error::Config(format!(
                    "panel file {} does not exist",
                    path.display()
                )));
            }
        }
        let empty = [
            ("regimes", self.regimes.is_empty()),
            ("models", self.models.is_empty()),
            ("hidden_sizes", self.hidden_sizes.is_empty()),
            ("history_lengths", self.history_lengths.is_empty()),
            ("metrics", self.metrics.is_empty()),
        ];
        for (name, is_empty) in empty {
            if is_empty {
                return Err(Error::Config(format!("`{name}` must not be empty")));
            }
        }
        if self.hidden_sizes.contains(&0) || self.history_lengths.contains(&0) {
            return Err(Error::Config(
                "hidden sizes and history lengths must be positive".into(),
            ));
        }
        if let Some(&h) = self.history_lengths.iter().max() {
            if h > schema.study_length as usize {
                return Err(Error::Config(format!(
                    "history length {h} exceeds study length {}",
                    schema.study_length
                )));
            }
        }
        let s = &self.split;
        let uses_cutoff = self.shared_model || self.regimes.iter().any(|r| r.holds_out_time());
        if uses_cutoff && !(s.cutoff > 0 && s.cutoff < schema.study_length) {
            return Err(Error::Config(format!(
                "cutoff {} must lie strictly inside the {}-day study",
                s.cutoff, schema.study_length
            )));
        }
        for (name, f) in [
            ("traditional_test_fraction", s.traditional_test_fraction),
            ("person_test_fraction", s.person_test_fraction),
            ("dev_fraction", s.dev_fraction),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {f}")));
            }
        }
        if let Some(c) = self.min_coverage {
            if !(c > 0.0 && c <= 1.0) {
                return Err(Error::Config(format!("min_coverage must lie in (0, 1], got {c}")));
            }
        }
        if self.shared_model && self.regimes.contains(&Regime::Traditional) {
            return Err(Error::Config(
                "shared-model mode scores held-out quadrants and cannot include the traditional regime"
                    .into(),
            ));
        }
        if !(self.smape_eps.is_finite() && self.smape_eps >= 0.0) {
            return Err(Error::Config("smape_eps must be >= 0".into()));
        }
        Ok(())
    }
}

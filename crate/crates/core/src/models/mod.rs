//! Model suite: mean baseline, ridge, and the micro-transformer.
//!
//! Every trained model serializes to a line-oriented text form: `key = value`
//! header lines followed by `param <name> <values...>` rows, every real in
//! 17 significant digits so that a round trip is exact.

pub mod ridge;
pub mod transformer;

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{HistoryEncoding, ModelInput};

pub use ridge::{fit_ridge, select_ridge, CenteredGram, RidgeModel, SelectionTrace, PENALTY_GRID};
pub use transformer::{fit_transformer, MicroTransformer, TransformerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanBaseline {
    pub mean: f64,
}

pub fn fit_mean_baseline(train_targets: &[f64]) -> Result<MeanBaseline> {
    if train_targets.is_empty() {
        return Err(Error::Param("mean baseline needs at least one target".into()));
    }
    if train_targets.iter().any(|y| !y.is_finite()) {
        return Err(Error::Param("non-finite training target".into()));
    }
    let mean = train_targets.iter().sum::<f64>() / train_targets.len() as f64;
    Ok(MeanBaseline { mean })
}

impl MeanBaseline {
    pub fn predict(&self) -> f64 {
        self.mean
    }
}

/// The model families the runner knows how to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Ridge over the stacked last `h` days.
    Ar,
    /// Ridge over the mean of the last `h` days.
    Boe,
    Transformer,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Ar, ModelKind::Boe, ModelKind::Transformer];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Ar => "ar",
            ModelKind::Boe => "boe",
            ModelKind::Transformer => "transformer",
        }
    }

    /// Label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Ar => "AR",
            ModelKind::Boe => "BoE",
            ModelKind::Transformer => "Transformer",
        }
    }

    pub fn encoding(self) -> HistoryEncoding {
        match self {
            ModelKind::Ar => HistoryEncoding::Stacked,
            ModelKind::Boe => HistoryEncoding::Pooled,
            ModelKind::Transformer => HistoryEncoding::Sequence,
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ar" => Ok(ModelKind::Ar),
            "boe" => Ok(ModelKind::Boe),
            "transformer" => Ok(ModelKind::Transformer),
            other => Err(Error::Config(format!("unknown model kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Mean(MeanBaseline),
    Ridge(RidgeModel),
    Transformer(MicroTransformer),
}

impl TrainedModel {
    pub fn kind_name(&self) -> &'static str {
        match self {
            TrainedModel::Mean(_) => "mean",
            TrainedModel::Ridge(_) => "ridge",
            TrainedModel::Transformer(_) => "transformer",
        }
    }

    /// Eval-mode prediction; errors when the input does not fit the model.
    pub fn predict(&self, input: &ModelInput) -> Result<f64> {
        match (self, input) {
            (TrainedModel::Mean(m), _) => Ok(m.predict()),
            (TrainedModel::Ridge(m), ModelInput::Vector(x)) => m.predict_vector(x),
            (TrainedModel::Transformer(m), ModelInput::Sequence(s)) => {
                if s.len() != m.window {
                    return Err(Error::Shape(format!(
                        "transformer expects {} days, got {}",
                        m.window,
                        s.len()
                    )));
                }
                m.predict_sequence(s)
            }
            (TrainedModel::Ridge(_), ModelInput::Sequence(_)) => {
                Err(Error::Shape("ridge model expects a vector input".into()))
            }
            (TrainedModel::Transformer(_), ModelInput::Vector(_)) => {
                Err(Error::Shape("transformer expects a sequence input".into()))
            }
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "model = {}", self.kind_name());
        match self {
            TrainedModel::Mean(m) => {
                push_row(&mut out, "mean", &[m.mean]);
            }
            TrainedModel::Ridge(m) => {
                let enc = serde_json::to_string(&m.encoding).expect("enum serializes");
                let _ = writeln!(out, "encoding = {}", enc.trim_matches('"'));
                let _ = writeln!(out, "history_len = {}", m.history_len);
                let _ = writeln!(out, "input_dim = {}", m.weights.len());
                let _ = writeln!(out, "penalty = {:.16e}", m.penalty);
                push_row(&mut out, "bias", &[m.bias]);
                push_row(&mut out, "weights", &m.weights);
            }
            TrainedModel::Transformer(m) => {
                let cfg = serde_json::to_string(&m.config).expect("config serializes");
                let _ = writeln!(out, "config = {cfg}");
                let _ = writeln!(out, "input_dim = {}", m.input_dim);
                let _ = writeln!(out, "window = {}", m.window);
                let _ = writeln!(out, "epochs_run = {}", m.epochs_run);
                if let Some(b) = m.best_dev_mae {
                    let _ = writeln!(out, "best_dev_mae = {b:.16e}");
                }
                push_row(&mut out, "target_offset", &[m.target_offset]);
                push_row(&mut out, "input_mean", &m.input_mean);
                push_row(&mut out, "input_scale", &m.input_scale);
                for (name, t) in transformer::PARAM_NAMES.iter().zip(m.params.tensors()) {
                    push_row(&mut out, name, t);
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut header: Vec<(String, String)> = Vec::new();
        let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |m: &str| Error::Parse {
                line: i as u64 + 1,
                message: m.to_string(),
            };
            if let Some(rest) = line.strip_prefix("param ") {
                let mut parts = rest.split_whitespace();
                let name = parts.next().ok_or_else(|| bad("parameter row without a name"))?;
                let values = parts
                    .map(|v| {
                        v.parse::<f64>()
                            .map_err(|e| bad(&format!("bad number `{v}`: {e}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                rows.push((name.to_string(), values));
            } else if let Some((k, v)) = line.split_once('=') {
                header.push((k.trim().to_string(), v.trim().to_string()));
            } else {
                return Err(bad("expected `key = value` or `param` row"));
            }
        }
        let field = |k: &str| -> Result<&str> {
            header
                .iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Config(format!("model text lacks `{k}`")))
        };
        let row = |k: &str| -> Result<Vec<f64>> {
            rows.iter()
                .find(|(name, _)| name == k)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| Error::Config(format!("model text lacks parameter `{k}`")))
        };
        let scalar = |k: &str| -> Result<f64> {
            let v = row(k)?;
            if v.len() != 1 {
                return Err(Error::Shape(format!("`{k}` must hold one value")));
            }
            Ok(v[0])
        };
        let count = |k: &str| -> Result<usize> {
            field(k)?
                .parse()
                .map_err(|e| Error::Config(format!("bad `{k}`: {e}")))
        };
        match field("model")? {
            "mean" => Ok(TrainedModel::Mean(MeanBaseline {
                mean: scalar("mean")?,
            })),
            "ridge" => {
                let encoding: HistoryEncoding = serde_json::from_str(&format!("\"{}\"", field("encoding")?))?;
                let weights = row("weights")?;
                if weights.len() != count("input_dim")? {
                    return Err(Error::Shape("ridge weight count disagrees with header".into()));
                }
                let penalty = field("penalty")?
                    .parse()
                    .map_err(|e| Error::Config(format!("bad penalty: {e}")))?;
                Ok(TrainedModel::Ridge(RidgeModel {
                    weights,
                    bias: scalar("bias")?,
                    penalty,
                    encoding,
                    history_len: count("history_len")?,
                }))
            }
            "transformer" => {
                let config: TransformerConfig = serde_json::from_str(field("config")?)?;
                let mut m = MicroTransformer::new(count("input_dim")?, count("window")?, config)?;
                m.epochs_run = count("epochs_run")?;
                m.best_dev_mae = match field("best_dev_mae") {
                    Ok(v) => Some(
                        v.parse()
                            .map_err(|e| Error::Config(format!("bad best_dev_mae: {e}")))?,
                    ),
                    Err(_) => None,
                };
                m.target_offset = scalar("target_offset")?;
                m.input_mean = row("input_mean")?;
                m.input_scale = row("input_scale")?;
                if m.input_mean.len() != m.input_dim || m.input_scale.len() != m.input_dim {
                    return Err(Error::Shape(
                        "standardization length disagrees with input_dim".into(),
                    ));
                }
                for (name, t) in transformer::PARAM_NAMES.iter().zip(m.params.tensors_mut()) {
                    let values = row(name)?;
                    if values.len() != t.len() {
                        return Err(Error::Shape(format!(
                            "parameter `{name}` has {} values, expected {}",
                            values.len(),
                            t.len()
                        )));
                    }
                    *t = values;
                }
                Ok(TrainedModel::Transformer(m))
            }
            other => Err(Error::Config(format!("unknown model kind `{other}`"))),
        }
    }

    /// Hex SHA-256 of the text form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn push_row(out: &mut String, name: &str, values: &[f64]) {
    out.push_str("param ");
    out.push_str(name);
    for v in values {
        let _ = write!(out, " {v:.16e}");
    }
    out.push('\n');
}

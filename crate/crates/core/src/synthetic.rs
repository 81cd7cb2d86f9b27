//! Synthetic person-day cohorts with a known between/within decomposition.
//!
//! Outcomes follow `y = clamp(mu + b_i + s_it + e_it)` where `b_i` is a
//! stable person intercept and `s_it` a stationary AR(1) state. Features
//! load both latents through a fixed random matrix with unit-norm rows,
//! plus an optional per-person style offset that carries no outcome signal.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{Prediction, PredictionSet};
use crate::panel::{DayIndex, Observation, Panel, PanelSchema, PersonId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MissingnessMode {
    /// Each cell dropped independently.
    Random,
    /// Contiguous missing runs with the given mean length in days.
    Block { mean_run: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortSpec {
    pub n_people: usize,
    pub study_length: u32,
    pub feature_dim: usize,
    pub outcome_mean: f64,
    pub between_sd: f64,
    pub ar_coef: f64,
    pub innovation_sd: f64,
    pub noise_sd: f64,
    /// Multiplier on the latent-to-feature loading.
    pub loading_scale: f64,
    pub feature_noise_sd: f64,
    /// SD of a per-person feature offset unrelated to the outcome.
    pub style_sd: f64,
    pub feature_missing_rate: f64,
    pub outcome_missing_rate: f64,
    pub missingness: MissingnessMode,
    pub outcome_min: f64,
    pub outcome_max: f64,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n_people: 20,
            study_length: 90,
            feature_dim: 128,
            outcome_mean: 2.5,
            between_sd: 0.8,
            ar_coef: 0.5,
            innovation_sd: 0.2,
            noise_sd: 0.2,
            loading_scale: 1.0,
            feature_noise_sd: 1.0,
            style_sd: 0.0,
            feature_missing_rate: 0.0,
            outcome_missing_rate: 0.0,
            missingness: MissingnessMode::Random,
            outcome_min: 1.0,
            outcome_max: 5.0,
            seed: 0,
        }
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        let sds = [
            ("between_sd", self.between_sd),
            ("innovation_sd", self.innovation_sd),
            ("noise_sd", self.noise_sd),
            ("loading_scale", self.loading_scale),
            ("feature_noise_sd", self.feature_noise_sd),
            ("style_sd", self.style_sd),
        ];
        for (name, v) in sds {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Param(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.ar_coef) {
            return Err(Error::Param(format!(
                "ar_coef must lie in [0, 1), got {}",
                self.ar_coef
            )));
        }
        for (name, r) in [
            ("feature_missing_rate", self.feature_missing_rate),
            ("outcome_missing_rate", self.outcome_missing_rate),
        ] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Param(format!("{name} must lie in [0, 1), got {r}")));
            }
        }
        if let MissingnessMode::Block { mean_run } = self.missingness {
            if !(mean_run.is_finite() && mean_run >= 1.0) {
                return Err(Error::Param(format!("mean_run must be >= 1, got {mean_run}")));
            }
        }
        if self.n_people == 0 || self.study_length == 0 {
            return Err(Error::Param(
                "cohort needs at least one person and one day".into(),
            ));
        }
        if !self.outcome_mean.is_finite() {
            return Err(Error::Param("outcome_mean must be finite".into()));
        }
        self.schema().validate()
    }

    pub fn schema(&self) -> PanelSchema {
        PanelSchema::new(self.study_length, self.feature_dim)
            .with_outcome_bounds(self.outcome_min, self.outcome_max)
    }
}

/// Latent values behind a generated panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub outcome_mean: f64,
    pub intercepts: BTreeMap<PersonId, f64>,
    /// AR(1) state for every day of the study, observed or not.
    pub states: BTreeMap<PersonId, Vec<f64>>,
}

impl GroundTruth {
    pub fn intercept(&self, person: &PersonId) -> Option<f64> {
        self.intercepts.get(person).copied()
    }

    pub fn state(&self, person: &PersonId, day: DayIndex) -> Option<f64> {
        self.states.get(person)?.get(day as usize).copied()
    }

    /// Writes `person_id,day,b,s`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["person_id", "day", "b", "s"])?;
        for (person, states) in &self.states {
            let b = self.intercepts[person];
            for (day, s) in states.iter().enumerate() {
                w.write_record([
                    person.as_str().to_string(),
                    day.to_string(),
                    format!("{b:.17e}"),
                    format!("{s:.17e}"),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("sd validated as finite and non-negative")
}

/// Per-day presence flags for one stream.
fn presence(n: usize, rate: f64, mode: MissingnessMode, rng: &mut ChaCha8Rng) -> Vec<bool> {
    if rate == 0.0 {
        return vec![true; n];
    }
    match mode {
        MissingnessMode::Random => (0..n).map(|_| rng.random::<f64>() >= rate).collect(),
        MissingnessMode::Block { mean_run } => {
            // two-state chain whose stationary missing share equals `rate`
            let leave = 1.0 / mean_run;
            let enter = (rate * leave / (1.0 - rate)).min(1.0);
            let mut missing = rng.random::<f64>() < rate;
            (0..n)
                .map(|_| {
                    let present = !missing;
                    let u: f64 = rng.random();
                    missing = if missing { u >= leave } else { u < enter };
                    present
                })
                .collect()
        }
    }
}

/// Draws a panel and its latent truth; identical specs give identical output.
pub fn generate(spec: &CohortSpec) -> Result<(Panel, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.feature_dim;
    let t_len = spec.study_length as usize;

    let loading: Vec<[f64; 2]> = (0..d)
        .map(|_| {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            [angle.cos(), angle.sin()]
        })
        .collect();

    let width = (spec.n_people - 1).to_string().len().max(3);
    let stationary_sd = spec.innovation_sd / (1.0 - spec.ar_coef * spec.ar_coef).sqrt();
    let (n_b, n_s0, n_s) = (
        normal(spec.between_sd),
        normal(stationary_sd),
        normal(spec.innovation_sd),
    );
    let (n_e, n_x, n_u) = (
        normal(spec.noise_sd),
        normal(spec.feature_noise_sd),
        normal(spec.style_sd),
    );

    let mut rows = BTreeMap::new();
    let mut intercepts = BTreeMap::new();
    let mut states = BTreeMap::new();
    for i in 0..spec.n_people {
        let person = PersonId::new(format!("p{i:0width$}"))?;
        let b = n_b.sample(&mut rng);
        let style: Vec<f64> = (0..d).map(|_| n_u.sample(&mut rng)).collect();
        let mut s = Vec::with_capacity(t_len);
        let mut state = n_s0.sample(&mut rng);
        for t in 0..t_len {
            if t > 0 {
                state = spec.ar_coef * state + n_s.sample(&mut rng);
            }
            s.push(state);
        }
        let has_x = presence(t_len, spec.feature_missing_rate, spec.missingness, &mut rng);
        let has_y = presence(t_len, spec.outcome_missing_rate, spec.missingness, &mut rng);

        let mut days = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let y = (spec.outcome_mean + b + s[t] + n_e.sample(&mut rng))
                .clamp(spec.outcome_min, spec.outcome_max);
            let x: Vec<f64> = loading
                .iter()
                .zip(&style)
                .map(|(w, u)| spec.loading_scale * (w[0] * b + w[1] * s[t]) + u + n_x.sample(&mut rng))
                .collect();
            if !has_x[t] && !has_y[t] {
                continue;
            }
            days.push((
                t as DayIndex,
                Observation::new(has_x[t].then_some(x), has_y[t].then_some(y)),
            ));
        }
        rows.insert(person.clone(), days);
        intercepts.insert(person.clone(), b);
        states.insert(person, s);
    }
    let panel = Panel::new(spec.schema(), rows)?;
    Ok((
        panel,
        GroundTruth {
            outcome_mean: spec.outcome_mean,
            intercepts,
            states,
        },
    ))
}

/// Predicts `mu + b_i` for every observed outcome: person level, no dynamics.
pub fn oracle_between_only_predictor(panel: &Panel, truth: &GroundTruth) -> Result<PredictionSet> {
    oracle_between_only_with_jitter(panel, truth, 0.0, 0)
}

/// As [`oracle_between_only_predictor`] with independent Gaussian noise
/// added to each prediction, which keeps within-person correlation defined.
pub fn oracle_between_only_with_jitter(
    panel: &Panel,
    truth: &GroundTruth,
    jitter_sd: f64,
    seed: u64,
) -> Result<PredictionSet> {
    if !(jitter_sd.is_finite() && jitter_sd >= 0.0) {
        return Err(Error::Param(format!("jitter sd must be >= 0, got {jitter_sd}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = normal(jitter_sd);
    let mut out = Vec::new();
    for (person, days) in panel.iter() {
        let b = truth
            .intercept(person)
            .ok_or_else(|| Error::Param(format!("no ground truth for `{person}`")))?;
        for (day, obs) in days {
            if let Some(y) = obs.outcome {
                out.push(Prediction {
                    person: person.clone(),
                    day: *day,
                    y_true: y,
                    y_pred: truth.outcome_mean + b + jitter.sample(&mut rng),
                });
            }
        }
    }
    PredictionSet::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CohortSpec {
        CohortSpec {
            n_people: 6,
            study_length: 30,
            feature_dim: 4,
            seed: 9,
            ..CohortSpec::default()
        }
    }

    #[test]
    fn zero_variance_gives_constant_outcomes() {
        let spec = CohortSpec {
            between_sd: 0.0,
            innovation_sd: 0.0,
            noise_sd: 0.0,
            ..small()
        };
        let (panel, _) = generate(&spec).unwrap();
        for (_, days) in panel.iter() {
            assert!(days.iter().all(|(_, o)| o.outcome == Some(2.5)));
        }
    }

    #[test]
    fn same_seed_same_panel() {
        let (a, ta) = generate(&small()).unwrap();
        let (b, tb) = generate(&small()).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        let (c, _) = generate(&CohortSpec { seed: 10, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn states_follow_the_recursion() {
        let spec = CohortSpec {
            innovation_sd: 0.0,
            ..small()
        };
        let (_, truth) = generate(&spec).unwrap();
        for s in truth.states.values() {
            assert!(s.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn missingness_rates_are_close() {
        for mode in [MissingnessMode::Random, MissingnessMode::Block { mean_run: 4.0 }] {
            let spec = CohortSpec {
                n_people: 50,
                study_length: 200,
                feature_dim: 1,
                feature_missing_rate: 0.3,
                missingness: mode,
                ..small()
            };
            let (panel, _) = generate(&spec).unwrap();
            let missing = panel
                .iter()
                .flat_map(|(_, d)| d.iter())
                .filter(|(_, o)| o.features.is_none())
                .count();
            let share = missing as f64 / (50.0 * 200.0);
            assert!((share - 0.3).abs() < 0.05, "{mode:?}: {share}");
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(generate(&CohortSpec {
            ar_coef: 1.0,
            ..small()
        })
        .is_err());
        assert!(generate(&CohortSpec {
            noise_sd: -0.1,
            ..small()
        })
        .is_err());
        assert!(generate(&CohortSpec {
            outcome_missing_rate: 1.0,
            ..small()
        })
        .is_err());
        assert!(generate(&CohortSpec {
            n_people: 0,
            ..small()
        })
        .is_err());
    }

    #[test]
    fn truth_sidecar_layout() {
        let (_, truth) = generate(&small()).unwrap();
        let mut buf = Vec::new();
        truth.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("person_id,day,b,s"));
        assert_eq!(lines.count(), 6 * 30);
    }

    #[test]
    fn oracle_predicts_person_level() {
        let (panel, truth) = generate(&small()).unwrap();
        let preds = oracle_between_only_predictor(&panel, &truth).unwrap();
        for p in preds.entries() {
            assert_eq!(p.y_pred, 2.5 + truth.intercept(&p.person).unwrap());
        }
    }
}

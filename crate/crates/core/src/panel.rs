//! Person-indexed, day-ordered panels.
//!
//! A [`Panel`] holds, for every person, the days on which anything was
//! recorded. Days are calendar days of the study (0-based), so a gap in the
//! day sequence means nothing was recorded that day. History windows built by
//! [`build_instances`] are calendar-aligned: a window of length `h` ending at
//! day `t` always spans days `t-h+1..=t`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 0-based study day.
pub type DayIndex = u32;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PersonId(String);

impl PersonId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::Param("person id must be non-empty".into()));
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PersonId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Dimensions and bounds shared by every observation of a panel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PanelSchema {
    pub study_length: u32,
    pub feature_dim: usize,
    #[serde(default = "default_outcome_min")]
    pub outcome_min: f64,
    #[serde(default = "default_outcome_max")]
    pub outcome_max: f64,
}

fn default_outcome_min() -> f64 {
    1.0
}

fn default_outcome_max() -> f64 {
    5.0
}

impl PanelSchema {
    pub fn new(study_length: u32, feature_dim: usize) -> Self {
        Self {
            study_length,
            feature_dim,
            outcome_min: default_outcome_min(),
            outcome_max: default_outcome_max(),
        }
    }

    pub fn with_outcome_bounds(mut self, min: f64, max: f64) -> Self {
        self.outcome_min = min;
        self.outcome_max = max;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.study_length == 0 {
            return Err(Error::Param("study_length must be positive".into()));
        }
        if self.feature_dim == 0 {
            return Err(Error::Param("feature_dim must be positive".into()));
        }
        if !(self.outcome_min <= self.outcome_max) {
            return Err(Error::Param(format!(
                "outcome bounds [{}, {}] are empty",
                self.outcome_min, self.outcome_max
            )));
        }
        Ok(())
    }

    fn outcome_in_range(&self, y: f64) -> bool {
        y.is_finite() && y >= self.outcome_min && y <= self.outcome_max
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Observation {
    pub features: Option<Vec<f64>>,
    pub outcome: Option<f64>,
    /// Set when `features` were carried forward from an earlier day.
    pub imputed: bool,
}

impl Observation {
    pub fn new(features: Option<Vec<f64>>, outcome: Option<f64>) -> Self {
        Self {
            features,
            outcome,
            imputed: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskMode {
    /// Same-day outcome from same-day features.
    Nowcast,
    /// Next-day outcome from features up to today.
    ForecastOneAhead,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    schema: PanelSchema,
    rows: BTreeMap<PersonId, Vec<(DayIndex, Observation)>>,
}

impl Panel {
    /// Builds a panel, sorting each person's days and checking every invariant.
    pub fn new(schema: PanelSchema, rows: BTreeMap<PersonId, Vec<(DayIndex, Observation)>>) -> Result<Self> {
        schema.validate()?;
        let mut rows = rows;
        for (person, days) in rows.iter_mut() {
            days.sort_by_key(|(d, _)| *d);
            for pair in days.windows(2) {
                if pair[0].0 == pair[1].0 {
                    return Err(Error::Duplicate {
                        person: person.to_string(),
                        day: pair[0].0,
                    });
                }
            }
            for (day, obs) in days.iter() {
                if *day >= schema.study_length {
                    return Err(Error::Param(format!(
                        "person `{person}` day {day} is outside study length {}",
                        schema.study_length
                    )));
                }
                if let Some(f) = &obs.features {
                    if f.len() != schema.feature_dim {
                        return Err(Error::Shape(format!(
                            "person `{person}` day {day} has {} features, expected {}",
                            f.len(),
                            schema.feature_dim
                        )));
                    }
                }
                if let Some(y) = obs.outcome {
                    if !schema.outcome_in_range(y) {
                        return Err(Error::Param(format!(
                            "person `{person}` day {day} outcome {y} outside [{}, {}]",
                            schema.outcome_min, schema.outcome_max
                        )));
                    }
                }
            }
        }
        Ok(Self { schema, rows })
    }

    pub fn schema(&self) -> &PanelSchema {
        &self.schema
    }

    pub fn study_length(&self) -> u32 {
        self.schema.study_length
    }

    pub fn feature_dim(&self) -> usize {
        self.schema.feature_dim
    }

    pub fn n_persons(&self) -> usize {
        self.rows.len()
    }

    pub fn n_observations(&self) -> usize {
        self.rows.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn persons(&self) -> impl Iterator<Item = &PersonId> {
        self.rows.keys()
    }

    pub fn person_rows(&self, person: &PersonId) -> Option<&[(DayIndex, Observation)]> {
        self.rows.get(person).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&PersonId, &[(DayIndex, Observation)])> {
        self.rows.iter().map(|(p, r)| (p, r.as_slice()))
    }

    pub fn observation(&self, person: &PersonId, day: DayIndex) -> Option<&Observation> {
        let rows = self.rows.get(person)?;
        rows.binary_search_by_key(&day, |(d, _)| *d)
            .ok()
            .map(|i| &rows[i].1)
    }

    /// Restricts the panel to the given persons (unknown ids are ignored).
    pub fn retain_persons<'a>(&self, keep: impl IntoIterator<Item = &'a PersonId>) -> Panel {
        let rows = keep
            .into_iter()
            .filter_map(|p| self.rows.get(p).map(|r| (p.clone(), r.clone())))
            .collect();
        Panel {
            schema: self.schema,
            rows,
        }
    }

    /// Observed outcome values of one person, in day order.
    pub fn outcomes(&self, person: &PersonId) -> Vec<(DayIndex, f64)> {
        self.rows
            .get(person)
            .map(|r| r.iter().filter_map(|(d, o)| o.outcome.map(|y| (*d, y))).collect())
            .unwrap_or_default()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
        let mut header = vec!["person_id".to_string(), "day".into(), "outcome".into()];
        header.extend((0..self.schema.feature_dim).map(|j| format!("f{j}")));
        w.write_record(&header)?;
        for (person, rows) in &self.rows {
            for (day, obs) in rows {
                let mut rec = vec![
                    person.to_string(),
                    day.to_string(),
                    obs.outcome.map(|y| y.to_string()).unwrap_or_default(),
                ];
                match &obs.features {
                    Some(f) => rec.extend(f.iter().map(|v| v.to_string())),
                    None => rec.extend(std::iter::repeat_n(String::new(), self.schema.feature_dim)),
                }
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads a panel CSV: `person_id,day,outcome,f0,...,f{D-1}`.
///
/// `outcome` may be empty. The feature block may be entirely empty or omitted.
pub fn load_panel(path: &Path, schema: PanelSchema) -> Result<Panel> {
    let file = std::fs::File::open(path)?;
    read_panel(file, schema)
}

pub fn read_panel<R: std::io::Read>(input: R, schema: PanelSchema) -> Result<Panel> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut rows: BTreeMap<PersonId, Vec<(DayIndex, Observation)>> = BTreeMap::new();
    let mut seen: BTreeMap<(PersonId, DayIndex), u64> = BTreeMap::new();

    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let perr = |message: String| Error::Parse { line, message };

        if record.len() < 3 {
            return Err(perr(format!(
                "expected at least 3 fields (person_id, day, outcome), found {}",
                record.len()
            )));
        }
        let person = PersonId::new(&record[0]).map_err(|_| perr("empty person_id".into()))?;
        let day: DayIndex = record[1]
            .parse()
            .map_err(|_| perr(format!("bad day `{}`", &record[1])))?;
        if day >= schema.study_length {
            return Err(perr(format!(
                "day {day} outside study length {}",
                schema.study_length
            )));
        }
        let outcome = if record[2].is_empty() {
            None
        } else {
            let y: f64 = record[2]
                .parse()
                .map_err(|_| perr(format!("bad outcome `{}`", &record[2])))?;
            if !schema.outcome_in_range(y) {
                return Err(perr(format!(
                    "outcome {y} outside [{}, {}]",
                    schema.outcome_min, schema.outcome_max
                )));
            }
            Some(y)
        };

        let block: Vec<&str> = record.iter().skip(3).collect();
        let features = if block.iter().all(|s| s.is_empty()) {
            None
        } else {
            if block.len() != schema.feature_dim {
                return Err(perr(format!(
                    "expected {} features, found {}",
                    schema.feature_dim,
                    block.len()
                )));
            }
            let mut f = Vec::with_capacity(block.len());
            for (j, s) in block.iter().enumerate() {
                let v: f64 = s.parse().map_err(|_| perr(format!("bad feature f{j} `{s}`")))?;
                if !v.is_finite() {
                    return Err(perr(format!("non-finite feature f{j}")));
                }
                f.push(v);
            }
            Some(f)
        };

        if seen.insert((person.clone(), day), line).is_some() {
            return Err(Error::Duplicate {
                person: person.to_string(),
                day,
            });
        }
        rows.entry(person)
            .or_default()
            .push((day, Observation::new(features, outcome)));
    }
    Panel::new(schema, rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageSummary {
    pub retained: usize,
    pub dropped: Vec<PersonId>,
    /// No person survived the filter.
    pub empty_warning: bool,
}

/// Keeps persons with at least `min_fraction * study_length` observed outcomes.
pub fn filter_coverage(panel: &Panel, min_fraction: f64) -> Result<(Panel, CoverageSummary)> {
    if !(min_fraction > 0.0 && min_fraction <= 1.0) {
        return Err(Error::Param(format!(
            "min_fraction must lie in (0, 1], got {min_fraction}"
        )));
    }
    let required = min_fraction * f64::from(panel.study_length());
    let mut rows = BTreeMap::new();
    let mut dropped = Vec::new();
    for (person, days) in &panel.rows {
        let observed = days.iter().filter(|(_, o)| o.outcome.is_some()).count();
        // tolerate representation error in the product, e.g. 0.5 * 90
        if observed as f64 + 1e-9 >= required {
            rows.insert(person.clone(), days.clone());
        } else {
            dropped.push(person.clone());
        }
    }
    let retained = rows.len();
    Ok((
        Panel {
            schema: panel.schema,
            rows,
        },
        CoverageSummary {
            retained,
            dropped,
            empty_warning: retained == 0,
        },
    ))
}

/// Last-observation-carried-forward imputation of features.
///
/// Every calendar day between a person's first and last recorded day is
/// materialized. Missing features are copied from the most recent earlier day
/// that has them and flagged as imputed. Outcomes are never touched, and days
/// before the first feature observation stay feature-less.
pub fn impute_locf(panel: &Panel) -> Panel {
    let mut rows = BTreeMap::new();
    for (person, days) in &panel.rows {
        let (Some(first), Some(last)) = (days.first(), days.last()) else {
            rows.insert(person.clone(), Vec::new());
            continue;
        };
        let mut dense = Vec::with_capacity((last.0 - first.0 + 1) as usize);
        let mut carried: Option<&Vec<f64>> = None;
        let mut src = days.iter().peekable();
        for day in first.0..=last.0 {
            let mut obs = match src.peek() {
                Some((d, _)) if *d == day => src.next().map(|(_, o)| o.clone()).unwrap_or_default(),
                _ => Observation::default(),
            };
            match &obs.features {
                Some(_) => {}
                None => {
                    if let Some(prev) = carried {
                        obs.features = Some(prev.clone());
                        obs.imputed = true;
                    }
                }
            }
            dense.push((day, obs));
            carried = dense.last().and_then(|(_, o)| o.features.as_ref());
        }
        rows.insert(person.clone(), dense);
    }
    Panel {
        schema: panel.schema,
        rows,
    }
}

/// One supervised example: a chronological feature window and its target.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub person: PersonId,
    /// Last day of the feature window.
    pub anchor_day: DayIndex,
    /// `h` per-day feature vectors, oldest first.
    pub window: Vec<Vec<f64>>,
    pub target: f64,
}

impl Instance {
    pub fn history_len(&self) -> usize {
        self.window.len()
    }

    pub fn key(&self) -> (PersonId, DayIndex) {
        (self.person.clone(), self.anchor_day)
    }

    /// Calendar days covered by the window, oldest first.
    pub fn window_days(&self) -> impl Iterator<Item = DayIndex> {
        let h = self.window.len() as DayIndex;
        (self.anchor_day + 1 - h)..=self.anchor_day
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryDataset {
    pub mode: TaskMode,
    pub history_len: usize,
    pub feature_dim: usize,
    pub study_length: u32,
    /// Sorted by (person, anchor_day).
    pub instances: Vec<Instance>,
}

impl HistoryDataset {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn persons(&self) -> Vec<PersonId> {
        let mut out: Vec<PersonId> = Vec::new();
        for inst in &self.instances {
            if out.last() != Some(&inst.person) {
                out.push(inst.person.clone());
            }
        }
        out
    }
}

/// Builds supervised instances with feature windows of length `history_len`.
///
/// An instance is emitted for anchor day `t` when the target outcome
/// (`t` for nowcasting, `t+1` for forecasting) was observed and every day in
/// `t-h+1..=t` has features.
pub fn build_instances(panel: &Panel, mode: TaskMode, history_len: usize) -> Result<HistoryDataset> {
    if history_len == 0 {
        return Err(Error::Param("history length must be at least 1".into()));
    }
    if history_len > panel.study_length() as usize {
        return Err(Error::Param(format!(
            "history length {history_len} exceeds study length {}",
            panel.study_length()
        )));
    }
    let len = panel.study_length() as usize;
    let mut instances = Vec::new();
    for (person, rows) in &panel.rows {
        let mut by_day: Vec<Option<&Observation>> = vec![None; len];
        for (d, o) in rows {
            by_day[*d as usize] = Some(o);
        }
        for t in (history_len - 1)..len {
            let target_day = match mode {
                TaskMode::Nowcast => t,
                TaskMode::ForecastOneAhead => t + 1,
            };
            let Some(target) = by_day.get(target_day).copied().flatten().and_then(|o| o.outcome) else {
                continue;
            };
            let window: Option<Vec<Vec<f64>>> = (t + 1 - history_len..=t)
                .map(|d| by_day[d].and_then(|o| o.features.clone()))
                .collect();
            if let Some(window) = window {
                instances.push(Instance {
                    person: person.clone(),
                    anchor_day: t as DayIndex,
                    window,
                    target,
                });
            }
        }
    }
    Ok(HistoryDataset {
        mode,
        history_len,
        feature_dim: panel.feature_dim(),
        study_length: panel.study_length(),
        instances,
    })
}

//! Accuracy metrics under flattened, between-person, and within-person scopes.
//!
//! * Flattened pools every person-day.
//! * Between-person compares each person's mean prediction with their mean
//!   outcome. Elementwise metrics (MAE, SMAPE) are applied per person and
//!   averaged; Pearson r is taken over the vector of person means.
//! * Within-person computes the metric over each person's own series and
//!   averages over persons. Persons whose within-person r is undefined
//!   (fewer than two days or a constant series) are excluded and counted.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{DayIndex, PersonId};
use crate::stats::student_t_cdf;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub person: PersonId,
    pub day: DayIndex,
    pub y_true: f64,
    pub y_pred: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PredictionSet {
    entries: Vec<Prediction>,
}

impl PredictionSet {
    pub fn new(entries: Vec<Prediction>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert((&e.person, e.day)) {
                return Err(Error::Duplicate {
                    person: e.person.to_string(),
                    day: e.day,
                });
            }
            if !e.y_true.is_finite() || !e.y_pred.is_finite() {
                return Err(Error::Param(format!(
                    "non-finite prediction entry for `{}` day {}",
                    e.person, e.day
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn check_bounds(&self, min: f64, max: f64) -> Result<()> {
        match self.entries.iter().find(|e| e.y_true < min || e.y_true > max) {
            Some(e) => Err(Error::Param(format!(
                "true outcome {} for `{}` day {} outside [{min}, {max}]",
                e.y_true, e.person, e.day
            ))),
            None => Ok(()),
        }
    }

    pub fn entries(&self) -> &[Prediction] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.entries.iter().map(|e| (e.y_true, e.y_pred)).collect()
    }

    /// `(y_true, y_pred)` series per person, in insertion order.
    pub fn by_person(&self) -> BTreeMap<&PersonId, Vec<(f64, f64)>> {
        let mut out: BTreeMap<&PersonId, Vec<(f64, f64)>> = BTreeMap::new();
        for e in &self.entries {
            out.entry(&e.person).or_default().push((e.y_true, e.y_pred));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mae,
    Smape,
    PearsonR,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Mae, Metric::Smape, Metric::PearsonR];

    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::Mae => "mae",
            Metric::Smape => "smape",
            Metric::PearsonR => "r",
        }
    }

    fn is_elementwise(&self) -> bool {
        !matches!(self, Metric::PearsonR)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricScope {
    Flattened,
    BetweenPerson,
    WithinPerson,
}

impl MetricScope {
    pub const ALL: [MetricScope; 3] = [
        MetricScope::Flattened,
        MetricScope::BetweenPerson,
        MetricScope::WithinPerson,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MetricScope::Flattened => "flattened",
            MetricScope::BetweenPerson => "between",
            MetricScope::WithinPerson => "within",
        }
    }
}

impl fmt::Display for MetricScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn non_empty(pairs: &[(f64, f64)], what: &str) -> Result<()> {
    if pairs.is_empty() {
        Err(Error::UndefinedMetric(format!("{what} of an empty set")))
    } else {
        Ok(())
    }
}

fn mean(xs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = xs.len() as f64;
    xs.sum::<f64>() / n
}

/// Mean absolute error over `(y_true, y_pred)` pairs.
pub fn mae(pairs: &[(f64, f64)]) -> Result<f64> {
    non_empty(pairs, "MAE")?;
    Ok(mean(pairs.iter().map(|(y, p)| (p - y).abs())))
}

fn smape_term(y: f64, p: f64, eps: f64) -> Result<f64> {
    let denom = y.abs() + p.abs() + eps;
    if denom == 0.0 {
        return Err(Error::UndefinedMetric(
            "SMAPE denominator is zero (|y| + |y_hat| + eps = 0)".into(),
        ));
    }
    Ok(2.0 * (p - y).abs() / denom)
}

/// `(2/N) * sum |y_hat - y| / (|y| + |y_hat| + eps)`.
pub fn smape(pairs: &[(f64, f64)], eps: f64) -> Result<f64> {
    non_empty(pairs, "SMAPE")?;
    let terms = pairs
        .iter()
        .map(|(y, p)| smape_term(*y, *p, eps))
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean(terms.into_iter()))
}

/// Pearson product-moment correlation between `y_true` and `y_pred`.
pub fn pearson_r(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 2 {
        return Err(Error::UndefinedMetric(format!(
            "Pearson r needs at least 2 pairs, got {}",
            pairs.len()
        )));
    }
    // the computed mean of a constant series can be off by an ulp, so test
    // constancy directly rather than through the centered sums
    let constant = |f: fn(&(f64, f64)) -> f64| pairs.iter().all(|e| f(e) == f(&pairs[0]));
    if constant(|e| e.0) || constant(|e| e.1) {
        return Err(Error::UndefinedMetric("Pearson r of a constant series".into()));
    }
    let my = mean(pairs.iter().map(|(y, _)| *y));
    let mp = mean(pairs.iter().map(|(_, p)| *p));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (y, p) in pairs {
        let dy = y - my;
        let dp = p - mp;
        sxy += dy * dp;
        sxx += dy * dy;
        syy += dp * dp;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedMetric("Pearson r of a constant series".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Sample SD of `|y_hat - y|` over `sqrt(N)`.
pub fn mae_standard_error(pairs: &[(f64, f64)]) -> Result<f64> {
    let errs: Vec<f64> = pairs.iter().map(|(y, p)| (p - y).abs()).collect();
    standard_error(&errs)
        .ok_or_else(|| Error::UndefinedMetric("standard error needs at least 2 values".into()))
}

fn standard_error(values: &[f64]) -> Option<f64> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let m = mean(values.iter().copied());
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    Some((var / n as f64).sqrt())
}

/// Large-sample SE of a correlation coefficient.
fn correlation_standard_error(r: f64, n: usize) -> Option<f64> {
    (n > 2).then(|| ((1.0 - r * r).max(0.0) / (n - 2) as f64).sqrt())
}

fn elementwise(metric: Metric, y: f64, p: f64, eps: f64) -> Result<f64> {
    match metric {
        Metric::Mae => Ok((p - y).abs()),
        Metric::Smape => smape_term(y, p, eps),
        Metric::PearsonR => unreachable!("r is not elementwise"),
    }
}

/// One scoped metric value with its sampling unit counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScopedValue {
    pub value: f64,
    pub standard_error: Option<f64>,
    /// Instances for Flattened, persons otherwise (included persons for within r).
    pub n_units: usize,
    /// Persons dropped from within-person r.
    pub excluded: usize,
}

/// Evaluates `metric` under `scope` with SMAPE epsilon 0.
pub fn scoped(metric: Metric, scope: MetricScope, preds: &PredictionSet) -> Result<ScopedValue> {
    scoped_with_eps(metric, scope, preds, 0.0)
}

pub fn scoped_with_eps(
    metric: Metric,
    scope: MetricScope,
    preds: &PredictionSet,
    smape_eps: f64,
) -> Result<ScopedValue> {
    if preds.is_empty() {
        return Err(Error::UndefinedMetric("empty prediction set".into()));
    }
    match scope {
        MetricScope::Flattened => {
            let pairs = preds.pairs();
            if metric.is_elementwise() {
                let terms = pairs
                    .iter()
                    .map(|(y, p)| elementwise(metric, *y, *p, smape_eps))
                    .collect::<Result<Vec<f64>>>()?;
                Ok(ScopedValue {
                    value: mean(terms.iter().copied()),
                    standard_error: standard_error(&terms),
                    n_units: terms.len(),
                    excluded: 0,
                })
            } else {
                let r = pearson_r(&pairs)?;
                Ok(ScopedValue {
                    value: r,
                    standard_error: correlation_standard_error(r, pairs.len()),
                    n_units: pairs.len(),
                    excluded: 0,
                })
            }
        }
        MetricScope::BetweenPerson => {
            let means: Vec<(f64, f64)> = preds
                .by_person()
                .values()
                .map(|s| (mean(s.iter().map(|e| e.0)), mean(s.iter().map(|e| e.1))))
                .collect();
            if metric.is_elementwise() {
                let terms = means
                    .iter()
                    .map(|(y, p)| elementwise(metric, *y, *p, smape_eps))
                    .collect::<Result<Vec<f64>>>()?;
                Ok(ScopedValue {
                    value: mean(terms.iter().copied()),
                    standard_error: standard_error(&terms),
                    n_units: terms.len(),
                    excluded: 0,
                })
            } else {
                let r = pearson_r(&means)?;
                Ok(ScopedValue {
                    value: r,
                    standard_error: correlation_standard_error(r, means.len()),
                    n_units: means.len(),
                    excluded: 0,
                })
            }
        }
        MetricScope::WithinPerson => {
            let mut values = Vec::new();
            let mut excluded = 0;
            for series in preds.by_person().values() {
                let v = match metric {
                    Metric::Mae => mae(series)?,
                    Metric::Smape => smape(series, smape_eps)?,
                    Metric::PearsonR => match pearson_r(series) {
                        Ok(r) => r,
                        Err(_) => {
                            excluded += 1;
                            continue;
                        }
                    },
                };
                values.push(v);
            }
            if values.is_empty() {
                return Err(Error::UndefinedMetric(format!(
                    "within-person {metric}: all {excluded} persons excluded"
                )));
            }
            Ok(ScopedValue {
                value: mean(values.iter().copied()),
                standard_error: standard_error(&values),
                n_units: values.len(),
                excluded,
            })
        }
    }
}

/// One (scope, metric) cell of a report. `value` is `None` when undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCell {
    pub scope: MetricScope,
    pub metric: Metric,
    pub value: Option<f64>,
    pub standard_error: Option<f64>,
    pub n_units: usize,
    pub excluded: usize,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScopedMetricReport {
    pub cells: Vec<MetricCell>,
}

pub const REPORT_CSV_HEADER: [&str; 7] = ["split", "scope", "metric", "value", "se", "n_units", "excluded"];

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ScopedMetricReport {
    /// Every scope x metric cell. Undefined cells carry the reason in `note`.
    pub fn compute(preds: &PredictionSet, smape_eps: f64) -> Self {
        let mut cells = Vec::with_capacity(9);
        for scope in MetricScope::ALL {
            for metric in Metric::ALL {
                let cell = match scoped_with_eps(metric, scope, preds, smape_eps) {
                    Ok(v) => MetricCell {
                        scope,
                        metric,
                        value: Some(v.value),
                        standard_error: v.standard_error,
                        n_units: v.n_units,
                        excluded: v.excluded,
                        note: None,
                    },
                    Err(e) => MetricCell {
                        scope,
                        metric,
                        value: None,
                        standard_error: None,
                        n_units: 0,
                        excluded: if scope == MetricScope::WithinPerson {
                            preds.by_person().len()
                        } else {
                            0
                        },
                        note: Some(e.to_string()),
                    },
                };
                cells.push(cell);
            }
        }
        Self { cells }
    }

    pub fn get(&self, scope: MetricScope, metric: Metric) -> Option<&MetricCell> {
        self.cells.iter().find(|c| c.scope == scope && c.metric == metric)
    }

    pub fn value(&self, scope: MetricScope, metric: Metric) -> Option<f64> {
        self.get(scope, metric).and_then(|c| c.value)
    }

    pub fn csv_rows(&self, split: &str) -> Vec<[String; 7]> {
        self.cells
            .iter()
            .map(|c| {
                [
                    split.to_string(),
                    c.scope.to_string(),
                    c.metric.to_string(),
                    fmt_opt(c.value),
                    fmt_opt(c.standard_error),
                    c.n_units.to_string(),
                    c.excluded.to_string(),
                ]
            })
            .collect()
    }

    /// `split,scope,metric,value,se,n_units,excluded`, one row per cell.
    pub fn write_csv<W: Write>(&self, split: &str, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(REPORT_CSV_HEADER)?;
        for row in self.csv_rows(split) {
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    pub t_stat: f64,
    /// One-sided: alternative is model error < baseline error.
    pub p_value: f64,
    pub df: usize,
    pub mean_difference: f64,
}

/// One-sided paired t-test of model errors against baseline errors.
///
/// Differences are `model - baseline`; small p supports the model having
/// lower error. Identical lists give `t = 0, p = 0.5`.
pub fn paired_one_sided_t(model_errors: &[f64], baseline_errors: &[f64]) -> Result<PairedTTest> {
    if model_errors.len() != baseline_errors.len() {
        return Err(Error::Param(format!(
            "paired test needs equal lengths, got {} and {}",
            model_errors.len(),
            baseline_errors.len()
        )));
    }
    let n = model_errors.len();
    if n < 2 {
        return Err(Error::Param("paired test needs at least 2 pairs".into()));
    }
    let diffs: Vec<f64> = model_errors
        .iter()
        .zip(baseline_errors)
        .map(|(m, b)| m - b)
        .collect();
    let df = n - 1;
    let md = mean(diffs.iter().copied());
    if diffs.iter().all(|d| *d == 0.0) {
        return Ok(PairedTTest {
            t_stat: 0.0,
            p_value: 0.5,
            df,
            mean_difference: 0.0,
        });
    }
    let var = diffs.iter().map(|d| (d - md).powi(2)).sum::<f64>() / df as f64;
    // rounding noise in the differences counts as zero spread
    let scale = diffs.iter().map(|d| d.abs()).fold(0.0, f64::max);
    if var.sqrt() <= 1e-12 * scale {
        return Err(Error::DegenerateTest(
            "differences have zero variance but nonzero mean".into(),
        ));
    }
    let t = md / (var / n as f64).sqrt();
    Ok(PairedTTest {
        t_stat: t,
        p_value: student_t_cdf(t, df as f64),
        df,
        mean_difference: md,
    })
}

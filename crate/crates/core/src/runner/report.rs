//! Plot-ready CSV tables and a markdown summary of an experiment result.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CellOutcome, CellResult, ExperimentResult};
use crate::error::Result;
use crate::metrics::{fmt_opt, Metric, MetricScope, ScopedMetricReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Markdown,
}

/// A header plus rows of already formatted fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!("| {} |\n", self.header.join(" | "));
        s.push_str(&format!("|{}\n", "---|".repeat(self.header.len())));
        for r in &self.rows {
            s.push_str(&format!("| {} |\n", r.join(" | ")));
        }
        s
    }
}

const SWEEP_SCOPES: [MetricScope; 3] = [
    MetricScope::Flattened,
    MetricScope::BetweenPerson,
    MetricScope::WithinPerson,
];

fn status(c: &CellResult) -> &'static str {
    match c.outcome {
        CellOutcome::Ok(_) => "ok",
        CellOutcome::Failed { .. } => "failed",
        CellOutcome::Skipped { .. } => "skipped",
    }
}

fn mae_cell(r: &ScopedMetricReport, scope: MetricScope) -> (String, String) {
    let c = r.get(scope, Metric::Mae);
    (
        fmt_opt(c.and_then(|c| c.value)),
        fmt_opt(c.and_then(|c| c.standard_error)),
    )
}

/// Held-out MAE of model and baseline with the paired test, one row per cell.
pub fn table2(result: &ExperimentResult) -> Table {
    let mut t = Table::new(&[
        "regime",
        "model",
        "hidden_size",
        "h",
        "status",
        "n_train",
        "n_dev",
        "n_test",
        "model_mae",
        "baseline_mae",
        "t_stat",
        "p_value",
    ]);
    for c in &result.cells {
        let k = &c.key;
        let mut row = vec![
            k.regime.to_string(),
            k.model.label().to_string(),
            k.hidden_size.to_string(),
            k.history_len.to_string(),
            status(c).to_string(),
        ];
        match c.metrics() {
            Some(m) => {
                let t = m.paired_test.as_ref();
                row.extend([
                    m.counts.train.to_string(),
                    m.counts.dev.to_string(),
                    m.counts.test.to_string(),
                    mae_cell(&m.report, MetricScope::Flattened).0,
                    mae_cell(&m.baseline_report, MetricScope::Flattened).0,
                    fmt_opt(t.map(|t| t.t_stat)),
                    fmt_opt(t.map(|t| t.p_value)),
                ]);
            }
            None => row.extend(std::iter::repeat_n(String::new(), 7)),
        }
        t.rows.push(row);
    }
    t
}

/// Every scope x metric value of the model, for the configured metrics.
pub fn fig2b(result: &ExperimentResult) -> Table {
    let mut t = Table::new(&[
        "regime",
        "model",
        "hidden_size",
        "h",
        "scope",
        "metric",
        "value",
        "se",
    ]);
    for c in &result.cells {
        let Some(m) = c.metrics() else { continue };
        for scope in MetricScope::ALL {
            for metric in &result.config.metrics {
                let cell = m.report.get(scope, *metric);
                t.rows.push(vec![
                    c.key.regime.to_string(),
                    c.key.model.label().to_string(),
                    c.key.hidden_size.to_string(),
                    c.key.history_len.to_string(),
                    scope.to_string(),
                    metric.to_string(),
                    fmt_opt(cell.and_then(|c| c.value)),
                    fmt_opt(cell.and_then(|c| c.standard_error)),
                ]);
            }
        }
    }
    t
}

fn sweep(
    result: &ExperimentResult,
    header: &[&'static str],
    row: impl Fn(&CellResult) -> Vec<String>,
) -> Table {
    let mut t = Table::new(header);
    for c in &result.cells {
        let Some(m) = c.metrics() else { continue };
        for scope in SWEEP_SCOPES {
            let (mae, se) = mae_cell(&m.report, scope);
            let mut r = row(c);
            r.extend([scope.to_string(), mae, se]);
            t.rows.push(r);
        }
    }
    t
}

/// MAE by scope across hidden sizes.
pub fn fig3(result: &ExperimentResult) -> Table {
    let mut t = sweep(
        result,
        &["regime", "model", "h", "hidden_size", "scope", "mae", "se"],
        |c| {
            vec![
                c.key.regime.to_string(),
                c.key.model.label().to_string(),
                c.key.history_len.to_string(),
                c.key.hidden_size.to_string(),
            ]
        },
    );
    t.rows
        .sort_by(|a, b| (&a[0], &a[1], num(&a[2]), num(&a[3])).cmp(&(&b[0], &b[1], num(&b[2]), num(&b[3]))));
    t
}

/// MAE by scope across history lengths.
pub fn fig4(result: &ExperimentResult) -> Table {
    sweep(
        result,
        &["regime", "model", "hidden_size", "h", "scope", "mae", "se"],
        |c| {
            vec![
                c.key.regime.to_string(),
                c.key.model.label().to_string(),
                c.key.hidden_size.to_string(),
                c.key.history_len.to_string(),
            ]
        },
    )
}

/// Hidden size used for the model comparison: 128 when swept, else the largest.
pub fn fig5_hidden_size(result: &ExperimentResult) -> Option<usize> {
    let sizes = &result.config.hidden_sizes;
    if sizes.contains(&128) {
        Some(128)
    } else {
        sizes.iter().copied().max()
    }
}

/// AR vs BoE vs Transformer across history lengths at one hidden size.
pub fn fig5(result: &ExperimentResult) -> Table {
    let d = fig5_hidden_size(result);
    let mut t = sweep(result, &["regime", "model", "h", "scope", "mae", "se"], |c| {
        vec![
            c.key.regime.to_string(),
            c.key.model.label().to_string(),
            c.key.history_len.to_string(),
        ]
    });
    let keep: Vec<bool> = result
        .cells
        .iter()
        .filter(|c| c.metrics().is_some())
        .flat_map(|c| std::iter::repeat_n(Some(c.key.hidden_size) == d, SWEEP_SCOPES.len()))
        .collect();
    let mut it = keep.into_iter();
    t.rows.retain(|_| it.next().unwrap_or(false));
    t
}

fn num(s: &str) -> usize {
    s.parse().unwrap_or(usize::MAX)
}

pub fn markdown(result: &ExperimentResult) -> String {
    let mut s = String::from("# Experiment report\n\n");
    s.push_str(&format!(
        "{} persons, {} person-days, task `{}`.\n\n",
        result.n_persons,
        result.n_observations,
        serde_json::to_string(&result.config.task_mode)
            .unwrap_or_default()
            .trim_matches('"')
    ));
    s.push_str("## Splits\n\n");
    let mut plans = Table::new(&[
        "regime",
        "train",
        "dev",
        "test",
        "unused",
        "person_disjoint",
        "violations",
    ]);
    for p in &result.plans {
        plans.rows.push(vec![
            p.regime.to_string(),
            p.counts.train.to_string(),
            p.counts.dev.to_string(),
            p.counts.test.to_string(),
            p.counts.unused.to_string(),
            p.audit.person_disjoint.to_string(),
            p.audit.violations.len().to_string(),
        ]);
    }
    s.push_str(&plans.to_markdown());
    s.push_str("\n## Held-out MAE against the mean baseline\n\n");
    s.push_str(&table2(result).to_markdown());
    s.push_str("\n## Scoped metrics\n\n");
    s.push_str(&fig2b(result).to_markdown());
    let problems: Vec<String> = result
        .cells
        .iter()
        .filter_map(|c| match &c.outcome {
            CellOutcome::Failed { kind, message } => {
                Some(format!("- `{}` failed ({kind}): {message}", c.key.slug()))
            }
            CellOutcome::Skipped { reason } => Some(format!("- `{}` skipped: {reason}", c.key.slug())),
            CellOutcome::Ok(_) => None,
        })
        .collect();
    if !problems.is_empty() {
        s.push_str("\n## Cells without results\n\n");
        s.push_str(&problems.join("\n"));
        s.push('\n');
    }
    if !result.notes.is_empty() {
        s.push_str("\n## Notes\n\n");
        for n in &result.notes {
            s.push_str(&format!("- {n}\n"));
        }
    }
    s
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes the result under `dir` and returns the files written.
///
/// CSV output: `table2.csv`, `fig2b.csv`, `fig3.csv`, `fig4.csv`,
/// `fig5.csv`, per-cell reports under `cells/`, plans under `plans/`, and
/// saved models under `models/`. Markdown output: `report.md`.
/// `result.json` is always written; `timings.csv` when wall times are known.
pub fn emit_report(result: &ExperimentResult, dir: &Path, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, f: &dyn Fn(&mut BufWriter<File>) -> Result<()>| -> Result<()> {
        let path = dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut w = create(&path)?;
        f(&mut w)?;
        w.flush()?;
        written.push(path);
        Ok(())
    };

    put("result.json", &|w| {
        serde_json::to_writer_pretty(&mut *w, result)?;
        writeln!(w)?;
        Ok(())
    })?;
    if formats.contains(&ReportFormat::Csv) {
        let tables = [
            ("table2.csv", table2(result)),
            ("fig2b.csv", fig2b(result)),
            ("fig3.csv", fig3(result)),
            ("fig4.csv", fig4(result)),
            ("fig5.csv", fig5(result)),
        ];
        for (name, t) in &tables {
            put(name, &|w| t.write_csv(w))?;
        }
        for c in &result.cells {
            if let Some(m) = c.metrics() {
                put(&format!("cells/{}.csv", c.key.slug()), &|w| {
                    let mut csv = csv::Writer::from_writer(w);
                    csv.write_record(crate::metrics::REPORT_CSV_HEADER)?;
                    for row in m
                        .report
                        .csv_rows("model")
                        .into_iter()
                        .chain(m.baseline_report.csv_rows("baseline"))
                    {
                        csv.write_record(&row)?;
                    }
                    csv.flush()?;
                    Ok(())
                })?;
            }
        }
        for (i, p) in result.plan_tables.iter().enumerate() {
            let name = if result.config.shared_model && i == 0 {
                "plans/shared_training.csv".to_string()
            } else {
                format!("plans/{}.csv", p.regime)
            };
            put(&name, &|w| p.write_csv(w))?;
        }
        for (slug, text) in &result.model_texts {
            put(&format!("models/{slug}.txt"), &|w| {
                w.write_all(text.as_bytes())?;
                Ok(())
            })?;
        }
    }
    if formats.contains(&ReportFormat::Markdown) {
        put("report.md", &|w| {
            w.write_all(markdown(result).as_bytes())?;
            Ok(())
        })?;
    }
    if result.cells.iter().any(|c| c.wall_seconds > 0.0) {
        put("timings.csv", &|w| {
            writeln!(w, "cell,wall_seconds")?;
            for c in &result.cells {
                writeln!(w, "{},{:.3}", c.key.slug(), c.wall_seconds)?;
            }
            Ok(())
        })?;
    }
    Ok(written)
}

/// Loads a persisted `result.json`.
pub fn load_result(path: &Path) -> Result<ExperimentResult> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use longipanel::runner::report::{load_result, ReportFormat};
use longipanel::runner::{build_plans, emit_report, prepare, run, ExperimentConfig, PanelSource};
use longipanel::splits::{audit, SplitPlan};
use longipanel::synthetic::generate;
use longipanel::Error;

#[derive(Parser)]
#[command(name = "longipanel", version, about = "Person-by-day evaluation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed and, for synthetic panels, the cohort seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw the synthetic panel and its latent truth.
    Generate(Common),
    /// Build, dev-carve and save the split plans.
    Split(Common),
    /// Run the experiment grid and write every report.
    Run {
        #[command(flatten)]
        common: Common,
        /// Worker threads; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Rewrite tables and the markdown summary from a saved `result.json`.
    Report {
        /// Saved result file.
        #[arg(long)]
        result: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-verify saved plans; exits nonzero on any violation.
    Audit {
        /// Plan CSV files.
        #[arg(required = true)]
        plans: Vec<PathBuf>,
        /// Also check that each plan covers this experiment's instances exactly.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load_config(c: &Common) -> Result<(ExperimentConfig, PathBuf), Error> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.seeds.master = seed;
        if let PanelSource::Synthetic(spec) = &mut cfg.panel {
            spec.seed = seed;
        }
    }
    cfg.validate()?;
    let out = c.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    fs::create_dir_all(&out)?;
    Ok((cfg, out))
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    Ok(BufWriter::new(File::create(path)?))
}

fn print_json(value: &serde_json::Value) -> Result<(), Error> {
    let mut stdout = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut stdout, value)?;
    writeln!(stdout)?;
    Ok(())
}

fn cmd_generate(c: &Common) -> Result<(), Error> {
    let (cfg, out) = load_config(c)?;
    let PanelSource::Synthetic(spec) = &cfg.panel else {
        return Err(Error::Config("`generate` needs a synthetic panel source".into()));
    };
    let (panel, truth) = generate(spec)?;
    let (panel_path, truth_path) = (out.join("panel.csv"), out.join("truth.csv"));
    panel.write_csv(create(&panel_path)?)?;
    truth.write_csv(create(&truth_path)?)?;
    print_json(&serde_json::json!({
        "persons": panel.n_persons(),
        "observations": panel.n_observations(),
        "panel": panel_path,
        "truth": truth_path,
    }))
}

fn cmd_split(c: &Common) -> Result<(), Error> {
    let (cfg, out) = load_config(c)?;
    let prepared = prepare(&cfg)?;
    let max_h = *cfg.history_lengths.iter().max().expect("validated non-empty");
    let ds = &prepared.datasets[&max_h];
    let plans = build_plans(&cfg, ds)?;
    let dir = out.join("plans");
    fs::create_dir_all(&dir)?;
    let mut summary = Vec::new();
    for (i, plan) in plans.iter().enumerate() {
        let name = if cfg.shared_model && i == 0 {
            "shared_training".to_string()
        } else {
            plan.regime.to_string()
        };
        let path = dir.join(format!("{name}.csv"));
        plan.write_csv(create(&path)?)?;
        summary.push(serde_json::json!({
            "plan": path,
            "counts": plan.counts(),
            "audit": audit(plan, Some(ds)),
        }));
    }
    print_json(&serde_json::Value::Array(summary))
}

fn cmd_run(c: &Common, jobs: usize) -> Result<(), Error> {
    let (cfg, out) = load_config(c)?;
    let result = run(&cfg, jobs)?;
    let written = emit_report(&result, &out, &[ReportFormat::Csv, ReportFormat::Markdown])?;
    let failed = result.cells.iter().filter(|c| c.metrics().is_none()).count();
    print_json(&serde_json::json!({
        "cells": result.cells.len(),
        "not_ok": failed,
        "files": written.len(),
        "output": out,
    }))
}

fn cmd_report(result: &Path, out: &Path) -> Result<(), Error> {
    let loaded = load_result(result)?;
    let written = emit_report(&loaded, out, &[ReportFormat::Csv, ReportFormat::Markdown])?;
    print_json(&serde_json::json!({ "files": written }))
}

fn cmd_audit(plans: &[PathBuf], config: Option<&Path>) -> Result<(), Error> {
    let universe = match config {
        Some(path) => {
            let cfg = ExperimentConfig::load(path)?;
            cfg.validate()?;
            let mut prepared = prepare(&cfg)?;
            let max_h = *cfg.history_lengths.iter().max().expect("validated non-empty");
            prepared.datasets.remove(&max_h)
        }
        None => None,
    };
    let mut reports = Vec::new();
    let mut violations = Vec::new();
    for path in plans {
        let plan = SplitPlan::read_csv(BufReader::new(File::open(path)?))?;
        let report = audit(&plan, universe.as_ref());
        violations.extend(
            report
                .violations
                .iter()
                .map(|v| format!("{}: {v}", path.display())),
        );
        reports.push(serde_json::json!({ "plan": path, "audit": report }));
    }
    print_json(&serde_json::Value::Array(reports))?;
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::Leakage(violations.join("; ")))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Generate(c) => cmd_generate(c),
        Command::Split(c) => cmd_split(c),
        Command::Run { common, jobs } => cmd_run(common, *jobs),
        Command::Report { result, out } => cmd_report(result, out),
        Command::Audit { plans, config } => cmd_audit(plans, config.as_deref()),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let summary = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{summary}");
            ExitCode::FAILURE
        }
    }
}

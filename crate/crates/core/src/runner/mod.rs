//! Config-driven experiments: load, split, reduce, fit, score, report.

pub mod config;
pub mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{encode_history, fit_pca_on_train, ModelInput, PcaModel};
use crate::metrics::{paired_one_sided_t, PairedTTest, Prediction, PredictionSet, ScopedMetricReport};
use crate::models::{
    fit_mean_baseline, fit_transformer, select_ridge, ModelKind, SelectionTrace, TrainedModel,
    TransformerConfig, PENALTY_GRID,
};
use crate::panel::{
    build_instances, filter_coverage, impute_locf, load_panel, DayIndex, HistoryDataset, Instance, Panel,
    PersonId,
};
use crate::splits::{
    audit, carve_dev, choose_test_people, mask_to_match, person_means, select_cohort, split_by_people,
    split_cross_and_prospective, split_prospective, split_traditional, Assignment, AssignmentCounts,
    AuditReport, InstanceKey, Regime, SplitPlan,
};
use crate::synthetic::{generate, GroundTruth};

pub use config::{ExperimentConfig, PanelSource};
pub use report::emit_report;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub regime: Regime,
    pub model: ModelKind,
    pub hidden_size: usize,
    pub history_len: usize,
}

impl CellKey {
    /// File-name friendly identifier.
    pub fn slug(&self) -> String {
        format!(
            "{}_{}_d{}_h{}",
            self.regime,
            self.model.as_str(),
            self.hidden_size,
            self.history_len
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    /// Assignment counts of the plan the cell was scored on.
    pub counts: AssignmentCounts,
    pub report: ScopedMetricReport,
    pub baseline_mean: f64,
    pub baseline_report: ScopedMetricReport,
    /// Absolute errors of the model against those of the baseline.
    pub paired_test: Option<PairedTTest>,
    pub paired_test_note: Option<String>,
    pub trace: SelectionTrace,
    pub model_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellOutcome {
    Ok(Box<CellMetrics>),
    Failed { kind: String, message: String },
    Skipped { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub key: CellKey,
    pub outcome: CellOutcome,
    /// Seconds spent on the fit that produced this cell; kept out of result files.
    #[serde(skip)]
    pub wall_seconds: f64,
}

impl CellResult {
    pub fn metrics(&self) -> Option<&CellMetrics> {
        match &self.outcome {
            CellOutcome::Ok(m) => Some(m),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub regime: Regime,
    pub cutoff: Option<DayIndex>,
    pub dev_cutoff: Option<DayIndex>,
    pub train_people: Option<BTreeSet<PersonId>>,
    pub test_people: Option<BTreeSet<PersonId>>,
    pub dev_people: Option<BTreeSet<PersonId>>,
    pub counts: AssignmentCounts,
    pub audit: AuditReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub n_persons: usize,
    pub n_observations: usize,
    pub plans: Vec<PlanSummary>,
    pub cells: Vec<CellResult>,
    pub notes: Vec<String>,
    /// Full plans, written as CSV by [`emit_report`].
    #[serde(skip)]
    pub plan_tables: Vec<SplitPlan>,
    /// Trained model text per cell slug, when `save_models` is set.
    #[serde(skip)]
    pub model_texts: BTreeMap<String, String>,
    #[serde(skip)]
    pub truth: Option<GroundTruth>,
    #[serde(skip)]
    pub panel: Option<Panel>,
}

impl ExperimentResult {
    pub fn cell(&self, key: &CellKey) -> Option<&CellResult> {
        self.cells.iter().find(|c| &c.key == key)
    }
}

/// The prepared panel and instance sets shared by every cell.
pub struct Prepared {
    pub panel: Panel,
    pub truth: Option<GroundTruth>,
    /// One dataset per history length, all over the same instance keys.
    pub datasets: BTreeMap<usize, HistoryDataset>,
    pub notes: Vec<String>,
}

/// Loads (or generates) the panel, filters and imputes it, and builds the
/// instance sets for every history length.
///
/// Instance sets are restricted to anchors that have a full window at the
/// longest history, so every history length is scored on the same keys.
pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    let mut notes = Vec::new();
    let (mut panel, truth) = match &config.panel {
        PanelSource::Synthetic(spec) => {
            let (p, t) = generate(spec)?;
            (p, Some(t))
        }
        PanelSource::File { path, .. } => (load_panel(path, config.panel.schema())?, None),
    };
    if let Some(min) = config.min_coverage {
        let (kept, summary) = filter_coverage(&panel, min)?;
        if summary.empty_warning {
            return Err(Error::InsufficientCohort(
                "no person meets the coverage filter".into(),
            ));
        }
        if !summary.dropped.is_empty() {
            notes.push(format!(
                "coverage filter dropped {} persons",
                summary.dropped.len()
            ));
        }
        panel = kept;
    }
    if let Some(c) = &config.cohort {
        let chosen = select_cohort(
            &panel,
            &c.stratification(),
            c.variation_floor,
            config.seeds.cohort(),
        )?;
        notes.push(format!("cohort selection kept {} persons", chosen.len()));
        panel = panel.retain_persons(chosen.iter());
    }
    let imputed = impute_locf(&panel);

    let max_h = *config.history_lengths.iter().max().expect("validated non-empty");
    let reference = build_instances(&imputed, config.task_mode, max_h)?;
    if reference.is_empty() {
        return Err(Error::DegenerateSplit(format!(
            "no instances with a {max_h}-day history"
        )));
    }
    let keys: BTreeSet<InstanceKey> = reference.instances.iter().map(Instance::key).collect();
    let mut datasets = BTreeMap::new();
    for &h in &config.history_lengths {
        let mut ds = build_instances(&imputed, config.task_mode, h)?;
        let before = ds.len();
        ds.instances.retain(|i| keys.contains(&i.key()));
        if before != ds.len() {
            notes.push(format!(
                "h={h}: {} instances without a {max_h}-day history left out",
                before - ds.len()
            ));
        }
        datasets.insert(h, ds);
    }
    Ok(Prepared {
        panel: imputed,
        truth,
        datasets,
        notes,
    })
}

/// Builds, optionally size-matches, dev-carves and audits one plan per regime.
///
/// In shared-model mode the first returned plan is the person-and-time
/// training plan and the rest are its per-regime evaluation views.
pub fn build_plans(config: &ExperimentConfig, ds: &HistoryDataset) -> Result<Vec<SplitPlan>> {
    let s = &config.split;
    let seeds = &config.seeds;
    let needs_people = config.shared_model || config.regimes.iter().any(|r| r.holds_out_people());
    let test_people = if needs_people {
        Some(choose_test_people(
            &person_means(ds),
            s.person_test_fraction,
            s.strata,
            seeds.split(),
        )?)
    } else {
        None
    };
    let people = || test_people.as_ref().expect("chosen when a regime needs it");

    if config.shared_model {
        let base = split_cross_and_prospective(ds, people(), s.cutoff)?;
        let base = carve_dev(&base, s.dev_fraction, seeds.dev())?;
        let mut out = vec![base.clone()];
        for &regime in &config.regimes {
            out.push(evaluation_view(&base, regime, people())?);
        }
        return Ok(out);
    }

    let mut plans = Vec::with_capacity(config.regimes.len());
    for &regime in &config.regimes {
        let plan = match regime {
            Regime::Traditional => split_traditional(ds, s.traditional_test_fraction, seeds.split())?,
            Regime::CrossSectional => split_by_people(ds, people(), seeds.split())?,
            Regime::Prospective => split_prospective(ds, s.cutoff)?,
            Regime::CrossSectionalAndProspective => split_cross_and_prospective(ds, people(), s.cutoff)?,
        };
        plans.push(plan);
    }
    if s.mask_to_match && plans.len() > 1 {
        plans = mask_to_match(&plans, seeds.mask())?;
    }
    plans
        .iter()
        .map(|p| carve_dev(p, s.dev_fraction, seeds.dev()))
        .collect()
}

/// Relabels a dev-carved person-and-time plan so that Test is the quadrant
/// the given regime scores. Train and Dev stay as they are.
fn evaluation_view(base: &SplitPlan, regime: Regime, test_people: &BTreeSet<PersonId>) -> Result<SplitPlan> {
    let cutoff = base.cutoff.expect("person-and-time plans carry a cutoff");
    let mut view = base.clone();
    view.regime = regime;
    for ((person, day), a) in view.assignment.iter_mut() {
        if matches!(a, Assignment::Train | Assignment::Dev) {
            continue;
        }
        let held_person = test_people.contains(person);
        let late = *day > cutoff;
        let scored = match regime {
            Regime::CrossSectional => held_person && !late,
            Regime::Prospective => !held_person && late,
            Regime::CrossSectionalAndProspective => held_person && late,
            Regime::Traditional => {
                return Err(Error::Config("shared-model mode has no traditional view".into()))
            }
        };
        *a = if scored {
            Assignment::Test
        } else {
            Assignment::Unused
        };
    }
    if regime == Regime::CrossSectional {
        view.cutoff = None;
    }
    if regime == Regime::Prospective {
        view.test_people = None;
    }
    Ok(view)
}

fn summarize(plan: &SplitPlan, ds: &HistoryDataset) -> PlanSummary {
    PlanSummary {
        regime: plan.regime,
        cutoff: plan.cutoff,
        dev_cutoff: plan.dev_cutoff,
        train_people: plan.train_people.clone(),
        test_people: plan.test_people.clone(),
        dev_people: plan.dev_people.clone(),
        counts: plan.counts(),
        audit: audit(plan, Some(ds)),
    }
}

/// Runs the full grid on `jobs` worker threads (0 = all cores).
pub fn run(config: &ExperimentConfig, jobs: usize) -> Result<ExperimentResult> {
    config.validate()?;
    let prepared = prepare(config)?;
    let max_h = *config.history_lengths.iter().max().expect("validated non-empty");
    let reference = &prepared.datasets[&max_h];
    let plans = build_plans(config, reference)?;
    let mut notes = prepared.notes.clone();

    let (training_plans, eval_plans): (Vec<&SplitPlan>, Vec<&SplitPlan>) = if config.shared_model {
        notes.push(format!(
            "shared-model mode: one model per cell trained on the {} plan",
            plans[0].regime
        ));
        (vec![&plans[0]], plans[1..].iter().collect())
    } else {
        (plans.iter().collect(), plans.iter().collect())
    };

    let feature_dim = reference.feature_dim;
    let mut tasks = Vec::new();
    let mut skipped = Vec::new();
    for &model in &config.models {
        for &hidden_size in &config.hidden_sizes {
            for &h in &config.history_lengths {
                let keys_for = |regimes: Vec<Regime>| -> Vec<CellKey> {
                    regimes
                        .into_iter()
                        .map(|regime| CellKey {
                            regime,
                            model,
                            hidden_size,
                            history_len: h,
                        })
                        .collect()
                };
                if hidden_size > feature_dim {
                    for key in keys_for(config.regimes.clone()) {
                        skipped.push(key);
                    }
                    continue;
                }
                if config.shared_model {
                    tasks.push(Task {
                        train_plan: training_plans[0],
                        evals: eval_plans.clone(),
                        keys: keys_for(config.regimes.clone()),
                    });
                } else {
                    for (plan, key) in eval_plans.iter().zip(keys_for(config.regimes.clone())) {
                        tasks.push(Task {
                            train_plan: plan,
                            evals: vec![plan],
                            keys: vec![key],
                        });
                    }
                }
            }
        }
    }
    if !skipped.is_empty() {
        notes.push(format!(
            "{} cells skipped: hidden size above the {feature_dim} input features",
            skipped.len()
        ));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let outputs: Vec<(Vec<CellResult>, Option<(String, String)>)> = pool.install(|| {
        tasks
            .par_iter()
            .map(|t| run_task(config, &prepared.datasets, t))
            .collect()
    });

    let mut cells: Vec<CellResult> = skipped
        .into_iter()
        .map(|key| CellResult {
            key,
            outcome: CellOutcome::Skipped {
                reason: format!("hidden size exceeds the {feature_dim} input features"),
            },
            wall_seconds: 0.0,
        })
        .collect();
    let mut model_texts = BTreeMap::new();
    for (results, text) in outputs {
        cells.extend(results);
        if let Some((slug, text)) = text {
            if config.save_models {
                model_texts.insert(slug, text);
            }
        }
    }
    cells.sort_by(|a, b| a.key.cmp(&b.key));

    Ok(ExperimentResult {
        config: config.clone(),
        n_persons: prepared.panel.n_persons(),
        n_observations: prepared.panel.n_observations(),
        plans: plans.iter().map(|p| summarize(p, reference)).collect(),
        cells,
        notes,
        plan_tables: plans,
        model_texts,
        truth: prepared.truth,
        panel: Some(prepared.panel),
    })
}

struct Task<'a> {
    train_plan: &'a SplitPlan,
    evals: Vec<&'a SplitPlan>,
    keys: Vec<CellKey>,
}

fn run_task(
    config: &ExperimentConfig,
    datasets: &BTreeMap<usize, HistoryDataset>,
    task: &Task<'_>,
) -> (Vec<CellResult>, Option<(String, String)>) {
    let start = Instant::now();
    let first = &task.keys[0];
    let ds = &datasets[&first.history_len];
    let fitted = fit_cell(config, ds, task.train_plan, first);
    let mut results = Vec::with_capacity(task.keys.len());
    let mut text = None;
    match fitted {
        Err(e) => {
            for key in &task.keys {
                results.push(failed(key.clone(), &e));
            }
        }
        Ok(fit) => {
            let slug = if config.shared_model {
                format!(
                    "shared_{}_d{}_h{}",
                    first.model.as_str(),
                    first.hidden_size,
                    first.history_len
                )
            } else {
                first.slug()
            };
            text = Some((slug, fit.model.to_text()));
            for (plan, key) in task.evals.iter().zip(&task.keys) {
                let outcome = score_cell(config, ds, plan, &fit);
                results.push(match outcome {
                    Ok(m) => CellResult {
                        key: key.clone(),
                        outcome: CellOutcome::Ok(Box::new(m)),
                        wall_seconds: 0.0,
                    },
                    Err(e) => failed(key.clone(), &e),
                });
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    for r in &mut results {
        r.wall_seconds = elapsed;
    }
    (results, text)
}

fn failed(key: CellKey, e: &Error) -> CellResult {
    CellResult {
        key,
        outcome: CellOutcome::Failed {
            kind: e.kind().to_string(),
            message: e.to_string(),
        },
        wall_seconds: 0.0,
    }
}

/// A trained model together with everything needed to score it.
pub struct FittedCell {
    pub pca: PcaModel,
    pub model: TrainedModel,
    pub baseline_mean: f64,
    pub trace: SelectionTrace,
    pub model_hash: String,
}

/// Reduced model input for one instance.
pub fn reduce_instance(pca: &PcaModel, inst: &Instance, kind: ModelKind) -> Result<ModelInput> {
    let days = inst
        .window
        .iter()
        .map(|x| pca.transform(x))
        .collect::<Result<Vec<_>>>()?;
    encode_history(&days, inst.history_len(), pca.output_dim(), kind.encoding())
}

fn instances_with<'a>(ds: &'a HistoryDataset, plan: &SplitPlan, a: Assignment) -> Vec<&'a Instance> {
    ds.instances
        .iter()
        .filter(|i| plan.get(&i.key()) == Some(a))
        .collect()
}

fn vectors(inputs: Vec<ModelInput>) -> Vec<Vec<f64>> {
    inputs
        .into_iter()
        .map(|i| match i {
            ModelInput::Vector(v) => v,
            ModelInput::Sequence(_) => unreachable!("ridge encodings are vectors"),
        })
        .collect()
}

fn sequences(inputs: Vec<ModelInput>) -> Vec<Vec<Vec<f64>>> {
    inputs
        .into_iter()
        .map(|i| match i {
            ModelInput::Sequence(s) => s,
            ModelInput::Vector(_) => unreachable!("transformer encoding is a sequence"),
        })
        .collect()
}

fn cell_seed(base: u64, key: &CellKey) -> u64 {
    let regime = Regime::ALL.iter().position(|r| *r == key.regime).unwrap_or(0) as u64;
    let model = ModelKind::ALL.iter().position(|m| *m == key.model).unwrap_or(0) as u64;
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (key.history_len as u64) << 40
        ^ (key.hidden_size as u64) << 16
        ^ regime << 8
        ^ model
}

/// Audits the plan, fits PCA on its Train days, and trains the cell's model
/// (selecting hyperparameters on Dev) plus the mean baseline.
pub fn fit_cell(
    config: &ExperimentConfig,
    ds: &HistoryDataset,
    plan: &SplitPlan,
    key: &CellKey,
) -> Result<FittedCell> {
    audit(plan, Some(ds)).enforce()?;
    if plan.is_degenerate() {
        return Err(Error::DegenerateSplit(format!(
            "{} plan has an empty side",
            plan.regime
        )));
    }
    let pca = fit_pca_on_train(ds, plan, key.hidden_size)?;
    let train = instances_with(ds, plan, Assignment::Train);
    let dev = instances_with(ds, plan, Assignment::Dev);
    if dev.is_empty() {
        return Err(Error::DegenerateSplit("empty development set".into()));
    }
    let encode = |set: &[&Instance]| -> Result<Vec<ModelInput>> {
        set.iter().map(|i| reduce_instance(&pca, i, key.model)).collect()
    };
    let targets = |set: &[&Instance]| -> Vec<f64> { set.iter().map(|i| i.target).collect() };
    let (y_train, y_dev) = (targets(&train), targets(&dev));

    let (model, trace) = match key.model {
        ModelKind::Ar | ModelKind::Boe => {
            let (x_train, x_dev) = (vectors(encode(&train)?), vectors(encode(&dev)?));
            let (m, trace) = select_ridge(
                (&x_train, &y_train),
                (&x_dev, &y_dev),
                &PENALTY_GRID,
                key.model.encoding(),
                key.history_len,
                Some(plan.regime),
            )?;
            (TrainedModel::Ridge(m), trace)
        }
        ModelKind::Transformer => {
            let (x_train, x_dev) = (sequences(encode(&train)?), sequences(encode(&dev)?));
            let cfg = TransformerConfig {
                seed: cell_seed(config.seeds.model(), key),
                ..config.transformer.clone()
            };
            let m = fit_transformer((&x_train, &y_train), (&x_dev, &y_dev), key.history_len, &cfg)?;
            let trace = SelectionTrace {
                grid: vec![(m.epochs_run as f64, m.best_dev_mae.unwrap_or(f64::NAN))],
                chosen: m.epochs_run as f64,
                dev_regime: Some(plan.regime),
                notes: vec![
                    format!(
                        "adamw lr {} weight decay {} batch {}",
                        cfg.learning_rate, cfg.weight_decay, cfg.batch_size
                    ),
                    format!(
                        "early stopping on dev mae: patience {} of at most {} epochs, best parameters restored",
                        cfg.patience, cfg.max_epochs
                    ),
                    format!("grid entry is (epochs run, best dev mae)"),
                ],
            };
            (TrainedModel::Transformer(m), trace)
        }
    };
    let all_targets: Vec<f64> = y_train.iter().chain(&y_dev).copied().collect();
    let baseline_mean = fit_mean_baseline(&all_targets)?.mean;
    let model_hash = model.hash();
    Ok(FittedCell {
        pca,
        model,
        baseline_mean,
        trace,
        model_hash,
    })
}

/// Scores a fitted model and its baseline on the plan's Test instances.
pub fn predict_test(
    ds: &HistoryDataset,
    plan: &SplitPlan,
    fit: &FittedCell,
    kind: ModelKind,
) -> Result<(PredictionSet, PredictionSet)> {
    let test = instances_with(ds, plan, Assignment::Test);
    let mut model_preds = Vec::with_capacity(test.len());
    let mut base_preds = Vec::with_capacity(test.len());
    for inst in test {
        let input = reduce_instance(&fit.pca, inst, kind)?;
        let y_pred = fit.model.predict(&input)?;
        model_preds.push(Prediction {
            person: inst.person.clone(),
            day: inst.anchor_day,
            y_true: inst.target,
            y_pred,
        });
        base_preds.push(Prediction {
            person: inst.person.clone(),
            day: inst.anchor_day,
            y_true: inst.target,
            y_pred: fit.baseline_mean,
        });
    }
    Ok((PredictionSet::new(model_preds)?, PredictionSet::new(base_preds)?))
}

fn score_cell(
    config: &ExperimentConfig,
    ds: &HistoryDataset,
    plan: &SplitPlan,
    fit: &FittedCell,
) -> Result<CellMetrics> {
    audit(plan, Some(ds)).enforce()?;
    let kind = match &fit.model {
        TrainedModel::Ridge(r) if r.encoding == crate::features::HistoryEncoding::Pooled => ModelKind::Boe,
        TrainedModel::Ridge(_) => ModelKind::Ar,
        _ => ModelKind::Transformer,
    };
    let (model_preds, base_preds) = predict_test(ds, plan, fit, kind)?;
    if model_preds.is_empty() {
        return Err(Error::DegenerateSplit(format!(
            "{} plan has no test instances",
            plan.regime
        )));
    }
    let abs_err =
        |p: &PredictionSet| -> Vec<f64> { p.entries().iter().map(|e| (e.y_true - e.y_pred).abs()).collect() };
    let (paired_test, paired_test_note) =
        match paired_one_sided_t(&abs_err(&model_preds), &abs_err(&base_preds)) {
            Ok(t) => (Some(t), None),
            Err(e) => (None, Some(e.to_string())),
        };
    Ok(CellMetrics {
        counts: plan.counts(),
        report: ScopedMetricReport::compute(&model_preds, config.smape_eps),
        baseline_mean: fit.baseline_mean,
        baseline_report: ScopedMetricReport::compute(&base_preds, config.smape_eps),
        paired_test,
        paired_test_note,
        trace: fit.trace.clone(),
        model_hash: fit.model_hash.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{Metric, MetricScope};
    use crate::synthetic::CohortSpec;

    fn tiny_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::from_toml(
            r#"
            regimes = ["traditional", "cross_sectional", "prospective"]
            models = ["ar"]
            hidden_sizes = [4]
            history_lengths = [1]
            [panel]
            source = "synthetic"
            "#,
        )
        .unwrap();
        cfg.panel = PanelSource::Synthetic(CohortSpec {
            n_people: 20,
            study_length: 40,
            feature_dim: 8,
            seed: 3,
            ..CohortSpec::default()
        });
        cfg.split.cutoff = 27;
        cfg
    }

    #[test]
    fn three_regimes_give_three_cells() {
        let res = run(&tiny_config(), 1).unwrap();
        assert_eq!(res.cells.len(), 3);
        for c in &res.cells {
            let m = c.metrics().unwrap_or_else(|| panic!("{:?}", c.outcome));
            assert!(m.report.value(MetricScope::Flattened, Metric::Mae).is_some());
            assert_eq!(m.trace.grid.len(), 8);
        }
        assert_eq!(res.plans.len(), 3);
        assert!(!res.plans[0].audit.person_disjoint);
        assert!(res.plans[1].audit.person_disjoint);
    }

    #[test]
    fn cells_match_manual_composition() {
        let cfg = tiny_config();
        let res = run(&cfg, 2).unwrap();
        let prepared = prepare(&cfg).unwrap();
        let ds = &prepared.datasets[&1];
        let plans = build_plans(&cfg, ds).unwrap();
        for (plan, cell) in plans.iter().zip(&res.cells) {
            let fit = fit_cell(&cfg, ds, plan, &cell.key).unwrap();
            let (preds, base) = predict_test(ds, plan, &fit, ModelKind::Ar).unwrap();
            let m = cell.metrics().unwrap();
            assert_eq!(
                m.report.value(MetricScope::Flattened, Metric::Mae),
                Some(crate::metrics::mae(&preds.pairs()).unwrap())
            );
            assert_eq!(
                m.baseline_report.value(MetricScope::Flattened, Metric::Mae),
                Some(crate::metrics::mae(&base.pairs()).unwrap())
            );
        }
    }

    #[test]
    fn shared_model_hashes_agree() {
        let mut cfg = tiny_config();
        cfg.shared_model = true;
        cfg.regimes = vec![
            Regime::CrossSectional,
            Regime::Prospective,
            Regime::CrossSectionalAndProspective,
        ];
        let res = run(&cfg, 2).unwrap();
        let hashes: BTreeSet<&str> = res
            .cells
            .iter()
            .map(|c| c.metrics().unwrap().model_hash.as_str())
            .collect();
        assert_eq!(hashes.len(), 1);
        assert_eq!(res.model_texts.len(), 1);
        for p in &res.plans {
            assert!(p.audit.violations.is_empty(), "{:?}", p.audit);
        }
    }

    #[test]
    fn oversized_hidden_sizes_are_skipped_not_dropped() {
        let mut cfg = tiny_config();
        cfg.hidden_sizes = vec![4, 64];
        let res = run(&cfg, 1).unwrap();
        assert_eq!(res.cells.len(), 6);
        let skipped = res
            .cells
            .iter()
            .filter(|c| matches!(c.outcome, CellOutcome::Skipped { .. }))
            .count();
        assert_eq!(skipped, 3);
    }
}

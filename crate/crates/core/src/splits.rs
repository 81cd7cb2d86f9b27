//! Evaluation regimes as explicit per-instance assignments.
//!
//! Every plan maps each instance key `(person, anchor_day)` of a
//! [`HistoryDataset`] to exactly one [`Assignment`]. The leakage auditor
//! ([`audit`]) re-derives the guarantees each regime declares from the
//! assignment table alone.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{DayIndex, HistoryDataset, Panel, PersonId};

pub type InstanceKey = (PersonId, DayIndex);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Traditional,
    CrossSectional,
    Prospective,
    CrossSectionalAndProspective,
}

impl Regime {
    pub const ALL: [Regime; 4] = [
        Regime::Traditional,
        Regime::CrossSectional,
        Regime::Prospective,
        Regime::CrossSectionalAndProspective,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Traditional => "traditional",
            Regime::CrossSectional => "cross_sectional",
            Regime::Prospective => "prospective",
            Regime::CrossSectionalAndProspective => "cross_sectional_and_prospective",
        }
    }

    pub fn holds_out_people(&self) -> bool {
        matches!(
            self,
            Regime::CrossSectional | Regime::CrossSectionalAndProspective
        )
    }

    pub fn holds_out_time(&self) -> bool {
        matches!(self, Regime::Prospective | Regime::CrossSectionalAndProspective)
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::Param(format!("unknown regime `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assignment {
    Train,
    Dev,
    Test,
    Unused,
}

impl Assignment {
    pub fn as_str(&self) -> &'static str {
        match self {
            Assignment::Train => "train",
            Assignment::Dev => "dev",
            Assignment::Test => "test",
            Assignment::Unused => "unused",
        }
    }
}

impl FromStr for Assignment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Assignment::Train),
            "dev" => Ok(Assignment::Dev),
            "test" => Ok(Assignment::Test),
            "unused" => Ok(Assignment::Unused),
            _ => Err(Error::Param(format!("unknown assignment `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub regime: Regime,
    pub cutoff: Option<DayIndex>,
    pub train_people: Option<BTreeSet<PersonId>>,
    pub test_people: Option<BTreeSet<PersonId>>,
    /// Train persons moved to Dev by [`carve_dev`].
    pub dev_people: Option<BTreeSet<PersonId>>,
    /// Last training day kept as Train by [`carve_dev`]; later training days are Dev.
    pub dev_cutoff: Option<DayIndex>,
    pub seed: u64,
    #[serde(skip)]
    pub assignment: BTreeMap<InstanceKey, Assignment>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentCounts {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub unused: usize,
}

impl SplitPlan {
    fn empty(regime: Regime, seed: u64) -> Self {
        Self {
            regime,
            cutoff: None,
            train_people: None,
            test_people: None,
            dev_people: None,
            dev_cutoff: None,
            seed,
            assignment: BTreeMap::new(),
        }
    }

    pub fn get(&self, key: &InstanceKey) -> Option<Assignment> {
        self.assignment.get(key).copied()
    }

    pub fn keys_with(&self, a: Assignment) -> impl Iterator<Item = &InstanceKey> {
        self.assignment
            .iter()
            .filter(move |(_, v)| **v == a)
            .map(|(k, _)| k)
    }

    pub fn counts(&self) -> AssignmentCounts {
        let mut c = AssignmentCounts::default();
        for a in self.assignment.values() {
            match a {
                Assignment::Train => c.train += 1,
                Assignment::Dev => c.dev += 1,
                Assignment::Test => c.test += 1,
                Assignment::Unused => c.unused += 1,
            }
        }
        c
    }

    /// Empty Train or empty Test. Representable, but training refuses it.
    pub fn is_degenerate(&self) -> bool {
        let c = self.counts();
        c.train == 0 || c.test == 0
    }

    pub fn people_with(&self, a: Assignment) -> BTreeSet<PersonId> {
        self.keys_with(a).map(|(p, _)| p.clone()).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# {}", serde_json::to_string(self)?)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["person_id", "day", "assignment"])?;
        for ((p, d), a) in &self.assignment {
            w.write_record([p.as_str(), &d.to_string(), a.as_str()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(mut input: R) -> Result<Self> {
        let mut header = String::new();
        input.read_line(&mut header)?;
        let json = header.trim_end().strip_prefix("# ").ok_or_else(|| Error::Parse {
            line: 1,
            message: "missing `# {...}` plan header".into(),
        })?;
        let mut plan: SplitPlan = serde_json::from_str(json)?;
        let mut reader = csv::Reader::from_reader(input);
        for rec in reader.records() {
            let rec = rec?;
            // header comment occupies the first physical line
            let line = rec.position().map(|p| p.line() + 1).unwrap_or(0);
            let perr = |message: String| Error::Parse { line, message };
            if rec.len() != 3 {
                return Err(perr(format!("expected 3 fields, found {}", rec.len())));
            }
            let person = PersonId::new(&rec[0]).map_err(|e| perr(e.to_string()))?;
            let day: DayIndex = rec[1]
                .parse()
                .map_err(|_| perr(format!("bad day `{}`", &rec[1])))?;
            let a: Assignment = rec[2].parse().map_err(|e: Error| perr(e.to_string()))?;
            if plan.assignment.insert((person.clone(), day), a).is_some() {
                return Err(Error::Duplicate {
                    person: person.to_string(),
                    day,
                });
            }
        }
        Ok(plan)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn keys(ds: &HistoryDataset) -> Vec<InstanceKey> {
    ds.instances.iter().map(|i| i.key()).collect()
}

fn rounded_share(fraction: f64, n: usize) -> usize {
    (fraction * n as f64).round() as usize
}

/// Which outcome summary orders persons into strata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StratificationKey {
    MeanOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StratificationSpec {
    pub n_bins: usize,
    pub per_bin_sample: usize,
    #[serde(default = "default_key")]
    pub key: StratificationKey,
    /// Variation is checked over the full period and separately over days
    /// before and from this day.
    #[serde(default = "default_variation_split")]
    pub variation_split_day: DayIndex,
}

fn default_key() -> StratificationKey {
    StratificationKey::MeanOutcome
}

fn default_variation_split() -> DayIndex {
    60
}

impl StratificationSpec {
    pub fn new(n_bins: usize, per_bin_sample: usize) -> Self {
        Self {
            n_bins,
            per_bin_sample,
            key: StratificationKey::MeanOutcome,
            variation_split_day: default_variation_split(),
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Near-equal contiguous chunks: sizes differ by at most one.
fn chunk_bounds(n: usize, bins: usize) -> Vec<(usize, usize)> {
    (0..bins).map(|b| (b * n / bins, (b + 1) * n / bins)).collect()
}

/// Sorts by mean (ties by id). Persons must have at least one outcome.
fn sort_by_mean(mut persons: Vec<(PersonId, f64)>) -> Vec<(PersonId, f64)> {
    persons.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    persons
}

/// Stratified cohort selection over persons with non-trivial outcome variation.
///
/// Persons whose outcome SD over the full period, before
/// `variation_split_day`, or from `variation_split_day` on falls below
/// `variation_floor` are dropped. Survivors are sorted by mean outcome,
/// cut into `n_bins` equal-count strata, and `per_bin_sample` persons are
/// drawn uniformly from each.
pub fn select_cohort(
    panel: &Panel,
    spec: &StratificationSpec,
    variation_floor: f64,
    seed: u64,
) -> Result<BTreeSet<PersonId>> {
    if !(variation_floor >= 0.0) {
        return Err(Error::Param("variation floor must be non-negative".into()));
    }
    if spec.n_bins == 0 || spec.per_bin_sample == 0 {
        return Err(Error::Param(
            "strata count and per-bin sample must be positive".into(),
        ));
    }
    let mut eligible = Vec::new();
    for person in panel.persons() {
        let ys = panel.outcomes(person);
        if ys.is_empty() {
            continue;
        }
        let all: Vec<f64> = ys.iter().map(|(_, y)| *y).collect();
        let early: Vec<f64> = ys
            .iter()
            .filter(|(d, _)| *d < spec.variation_split_day)
            .map(|(_, y)| *y)
            .collect();
        let late: Vec<f64> = ys
            .iter()
            .filter(|(d, _)| *d >= spec.variation_split_day)
            .map(|(_, y)| *y)
            .collect();
        if [&all, &early, &late]
            .iter()
            .all(|w| sample_sd(w) >= variation_floor)
        {
            eligible.push((person.clone(), mean(&all)));
        }
    }
    if spec.n_bins * spec.per_bin_sample > eligible.len() {
        return Err(Error::InsufficientCohort(format!(
            "{} bins x {} per bin exceeds {} eligible persons",
            spec.n_bins,
            spec.per_bin_sample,
            eligible.len()
        )));
    }
    let sorted = sort_by_mean(eligible);
    let mut rng = rng(seed);
    let mut cohort = BTreeSet::new();
    for (lo, hi) in chunk_bounds(sorted.len(), spec.n_bins) {
        let mut stratum: Vec<&PersonId> = sorted[lo..hi].iter().map(|(p, _)| p).collect();
        if stratum.len() < spec.per_bin_sample {
            return Err(Error::InsufficientCohort(format!(
                "stratum of {} persons cannot supply {}",
                stratum.len(),
                spec.per_bin_sample
            )));
        }
        stratum.shuffle(&mut rng);
        cohort.extend(stratum.into_iter().take(spec.per_bin_sample).cloned());
    }
    Ok(cohort)
}

/// Uniformly random instance-level split with no person or time constraint.
pub fn split_traditional(ds: &HistoryDataset, test_fraction: f64, seed: u64) -> Result<SplitPlan> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Param(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut ks = keys(ds);
    let n_test = rounded_share(test_fraction, ks.len());
    ks.shuffle(&mut rng(seed));
    let mut plan = SplitPlan::empty(Regime::Traditional, seed);
    for (i, k) in ks.into_iter().enumerate() {
        let a = if i < n_test {
            Assignment::Test
        } else {
            Assignment::Train
        };
        plan.assignment.insert(k, a);
    }
    Ok(plan)
}

/// Per-person mean target over the dataset's instances.
pub fn person_means(ds: &HistoryDataset) -> Vec<(PersonId, f64)> {
    let mut acc: BTreeMap<&PersonId, (f64, usize)> = BTreeMap::new();
    for inst in &ds.instances {
        let e = acc.entry(&inst.person).or_insert((0.0, 0));
        e.0 += inst.target;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(p, (s, n))| (p.clone(), s / n as f64))
        .collect()
}

/// Chooses held-out persons, optionally stratified by mean outcome.
///
/// With `strata = Some(k)`, persons are sorted by mean and cut into `k`
/// near-equal quantile bins; each bin contributes test persons in proportion
/// to its size (largest-remainder rounding so the total is exact).
pub fn choose_test_people(
    means: &[(PersonId, f64)],
    test_fraction: f64,
    strata: Option<usize>,
    seed: u64,
) -> Result<BTreeSet<PersonId>> {
    if means.len() < 2 {
        return Err(Error::Param(
            "cross-sectional split needs at least two persons".into(),
        ));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Param(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n = means.len();
    let n_test = rounded_share(test_fraction, n);
    if n_test == 0 || n_test == n {
        return Err(Error::DegenerateSplit(format!(
            "test fraction {test_fraction} of {n} persons leaves {n_test} test persons"
        )));
    }
    let sorted = sort_by_mean(means.to_vec());
    let bins = strata.unwrap_or(1).clamp(1, n);
    let bounds = chunk_bounds(n, bins);

    let mut quotas: Vec<usize> = Vec::with_capacity(bins);
    let mut remainders: Vec<(f64, usize)> = Vec::with_capacity(bins);
    for (b, (lo, hi)) in bounds.iter().enumerate() {
        let exact = n_test as f64 * (hi - lo) as f64 / n as f64;
        quotas.push(exact.floor() as usize);
        remainders.push((exact - exact.floor(), b));
    }
    let mut missing = n_test - quotas.iter().sum::<usize>();
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, b) in remainders {
        if missing == 0 {
            break;
        }
        quotas[b] += 1;
        missing -= 1;
    }

    let mut rng = rng(seed);
    let mut out = BTreeSet::new();
    for ((lo, hi), quota) in bounds.into_iter().zip(quotas) {
        let mut bin: Vec<&PersonId> = sorted[lo..hi].iter().map(|(p, _)| p).collect();
        bin.shuffle(&mut rng);
        out.extend(bin.into_iter().take(quota).cloned());
    }
    Ok(out)
}

/// Assigns every instance of `test_people` to Test and all others to Train.
pub fn split_by_people(
    ds: &HistoryDataset,
    test_people: &BTreeSet<PersonId>,
    seed: u64,
) -> Result<SplitPlan> {
    let persons: BTreeSet<PersonId> = ds.persons().into_iter().collect();
    if let Some(p) = test_people.iter().find(|p| !persons.contains(*p)) {
        return Err(Error::Param(format!("test person `{p}` is not in the dataset")));
    }
    let mut plan = SplitPlan::empty(Regime::CrossSectional, seed);
    plan.test_people = Some(test_people.clone());
    plan.train_people = Some(persons.difference(test_people).cloned().collect());
    for k in keys(ds) {
        let a = if test_people.contains(&k.0) {
            Assignment::Test
        } else {
            Assignment::Train
        };
        plan.assignment.insert(k, a);
    }
    Ok(plan)
}

/// Person-level split: held-out persons contribute only Test instances.
pub fn split_cross_sectional(
    ds: &HistoryDataset,
    test_fraction_people: f64,
    strata: Option<usize>,
    seed: u64,
) -> Result<SplitPlan> {
    let test = choose_test_people(&person_means(ds), test_fraction_people, strata, seed)?;
    split_by_people(ds, &test, seed)
}

fn check_cutoff(ds: &HistoryDataset, cutoff: DayIndex) -> Result<()> {
    if cutoff == 0 || cutoff >= ds.study_length {
        return Err(Error::Param(format!(
            "cutoff {cutoff} must lie in (0, {})",
            ds.study_length
        )));
    }
    Ok(())
}

/// Time-level split: anchor days `<= cutoff` train, later days test.
pub fn split_prospective(ds: &HistoryDataset, cutoff: DayIndex) -> Result<SplitPlan> {
    check_cutoff(ds, cutoff)?;
    let mut plan = SplitPlan::empty(Regime::Prospective, 0);
    plan.cutoff = Some(cutoff);
    for k in keys(ds) {
        let a = if k.1 <= cutoff {
            Assignment::Train
        } else {
            Assignment::Test
        };
        plan.assignment.insert(k, a);
    }
    Ok(plan)
}

/// Train persons before the cutoff against held-out persons after it.
pub fn split_cross_and_prospective(
    ds: &HistoryDataset,
    test_people: &BTreeSet<PersonId>,
    cutoff: DayIndex,
) -> Result<SplitPlan> {
    check_cutoff(ds, cutoff)?;
    if test_people.is_empty() {
        return Err(Error::Param("test person set is empty".into()));
    }
    let mut plan = split_by_people(ds, test_people, 0)?;
    plan.regime = Regime::CrossSectionalAndProspective;
    plan.cutoff = Some(cutoff);
    for ((p, d), a) in plan.assignment.iter_mut() {
        let held_out = test_people.contains(p);
        *a = match (held_out, *d <= cutoff) {
            (false, true) => Assignment::Train,
            (true, false) => Assignment::Test,
            _ => Assignment::Unused,
        };
    }
    Ok(plan)
}

/// Masks random Train/Test instances so every plan ends with the minimum
/// train count and the minimum test count across plans.
pub fn mask_to_match(plans: &[SplitPlan], seed: u64) -> Result<Vec<SplitPlan>> {
    let Some(first) = plans.first() else {
        return Ok(Vec::new());
    };
    for p in &plans[1..] {
        if p.assignment.len() != first.assignment.len() || !p.assignment.keys().eq(first.assignment.keys()) {
            return Err(Error::Param(
                "plans do not share the same instance universe".into(),
            ));
        }
    }
    let counts: Vec<AssignmentCounts> = plans.iter().map(SplitPlan::counts).collect();
    let min_train = counts.iter().map(|c| c.train).min().unwrap_or(0);
    let min_test = counts.iter().map(|c| c.test).min().unwrap_or(0);

    let mut rng = rng(seed);
    let mut out = Vec::with_capacity(plans.len());
    for plan in plans {
        let mut plan = plan.clone();
        for (which, target) in [(Assignment::Train, min_train), (Assignment::Test, min_test)] {
            let mut ks: Vec<InstanceKey> = plan.keys_with(which).cloned().collect();
            if ks.len() > target {
                ks.shuffle(&mut rng);
                for k in &ks[target..] {
                    plan.assignment.insert(k.clone(), Assignment::Unused);
                }
            }
        }
        out.push(plan);
    }
    Ok(out)
}

fn carve_people(
    train_people: &BTreeSet<PersonId>,
    dev_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<BTreeSet<PersonId>> {
    let n = train_people.len();
    let n_dev = rounded_share(dev_fraction, n).max(1);
    if n < 2 || n_dev >= n {
        return Err(Error::DegenerateSplit(format!(
            "cannot hold out {n_dev} dev persons from {n} training persons"
        )));
    }
    let mut ps: Vec<&PersonId> = train_people.iter().collect();
    ps.shuffle(rng);
    Ok(ps.into_iter().take(n_dev).cloned().collect())
}

/// Last training day that stays Train; later training days become Dev.
fn carve_days(train_days: &BTreeSet<DayIndex>, dev_fraction: f64) -> Result<DayIndex> {
    let days: Vec<DayIndex> = train_days.iter().copied().collect();
    let n = days.len();
    let n_dev = rounded_share(dev_fraction, n).max(1);
    if n < 2 || n_dev >= n {
        return Err(Error::DegenerateSplit(format!(
            "cannot hold out {n_dev} dev days from {n} training days"
        )));
    }
    Ok(days[n - n_dev - 1])
}

/// Splits a development set off Train using the plan's own regime logic.
///
/// * Traditional: random training instances.
/// * CrossSectional: all instances of a share of training persons.
/// * Prospective: the latest share of distinct training days.
/// * CrossSectionalAndProspective: held-out training persons at the latest
///   training days; their earlier days and the other persons' latest days
///   become Unused so Dev is both person- and time-disjoint from Train.
pub fn carve_dev(plan: &SplitPlan, dev_fraction: f64, seed: u64) -> Result<SplitPlan> {
    if !(dev_fraction > 0.0 && dev_fraction < 1.0) {
        return Err(Error::Param(format!(
            "dev fraction must lie in (0, 1), got {dev_fraction}"
        )));
    }
    let mut out = plan.clone();
    let mut rng = rng(seed);
    let train: Vec<InstanceKey> = plan.keys_with(Assignment::Train).cloned().collect();
    match plan.regime {
        Regime::Traditional => {
            let n_dev = rounded_share(dev_fraction, train.len()).max(1);
            if train.len() < 2 || n_dev >= train.len() {
                return Err(Error::DegenerateSplit(format!(
                    "cannot carve {n_dev} dev instances from {} training instances",
                    train.len()
                )));
            }
            let mut ks = train;
            ks.shuffle(&mut rng);
            for k in ks.into_iter().take(n_dev) {
                out.assignment.insert(k, Assignment::Dev);
            }
        }
        Regime::CrossSectional => {
            let people: BTreeSet<PersonId> = train.iter().map(|(p, _)| p.clone()).collect();
            let dev = carve_people(&people, dev_fraction, &mut rng)?;
            for k in train.iter().filter(|k| dev.contains(&k.0)) {
                out.assignment.insert(k.clone(), Assignment::Dev);
            }
            out.dev_people = Some(dev);
        }
        Regime::Prospective => {
            let days: BTreeSet<DayIndex> = train.iter().map(|(_, d)| *d).collect();
            let cut = carve_days(&days, dev_fraction)?;
            for k in train.iter().filter(|k| k.1 > cut) {
                out.assignment.insert(k.clone(), Assignment::Dev);
            }
            out.dev_cutoff = Some(cut);
        }
        Regime::CrossSectionalAndProspective => {
            let people: BTreeSet<PersonId> = train.iter().map(|(p, _)| p.clone()).collect();
            let dev = carve_people(&people, dev_fraction, &mut rng)?;
            let days: BTreeSet<DayIndex> = train.iter().map(|(_, d)| *d).collect();
            let cut = carve_days(&days, dev_fraction)?;
            for k in &train {
                let a = match (dev.contains(&k.0), k.1 > cut) {
                    (true, true) => Assignment::Dev,
                    (false, false) => Assignment::Train,
                    _ => Assignment::Unused,
                };
                out.assignment.insert(k.clone(), a);
            }
            out.dev_people = Some(dev);
            out.dev_cutoff = Some(cut);
        }
    }
    Ok(out)
}

/// Result of re-verifying a plan's guarantees from its assignment table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub regime: Regime,
    /// Every dataset instance assigned exactly once (only checked against a universe).
    pub partition_ok: bool,
    /// No person has both Train and Test instances.
    pub person_disjoint: bool,
    /// No person has both Train (or Test) and Dev instances.
    pub dev_person_disjoint: bool,
    /// `max(train day) <= cutoff < min(test day)`; `None` when the plan has no cutoff.
    pub temporal_ok: Option<bool>,
    /// `max(train day) < min(dev day) <= cutoff`; `None` when there is no time-based dev.
    pub dev_temporal_ok: Option<bool>,
    pub degenerate: bool,
    pub violations: Vec<String>,
}

impl AuditReport {
    /// Fails when a constraint declared by the plan's regime does not hold.
    pub fn enforce(&self) -> Result<()> {
        if self.violations.is_empty() {
            Ok(())
        } else {
            Err(Error::Leakage(format!(
                "{} plan: {}",
                self.regime,
                self.violations.join("; ")
            )))
        }
    }
}

fn day_range<'a>(keys: impl Iterator<Item = &'a InstanceKey>) -> Option<(DayIndex, DayIndex)> {
    keys.map(|(_, d)| *d).fold(None, |acc, d| match acc {
        None => Some((d, d)),
        Some((lo, hi)) => Some((lo.min(d), hi.max(d))),
    })
}

/// Re-verifies a plan. With `universe`, also checks that the plan covers
/// exactly that dataset's instance keys.
pub fn audit(plan: &SplitPlan, universe: Option<&HistoryDataset>) -> AuditReport {
    let mut violations = Vec::new();

    let partition_ok = match universe {
        None => true,
        Some(ds) => {
            let expected: BTreeSet<InstanceKey> = keys(ds).into_iter().collect();
            let ok = expected.len() == ds.len()
                && expected.len() == plan.assignment.len()
                && expected.iter().all(|k| plan.assignment.contains_key(k));
            if !ok {
                violations.push("assignment does not cover the dataset exactly once".into());
            }
            ok
        }
    };

    let train_p = plan.people_with(Assignment::Train);
    let test_p = plan.people_with(Assignment::Test);
    let dev_p = plan.people_with(Assignment::Dev);
    let person_disjoint = train_p.is_disjoint(&test_p);
    let dev_person_disjoint = dev_p.is_disjoint(&train_p) && dev_p.is_disjoint(&test_p);

    if plan.regime.holds_out_people() {
        if !person_disjoint {
            violations.push("train and test share persons".into());
        }
        if !dev_p.is_empty() && !dev_person_disjoint {
            violations.push("dev shares persons with train or test".into());
        }
    }

    let train_days = day_range(plan.keys_with(Assignment::Train));
    let test_days = day_range(plan.keys_with(Assignment::Test));
    let dev_days = day_range(plan.keys_with(Assignment::Dev));

    let temporal_ok = plan
        .cutoff
        .map(|tau| train_days.is_none_or(|(_, hi)| hi <= tau) && test_days.is_none_or(|(lo, _)| lo > tau));
    if plan.regime.holds_out_time() {
        match temporal_ok {
            None => violations.push("time-based regime without a cutoff".into()),
            Some(false) => violations.push("train/test days straddle the cutoff".into()),
            Some(true) => {}
        }
    }

    let dev_temporal_ok = match (plan.regime.holds_out_time(), dev_days) {
        (true, Some((dev_lo, dev_hi))) => {
            let ok =
                train_days.is_none_or(|(_, hi)| hi < dev_lo) && plan.cutoff.is_some_and(|tau| dev_hi <= tau);
            if !ok {
                violations.push("dev days are not strictly after train days and within the cutoff".into());
            }
            Some(ok)
        }
        _ => None,
    };

    AuditReport {
        regime: plan.regime,
        partition_ok,
        person_disjoint,
        dev_person_disjoint,
        temporal_ok,
        dev_temporal_ok,
        degenerate: plan.is_degenerate(),
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{Instance, TaskMode};

    fn pid(s: &str) -> PersonId {
        PersonId::new(s).unwrap()
    }

    /// `n_people` persons with days `0..n_days`, person `k` has target `k`.
    fn grid(n_people: usize, n_days: u32) -> HistoryDataset {
        let mut instances = Vec::new();
        for k in 0..n_people {
            for d in 0..n_days {
                instances.push(Instance {
                    person: pid(&format!("p{k:03}")),
                    anchor_day: d,
                    window: vec![vec![0.0]],
                    target: k as f64 + 0.01 * d as f64,
                });
            }
        }
        HistoryDataset {
            mode: TaskMode::Nowcast,
            history_len: 1,
            feature_dim: 1,
            study_length: 90.max(n_days),
            instances,
        }
    }

    #[test]
    fn traditional_halves_and_is_deterministic() {
        let ds = grid(2, 5);
        let a = split_traditional(&ds, 0.5, 3).unwrap();
        let c = a.counts();
        assert_eq!((c.train, c.test), (5, 5));
        assert_eq!(a, split_traditional(&ds, 0.5, 3).unwrap());
        assert!(split_traditional(&ds, 1.0, 3).is_err());
    }

    #[test]
    fn traditional_table_two_scale() {
        let ds = grid(1, 1429);
        let c = split_traditional(&ds, 0.295, 1).unwrap().counts();
        assert!((c.train as i64 - 1008).abs() <= 1, "{c:?}");
        assert!((c.test as i64 - 421).abs() <= 1, "{c:?}");
    }

    #[test]
    fn cross_sectional_person_counts() {
        let ds = grid(238, 2);
        let plan = split_cross_sectional(&ds, 0.2, Some(5), 9).unwrap();
        assert_eq!(plan.test_people.as_ref().unwrap().len(), 48);
        assert_eq!(plan.train_people.as_ref().unwrap().len(), 190);

        let ds = grid(20, 3);
        let plan = split_cross_sectional(&ds, 0.3, None, 9).unwrap();
        assert_eq!(plan.people_with(Assignment::Test).len(), 6);
        assert_eq!(plan.people_with(Assignment::Train).len(), 14);
        assert!(audit(&plan, Some(&ds)).enforce().is_ok());
    }

    #[test]
    fn cross_sectional_degenerate_cases() {
        assert!(split_cross_sectional(&grid(20, 2), 0.01, None, 1).is_err());
        assert!(split_cross_sectional(&grid(1, 5), 0.5, None, 1).is_err());
    }

    #[test]
    fn stratified_test_people_span_the_mean_range() {
        // 5 strata of 4 persons with fraction 0.25: exactly one per stratum.
        let ds = grid(20, 2);
        let test = choose_test_people(&person_means(&ds), 0.25, Some(5), 4).unwrap();
        assert_eq!(test.len(), 5);
        for b in 0..5 {
            let hits = (b * 4..b * 4 + 4)
                .filter(|k| test.contains(&pid(&format!("p{k:03}"))))
                .count();
            assert_eq!(hits, 1, "stratum {b}");
        }
    }

    #[test]
    fn prospective_cutoffs() {
        let ds = grid(3, 90);
        let plan = split_prospective(&ds, 63).unwrap();
        let c = plan.counts();
        assert_eq!((c.train, c.test), (3 * 64, 3 * 26));
        assert_eq!(audit(&plan, Some(&ds)).temporal_ok, Some(true));

        let degenerate = split_prospective(&ds, 89).unwrap();
        assert!(degenerate.is_degenerate());
        assert!(split_prospective(&ds, 0).is_err());
        assert!(split_prospective(&ds, 90).is_err());
    }

    #[test]
    fn combined_regime_marks_off_quadrants_unused() {
        let ds = grid(4, 10);
        let test: BTreeSet<PersonId> = [pid("p000")].into();
        let plan = split_cross_and_prospective(&ds, &test, 5).unwrap();
        for ((p, d), a) in &plan.assignment {
            let expected = match (test.contains(p), *d <= 5) {
                (false, true) => Assignment::Train,
                (true, false) => Assignment::Test,
                _ => Assignment::Unused,
            };
            assert_eq!(*a, expected);
        }
        assert!(audit(&plan, Some(&ds)).enforce().is_ok());

        let all: BTreeSet<PersonId> = ds.persons().into_iter().collect();
        assert!(split_cross_and_prospective(&ds, &all, 5).unwrap().is_degenerate());
        let stranger: BTreeSet<PersonId> = [pid("zz")].into();
        assert!(split_cross_and_prospective(&ds, &stranger, 5).is_err());
    }

    #[test]
    fn mask_to_match_reaches_minima() {
        let ds = grid(1, 1500);
        let make = |n_train: usize| {
            let mut p = SplitPlan::empty(Regime::Traditional, 0);
            for (i, k) in keys(&ds).into_iter().enumerate() {
                let a = if i < n_train {
                    Assignment::Train
                } else {
                    Assignment::Test
                };
                p.assignment.insert(k, a);
            }
            p
        };
        let plans = vec![make(1010), make(1008), make(1012)];
        let masked = mask_to_match(&plans, 5).unwrap();
        let expected_test = plans.iter().map(|p| p.counts().test).min().unwrap();
        for (before, after) in plans.iter().zip(&masked) {
            let c = after.counts();
            assert_eq!(c.train, 1008);
            assert_eq!(c.test, expected_test);
            // only Train/Test -> Unused moves
            for (k, a) in &after.assignment {
                let b = before.assignment[k];
                assert!(*a == b || *a == Assignment::Unused);
            }
        }
        assert_eq!(mask_to_match(&plans[..1], 5).unwrap(), plans[..1].to_vec());
        let same = vec![plans[0].clone(), plans[0].clone()];
        assert_eq!(mask_to_match(&same, 5).unwrap(), same);
    }

    #[test]
    fn carve_dev_prospective_takes_latest_days() {
        let ds = grid(3, 90);
        let plan = carve_dev(&split_prospective(&ds, 60).unwrap(), 0.2, 1).unwrap();
        // 61 training days, round(12.2) = 12 dev days: 49..=60
        let mut days: Vec<u32> = (0..=60).collect();
        days.sort_unstable();
        let oracle_cut = days[days.len() - 12 - 1];
        assert_eq!(plan.dev_cutoff, Some(oracle_cut));
        assert_eq!(oracle_cut, 48);
        for ((_, d), a) in &plan.assignment {
            let expected = if *d > 60 {
                Assignment::Test
            } else if *d > 48 {
                Assignment::Dev
            } else {
                Assignment::Train
            };
            assert_eq!(*a, expected);
        }
        let report = audit(&plan, Some(&ds));
        assert_eq!(report.dev_temporal_ok, Some(true));
        report.enforce().unwrap();
    }

    #[test]
    fn carve_dev_cross_sectional_holds_out_people() {
        let ds = grid(13, 4);
        let test: BTreeSet<PersonId> = ["p010", "p011", "p012"].map(pid).into();
        let plan = split_by_people(&ds, &test, 0).unwrap();
        let carved = carve_dev(&plan, 0.2, 2).unwrap();
        assert_eq!(carved.dev_people.as_ref().unwrap().len(), 2);
        assert_eq!(carved.people_with(Assignment::Dev).len(), 2);
        assert!(carved.people_with(Assignment::Dev).is_disjoint(&test));
        audit(&carved, Some(&ds)).enforce().unwrap();
    }

    #[test]
    fn carve_dev_combined_and_traditional() {
        let ds = grid(12, 20);
        let test: BTreeSet<PersonId> = ["p000", "p001"].map(pid).into();
        let plan = split_cross_and_prospective(&ds, &test, 14).unwrap();
        let carved = carve_dev(&plan, 0.2, 3).unwrap();
        let c = carved.counts();
        assert!(c.dev > 0 && c.train > 0);
        audit(&carved, Some(&ds)).enforce().unwrap();
        assert!(carved.keys_with(Assignment::Dev).all(|(_, d)| *d <= 14));

        let trad = carve_dev(&split_traditional(&ds, 0.3, 1).unwrap(), 0.25, 1).unwrap();
        let c = trad.counts();
        assert_eq!(c.dev, (0.25f64 * 168.0).round() as usize);
        assert_eq!(c.test, 72);
    }

    #[test]
    fn carve_dev_too_small() {
        let ds = grid(3, 4);
        let plan = split_by_people(&ds, &[pid("p000"), pid("p001")].into(), 0).unwrap();
        assert!(carve_dev(&plan, 0.2, 0).is_err());
    }

    #[test]
    fn traditional_leaks_people() {
        let ds = grid(5, 20);
        let report = audit(&split_traditional(&ds, 0.3, 1).unwrap(), Some(&ds));
        assert!(!report.person_disjoint);
        // Traditional declares no person constraint, so enforcement passes.
        assert!(report.enforce().is_ok());
    }

    #[test]
    fn audit_catches_tampering() {
        let ds = grid(3, 10);
        let mut plan = split_prospective(&ds, 5).unwrap();
        plan.assignment.insert((pid("p000"), 9), Assignment::Train);
        assert!(matches!(
            audit(&plan, Some(&ds)).enforce(),
            Err(Error::Leakage(_))
        ));

        let mut plan = split_cross_sectional(&ds, 0.34, None, 1).unwrap();
        let test_person = plan.people_with(Assignment::Test).into_iter().next().unwrap();
        plan.assignment.insert((test_person, 0), Assignment::Train);
        assert!(audit(&plan, Some(&ds)).enforce().is_err());

        let mut plan = split_prospective(&ds, 5).unwrap();
        plan.assignment.remove(&(pid("p001"), 3));
        assert!(!audit(&plan, Some(&ds)).partition_ok);
    }

    #[test]
    fn plan_csv_round_trip() {
        let ds = grid(6, 8);
        let plan = carve_dev(&split_cross_sectional(&ds, 0.34, Some(2), 11).unwrap(), 0.25, 4).unwrap();
        let mut buf = Vec::new();
        plan.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# {\"regime\":\"cross_sectional\""));
        assert!(text.lines().nth(1) == Some("person_id,day,assignment"));
        let back = SplitPlan::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, plan);
    }

    fn cohort_panel(means: &[f64]) -> Panel {
        use crate::panel::{Observation, PanelSchema};
        let mut rows = BTreeMap::new();
        for (k, m) in means.iter().enumerate() {
            let days = (0..90)
                .map(|d| {
                    let wiggle = if d % 2 == 0 { 0.1 } else { -0.1 };
                    (d, Observation::new(None, Some(m + wiggle)))
                })
                .collect();
            rows.insert(pid(&format!("p{k:03}")), days);
        }
        Panel::new(PanelSchema::new(90, 1), rows).unwrap()
    }

    #[test]
    fn cohort_of_twenty_from_ten_strata() {
        let means: Vec<f64> = (0..40).map(|k| 1.5 + 0.05 * k as f64).collect();
        let panel = cohort_panel(&means);
        let cohort = select_cohort(&panel, &StratificationSpec::new(10, 2), 0.01, 7).unwrap();
        assert_eq!(cohort.len(), 20);
        // strata are consecutive blocks of 4 persons by mean
        for b in 0..10 {
            let hits = (b * 4..b * 4 + 4)
                .filter(|k| cohort.contains(&pid(&format!("p{k:03}"))))
                .count();
            assert_eq!(hits, 2);
        }
        assert_eq!(
            cohort,
            select_cohort(&panel, &StratificationSpec::new(10, 2), 0.01, 7).unwrap()
        );
    }

    #[test]
    fn cohort_variation_floor() {
        use crate::panel::{Observation, PanelSchema};
        let rows: BTreeMap<PersonId, Vec<(DayIndex, Observation)>> = (0..4)
            .map(|k| {
                let days = (0..90).map(|d| (d, Observation::new(None, Some(2.0)))).collect();
                (pid(&format!("c{k}")), days)
            })
            .collect();
        let flat = Panel::new(PanelSchema::new(90, 1), rows).unwrap();
        assert_eq!(
            select_cohort(&flat, &StratificationSpec::new(2, 2), 0.0, 1)
                .unwrap()
                .len(),
            4
        );
        assert!(matches!(
            select_cohort(&flat, &StratificationSpec::new(2, 2), 0.01, 1),
            Err(Error::InsufficientCohort(_))
        ));
        let panel = cohort_panel(&[1.5, 2.0, 3.0, 4.0, 4.5]);
        assert!(select_cohort(&panel, &StratificationSpec::new(2, 3), 0.01, 1).is_err());
    }
}

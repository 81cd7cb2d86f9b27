use longipanel::metrics::{scoped, Metric, MetricScope};
use longipanel::synthetic::{
    generate, oracle_between_only_predictor, oracle_between_only_with_jitter, CohortSpec, MissingnessMode,
};

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

fn wide_bounds(spec: CohortSpec) -> CohortSpec {
    CohortSpec {
        outcome_min: -100.0,
        outcome_max: 100.0,
        ..spec
    }
}

#[test]
fn latent_moments_are_recovered() {
    let spec = wide_bounds(CohortSpec {
        n_people: 400,
        study_length: 200,
        feature_dim: 2,
        between_sd: 0.8,
        ar_coef: 0.6,
        innovation_sd: 0.5,
        seed: 11,
        ..CohortSpec::default()
    });
    let (_, truth) = generate(&spec).unwrap();
    let b: Vec<f64> = truth.intercepts.values().copied().collect();
    assert!((var(&b).sqrt() - 0.8).abs() < 0.08);
    assert!(mean(&b).abs() < 0.1);

    let (mut lag0, mut lag1, mut all) = (0.0, 0.0, Vec::new());
    for s in truth.states.values() {
        for w in s.windows(2) {
            lag0 += w[0] * w[0];
            lag1 += w[0] * w[1];
        }
        all.extend_from_slice(s);
    }
    assert!(
        (lag1 / lag0 - 0.6).abs() < 0.02,
        "lag-1 autocorrelation {}",
        lag1 / lag0
    );
    let stationary = 0.5 / (1.0f64 - 0.36).sqrt();
    assert!((var(&all).sqrt() - stationary).abs() < 0.03);
}

#[test]
fn outcome_icc_matches_the_variance_split() {
    let spec = wide_bounds(CohortSpec {
        n_people: 300,
        study_length: 120,
        feature_dim: 1,
        between_sd: 0.8,
        ar_coef: 0.5,
        innovation_sd: 0.2,
        noise_sd: 0.2,
        seed: 12,
        ..CohortSpec::default()
    });
    let (panel, _) = generate(&spec).unwrap();
    let per_person: Vec<Vec<f64>> = panel
        .persons()
        .map(|p| panel.outcomes(p).into_iter().map(|(_, y)| y).collect())
        .collect();
    let means: Vec<f64> = per_person.iter().map(|ys| mean(ys)).collect();
    let within: f64 = mean(&per_person.iter().map(|ys| var(ys)).collect::<Vec<_>>());
    let between = var(&means) - within / 120.0;
    let icc = between / (between + within);
    let s_var = 0.04 / (1.0 - 0.25);
    let expected = 0.64 / (0.64 + s_var + 0.04);
    assert!((icc - expected).abs() < 0.03, "icc {icc} expected {expected}");
}

#[test]
fn missingness_hits_the_requested_rate() {
    for mode in [MissingnessMode::Random, MissingnessMode::Block { mean_run: 5.0 }] {
        let spec = CohortSpec {
            n_people: 100,
            study_length: 200,
            feature_dim: 1,
            outcome_missing_rate: 0.3,
            missingness: mode,
            seed: 13,
            ..CohortSpec::default()
        };
        let (panel, _) = generate(&spec).unwrap();
        let observed: usize = panel.persons().map(|p| panel.outcomes(p).len()).sum();
        let rate = 1.0 - observed as f64 / 20_000.0;
        assert!((rate - 0.3).abs() < 0.03, "{mode:?}: {rate}");
        if let MissingnessMode::Block { mean_run } = mode {
            // mean length of missing runs
            let (mut runs, mut missing) = (0usize, 0usize);
            for p in panel.persons() {
                let days: Vec<u32> = panel.outcomes(p).into_iter().map(|(d, _)| d).collect();
                let mut prev: i64 = -1;
                for d in days.iter().map(|d| *d as i64).chain([200]) {
                    if d - prev > 1 {
                        runs += 1;
                        missing += (d - prev - 1) as usize;
                    }
                    prev = d;
                }
            }
            let mean_len = missing as f64 / runs as f64;
            assert!((mean_len - mean_run).abs() < 0.8, "mean run {mean_len}");
        }
    }
}

#[test]
fn between_only_oracle_separates_the_scopes() {
    let spec = CohortSpec {
        n_people: 40,
        study_length: 60,
        feature_dim: 2,
        seed: 14,
        ..CohortSpec::default()
    };
    let (panel, truth) = generate(&spec).unwrap();
    let exact = oracle_between_only_predictor(&panel, &truth).unwrap();
    let between = scoped(Metric::PearsonR, MetricScope::BetweenPerson, &exact)
        .unwrap()
        .value;
    assert!(between > 0.9, "between r {between}");
    // constant per-person predictions leave within-person r undefined
    assert!(scoped(Metric::PearsonR, MetricScope::WithinPerson, &exact).is_err());

    let jittered = oracle_between_only_with_jitter(&panel, &truth, 0.05, 3).unwrap();
    let within = scoped(Metric::PearsonR, MetricScope::WithinPerson, &jittered).unwrap();
    assert!(within.value.abs() < 0.1, "within r {}", within.value);
    let between = scoped(Metric::PearsonR, MetricScope::BetweenPerson, &jittered)
        .unwrap()
        .value;
    assert!(between > 0.9);
}

#[test]
fn generation_is_deterministic_per_seed() {
    let spec = CohortSpec {
        n_people: 5,
        study_length: 20,
        feature_dim: 4,
        feature_missing_rate: 0.2,
        seed: 15,
        ..CohortSpec::default()
    };
    let (a, ta) = generate(&spec).unwrap();
    let (b, tb) = generate(&spec).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta, tb);
    let (c, _) = generate(&CohortSpec { seed: 16, ..spec }).unwrap();
    assert_ne!(a, c);
}

//! Per-day dimensionality reduction and history-window encodings.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{DayIndex, HistoryDataset, PersonId};
use crate::splits::{Assignment, SplitPlan};

/// Hidden sizes swept for representation-size experiments.
pub const HIDDEN_SIZE_GRID: [usize; 5] = [64, 128, 256, 512, 1024];

/// Centered principal components fitted on training features.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `d` rows of length `D`, mutually orthonormal.
    pub components: Vec<Vec<f64>>,
    /// Descending.
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.len()
    }

    /// `components . (x - mean)`.
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.mean.len() {
            return Err(Error::Shape(format!(
                "PCA expects {} inputs, got {}",
                self.mean.len(),
                x.len()
            )));
        }
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok(self
            .components
            .iter()
            .map(|c| c.iter().zip(&centered).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// Maps reduced coordinates back to the input space.
    pub fn inverse_transform(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.components.len() {
            return Err(Error::Shape(format!(
                "PCA has {} components, got {} coordinates",
                self.components.len(),
                z.len()
            )));
        }
        let mut x = self.mean.clone();
        for (c, w) in self.components.iter().zip(z) {
            for (xi, ci) in x.iter_mut().zip(c) {
                *xi += w * ci;
            }
        }
        Ok(x)
    }

    /// Mean row, one row per component, variance row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
        let row = |kind: &str, vals: &[f64]| {
            std::iter::once(kind.to_string())
                .chain(vals.iter().map(|v| format!("{v:.17e}")))
                .collect::<Vec<_>>()
        };
        w.write_record(row("mean", &self.mean))?;
        for c in &self.components {
            w.write_record(row("component", c))?;
        }
        w.write_record(row("variance", &self.explained_variance))?;
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(input);
        let mut mean = None;
        let mut components = Vec::new();
        let mut variance = None;
        for rec in r.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let vals = rec
                .iter()
                .skip(1)
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::Parse {
                    line,
                    message: e.to_string(),
                })?;
            match rec.get(0) {
                Some("mean") => mean = Some(vals),
                Some("component") => components.push(vals),
                Some("variance") => variance = Some(vals),
                other => {
                    return Err(Error::Parse {
                        line,
                        message: format!("unknown row kind {other:?}"),
                    })
                }
            }
        }
        let mean = mean.ok_or_else(|| Error::Parse {
            line: 0,
            message: "missing mean row".into(),
        })?;
        let explained_variance = variance.ok_or_else(|| Error::Parse {
            line: 0,
            message: "missing variance row".into(),
        })?;
        if components.iter().any(|c| c.len() != mean.len()) || explained_variance.len() != components.len() {
            return Err(Error::Shape("inconsistent PCA bundle".into()));
        }
        Ok(Self {
            mean,
            components,
            explained_variance,
        })
    }
}

/// Relative eigenvalue threshold below which a direction counts as null.
const RANK_TOL: f64 = 1e-10;

/// Fits a `d`-component PCA by eigendecomposition of the sample covariance.
///
/// Each component's largest-magnitude coordinate is made positive (first
/// index wins ties) so fitted models are reproducible.
pub fn fit_pca(train: &[Vec<f64>], d: usize) -> Result<PcaModel> {
    let n = train.len();
    let Some(first) = train.first() else {
        return Err(Error::Param("PCA needs training vectors".into()));
    };
    let dim = first.len();
    if d == 0 || d > dim {
        return Err(Error::Param(format!(
            "cannot take {d} components of {dim}-dimensional data"
        )));
    }
    if train.iter().any(|x| x.len() != dim) {
        return Err(Error::Shape("PCA training vectors differ in length".into()));
    }
    if n < 2 {
        return Err(Error::Rank {
            requested: d,
            rank: 0,
        });
    }

    let mut mean = vec![0.0; dim];
    for x in train {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let centered = DMatrix::from_fn(n, dim, |i, j| train[i][j] - mean[j]);
    let cov = (centered.transpose() * &centered) / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let rank = order
        .iter()
        .filter(|&&k| eig.eigenvalues[k] > RANK_TOL * top.max(f64::MIN_POSITIVE))
        .count();
    if d > rank {
        return Err(Error::Rank { requested: d, rank });
    }

    let mut components = Vec::with_capacity(d);
    let mut explained_variance = Vec::with_capacity(d);
    for &k in order.iter().take(d) {
        let mut c: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        let pivot = c
            .iter()
            .enumerate()
            .fold(0, |best, (j, v)| if v.abs() > c[best].abs() { j } else { best });
        let sign = if c[pivot] < 0.0 { -1.0 } else { 1.0 };
        for v in c.iter_mut() {
            *v *= sign / norm;
        }
        components.push(c);
        explained_variance.push(eig.eigenvalues[k].max(0.0));
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
    })
}

/// Distinct `(person, day)` feature vectors inside the windows of instances
/// with the given assignment.
pub fn window_features(
    ds: &HistoryDataset,
    plan: &SplitPlan,
    which: &[Assignment],
) -> BTreeMap<(PersonId, DayIndex), Vec<f64>> {
    let mut out = BTreeMap::new();
    for inst in &ds.instances {
        let Some(a) = plan.get(&inst.key()) else { continue };
        if !which.contains(&a) {
            continue;
        }
        for (day, f) in inst.window_days().zip(&inst.window) {
            out.entry((inst.person.clone(), day)).or_insert_with(|| f.clone());
        }
    }
    out
}

/// PCA fitted only on feature days that belong to Train instances.
///
/// Fails if any of those days also sits inside a Dev or Test window of the
/// same person with different content, which would indicate that the plan
/// and dataset disagree.
pub fn fit_pca_on_train(ds: &HistoryDataset, plan: &SplitPlan, d: usize) -> Result<PcaModel> {
    let train = window_features(ds, plan, &[Assignment::Train]);
    if train.is_empty() {
        return Err(Error::DegenerateSplit("no training features for PCA".into()));
    }
    let held_out = window_features(ds, plan, &[Assignment::Dev, Assignment::Test]);
    for (k, v) in &train {
        if let Some(o) = held_out.get(k) {
            if o != v {
                return Err(Error::Leakage(format!(
                    "feature day {} of `{}` differs between train and held-out windows",
                    k.1, k.0
                )));
            }
        }
    }
    let vectors: Vec<Vec<f64>> = train.into_values().collect();
    fit_pca(&vectors, d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryEncoding {
    /// Oldest-first concatenation, length `h * d`.
    Stacked,
    /// Mean of the `h` vectors, length `d`.
    Pooled,
    /// `h x d` matrix, oldest first.
    Sequence,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelInput {
    Vector(Vec<f64>),
    Sequence(Vec<Vec<f64>>),
}

impl ModelInput {
    pub fn as_vector(&self) -> Option<&[f64]> {
        match self {
            ModelInput::Vector(v) => Some(v),
            ModelInput::Sequence(_) => None,
        }
    }
}

pub fn encode_history(
    days: &[Vec<f64>],
    expected_len: usize,
    expected_width: usize,
    encoding: HistoryEncoding,
) -> Result<ModelInput> {
    if days.len() != expected_len {
        return Err(Error::Shape(format!(
            "expected {expected_len} history days, got {}",
            days.len()
        )));
    }
    if let Some(bad) = days.iter().find(|v| v.len() != expected_width) {
        return Err(Error::Shape(format!(
            "expected per-day width {expected_width}, got {}",
            bad.len()
        )));
    }
    Ok(match encoding {
        HistoryEncoding::Stacked => ModelInput::Vector(days.concat()),
        HistoryEncoding::Pooled => {
            let mut acc = vec![0.0; expected_width];
            for v in days {
                for (a, x) in acc.iter_mut().zip(v) {
                    *a += x;
                }
            }
            let h = days.len() as f64;
            ModelInput::Vector(acc.into_iter().map(|a| a / h).collect())
        }
        HistoryEncoding::Sequence => ModelInput::Sequence(days.to_vec()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn plane_in_ten_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let offset: Vec<f64> = (0..10).map(|j| j as f64).collect();
        let data: Vec<Vec<f64>> = (0..40)
            .map(|_| {
                let (a, b) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
                (0..10).map(|j| offset[j] + a * u[j] + b * v[j]).collect()
            })
            .collect();
        let pca = fit_pca(&data, 2).unwrap();
        for x in &data {
            let back = pca.inverse_transform(&pca.transform(x).unwrap()).unwrap();
            assert!(dist(x, &back) < 1e-9);
        }
        assert!(matches!(
            fit_pca(&data, 3),
            Err(Error::Rank {
                requested: 3,
                rank: 2
            })
        ));
    }

    #[test]
    fn full_rank_is_an_isometry() {
        let data = random_matrix(30, 6, 2);
        let pca = fit_pca(&data, 6).unwrap();
        for i in 0..5 {
            for j in (i + 1)..6 {
                let a = pca.transform(&data[i]).unwrap();
                let b = pca.transform(&data[j]).unwrap();
                assert!((dist(&a, &b) - dist(&data[i], &data[j])).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn components_orthonormal_and_ordered() {
        let data = random_matrix(50, 8, 3);
        let pca = fit_pca(&data, 5).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let dot: f64 = pca.components[i]
                    .iter()
                    .zip(&pca.components[j])
                    .map(|(a, b)| a * b)
                    .sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expected).abs() < 1e-10);
            }
            let c = &pca.components[i];
            let pivot = c.iter().map(|v| v.abs()).fold(0.0, f64::max);
            assert!(
                c.iter().any(|v| *v == pivot),
                "largest coordinate must be positive"
            );
        }
        assert!(pca.explained_variance.windows(2).all(|w| w[0] >= w[1]));
        assert!(pca.explained_variance.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn transform_is_affine() {
        let data = random_matrix(20, 4, 4);
        let pca = fit_pca(&data, 3).unwrap();
        assert!(pca.transform(&pca.mean).unwrap().iter().all(|v| v.abs() < 1e-15));
        let a = &data[0];
        let b = &data[1];
        let sum: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + y).collect();
        let zero = vec![0.0; 4];
        let ta = pca.transform(a).unwrap();
        let tb = pca.transform(b).unwrap();
        let ts = pca.transform(&sum).unwrap();
        let t0 = pca.transform(&zero).unwrap();
        for k in 0..3 {
            // T(a+b) = T(a) + T(b) - T(0) for centered affine maps
            assert!((ts[k] - (ta[k] + tb[k] - t0[k])).abs() < 1e-10);
        }
        assert!(pca.transform(&[1.0]).is_err());
    }

    #[test]
    fn pca_bundle_round_trip() {
        let pca = fit_pca(&random_matrix(15, 5, 5), 2).unwrap();
        let mut buf = Vec::new();
        pca.write_csv(&mut buf).unwrap();
        assert_eq!(PcaModel::read_csv(buf.as_slice()).unwrap(), pca);
    }

    #[test]
    fn encodings() {
        let v = vec![1.0, -2.0, 0.5];
        let one = [v.clone()];
        let stacked = encode_history(&one, 1, 3, HistoryEncoding::Stacked).unwrap();
        let pooled = encode_history(&one, 1, 3, HistoryEncoding::Pooled).unwrap();
        assert_eq!(stacked, pooled);
        assert_eq!(stacked.as_vector().unwrap(), &v[..]);

        let pooled = encode_history(&[v.clone(), v.clone()], 2, 3, HistoryEncoding::Pooled).unwrap();
        assert_eq!(pooled.as_vector().unwrap(), &v[..]);

        let basis = [vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let pooled = encode_history(&basis, 3, 3, HistoryEncoding::Pooled).unwrap();
        for x in pooled.as_vector().unwrap() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let stacked = encode_history(&basis, 3, 3, HistoryEncoding::Stacked).unwrap();
        assert_eq!(stacked.as_vector().unwrap()[0..3], [1.0, 0.0, 0.0]);
        assert!(encode_history(&basis, 2, 3, HistoryEncoding::Stacked).is_err());
        assert!(encode_history(&basis, 3, 2, HistoryEncoding::Sequence).is_err());
    }
}

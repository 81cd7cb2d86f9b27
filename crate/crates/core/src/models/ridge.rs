//! Closed-form ridge regression with an unpenalized intercept.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::HistoryEncoding;
use crate::metrics::mae;
use crate::splits::Regime;

/// `{10^i : i in -2..=5}`.
pub const PENALTY_GRID: [f64; 8] = [0.01, 0.1, 1.0, 10.0, 100.0, 1_000.0, 10_000.0, 100_000.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub penalty: f64,
    pub encoding: HistoryEncoding,
    pub history_len: usize,
}

impl RidgeModel {
    pub fn predict_vector(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::Shape(format!(
                "ridge model expects {} inputs, got {}",
                self.weights.len(),
                x.len()
            )));
        }
        Ok(self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
    }

    pub fn with_input(mut self, encoding: HistoryEncoding, history_len: usize) -> Self {
        self.encoding = encoding;
        self.history_len = history_len;
        self
    }
}

/// Column-centered normal equations, reusable across penalties.
#[derive(Debug, Clone)]
pub struct CenteredGram {
    mean_x: Vec<f64>,
    mean_y: f64,
    gram: DMatrix<f64>,
    xty: DVector<f64>,
}

fn check_design(x: &[Vec<f64>], y: &[f64]) -> Result<usize> {
    if x.is_empty() {
        return Err(Error::Param("ridge needs at least one row".into()));
    }
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} rows but {} targets", x.len(), y.len())));
    }
    let p = x[0].len();
    if x.iter().any(|r| r.len() != p) {
        return Err(Error::Shape("design rows differ in length".into()));
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Param("non-finite value in ridge inputs".into()));
    }
    Ok(p)
}

impl CenteredGram {
    pub fn new(x: &[Vec<f64>], y: &[f64]) -> Result<Self> {
        let p = check_design(x, y)?;
        let n = x.len();
        let mut mean_x = vec![0.0; p];
        for row in x {
            for (m, v) in mean_x.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean_x.iter_mut().for_each(|m| *m /= n as f64);
        let mean_y = y.iter().sum::<f64>() / n as f64;
        let xc = DMatrix::from_fn(n, p, |i, j| x[i][j] - mean_x[j]);
        let yc = DVector::from_iterator(n, y.iter().map(|v| v - mean_y));
        let xct = xc.transpose();
        Ok(Self {
            mean_x,
            mean_y,
            gram: &xct * &xc,
            xty: &xct * yc,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean_x.len()
    }

    /// Solves `(Xc'Xc + penalty I) w = Xc'yc` by Cholesky with one step of
    /// iterative refinement; the intercept is `mean(y) - mean(x).w`.
    pub fn solve(&self, penalty: f64) -> Result<RidgeModel> {
        if !(penalty > 0.0 && penalty.is_finite()) {
            return Err(Error::Param(format!(
                "ridge penalty must be positive, got {penalty}"
            )));
        }
        let p = self.dim();
        let mut a = self.gram.clone();
        for i in 0..p {
            a[(i, i)] += penalty;
        }
        let chol = a
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Param("penalized Gram matrix is not positive definite".into()))?;
        let mut w = chol.solve(&self.xty);
        let residual = &self.xty - &a * &w;
        w += chol.solve(&residual);
        let bias = self.mean_y - self.mean_x.iter().zip(w.iter()).map(|(m, v)| m * v).sum::<f64>();
        Ok(RidgeModel {
            weights: w.iter().copied().collect(),
            bias,
            penalty,
            encoding: HistoryEncoding::Stacked,
            history_len: 1,
        })
    }
}

/// Ridge fit on raw rows; see [`CenteredGram::solve`].
pub fn fit_ridge(x: &[Vec<f64>], y: &[f64], penalty: f64) -> Result<RidgeModel> {
    CenteredGram::new(x, y)?.solve(penalty)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    /// `(hyperparameter, dev flattened MAE)` in grid order.
    pub grid: Vec<(f64, f64)>,
    pub chosen: f64,
    pub dev_regime: Option<Regime>,
    pub notes: Vec<String>,
}

/// Picks the penalty with the lowest dev MAE (ties go to the larger
/// penalty) and refits it on train and dev together.
pub fn select_ridge(
    train: (&[Vec<f64>], &[f64]),
    dev: (&[Vec<f64>], &[f64]),
    grid: &[f64],
    encoding: HistoryEncoding,
    history_len: usize,
    dev_regime: Option<Regime>,
) -> Result<(RidgeModel, SelectionTrace)> {
    if dev.0.is_empty() {
        return Err(Error::DegenerateSplit("empty development set".into()));
    }
    if grid.is_empty() {
        return Err(Error::Param("empty penalty grid".into()));
    }
    let stats = CenteredGram::new(train.0, train.1)?;
    let mut scored = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &penalty in grid {
        let m = stats.solve(penalty)?;
        let pairs = dev
            .0
            .iter()
            .zip(dev.1)
            .map(|(x, y)| Ok((*y, m.predict_vector(x)?)))
            .collect::<Result<Vec<_>>>()?;
        let score = mae(&pairs)?;
        scored.push((penalty, score));
        best = match best {
            Some((bp, bs)) if score > bs || (score == bs && penalty < bp) => Some((bp, bs)),
            _ => Some((penalty, score)),
        };
    }
    let (chosen, _) = best.expect("non-empty grid");

    let x_all: Vec<Vec<f64>> = train.0.iter().chain(dev.0).cloned().collect();
    let y_all: Vec<f64> = train.1.iter().chain(dev.1).copied().collect();
    let model = fit_ridge(&x_all, &y_all, chosen)?.with_input(encoding, history_len);
    Ok((
        model,
        SelectionTrace {
            grid: scored,
            chosen,
            dev_regime,
            notes: vec!["penalty refit on train+dev".into()],
        },
    ))
}

//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use longipanel::metrics::{Prediction, PredictionSet};
use longipanel::panel::PersonId;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn person(i: usize) -> PersonId {
    PersonId::new(format!("p{i:03}")).unwrap()
}

fn exact(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite input")
}

/// Solves a symmetric positive definite integer system by fraction-free
/// (Bareiss) elimination and exact back substitution.
fn bareiss_solve(mut m: Vec<Vec<BigInt>>) -> Vec<BigRational> {
    let n = m.len();
    let mut prev = BigInt::one();
    for k in 0..n {
        assert!(!m[k][k].is_zero(), "singular system");
        for i in k + 1..n {
            for j in k + 1..=n {
                let v = &m[k][k] * &m[i][j] - &m[i][k] * &m[k][j];
                m[i][j] = v / &prev;
            }
            m[i][k] = BigInt::zero();
        }
        prev = m[k][k].clone();
    }
    let mut x = vec![BigRational::zero(); n];
    for i in (0..n).rev() {
        let mut acc = BigRational::from_integer(m[i][n].clone());
        for j in i + 1..n {
            acc -= BigRational::from_integer(m[i][j].clone()) * &x[j];
        }
        x[i] = acc / BigRational::from_integer(m[i][i].clone());
    }
    x
}

/// Exact ridge solution with an unpenalized intercept.
///
/// Multiplying the centered normal equations by `n` keeps every entry a
/// dyadic rational; those are scaled to integers before elimination.
pub fn ridge_exact(x: &[Vec<f64>], y: &[f64], penalty: f64) -> (Vec<f64>, f64) {
    let n = x.len();
    let p = x[0].len();
    let nr = BigRational::from_integer(BigInt::from(n));
    let xr: Vec<Vec<BigRational>> = x.iter().map(|r| r.iter().map(|v| exact(*v)).collect()).collect();
    let yr: Vec<BigRational> = y.iter().map(|v| exact(*v)).collect();
    let sx: Vec<BigRational> = (0..p)
        .map(|j| xr.iter().fold(BigRational::zero(), |a, r| a + &r[j]))
        .collect();
    let sy = yr.iter().fold(BigRational::zero(), |a, v| a + v);
    let lam = exact(penalty);

    let mut a = vec![vec![BigRational::zero(); p + 1]; p];
    for i in 0..p {
        for j in 0..p {
            let xtx = xr.iter().fold(BigRational::zero(), |acc, r| acc + &r[i] * &r[j]);
            a[i][j] = &nr * xtx - &sx[i] * &sx[j];
        }
        a[i][i] += &nr * &lam;
        let xty = xr
            .iter()
            .zip(&yr)
            .fold(BigRational::zero(), |acc, (r, v)| acc + &r[i] * v);
        a[i][p] = &nr * xty - &sx[i] * &sy;
    }
    let denom_lcm = a.iter().flatten().fold(BigInt::one(), |l, v| l.lcm(v.denom()));
    let ints: Vec<Vec<BigInt>> = a
        .iter()
        .map(|r| {
            r.iter()
                .map(|v| (v * BigRational::from_integer(denom_lcm.clone())).to_integer())
                .collect()
        })
        .collect();
    let w = bareiss_solve(ints);
    let mut bias = &sy / &nr;
    for j in 0..p {
        bias -= &w[j] * &sx[j] / &nr;
    }
    (
        w.iter().map(|v| v.to_f64().unwrap()).collect(),
        bias.to_f64().unwrap(),
    )
}

pub fn random_ridge_problem(n: usize, p: usize, rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<f64>) {
    let beta: Vec<f64> = (0..p).map(|_| rng.random_range(-2.0..2.0)).collect();
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let y = x
        .iter()
        .map(|r| 0.5 + r.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + rng.random_range(-0.3..0.3))
        .collect();
    (x, y)
}

/// Random prediction set with up to `max_people` persons and `max_days` days each.
pub fn random_prediction_set(max_people: usize, max_days: u32, rng: &mut ChaCha8Rng) -> PredictionSet {
    let n_people = rng.random_range(1..=max_people);
    let mut entries = Vec::new();
    for i in 0..n_people {
        let n_days = rng.random_range(1..=max_days);
        for day in 0..n_days {
            entries.push(Prediction {
                person: person(i),
                day,
                y_true: rng.random_range(1.0..5.0),
                y_pred: rng.random_range(1.0..5.0),
            });
        }
    }
    PredictionSet::new(entries).unwrap()
}

/// Brute-force scoped metrics, written straight from the summations.
pub mod brute {
    use super::*;

    pub fn mae(pairs: &[(f64, f64)]) -> Option<f64> {
        if pairs.is_empty() {
            return None;
        }
        let mut s = 0.0;
        for (y, p) in pairs {
            s += (y - p).abs();
        }
        Some(s / pairs.len() as f64)
    }

    pub fn smape(pairs: &[(f64, f64)]) -> Option<f64> {
        if pairs.is_empty() {
            return None;
        }
        let mut s = 0.0;
        for (y, p) in pairs {
            s += (p - y).abs() / (y.abs() + p.abs());
        }
        Some(2.0 * s / pairs.len() as f64)
    }

    pub fn r(pairs: &[(f64, f64)]) -> Option<f64> {
        let n = pairs.len();
        if n < 2 {
            return None;
        }
        let my: f64 = pairs.iter().map(|e| e.0).sum::<f64>() / n as f64;
        let mp: f64 = pairs.iter().map(|e| e.1).sum::<f64>() / n as f64;
        let cov: f64 = pairs.iter().map(|(y, p)| (y - my) * (p - mp)).sum();
        let vy: f64 = pairs.iter().map(|(y, _)| (y - my).powi(2)).sum();
        let vp: f64 = pairs.iter().map(|(_, p)| (p - mp).powi(2)).sum();
        if vy == 0.0 || vp == 0.0 {
            return None;
        }
        Some(cov / (vy * vp).sqrt())
    }

    fn groups(set: &PredictionSet) -> BTreeMap<String, Vec<(f64, f64)>> {
        let mut g: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        for e in set.entries() {
            g.entry(e.person.to_string())
                .or_default()
                .push((e.y_true, e.y_pred));
        }
        g
    }

    pub fn between(set: &PredictionSet, f: fn(&[(f64, f64)]) -> Option<f64>) -> Option<f64> {
        let means: Vec<(f64, f64)> = groups(set)
            .values()
            .map(|v| {
                let n = v.len() as f64;
                (
                    v.iter().map(|e| e.0).sum::<f64>() / n,
                    v.iter().map(|e| e.1).sum::<f64>() / n,
                )
            })
            .collect();
        f(&means)
    }

    /// Mean over persons of the per-person value; undefined persons are skipped.
    pub fn within(set: &PredictionSet, f: fn(&[(f64, f64)]) -> Option<f64>) -> Option<f64> {
        let vals: Vec<f64> = groups(set).values().filter_map(|v| f(v)).collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }

    pub fn flattened(set: &PredictionSet, f: fn(&[(f64, f64)]) -> Option<f64>) -> Option<f64> {
        let pairs: Vec<(f64, f64)> = set.entries().iter().map(|e| (e.y_true, e.y_pred)).collect();
        f(&pairs)
    }
}

/// Paired t statistic and lower-tail p-value from `statrs`.
pub fn t_test_oracle(model: &[f64], baseline: &[f64]) -> (f64, f64) {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    let d: Vec<f64> = model.iter().zip(baseline).map(|(m, b)| m - b).collect();
    let n = d.len() as f64;
    let m = d.iter().sum::<f64>() / n;
    let sd = (d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let t = m / (sd / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).unwrap();
    (t, dist.cdf(t))
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix, descending.
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |j| *j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

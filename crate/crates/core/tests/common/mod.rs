#![allow(dead_code)]

use flps::measurement::ModelKind;
use flps::posterior::{FlpsModel, TrialDataset};
use flps::simgen::{generate_dataset, GroundTruth, ScenarioConfig};
use rand::Rng;

pub fn instance(kind: ModelKind, n: usize, j: usize, seed: u64) -> (TrialDataset, GroundTruth) {
    generate_dataset(&ScenarioConfig::new(kind, n, j).with_seed(seed)).unwrap()
}

pub fn random_point<R: Rng>(model: &FlpsModel, radius: f64, rng: &mut R) -> Vec<f64> {
    (0..model.n_params())
        .map(|_| rng.random_range(-radius..radius))
        .collect()
}

/// Five-point central difference of `f` along every coordinate.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, v: &[f64], h: f64) -> Vec<f64> {
    let mut w = v.to_vec();
    (0..v.len())
        .map(|k| {
            let mut at = |t: f64| {
                w[k] = v[k] + t;
                let r = f(&w);
                w[k] = v[k];
                r
            };
            (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h)
        })
        .collect()
}

/// Largest relative discrepancy, treating pairs that agree to `abs_floor`
/// in absolute terms as exact (relative error is undefined near zero).
pub fn max_rel_error(g: &[f64], fd: &[f64], abs_floor: f64) -> f64 {
    g.iter()
        .zip(fd)
        .map(|(a, b)| {
            let diff = (a - b).abs();
            if diff <= abs_floor {
                0.0
            } else {
                diff / a.abs().max(b.abs())
            }
        })
        .fold(0.0, f64::max)
}

/// Least squares by normal equations; returns (coefficients, residual sum of squares).
pub fn ols(rows: &[Vec<f64>], y: &[f64]) -> (Vec<f64>, f64) {
    let p = rows[0].len();
    let mut a = vec![vec![0.0; p + 1]; p];
    for (r, &yi) in rows.iter().zip(y) {
        for i in 0..p {
            for j in 0..p {
                a[i][j] += r[i] * r[j];
            }
            a[i][p] += r[i] * yi;
        }
    }
    for c in 0..p {
        let piv = (c..p)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .unwrap();
        a.swap(c, piv);
        for r in 0..p {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..=p {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
    }
    let beta: Vec<f64> = (0..p).map(|i| a[i][p] / a[i][i]).collect();
    let rss = rows
        .iter()
        .zip(y)
        .map(|(r, yi)| {
            let fit: f64 = r.iter().zip(&beta).map(|(x, b)| x * b).sum();
            (yi - fit).powi(2)
        })
        .sum();
    (beta, rss)
}

pub fn total_ss(y: &[f64]) -> f64 {
    let m = y.iter().sum::<f64>() / y.len() as f64;
    y.iter().map(|v| (v - m).powi(2)).sum()
}

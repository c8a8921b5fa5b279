//! Convergence diagnostics and posterior summaries.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;

use super::PosteriorDraws;
use crate::error::{Error, Result};

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Split-chain potential scale reduction of one parameter. Each chain is
/// halved (dropping the middle draw of odd-length chains) so that
/// within-chain drift also inflates the statistic. Returns NaN when every
/// chain is constant at the same value.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::Sampler(format!(
            "R-hat needs at least 2 chains, got {}",
            chains.len()
        )));
    }
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if n < 4 {
        return Err(Error::Sampler(format!(
            "R-hat needs at least 4 draws per chain, got {n}"
        )));
    }
    let half = n / 2;
    let mut pieces: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for c in chains {
        pieces.push(&c[..half]);
        pieces.push(&c[n - half..n]);
    }
    let means: Vec<f64> = pieces.iter().map(|c| mean(c)).collect();
    let within = pieces.iter().map(|c| sample_var(c)).sum::<f64>() / pieces.len() as f64;
    let between = half as f64 * sample_var(&means);
    if within == 0.0 {
        return Ok(if between == 0.0 {
            f64::NAN
        } else {
            f64::INFINITY
        });
    }
    let h = half as f64;
    let var_plus = (h - 1.0) / h * within + between / h;
    Ok((var_plus / within).sqrt())
}

pub fn rhat(draws: &PosteriorDraws, param: usize) -> Result<f64> {
    split_rhat(&draws.chains_of(param))
}

fn autocovariance(xs: &[f64], planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n = xs.len();
    let m = mean(xs);
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = xs
        .iter()
        .map(|x| Complex::new(x - m, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    buf.iter()
        .take(n)
        .map(|c| c.re / (size as f64 * n as f64))
        .collect()
}

/// Multi-chain effective sample size using Geyer's initial monotone
/// sequence on the combined autocorrelation estimate.
pub fn ess(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if m == 0 || n < 4 {
        return f64::NAN;
    }
    let mut planner = FftPlanner::new();
    let acov: Vec<Vec<f64>> = chains
        .iter()
        .map(|c| autocovariance(&c[..n], &mut planner))
        .collect();
    let nf = n as f64;
    let chain_means: Vec<f64> = chains.iter().map(|c| mean(&c[..n])).collect();
    let within = acov.iter().map(|a| a[0] * nf / (nf - 1.0)).sum::<f64>() / m as f64;
    let between = if m > 1 { sample_var(&chain_means) } else { 0.0 };
    let var_plus = within * (nf - 1.0) / nf + between;
    if !(var_plus > 0.0) {
        return f64::NAN;
    }
    let rho = |t: usize| {
        let mean_acov = acov.iter().map(|a| a[t]).sum::<f64>() / m as f64;
        1.0 - (within - mean_acov) / var_plus
    };
    // Sum of consecutive pairs, truncated at the first non-positive pair
    // and forced monotone.
    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let mut pair = rho(t) + rho(t + 1);
        if pair <= 0.0 {
            break;
        }
        if pair > prev_pair {
            pair = prev_pair;
        }
        tau += 2.0 * pair;
        prev_pair = pair;
        t += 2;
    }
    let total = (m * n) as f64;
    let tau = tau.max(1.0 / total.log10().max(1.0));
    total / tau
}

/// Sample quantile with linear interpolation between order statistics
/// (the "type 7" definition). `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(values: &[f64], prob: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, prob)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q2_5: f64,
    pub median: f64,
    pub q97_5: f64,
    /// NaN when fewer than two chains (or too few draws) are available.
    pub rhat: f64,
    pub ess: f64,
}

pub fn summarize_chains(name: &str, chains: &[Vec<f64>]) -> ParamSummary {
    let mut pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    let mean_v = mean(&pooled);
    let sd = if pooled.len() > 1 {
        sample_var(&pooled).sqrt()
    } else {
        0.0
    };
    pooled.sort_by(f64::total_cmp);
    ParamSummary {
        name: name.to_string(),
        mean: mean_v,
        sd,
        q2_5: quantile_sorted(&pooled, 0.025),
        median: quantile_sorted(&pooled, 0.5),
        q97_5: quantile_sorted(&pooled, 0.975),
        rhat: split_rhat(chains).unwrap_or(f64::NAN),
        ess: ess(chains),
    }
}

/// Per-parameter mean, sd, central 95% interval, split R-hat and ESS.
pub fn summarize(draws: &PosteriorDraws) -> Vec<ParamSummary> {
    draws
        .names
        .iter()
        .enumerate()
        .map(|(k, name)| summarize_chains(name, &draws.chains_of(k)))
        .collect()
}

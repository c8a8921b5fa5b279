//! Reference posterior for small instances with known item parameters.
//!
//! Each trait is integrated out by a mode-centred trapezoid rule against its
//! normal prior, which leaves a marginal posterior over the structural block
//! alone. That low-dimensional density is explored by a long random-walk
//! Metropolis chain whose proposal covariance is tuned in a pilot phase and
//! then frozen, so the retained chain is a plain reversible Markov chain.
//!
//! The evaluation path shares no code with [`FlpsModel`](super::FlpsModel)
//! beyond the module-level densities, so agreement between the two is a
//! meaningful check of the joint gradient sampler.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::TrialDataset;
use super::model::{FlpsModel, ItemSource};
use super::prior::{block_term, scale_term, PriorConfig};
use super::quadrature::Trapezoid;
use crate::error::{Error, Result};
use crate::measurement::{response_log_lik, ItemParams, ModelKind};
use crate::rng::{stream, Domain};
use crate::sampler::diagnostics::{ess, quantile_sorted};
use crate::sampler::{run_chains, summarize, SamplerConfig};
use crate::simgen::{generate_dataset, ScenarioConfig};
use crate::structural::{outcome_log_density, StructuralParams};

pub const MAX_SUBJECTS: usize = 50;
pub const MAX_ITEMS: usize = 6;
pub const MIN_NODES: usize = 61;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSettings {
    pub nodes: usize,
    /// Retained Metropolis iterations.
    pub iterations: usize,
    /// Tuning iterations, discarded.
    pub pilot: usize,
    pub seed: u64,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            nodes: MIN_NODES,
            iterations: 400_000,
            pilot: 60_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleParam {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q2_5: f64,
    pub q97_5: f64,
    pub ess: f64,
    /// Monte Carlo standard error of `mean`.
    pub mcse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleSummary {
    pub params: Vec<OracleParam>,
    pub nodes: usize,
    /// Largest change in the log marginal likelihood when the node count is
    /// doubled, over every state the retained chain visited.
    pub integration_error: f64,
    /// Largest change of a mean, sd or 95% bound when the retained chain is
    /// reweighted to the doubled node count.
    pub refinement_change: f64,
    pub acceptance_rate: f64,
}

impl OracleSummary {
    pub fn get(&self, name: &str) -> Option<&OracleParam> {
        self.params.iter().find(|p| p.name == name)
    }
}

/// Marginal structural posterior of a small trial.
pub struct Oracle<'a> {
    data: &'a TrialDataset,
    items: &'a [ItemParams],
    prior: &'a PriorConfig,
    rule: Trapezoid,
}

impl<'a> Oracle<'a> {
    /// Refuses instances outside the bounds where the quadrature is both
    /// cheap and accurate.
    pub fn new(
        data: &'a TrialDataset,
        items: &'a [ItemParams],
        prior: &'a PriorConfig,
        nodes: usize,
    ) -> Result<Self> {
        if data.n_subjects() > MAX_SUBJECTS {
            return Err(Error::OracleRefused(format!(
                "{} subjects exceed the limit of {MAX_SUBJECTS}",
                data.n_subjects()
            )));
        }
        if data.spec().n_items() > MAX_ITEMS {
            return Err(Error::OracleRefused(format!(
                "{} items exceed the limit of {MAX_ITEMS}",
                data.spec().n_items()
            )));
        }
        if nodes < MIN_NODES {
            return Err(Error::OracleRefused(format!(
                "{nodes} quadrature nodes are fewer than the minimum of {MIN_NODES}"
            )));
        }
        if items.len() != data.spec().n_items() {
            return Err(Error::dim(
                "fixed items",
                data.spec().n_items(),
                items.len(),
            ));
        }
        for (j, it) in items.iter().enumerate() {
            if it.kind() != data.spec().kind || it.n_categories() != data.spec().categories[j] {
                return Err(Error::Config(format!(
                    "item {} does not match the measurement spec",
                    j + 1
                )));
            }
        }
        prior.validate()?;
        Ok(Self {
            data,
            items,
            prior,
            rule: Trapezoid::new(nodes),
        })
    }

    pub fn dim(&self) -> usize {
        2 * self.data.n_covariates() + 7
    }

    pub fn names(&self) -> Vec<String> {
        let p = self.data.n_covariates();
        let mut out = vec!["beta0".to_string()];
        out.extend((1..=p).map(|k| format!("beta[{k}]")));
        out.push("sigma_eta".into());
        out.push("gamma0".into());
        out.extend((1..=p).map(|k| format!("gamma[{k}]")));
        out.extend(["omega", "tau0", "tau1", "sigma_y"].map(String::from));
        out
    }

    /// Decodes the unconstrained structural vector (log scales).
    pub fn structural(&self, u: &[f64]) -> StructuralParams {
        let p = self.data.n_covariates();
        StructuralParams {
            beta0: u[0],
            beta: u[1..1 + p].to_vec(),
            sigma_eta: u[1 + p].exp(),
            gamma0: u[2 + p],
            gamma: u[3 + p..3 + 2 * p].to_vec(),
            omega: u[3 + 2 * p],
            tau0: u[4 + 2 * p],
            tau1: u[5 + 2 * p],
            sigma_y: u[6 + 2 * p].exp(),
        }
    }

    /// `ln p(y_i, M_i | structural)` with the trait integrated out.
    pub fn subject_log_marginal(&self, i: usize, sp: &StructuralParams) -> f64 {
        let data = self.data;
        let x = data.covariates(i);
        let mean = sp.beta0 + sp.beta.iter().zip(x).map(|(b, v)| b * v).sum::<f64>();
        let (y, z) = (data.y()[i], data.z()[i]);
        let row = data.response_row(i);
        self.rule.log_normal_expectation(mean, sp.sigma_eta, |eta| {
            let mut lg = outcome_log_density(y, z, eta, x, sp).unwrap_or(f64::NEG_INFINITY);
            if let Some(r) = row {
                for (j, cell) in data.responses().row(r).iter().enumerate() {
                    if let Some(m) = cell {
                        lg += response_log_lik(*m as usize, eta, &self.items[j])
                            .unwrap_or(f64::NEG_INFINITY);
                    }
                }
            }
            lg
        })
    }

    pub fn log_marginal(&self, sp: &StructuralParams) -> f64 {
        (0..self.data.n_subjects())
            .map(|i| self.subject_log_marginal(i, sp))
            .sum()
    }

    /// Unnormalized log density of the unconstrained structural vector,
    /// including the log-scale Jacobians.
    pub fn log_posterior(&self, u: &[f64]) -> f64 {
        let p = self.data.n_covariates();
        let pr = self.prior;
        let mut lp = 0.0;
        for (k, &v) in u.iter().enumerate() {
            lp += if k == 1 + p {
                scale_term(pr.sigma_eta, v.exp()).0 + v
            } else if k == 6 + 2 * p {
                scale_term(pr.sigma_y, v.exp()).0 + v
            } else if k <= p {
                block_term(pr.eta_coef, v).0
            } else if k <= 3 + 2 * p {
                block_term(pr.outcome_coef, v).0
            } else {
                block_term(pr.effect, v).0
            };
        }
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        let total = lp + self.log_marginal(&self.structural(u));
        if total.is_nan() {
            f64::NEG_INFINITY
        } else {
            total
        }
    }
}

fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * d + k] * l[j * d + k]).sum();
            if i == j {
                let v = a[i * d + i] - s;
                if !(v > 0.0) {
                    return None;
                }
                l[i * d + i] = v.sqrt();
            } else {
                l[i * d + j] = (a[i * d + j] - s) / l[j * d + j];
            }
        }
    }
    Some(l)
}

fn covariance(draws: &[Vec<f64>], d: usize) -> Vec<f64> {
    let n = draws.len() as f64;
    let mut mean = vec![0.0; d];
    for x in draws {
        for k in 0..d {
            mean[k] += x[k] / n;
        }
    }
    let mut cov = vec![0.0; d * d];
    for x in draws {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += (x[i] - mean[i]) * (x[j] - mean[j]) / (n - 1.0);
            }
        }
    }
    cov
}

struct Walker<'o, 'a, R> {
    oracle: &'o Oracle<'a>,
    rng: R,
    x: Vec<f64>,
    lp: f64,
    chol: Vec<f64>,
    scale: f64,
}

impl<R: Rng> Walker<'_, '_, R> {
    fn step(&mut self) -> bool {
        let d = self.x.len();
        let xi: Vec<f64> = (0..d).map(|_| self.rng.sample(StandardNormal)).collect();
        let mut prop = self.x.clone();
        for i in 0..d {
            let s: f64 = (0..=i).map(|k| self.chol[i * d + k] * xi[k]).sum();
            prop[i] += self.scale * s;
        }
        let lp = self.oracle.log_posterior(&prop);
        let accept = lp.is_finite() && self.rng.random::<f64>().ln() < lp - self.lp;
        if accept {
            self.x = prop;
            self.lp = lp;
        }
        accept
    }

    /// Runs `n` steps, nudging the scale towards 0.234 acceptance every 200
    /// steps, and returns the visited states.
    fn tune(&mut self, n: usize) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        let mut acc = 0usize;
        for t in 1..=n {
            acc += self.step() as usize;
            out.push(self.x.clone());
            if t % 200 == 0 {
                let rate = acc as f64 / 200.0;
                self.scale *= ((rate - 0.234) * 2.0).exp();
                acc = 0;
            }
        }
        out
    }
}

/// Reference posterior summaries of the structural block.
pub fn oracle_posterior_summary(
    data: &TrialDataset,
    items: &[ItemParams],
    prior: &PriorConfig,
    settings: &OracleSettings,
) -> Result<OracleSummary> {
    let oracle = Oracle::new(data, items, prior, settings.nodes)?;
    if settings.iterations < 1000 {
        return Err(Error::Config(
            "oracle needs at least 1000 retained iterations".into(),
        ));
    }
    let d = oracle.dim();
    let p = data.n_covariates();
    let start = vec![0.0; d];
    let lp = oracle.log_posterior(&start);
    if !lp.is_finite() {
        return Err(Error::Initialization { attempts: 1 });
    }
    let mut identity = vec![0.0; d * d];
    (0..d).for_each(|i| identity[i * d + i] = 1.0);
    let mut w = Walker {
        oracle: &oracle,
        rng: stream(settings.seed, Domain::Oracle, 0),
        x: start,
        lp,
        chol: identity,
        scale: 0.1,
    };

    // Pilot: diagonal scale, then two rounds of covariance estimation.
    let _ = w.tune(settings.pilot / 3);
    for _ in 0..2 {
        let hist = w.tune(settings.pilot / 3);
        let mut cov = covariance(&hist[hist.len() / 2..], d);
        (0..d).for_each(|i| cov[i * d + i] += 1e-10);
        if let Some(l) = cholesky(&cov, d) {
            w.chol = l;
            w.scale = 2.38 / (d as f64).sqrt();
        }
    }
    let _ = w.tune(settings.pilot / 6 + 1);

    // Retained chain with a frozen proposal, kept as distinct states with
    // their repeat counts.
    let mut chains = vec![Vec::with_capacity(settings.iterations); d];
    let mut states: Vec<(Vec<f64>, f64, f64)> = Vec::new();
    let mut accepted = 0usize;
    for _ in 0..settings.iterations {
        let moved = w.step();
        accepted += moved as usize;
        match states.last_mut() {
            Some(last) if !moved => last.2 += 1.0,
            _ => states.push((w.x.clone(), w.lp, 1.0)),
        }
        for (k, c) in chains.iter_mut().enumerate() {
            let v = w.x[k];
            c.push(if k == 1 + p || k == 6 + 2 * p {
                v.exp()
            } else {
                v
            });
        }
    }

    let fine = Oracle::new(data, items, prior, 2 * settings.nodes)?;
    let shift: Vec<f64> = states
        .par_iter()
        .map(|(u, lp, _)| fine.log_posterior(u) - lp)
        .collect();
    let integration_error = shift.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let top = shift.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let counts: Vec<f64> = states.iter().map(|s| s.2).collect();
    let reweighted: Vec<f64> = states
        .iter()
        .zip(&shift)
        .map(|(s, v)| s.2 * (v - top).exp())
        .collect();
    let refinement_change = (0..d)
        .map(|k| {
            let vals: Vec<f64> = states
                .iter()
                .map(|(u, _, _)| {
                    if k == 1 + p || k == 6 + 2 * p {
                        u[k].exp()
                    } else {
                        u[k]
                    }
                })
                .collect();
            let a = weighted_summary(&vals, &counts);
            let b = weighted_summary(&vals, &reweighted);
            a.iter()
                .zip(&b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);

    let params = oracle
        .names()
        .into_iter()
        .zip(chains)
        .map(|(name, chain)| {
            let n = chain.len() as f64;
            let mean = chain.iter().sum::<f64>() / n;
            let sd = (chain.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            let e = ess(std::slice::from_ref(&chain));
            let mut sorted = chain;
            sorted.sort_by(f64::total_cmp);
            OracleParam {
                name,
                mean,
                sd,
                q2_5: quantile_sorted(&sorted, 0.025),
                q97_5: quantile_sorted(&sorted, 0.975),
                ess: e,
                mcse: sd / e.sqrt(),
            }
        })
        .collect();
    Ok(OracleSummary {
        params,
        nodes: settings.nodes,
        integration_error,
        refinement_change,
        acceptance_rate: accepted as f64 / settings.iterations as f64,
    })
}

/// Weighted mean, sd and 2.5% / 97.5% quantiles. Quantiles interpolate a CDF
/// placed at the midpoint of each atom's mass, so they move continuously
/// with the weights.
fn weighted_summary(values: &[f64], weights: &[f64]) -> [f64; 4] {
    let total: f64 = weights.iter().sum();
    let mean = values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total;
    let var = values
        .iter()
        .zip(weights)
        .map(|(v, w)| w * (v - mean).powi(2))
        .sum::<f64>()
        / total;
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut cdf = Vec::with_capacity(order.len());
    let mut acc = 0.0;
    for &i in &order {
        cdf.push((acc + 0.5 * weights[i]) / total);
        acc += weights[i];
    }
    let q = |prob: f64| {
        let k = cdf.partition_point(|&c| c < prob);
        if k == 0 {
            values[order[0]]
        } else if k == cdf.len() {
            values[order[k - 1]]
        } else {
            let (c0, c1) = (cdf[k - 1], cdf[k]);
            let (v0, v1) = (values[order[k - 1]], values[order[k]]);
            v0 + (v1 - v0) * (prob - c0) / (c1 - c0)
        }
    };
    [mean, var.sqrt(), q(0.025), q(0.975)]
}

/// Settings of the oracle-versus-sampler comparison on a synthetic Rasch
/// trial with known items and `Normal(0, prior_sd)` structural priors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleCheckConfig {
    pub n: usize,
    pub j: usize,
    pub seed: u64,
    pub prior_sd: f64,
    pub sampler: SamplerConfig,
    pub oracle: OracleSettings,
    /// Parameters whose means are compared.
    pub compare: Vec<String>,
    /// Allowed distance in combined Monte Carlo standard errors.
    pub tolerance_mcse: f64,
    /// Allowed change of any oracle summary when the node count doubles.
    pub refinement_tolerance: f64,
}

impl Default for OracleCheckConfig {
    fn default() -> Self {
        Self {
            n: 20,
            j: 4,
            seed: 1,
            prior_sd: 5.0,
            sampler: SamplerConfig {
                chains: 4,
                iterations: 20_000,
                warmup: 2000,
                target_accept: 0.9,
                ..SamplerConfig::default()
            },
            oracle: OracleSettings::default(),
            compare: ["tau0", "tau1", "omega"].map(String::from).to_vec(),
            tolerance_mcse: 3.0,
            refinement_tolerance: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleComparison {
    pub name: String,
    pub sampler_mean: f64,
    pub sampler_mcse: f64,
    pub oracle_mean: f64,
    pub oracle_mcse: f64,
    /// Difference in units of the combined standard error.
    pub z: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleCheckReport {
    pub rows: Vec<OracleComparison>,
    /// Largest change of a mean, sd or 95% bound when the node count doubles.
    pub refinement_change: f64,
    pub integration_error: f64,
    pub divergences: usize,
    pub refinement_pass: bool,
}

impl OracleCheckReport {
    pub fn passed(&self) -> bool {
        self.refinement_pass && self.rows.iter().all(|r| r.pass)
    }
}

pub fn oracle_check(cfg: &OracleCheckConfig) -> Result<OracleCheckReport> {
    let scenario = ScenarioConfig::new(ModelKind::Rasch, cfg.n, cfg.j).with_seed(cfg.seed);
    let (data, truth) = generate_dataset(&scenario)?;
    let items = truth.params.items.clone();
    let prior = PriorConfig::weakly_informative(cfg.prior_sd);
    let coarse = cfg.oracle.clone();
    // Fail fast on bad settings before the long runs start.
    cfg.sampler.validate()?;
    prior.validate()?;
    if coarse.iterations < 2 {
        return Err(Error::Config("oracle needs at least 2 iterations".into()));
    }
    let oracle = Oracle::new(&data, &items, &prior, coarse.nodes)?;
    if let Some(bad) = cfg.compare.iter().find(|c| !oracle.names().contains(c)) {
        return Err(Error::Config(format!(
            "`{bad}` is not a structural parameter"
        )));
    }
    let model = FlpsModel::new(
        data.clone(),
        prior.clone(),
        ItemSource::Fixed(items.clone()),
    )?;
    let (draws, a) = rayon::join(
        || run_chains(&model, &cfg.sampler),
        || oracle_posterior_summary(&data, &items, &prior, &coarse),
    );
    let (draws, a) = (draws?, a?);
    let summaries = summarize(&draws);
    let mut rows = Vec::new();
    for name in &cfg.compare {
        let s = summaries
            .iter()
            .find(|s| &s.name == name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?;
        let o = a
            .get(name)
            .ok_or_else(|| Error::Config(format!("`{name}` is not a structural parameter")))?;
        let sampler_mcse = s.sd / s.ess.sqrt();
        let se = sampler_mcse.hypot(o.mcse);
        let z = (s.mean - o.mean) / se;
        rows.push(OracleComparison {
            name: name.clone(),
            sampler_mean: s.mean,
            sampler_mcse,
            oracle_mean: o.mean,
            oracle_mcse: o.mcse,
            z,
            pass: z.abs() <= cfg.tolerance_mcse,
        });
    }
    let refinement_change = a.refinement_change;
    Ok(OracleCheckReport {
        rows,
        refinement_change,
        integration_error: a.integration_error,
        divergences: draws.divergences(),
        refinement_pass: refinement_change < cfg.refinement_tolerance,
    })
}

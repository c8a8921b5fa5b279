//! Hamiltonian Monte Carlo over an unconstrained log density.
//!
//! Each chain adapts a step size (dual averaging) and a diagonal metric
//! (windowed variance) during warmup, then stores constrained-scale draws.
//! Chains run on the rayon pool and own independent counter-based RNG
//! streams, so output does not depend on the number of workers.

pub mod adapt;
pub mod diagnostics;
pub mod hmc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Domain};
use adapt::{find_step_size, DualAveraging, WarmupSchedule, Welford};
use hmc::{nuts_transition, static_transition, Metric, Point};

pub use diagnostics::{ess, quantile, rhat, split_rhat, summarize, ParamSummary};

/// A differentiable log density on `R^dim`. Out-of-support points return
/// negative infinity.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Returns the log density and writes its gradient into `grad`.
    fn log_density_grad(&self, position: &[f64], grad: &mut [f64]) -> f64;

    fn param_names(&self) -> Vec<String> {
        (1..=self.dim()).map(|i| format!("x[{i}]")).collect()
    }

    /// Maps an unconstrained position to the values reported in draws.
    fn constrain(&self, position: &[f64], out: &mut [f64]) {
        out.copy_from_slice(position);
    }
}

impl<F> LogDensity for (usize, F)
where
    F: Fn(&[f64], &mut [f64]) -> f64 + Sync,
{
    fn dim(&self) -> usize {
        self.0
    }

    fn log_density_grad(&self, position: &[f64], grad: &mut [f64]) -> f64 {
        (self.1)(position, grad)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Trajectory {
    /// Multinomial no-U-turn trees up to `max_depth` doublings.
    Nuts,
    /// Fixed leapfrog count with a jittered step size.
    Static { steps: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub chains: usize,
    /// Total iterations per chain, warmup included.
    pub iterations: usize,
    pub warmup: usize,
    pub target_accept: f64,
    pub max_depth: usize,
    pub trajectory: Trajectory,
    /// Initial unconstrained coordinates are drawn from `U(-r, r)`.
    pub init_radius: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            chains: 2,
            iterations: 5000,
            warmup: 2000,
            target_accept: 0.8,
            max_depth: 10,
            trajectory: Trajectory::Nuts,
            init_radius: 2.0,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(Error::Config("at least one chain is required".into()));
        }
        if self.warmup >= self.iterations {
            return Err(Error::Config(format!(
                "warmup ({}) must be smaller than iterations ({})",
                self.warmup, self.iterations
            )));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config(format!(
                "target acceptance must lie in (0, 1), got {}",
                self.target_accept
            )));
        }
        if self.max_depth == 0 {
            return Err(Error::Config("max_depth must be at least 1".into()));
        }
        if let Trajectory::Static { steps: 0 } = self.trajectory {
            return Err(Error::Config(
                "static trajectories need at least one step".into(),
            ));
        }
        if !(self.init_radius >= 0.0 && self.init_radius.is_finite()) {
            return Err(Error::Config("init_radius must be non-negative".into()));
        }
        Ok(())
    }

    pub fn kept(&self) -> usize {
        self.iterations - self.warmup
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChainStats {
    pub step_size: f64,
    pub mean_accept: f64,
    pub divergences: usize,
    pub leapfrog_steps: usize,
    pub max_depth_hits: usize,
    pub inv_mass: Vec<f64>,
}

/// Post-warmup draws on the constrained scale.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorDraws {
    pub names: Vec<String>,
    /// `draws[chain][iter * n_params + param]`.
    pub draws: Vec<Vec<f64>>,
    pub n_draws: usize,
    pub stats: Vec<ChainStats>,
}

/// Share of post-warmup divergent transitions above which a run is flagged.
pub const DIVERGENCE_FLAG_RATE: f64 = 0.2;

impl PosteriorDraws {
    pub fn n_chains(&self) -> usize {
        self.draws.len()
    }

    pub fn n_params(&self) -> usize {
        self.names.len()
    }

    pub fn get(&self, chain: usize, iter: usize, param: usize) -> f64 {
        self.draws[chain][iter * self.n_params() + param]
    }

    pub fn chains_of(&self, param: usize) -> Vec<Vec<f64>> {
        (0..self.n_chains())
            .map(|c| (0..self.n_draws).map(|t| self.get(c, t, param)).collect())
            .collect()
    }

    pub fn pooled(&self, param: usize) -> Vec<f64> {
        self.chains_of(param).concat()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn divergences(&self) -> usize {
        self.stats.iter().map(|s| s.divergences).sum()
    }

    pub fn divergence_rate(&self) -> f64 {
        let total = self.n_draws * self.n_chains();
        if total == 0 {
            0.0
        } else {
            self.divergences() as f64 / total as f64
        }
    }

    pub fn divergence_flag(&self) -> bool {
        self.divergence_rate() > DIVERGENCE_FLAG_RATE
    }
}

const INIT_ATTEMPTS: usize = 100;

fn initialize<T: LogDensity + ?Sized, R: Rng>(
    target: &T,
    radius: f64,
    rng: &mut R,
) -> Result<Point> {
    let dim = target.dim();
    for _ in 0..INIT_ATTEMPTS {
        let q: Vec<f64> = (0..dim)
            .map(|_| {
                if radius > 0.0 {
                    rng.random_range(-radius..radius)
                } else {
                    0.0
                }
            })
            .collect();
        let pt = Point::new(target, q);
        if pt.logp.is_finite() && pt.grad.iter().all(|g| g.is_finite()) {
            return Ok(pt);
        }
    }
    Err(Error::Initialization {
        attempts: INIT_ATTEMPTS,
    })
}

/// Runs one chain; `chain` selects its RNG stream.
pub fn run_chain<T: LogDensity + ?Sized>(
    target: &T,
    cfg: &SamplerConfig,
    chain: usize,
) -> Result<(Vec<f64>, ChainStats)> {
    let dim = target.dim();
    let mut rng = stream(cfg.seed, Domain::Chain, chain as u64);
    let mut current = initialize(target, cfg.init_radius, &mut rng)?;
    let mut metric = Metric::unit(dim);
    let mut eps = find_step_size(target, &metric, &current, 1.0, &mut rng);
    let mut da = DualAveraging::new(eps, cfg.target_accept);
    let schedule = WarmupSchedule::new(cfg.warmup);
    let mut welford = Welford::new(dim);

    let kept = cfg.kept();
    let mut out = Vec::with_capacity(kept * dim);
    let mut buf = vec![0.0; dim];
    let mut stats = ChainStats {
        step_size: eps,
        mean_accept: 0.0,
        divergences: 0,
        leapfrog_steps: 0,
        max_depth_hits: 0,
        inv_mass: Vec::new(),
    };
    let mut accept_sum = 0.0;

    for it in 0..cfg.iterations {
        let warm = it < cfg.warmup;
        let step = if warm { da.step_size() } else { eps };
        let (next, ts) = match cfg.trajectory {
            Trajectory::Nuts => {
                nuts_transition(target, &metric, &current, step, cfg.max_depth, &mut rng)
            }
            Trajectory::Static { steps } => {
                static_transition(target, &metric, &current, step, steps, &mut rng)
            }
        };
        current = next;
        if warm {
            da.update(ts.accept_stat);
            if schedule.in_slow_phase(it) {
                welford.add(&current.q);
            }
            if schedule.is_window_end(it) {
                metric = Metric {
                    inv_mass: welford.regularized_variance(),
                };
                welford.reset();
                let fresh = find_step_size(target, &metric, &current, da.step_size(), &mut rng);
                da.restart(fresh);
            }
            if it + 1 == cfg.warmup {
                eps = da.final_step_size();
            }
        } else {
            stats.leapfrog_steps += ts.n_leapfrog;
            accept_sum += ts.accept_stat;
            if ts.divergent {
                stats.divergences += 1;
            }
            if matches!(cfg.trajectory, Trajectory::Nuts) && ts.depth >= cfg.max_depth {
                stats.max_depth_hits += 1;
            }
            target.constrain(&current.q, &mut buf);
            if let Some(bad) = buf.iter().position(|v| !v.is_finite()) {
                return Err(Error::Sampler(format!(
                    "chain {chain} produced a non-finite draw for parameter {bad}"
                )));
            }
            out.extend_from_slice(&buf);
        }
    }
    stats.step_size = eps;
    stats.mean_accept = if kept > 0 {
        accept_sum / kept as f64
    } else {
        0.0
    };
    stats.inv_mass = metric.inv_mass;
    Ok((out, stats))
}

/// Runs `cfg.chains` chains concurrently on the current rayon pool.
pub fn run_chains<T: LogDensity + ?Sized>(
    target: &T,
    cfg: &SamplerConfig,
) -> Result<PosteriorDraws> {
    cfg.validate()?;
    if target.dim() == 0 {
        return Err(Error::Config("target has no parameters".into()));
    }
    let results: Vec<Result<(Vec<f64>, ChainStats)>> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| run_chain(target, cfg, c))
        .collect();
    let mut draws = Vec::with_capacity(cfg.chains);
    let mut stats = Vec::with_capacity(cfg.chains);
    for r in results {
        let (d, s) = r?;
        draws.push(d);
        stats.push(s);
    }
    Ok(PosteriorDraws {
        names: target.param_names(),
        draws,
        n_draws: cfg.kept(),
        stats,
    })
}

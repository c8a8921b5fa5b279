//! Synthetic trials drawn from the joint model.
//!
//! Two covariates are generated, `x1 ~ N(0, 1)` and `x2 ~ Bernoulli(1/2)`.
//! Residual scales are calibrated so that covariates explain a target share
//! of the trait variance and, given treatment and trait, of the outcome
//! variance.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measurement::{category_probs, ItemParams, ModelKind, ResponseMatrix};
use crate::posterior::{Constraint, MeasurementSpec, ParameterSet, TrialDataset};
use crate::rng::{stream, Domain};
use crate::structural::StructuralParams;

/// Variances of the two generated covariates.
pub const COVARIATE_VARIANCES: [f64; 2] = [1.0, 0.25];
pub const COVARIATE_NAMES: [&str; 2] = ["x_1", "x_2"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingMode {
    /// Exactly `round(fraction * J)` items removed per treated subject.
    FixedCount,
    /// Each treated cell removed independently with probability `fraction`.
    Bernoulli,
}

/// `ln a ~ N(mu, sigma)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlopeDistribution {
    pub mu: f64,
    pub sigma: f64,
}

impl Default for SlopeDistribution {
    fn default() -> Self {
        Self {
            mu: 0.1,
            sigma: 0.3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..self.hi)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub kind: ModelKind,
    pub n: usize,
    pub j: usize,
    /// Categories per polytomous item; binary kinds always use 2.
    pub categories: usize,
    pub missing_fraction: f64,
    pub missing_mode: MissingMode,
    pub r2_eta: f64,
    pub r2_y: f64,
    pub omega: Range,
    pub tau0: Range,
    pub tau1: Range,
    pub beta0: f64,
    pub beta: Vec<f64>,
    pub gamma0: f64,
    pub gamma: Vec<f64>,
    pub slope: SlopeDistribution,
    /// Identification scheme recorded in the generated dataset. `None`
    /// selects the model-kind default.
    pub constraint: Option<Constraint>,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Rasch,
            n: 500,
            j: 50,
            categories: 4,
            missing_fraction: 0.4,
            missing_mode: MissingMode::FixedCount,
            r2_eta: 0.5,
            r2_y: 0.2,
            omega: Range::new(0.1, 0.3),
            tau0: Range::new(0.2, 0.4),
            tau1: Range::new(-0.2, -0.1),
            beta0: 0.0,
            beta: vec![-1.0, 0.5],
            gamma0: 0.0,
            gamma: vec![1.0, 0.5],
            slope: SlopeDistribution::default(),
            constraint: None,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn new(kind: ModelKind, n: usize, j: usize) -> Self {
        Self {
            kind,
            n,
            j,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn n_categories(&self) -> usize {
        if self.kind.is_binary() {
            2
        } else {
            self.categories
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n == 0 || self.n % 2 != 0 {
            return bad(format!("n must be a positive even number, got {}", self.n));
        }
        if self.j == 0 {
            return bad("j must be at least 1".into());
        }
        if !self.kind.is_binary() && !(2..=16).contains(&self.categories) {
            return bad(format!(
                "categories must lie in 2..=16, got {}",
                self.categories
            ));
        }
        if !(0.0..1.0).contains(&self.missing_fraction) {
            return bad(format!(
                "missing_fraction must lie in [0, 1), got {}",
                self.missing_fraction
            ));
        }
        for (name, r2) in [("r2_eta", self.r2_eta), ("r2_y", self.r2_y)] {
            if !(r2 > 0.0 && r2 < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {r2}"));
            }
        }
        for (name, r) in [
            ("omega", self.omega),
            ("tau0", self.tau0),
            ("tau1", self.tau1),
        ] {
            if !(r.lo <= r.hi) || !r.lo.is_finite() || !r.hi.is_finite() {
                return bad(format!("{name} range is empty: [{}, {}]", r.lo, r.hi));
            }
        }
        if self.beta.len() != 2 || self.gamma.len() != 2 {
            return bad("beta and gamma need one coefficient per generated covariate (2)".into());
        }
        if !(self.slope.sigma > 0.0) {
            return bad(format!(
                "slope sigma must be positive, got {}",
                self.slope.sigma
            ));
        }
        Ok(())
    }

    pub fn spec(&self) -> Result<MeasurementSpec> {
        let spec = MeasurementSpec::new(self.kind, self.j, self.n_categories())?;
        Ok(match self.constraint {
            Some(c) => spec.with_constraint(c),
            None => spec,
        })
    }
}

/// Generating values for every parameter, fixed ones included.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub params: ParameterSet,
}

/// Residual variance giving a linear predictor with variance `var_lp` a
/// share `r2` of the total: `var_lp * (1 - r2) / r2`.
pub fn calibrate_residual_variance(r2: f64, var_lp: f64) -> Result<f64> {
    if !(r2 > 0.0 && r2 < 1.0) {
        return Err(Error::Config(format!(
            "R-squared must lie in (0, 1), got {r2}"
        )));
    }
    if !(var_lp > 0.0 && var_lp.is_finite()) {
        return Err(Error::Config(format!(
            "linear predictor variance must be positive, got {var_lp}"
        )));
    }
    Ok(var_lp * (1.0 - r2) / r2)
}

fn quad(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(COVARIATE_VARIANCES)
        .map(|((x, y), v)| x * y * v)
        .sum()
}

/// Calibrated `(sigma_eta, sigma_y)`.
///
/// The outcome share is partial: it is `Var(gamma'x | eta)` relative to the
/// outcome variance left after conditioning on treatment and trait.
pub fn calibrated_scales(cfg: &ScenarioConfig) -> Result<(f64, f64)> {
    let var_eta_lp = quad(&cfg.beta, &cfg.beta);
    let s2_eta = calibrate_residual_variance(cfg.r2_eta, var_eta_lp)?;
    let cov = quad(&cfg.beta, &cfg.gamma);
    let cond = quad(&cfg.gamma, &cfg.gamma) - cov * cov / (var_eta_lp + s2_eta);
    let s2_y = calibrate_residual_variance(cfg.r2_y, cond)?;
    Ok((s2_eta.sqrt(), s2_y.sqrt()))
}

/// Ordered polytomous thresholds with gaps `U(0.5, 1)`, centred at zero.
fn centred_thresholds<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut d = vec![0.0; n];
    for k in 1..n {
        d[k] = d[k - 1] + rng.random_range(0.5..1.0);
    }
    let mean = d.iter().sum::<f64>() / n as f64;
    d.iter_mut().for_each(|v| *v -= mean);
    d
}

/// Draws item parameters for `j` items of `kind` with `categories` levels.
///
/// Binary intercepts are standard normal. Polytomous thresholds are centred
/// with uniform gaps, increasing for GPCM and decreasing for GRM. Item 1 is
/// shifted so its first intercept is 0, and its slope is 1.
pub fn generate_item_params<R: Rng>(
    kind: ModelKind,
    j: usize,
    categories: usize,
    slope: SlopeDistribution,
    rng: &mut R,
) -> Result<Vec<ItemParams>> {
    let log_slope = Normal::new(slope.mu, slope.sigma)
        .map_err(|e| Error::Config(format!("slope distribution: {e}")))?;
    let mut items = Vec::with_capacity(j);
    for item in 0..j {
        let a = if kind.has_slope() {
            log_slope.sample(rng).exp()
        } else {
            1.0
        };
        let mut d = if kind.is_binary() {
            vec![StandardNormal.sample(rng)]
        } else {
            centred_thresholds(categories - 1, rng)
        };
        if kind == ModelKind::Grm {
            d.reverse();
        }
        let (a, d) = if item == 0 {
            let shift = d[0];
            (1.0, d.iter().map(|v| v - shift).collect())
        } else {
            (a, d)
        };
        items.push(ItemParams::new(kind, kind.has_slope().then_some(a), d)?);
    }
    Ok(items)
}

fn draw_category<R: Rng>(probs: &[f64], rng: &mut R) -> u8 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k as u8;
        }
    }
    (probs.len() - 1) as u8
}

/// One synthetic trial with its generating parameters.
pub fn generate_dataset(cfg: &ScenarioConfig) -> Result<(TrialDataset, GroundTruth)> {
    cfg.validate()?;
    let spec = cfg.spec()?;
    let mut rng = stream(cfg.seed, Domain::Simulation, 0);
    let (sigma_eta, sigma_y) = calibrated_scales(cfg)?;
    let structural = StructuralParams {
        beta0: cfg.beta0,
        beta: cfg.beta.clone(),
        sigma_eta,
        gamma0: cfg.gamma0,
        gamma: cfg.gamma.clone(),
        omega: cfg.omega.draw(&mut rng),
        tau0: cfg.tau0.draw(&mut rng),
        tau1: cfg.tau1.draw(&mut rng),
        sigma_y,
    };
    let items = generate_item_params(cfg.kind, cfg.j, cfg.n_categories(), cfg.slope, &mut rng)?;

    let n = cfg.n;
    let mut x = Vec::with_capacity(2 * n);
    for _ in 0..n {
        x.push(StandardNormal.sample(&mut rng));
        x.push(if rng.random_bool(0.5) { 1.0 } else { 0.0 });
    }
    let mut z = vec![false; n];
    z[..n / 2].iter_mut().for_each(|v| *v = true);
    z.shuffle(&mut rng);

    let sp = &structural;
    let eta: Vec<f64> = (0..n)
        .map(|i| {
            let e: f64 = StandardNormal.sample(&mut rng);
            sp.beta0 + sp.beta[0] * x[2 * i] + sp.beta[1] * x[2 * i + 1] + sigma_eta * e
        })
        .collect();

    let n_drop = (cfg.missing_fraction * cfg.j as f64).round() as usize;
    let mut cells = Vec::with_capacity(n / 2 * cfg.j);
    for i in (0..n).filter(|&i| z[i]) {
        let start = cells.len();
        for item in &items {
            cells.push(Some(draw_category(&category_probs(eta[i], item), &mut rng)));
        }
        let row = &mut cells[start..];
        match cfg.missing_mode {
            MissingMode::FixedCount => {
                for k in sample(&mut rng, cfg.j, n_drop) {
                    row[k] = None;
                }
            }
            MissingMode::Bernoulli => {
                for cell in row.iter_mut() {
                    if rng.random_bool(cfg.missing_fraction) {
                        *cell = None;
                    }
                }
            }
        }
    }
    let responses = ResponseMatrix::new(n / 2, spec.categories.clone(), cells)?;

    let y: Vec<f64> = (0..n)
        .map(|i| {
            let e: f64 = StandardNormal.sample(&mut rng);
            let mut mu =
                sp.gamma0 + sp.gamma[0] * x[2 * i] + sp.gamma[1] * x[2 * i + 1] + sp.omega * eta[i];
            if z[i] {
                mu += sp.tau0 + sp.tau1 * eta[i];
            }
            mu + sigma_y * e
        })
        .collect();

    let width = n.to_string().len();
    let ids = (1..=n).map(|i| format!("s{i:0width$}")).collect();
    let data = TrialDataset::new(
        ids,
        z,
        y,
        x,
        COVARIATE_NAMES.iter().map(|s| s.to_string()).collect(),
        responses,
        spec,
    )?;
    let truth = GroundTruth {
        params: ParameterSet {
            items,
            structural,
            eta,
        },
    };
    Ok((data, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calibration_examples() {
        assert_eq!(calibrate_residual_variance(0.5, 1.0).unwrap(), 1.0);
        assert!((calibrate_residual_variance(0.2, 1.0).unwrap() - 4.0).abs() < 1e-15);
        assert!((calibrate_residual_variance(0.5, 1.0625).unwrap() - 1.0625).abs() < 1e-15);
        assert!(calibrate_residual_variance(1.0, 1.0).is_err());
        assert!(calibrate_residual_variance(0.0, 1.0).is_err());
        assert!(calibrate_residual_variance(0.5, 0.0).is_err());
    }

    #[test]
    fn default_scales() {
        let (se, sy) = calibrated_scales(&ScenarioConfig::default()).unwrap();
        assert!((se * se - 1.0625).abs() < 1e-14);
        let cond = 1.0625 - 0.9375f64.powi(2) / 2.125;
        assert!((sy * sy - 4.0 * cond).abs() < 1e-13);
    }

    #[test]
    fn config_validation() {
        assert!(ScenarioConfig {
            n: 7,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(ScenarioConfig {
            r2_y: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(ScenarioConfig {
            beta: vec![1.0],
            ..Default::default()
        }
        .validate()
        .is_err());
        let inverted = ScenarioConfig {
            tau0: Range::new(0.4, 0.2),
            ..Default::default()
        };
        assert!(inverted.validate().is_err());
    }
}

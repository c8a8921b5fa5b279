use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::normal_log_density;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum SlopePrior {
    Flat,
    /// On the log scale: `ln a ~ N(mu, sigma^2)`.
    LogNormal {
        mu: f64,
        sigma: f64,
    },
    Normal {
        mu: f64,
        sigma: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum InterceptPrior {
    Flat,
    Normal { mu: f64, sigma: f64 },
}

/// Prior on a block of regression coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum BlockPrior {
    /// Improper uniform on the real line.
    Flat,
    /// `N(0, sd^2)` on every coefficient of the block.
    Normal { sd: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalePrior {
    /// Improper uniform on `(0, inf)`.
    Flat,
    HalfNormal {
        sd: f64,
    },
    LogNormal {
        mu: f64,
        sigma: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    pub slope: SlopePrior,
    pub intercept: InterceptPrior,
    /// `beta0` and `beta`.
    pub eta_coef: BlockPrior,
    /// `gamma0`, `gamma` and `omega`.
    pub outcome_coef: BlockPrior,
    /// `tau0` and `tau1`.
    pub effect: BlockPrior,
    pub sigma_eta: ScalePrior,
    pub sigma_y: ScalePrior,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            slope: SlopePrior::LogNormal {
                mu: 0.1,
                sigma: 0.3,
            },
            intercept: InterceptPrior::Normal {
                mu: 0.0,
                sigma: 1.0,
            },
            eta_coef: BlockPrior::Flat,
            outcome_coef: BlockPrior::Flat,
            effect: BlockPrior::Flat,
            sigma_eta: ScalePrior::Flat,
            sigma_y: ScalePrior::Flat,
        }
    }
}

impl PriorConfig {
    /// Everything flat, item parameters included.
    pub fn flat() -> Self {
        Self {
            slope: SlopePrior::Flat,
            intercept: InterceptPrior::Flat,
            ..Self::default()
        }
    }

    /// Default item priors with `N(0, sd^2)` coefficients and half-normal scales.
    pub fn weakly_informative(sd: f64) -> Self {
        Self {
            eta_coef: BlockPrior::Normal { sd },
            outcome_coef: BlockPrior::Normal { sd },
            effect: BlockPrior::Normal { sd },
            sigma_eta: ScalePrior::HalfNormal { sd },
            sigma_y: ScalePrior::HalfNormal { sd },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "prior {name} must be positive, got {v}"
                )))
            }
        };
        match self.slope {
            SlopePrior::Flat => {}
            SlopePrior::LogNormal { sigma, .. } | SlopePrior::Normal { sigma, .. } => {
                pos("slope sigma", sigma)?
            }
            SlopePrior::Uniform { lo, hi } => {
                if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
                    return Err(Error::Config(format!(
                        "uniform slope prior needs 0 <= lo < hi, got ({lo}, {hi})"
                    )));
                }
            }
        }
        if let InterceptPrior::Normal { sigma, .. } = self.intercept {
            pos("intercept sigma", sigma)?;
        }
        for b in [self.eta_coef, self.outcome_coef, self.effect] {
            if let BlockPrior::Normal { sd } = b {
                pos("coefficient sd", sd)?;
            }
        }
        for s in [self.sigma_eta, self.sigma_y] {
            match s {
                ScalePrior::Flat => {}
                ScalePrior::HalfNormal { sd } => pos("scale sd", sd)?,
                ScalePrior::LogNormal { sigma, .. } => pos("scale sigma", sigma)?,
            }
        }
        Ok(())
    }
}

/// Log density and derivative with respect to the slope (`a > 0`).
pub(crate) fn slope_term(prior: SlopePrior, a: f64) -> (f64, f64) {
    match prior {
        SlopePrior::Flat => (0.0, 0.0),
        SlopePrior::LogNormal { mu, sigma } => {
            let la = a.ln();
            let v = normal_log_density(la, mu, sigma) - la;
            (v, -(1.0 + (la - mu) / (sigma * sigma)) / a)
        }
        SlopePrior::Normal { mu, sigma } => (
            normal_log_density(a, mu, sigma),
            -(a - mu) / (sigma * sigma),
        ),
        SlopePrior::Uniform { lo, hi } => {
            if (lo..=hi).contains(&a) {
                (-(hi - lo).ln(), 0.0)
            } else {
                (f64::NEG_INFINITY, 0.0)
            }
        }
    }
}

pub(crate) fn intercept_term(prior: InterceptPrior, d: f64) -> (f64, f64) {
    match prior {
        InterceptPrior::Flat => (0.0, 0.0),
        InterceptPrior::Normal { mu, sigma } => (
            normal_log_density(d, mu, sigma),
            -(d - mu) / (sigma * sigma),
        ),
    }
}

pub(crate) fn block_term(prior: BlockPrior, c: f64) -> (f64, f64) {
    match prior {
        BlockPrior::Flat => (0.0, 0.0),
        BlockPrior::Normal { sd } => (normal_log_density(c, 0.0, sd), -c / (sd * sd)),
    }
}

pub(crate) fn scale_term(prior: ScalePrior, s: f64) -> (f64, f64) {
    match prior {
        ScalePrior::Flat => (0.0, 0.0),
        ScalePrior::HalfNormal { sd } => (
            std::f64::consts::LN_2 + normal_log_density(s, 0.0, sd),
            -s / (sd * sd),
        ),
        ScalePrior::LogNormal { mu, sigma } => {
            let ls = s.ln();
            (
                normal_log_density(ls, mu, sigma) - ls,
                -(1.0 + (ls - mu) / (sigma * sigma)) / s,
            )
        }
    }
}

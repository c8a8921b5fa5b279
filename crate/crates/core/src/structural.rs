//! Linear-normal submodels for the latent trait and the outcome.
//!
//! ```text
//! eta | x      ~ N(beta0 + beta'x, sigma_eta^2)
//! y | z,eta,x  ~ N(gamma0 + gamma'x + omega*eta + z*(tau0 + tau1*eta), sigma_y^2)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{normal_log_density, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructuralParams<T: Real = f64> {
    pub beta0: T,
    pub beta: Vec<T>,
    pub sigma_eta: T,
    pub gamma0: T,
    pub gamma: Vec<T>,
    pub omega: T,
    pub tau0: T,
    pub tau1: T,
    pub sigma_y: T,
}

impl<T: Real> StructuralParams<T> {
    pub fn n_covariates(&self) -> usize {
        self.beta.len()
    }

    pub fn validate(&self, n_covariates: usize) -> Result<()> {
        check_scale("sigma_eta", self.sigma_eta)?;
        check_scale("sigma_y", self.sigma_y)?;
        if self.beta.len() != n_covariates {
            return Err(Error::dim("beta", n_covariates, self.beta.len()));
        }
        if self.gamma.len() != n_covariates {
            return Err(Error::dim("gamma", n_covariates, self.gamma.len()));
        }
        Ok(())
    }
}

fn check_scale<T: Real>(name: &'static str, value: T) -> Result<()> {
    if value > T::zero() && value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveScale {
            name,
            value: value.as_f64(),
        })
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&u, &v)| acc + u * v)
}

fn check_len<T>(what: &str, expected: usize, v: &[T]) -> Result<()> {
    if v.len() == expected {
        Ok(())
    } else {
        Err(Error::dim(what, expected, v.len()))
    }
}

pub fn eta_mean<T: Real>(x: &[T], sp: &StructuralParams<T>) -> Result<T> {
    check_len("covariates", sp.beta.len(), x)?;
    Ok(sp.beta0 + dot(&sp.beta, x))
}

pub fn eta_log_density<T: Real>(eta: T, x: &[T], sp: &StructuralParams<T>) -> Result<T> {
    check_scale("sigma_eta", sp.sigma_eta)?;
    Ok(normal_log_density(eta, eta_mean(x, sp)?, sp.sigma_eta))
}

pub fn outcome_mean<T: Real>(z: bool, eta: T, x: &[T], sp: &StructuralParams<T>) -> Result<T> {
    check_len("covariates", sp.gamma.len(), x)?;
    let treat = if z {
        principal_effect(eta, sp)
    } else {
        T::zero()
    };
    Ok(sp.gamma0 + dot(&sp.gamma, x) + sp.omega * eta + treat)
}

pub fn outcome_log_density<T: Real>(
    y: T,
    z: bool,
    eta: T,
    x: &[T],
    sp: &StructuralParams<T>,
) -> Result<T> {
    check_scale("sigma_y", sp.sigma_y)?;
    Ok(normal_log_density(
        y,
        outcome_mean(z, eta, x, sp)?,
        sp.sigma_y,
    ))
}

/// Expected treatment effect at trait level `eta`.
pub fn principal_effect<T: Real>(eta: T, sp: &StructuralParams<T>) -> T {
    sp.tau0 + sp.tau1 * eta
}

/// Partial derivatives of [`eta_log_density`].
#[derive(Clone, Debug, PartialEq)]
pub struct EtaDensityGrad<T> {
    pub eta: T,
    pub beta0: T,
    pub beta: Vec<T>,
    pub sigma_eta: T,
}

pub fn eta_log_density_grad<T: Real>(
    eta: T,
    x: &[T],
    sp: &StructuralParams<T>,
) -> Result<EtaDensityGrad<T>> {
    check_scale("sigma_eta", sp.sigma_eta)?;
    let s = sp.sigma_eta;
    let resid = eta - eta_mean(x, sp)?;
    let r = resid / (s * s);
    Ok(EtaDensityGrad {
        eta: -r,
        beta0: r,
        beta: x.iter().map(|&xk| r * xk).collect(),
        sigma_eta: (resid * resid / (s * s) - T::one()) / s,
    })
}

/// Partial derivatives of [`outcome_log_density`].
#[derive(Clone, Debug, PartialEq)]
pub struct OutcomeDensityGrad<T> {
    pub eta: T,
    pub gamma0: T,
    pub gamma: Vec<T>,
    pub omega: T,
    pub tau0: T,
    pub tau1: T,
    pub sigma_y: T,
}

pub fn outcome_log_density_grad<T: Real>(
    y: T,
    z: bool,
    eta: T,
    x: &[T],
    sp: &StructuralParams<T>,
) -> Result<OutcomeDensityGrad<T>> {
    check_scale("sigma_y", sp.sigma_y)?;
    let s = sp.sigma_y;
    let resid = y - outcome_mean(z, eta, x, sp)?;
    let r = resid / (s * s);
    let zf = if z { T::one() } else { T::zero() };
    Ok(OutcomeDensityGrad {
        eta: r * (sp.omega + zf * sp.tau1),
        gamma0: r,
        gamma: x.iter().map(|&xk| r * xk).collect(),
        omega: r * eta,
        tau0: r * zf,
        tau1: r * zf * eta,
        sigma_y: (resid * resid / (s * s) - T::one()) / s,
    })
}

use crate::error::{Error, Result};
use crate::measurement::{ItemParams, ItemView, ModelKind};
use crate::posterior::dataset::{intercept_name, MeasurementSpec, ParameterSet, TrialDataset};
use crate::posterior::prior::{block_term, intercept_term, scale_term, slope_term, PriorConfig};
use crate::sampler::LogDensity;
use crate::scalar::neg_half_ln_2pi;
use crate::structural::StructuralParams;

/// Whether item parameters are sampled or held at known values.
#[derive(Clone, Debug, PartialEq)]
pub enum ItemSource {
    Estimated,
    Fixed(Vec<ItemParams>),
}

/// Meaning of one coordinate of the unconstrained vector (and of the
/// matching entry of the constrained draw vector).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamRole {
    Slope { item: usize },
    Intercept { item: usize, k: usize },
    Beta0,
    Beta(usize),
    SigmaEta,
    Gamma0,
    Gamma(usize),
    Omega,
    Tau0,
    Tau1,
    SigmaY,
    Eta(usize),
}

impl ParamRole {
    pub fn name(&self, kind: ModelKind) -> String {
        match *self {
            ParamRole::Slope { item } => format!("a[{}]", item + 1),
            ParamRole::Intercept { item, k } => intercept_name(kind, item, k),
            ParamRole::Beta0 => "beta0".into(),
            ParamRole::Beta(k) => format!("beta[{}]", k + 1),
            ParamRole::SigmaEta => "sigma_eta".into(),
            ParamRole::Gamma0 => "gamma0".into(),
            ParamRole::Gamma(k) => format!("gamma[{}]", k + 1),
            ParamRole::Omega => "omega".into(),
            ParamRole::Tau0 => "tau0".into(),
            ParamRole::Tau1 => "tau1".into(),
            ParamRole::SigmaY => "sigma_y".into(),
            ParamRole::Eta(i) => format!("eta[{}]", i + 1),
        }
    }

    /// The value this role refers to inside a full parameter set.
    pub fn value_in(&self, ps: &ParameterSet) -> f64 {
        let sp = &ps.structural;
        match *self {
            ParamRole::Slope { item } => ps.items[item].slope(),
            ParamRole::Intercept { item, k } => ps.items[item].intercepts()[k],
            ParamRole::Beta0 => sp.beta0,
            ParamRole::Beta(k) => sp.beta[k],
            ParamRole::SigmaEta => sp.sigma_eta,
            ParamRole::Gamma0 => sp.gamma0,
            ParamRole::Gamma(k) => sp.gamma[k],
            ParamRole::Omega => sp.omega,
            ParamRole::Tau0 => sp.tau0,
            ParamRole::Tau1 => sp.tau1,
            ParamRole::SigmaY => sp.sigma_y,
            ParamRole::Eta(i) => ps.eta[i],
        }
    }
}

#[derive(Clone, Debug)]
struct ItemLayout {
    slope: Option<usize>,
    /// Coordinate of each intercept slot; `None` when pinned at zero. For GRM
    /// slot 0 holds the first intercept and slot `k > 0` the log decrement
    /// `ln(d[k-1] - d[k])`.
    intercepts: Vec<Option<usize>>,
    /// Offset into the flat intercept buffer.
    offset: usize,
}

#[derive(Clone, Debug)]
struct StructLayout {
    beta0: usize,
    beta: usize,
    log_sigma_eta: usize,
    gamma0: usize,
    gamma: usize,
    omega: usize,
    tau0: usize,
    tau1: usize,
    log_sigma_y: usize,
}

/// The joint FLPS posterior over item parameters, structural parameters
/// and every subject's latent trait, on an unconstrained coordinate space.
///
/// Coordinates are ordered items, structural block, traits. Slopes and
/// scales are log-transformed; GRM intercepts use first-value plus
/// log-decrement coding so every point maps to strictly decreasing
/// thresholds.
#[derive(Clone, Debug)]
pub struct FlpsModel {
    data: TrialDataset,
    prior: PriorConfig,
    fixed_items: Option<Vec<ItemParams>>,
    items: Vec<ItemLayout>,
    n_intercepts: usize,
    s: StructLayout,
    eta_start: usize,
    dim: usize,
    roles: Vec<ParamRole>,
}

impl FlpsModel {
    pub fn new(data: TrialDataset, prior: PriorConfig, source: ItemSource) -> Result<Self> {
        prior.validate()?;
        let spec = data.spec().clone();
        let mut roles = Vec::new();
        let mut items = Vec::with_capacity(spec.n_items());
        let mut n_intercepts = 0;
        let fixed_items = match source {
            ItemSource::Estimated => None,
            ItemSource::Fixed(list) => {
                if list.len() != spec.n_items() {
                    return Err(Error::dim("fixed items", spec.n_items(), list.len()));
                }
                for (j, it) in list.iter().enumerate() {
                    if it.kind() != spec.kind || it.n_categories() != spec.categories[j] {
                        return Err(Error::Config(format!(
                            "fixed item {} does not match the measurement spec",
                            j + 1
                        )));
                    }
                }
                Some(list)
            }
        };
        for (j, &k) in spec.categories.iter().enumerate() {
            let mut layout = ItemLayout {
                slope: None,
                intercepts: vec![None; k - 1],
                offset: n_intercepts,
            };
            n_intercepts += k - 1;
            if fixed_items.is_none() {
                if !spec.slope_fixed(j) {
                    layout.slope = Some(roles.len());
                    roles.push(ParamRole::Slope { item: j });
                }
                for l in 0..k - 1 {
                    if !spec.intercept_fixed(j, l) {
                        layout.intercepts[l] = Some(roles.len());
                        roles.push(ParamRole::Intercept { item: j, k: l });
                    }
                }
            }
            items.push(layout);
        }
        let p = data.n_covariates();
        let block = |roles: &mut Vec<ParamRole>, new: &mut dyn Iterator<Item = ParamRole>| {
            let start = roles.len();
            roles.extend(new);
            start
        };
        let beta0 = block(&mut roles, &mut std::iter::once(ParamRole::Beta0));
        let beta = block(&mut roles, &mut (0..p).map(ParamRole::Beta));
        let log_sigma_eta = block(&mut roles, &mut std::iter::once(ParamRole::SigmaEta));
        let gamma0 = block(&mut roles, &mut std::iter::once(ParamRole::Gamma0));
        let gamma = block(&mut roles, &mut (0..p).map(ParamRole::Gamma));
        let omega = block(&mut roles, &mut std::iter::once(ParamRole::Omega));
        let tau0 = block(&mut roles, &mut std::iter::once(ParamRole::Tau0));
        let tau1 = block(&mut roles, &mut std::iter::once(ParamRole::Tau1));
        let log_sigma_y = block(&mut roles, &mut std::iter::once(ParamRole::SigmaY));
        let eta_start = roles.len();
        for i in 0..data.n_subjects() {
            roles.push(ParamRole::Eta(i));
        }
        Ok(Self {
            dim: roles.len(),
            data,
            prior,
            fixed_items,
            items,
            n_intercepts,
            s: StructLayout {
                beta0,
                beta,
                log_sigma_eta,
                gamma0,
                gamma,
                omega,
                tau0,
                tau1,
                log_sigma_y,
            },
            eta_start,
            roles,
        })
    }

    pub fn data(&self) -> &TrialDataset {
        &self.data
    }

    pub fn prior(&self) -> &PriorConfig {
        &self.prior
    }

    pub fn spec(&self) -> &MeasurementSpec {
        self.data.spec()
    }

    pub fn n_params(&self) -> usize {
        self.dim
    }

    pub fn roles(&self) -> &[ParamRole] {
        &self.roles
    }

    pub fn names(&self) -> Vec<String> {
        let kind = self.spec().kind;
        self.roles.iter().map(|r| r.name(kind)).collect()
    }

    pub fn eta_index(&self, subject: usize) -> usize {
        self.eta_start + subject
    }

    /// Number of structural coordinates (`2p + 7`).
    pub fn n_structural(&self) -> usize {
        self.eta_start - self.s.beta0
    }

    fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::dim("unconstrained vector", self.dim, v.len()));
        }
        Ok(())
    }

    fn decode_items(&self, v: &[f64], slopes: &mut [f64], ints: &mut [f64]) {
        if let Some(fixed) = &self.fixed_items {
            for (j, it) in fixed.iter().enumerate() {
                slopes[j] = it.slope();
                let off = self.items[j].offset;
                ints[off..off + it.intercepts().len()].copy_from_slice(it.intercepts());
            }
            return;
        }
        let grm = self.spec().kind == ModelKind::Grm;
        for (j, lay) in self.items.iter().enumerate() {
            slopes[j] = lay.slope.map_or(1.0, |c| v[c].exp());
            let out = &mut ints[lay.offset..lay.offset + lay.intercepts.len()];
            for (k, slot) in lay.intercepts.iter().enumerate() {
                let raw = slot.map_or(0.0, |c| v[c]);
                out[k] = if grm && k > 0 {
                    out[k - 1] - raw.exp()
                } else {
                    raw
                };
            }
        }
    }

    fn decode_structural(&self, v: &[f64]) -> StructuralParams {
        let s = &self.s;
        let p = self.data.n_covariates();
        StructuralParams {
            beta0: v[s.beta0],
            beta: v[s.beta..s.beta + p].to_vec(),
            sigma_eta: v[s.log_sigma_eta].exp(),
            gamma0: v[s.gamma0],
            gamma: v[s.gamma..s.gamma + p].to_vec(),
            omega: v[s.omega],
            tau0: v[s.tau0],
            tau1: v[s.tau1],
            sigma_y: v[s.log_sigma_y].exp(),
        }
    }

    pub fn from_unconstrained(&self, v: &[f64]) -> Result<ParameterSet> {
        self.check_dim(v)?;
        let spec = self.spec();
        let mut slopes = vec![1.0; spec.n_items()];
        let mut ints = vec![0.0; self.n_intercepts];
        self.decode_items(v, &mut slopes, &mut ints);
        let items = self
            .items
            .iter()
            .enumerate()
            .map(|(j, lay)| {
                let d = ints[lay.offset..lay.offset + lay.intercepts.len()].to_vec();
                let slope = spec.kind.has_slope().then_some(slopes[j]);
                ItemParams::new(spec.kind, slope, d)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ParameterSet {
            items,
            structural: self.decode_structural(v),
            eta: v[self.eta_start..].to_vec(),
        })
    }

    pub fn to_unconstrained(&self, ps: &ParameterSet) -> Result<Vec<f64>> {
        let spec = self.spec();
        let n = self.data.n_subjects();
        if ps.eta.len() != n {
            return Err(Error::dim("trait values", n, ps.eta.len()));
        }
        ps.structural.validate(self.data.n_covariates())?;
        let mut v = vec![0.0; self.dim];
        if self.fixed_items.is_none() {
            if ps.items.len() != spec.n_items() {
                return Err(Error::dim("items", spec.n_items(), ps.items.len()));
            }
            let grm = spec.kind == ModelKind::Grm;
            for (j, (lay, item)) in self.items.iter().zip(&ps.items).enumerate() {
                if item.kind() != spec.kind || item.n_categories() != spec.categories[j] {
                    return Err(Error::Config(format!(
                        "item {} does not match the measurement spec",
                        j + 1
                    )));
                }
                match lay.slope {
                    Some(c) => v[c] = item.slope().ln(),
                    None if item.slope() != 1.0 => {
                        return Err(Error::Config(format!(
                            "slope of item {} is fixed at 1 by the identification constraint",
                            j + 1
                        )));
                    }
                    None => {}
                }
                let d = item.intercepts();
                for (k, slot) in lay.intercepts.iter().enumerate() {
                    match slot {
                        Some(c) => {
                            v[*c] = if grm && k > 0 {
                                (d[k - 1] - d[k]).ln()
                            } else {
                                d[k]
                            };
                        }
                        None if d[k] != 0.0 => {
                            return Err(Error::Config(format!(
                                "intercept {} of item {} is fixed at 0 by the identification constraint",
                                k + 1,
                                j + 1
                            )));
                        }
                        None => {}
                    }
                }
            }
        }
        let s = &self.s;
        let sp = &ps.structural;
        let p = self.data.n_covariates();
        v[s.beta0] = sp.beta0;
        v[s.beta..s.beta + p].copy_from_slice(&sp.beta);
        v[s.log_sigma_eta] = sp.sigma_eta.ln();
        v[s.gamma0] = sp.gamma0;
        v[s.gamma..s.gamma + p].copy_from_slice(&sp.gamma);
        v[s.omega] = sp.omega;
        v[s.tau0] = sp.tau0;
        v[s.tau1] = sp.tau1;
        v[s.log_sigma_y] = sp.sigma_y.ln();
        v[self.eta_start..].copy_from_slice(&ps.eta);
        Ok(v)
    }

    /// Log prior density of a parameter set, including the log absolute
    /// Jacobian of the unconstraining transform. Out-of-support values give
    /// negative infinity.
    pub fn log_prior(&self, ps: &ParameterSet) -> f64 {
        let pr = &self.prior;
        let mut lp = 0.0;
        if self.fixed_items.is_none() {
            let grm = self.spec().kind == ModelKind::Grm;
            for (lay, item) in self.items.iter().zip(&ps.items) {
                if lay.slope.is_some() {
                    let a = item.slope();
                    lp += slope_term(pr.slope, a).0 + a.ln();
                }
                let d = item.intercepts();
                for (k, slot) in lay.intercepts.iter().enumerate() {
                    if slot.is_some() {
                        lp += intercept_term(pr.intercept, d[k]).0;
                        if grm && k > 0 {
                            lp += (d[k - 1] - d[k]).ln();
                        }
                    }
                }
            }
        }
        let sp = &ps.structural;
        lp += block_term(pr.eta_coef, sp.beta0).0;
        lp += sp
            .beta
            .iter()
            .map(|&b| block_term(pr.eta_coef, b).0)
            .sum::<f64>();
        lp += block_term(pr.outcome_coef, sp.gamma0).0;
        lp += sp
            .gamma
            .iter()
            .map(|&g| block_term(pr.outcome_coef, g).0)
            .sum::<f64>();
        lp += block_term(pr.outcome_coef, sp.omega).0;
        lp += block_term(pr.effect, sp.tau0).0 + block_term(pr.effect, sp.tau1).0;
        lp += scale_term(pr.sigma_eta, sp.sigma_eta).0 + sp.sigma_eta.ln();
        lp += scale_term(pr.sigma_y, sp.sigma_y).0 + sp.sigma_y.ln();
        if lp.is_nan() {
            f64::NEG_INFINITY
        } else {
            lp
        }
    }

    pub fn log_posterior(&self, v: &[f64]) -> Result<f64> {
        self.check_dim(v)?;
        Ok(self.evaluate(v, None))
    }

    pub fn grad_log_posterior(&self, v: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_dim(v)?;
        let mut g = vec![0.0; self.dim];
        let lp = self.evaluate(v, Some(&mut g));
        Ok((lp, g))
    }

    /// Writes constrained-scale values of every coordinate into `out`.
    pub fn constrain_into(&self, v: &[f64], out: &mut [f64]) {
        let spec = self.spec();
        let mut slopes = vec![1.0; spec.n_items()];
        let mut ints = vec![0.0; self.n_intercepts];
        self.decode_items(v, &mut slopes, &mut ints);
        for (c, role) in self.roles.iter().enumerate() {
            out[c] = match *role {
                ParamRole::Slope { item } => slopes[item],
                ParamRole::Intercept { item, k } => ints[self.items[item].offset + k],
                ParamRole::SigmaEta | ParamRole::SigmaY => v[c].exp(),
                _ => v[c],
            };
        }
    }

    fn evaluate(&self, v: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let spec = self.spec();
        let data = &self.data;
        let kind = spec.kind;
        let mut slopes = vec![1.0; spec.n_items()];
        let mut ints = vec![0.0; self.n_intercepts];
        self.decode_items(v, &mut slopes, &mut ints);
        let want = grad.is_some();
        let mut g_slope = vec![0.0; if want { slopes.len() } else { 0 }];
        let mut g_int = vec![0.0; if want { ints.len() } else { 0 }];
        if let Some(g) = grad.as_deref_mut() {
            g.fill(0.0);
        }

        let s = &self.s;
        let p = data.n_covariates();
        let beta0 = v[s.beta0];
        let beta = &v[s.beta..s.beta + p];
        let sig_e = v[s.log_sigma_eta].exp();
        let gamma0 = v[s.gamma0];
        let gamma = &v[s.gamma..s.gamma + p];
        let (omega, tau0, tau1) = (v[s.omega], v[s.tau0], v[s.tau1]);
        let sig_y = v[s.log_sigma_y].exp();
        let mut lp = 0.0;

        // measurement
        let responses = data.responses();
        for (r, &subject) in data.treated().iter().enumerate() {
            let ei = self.eta_start + subject;
            let eta = v[ei];
            let mut d_eta = 0.0;
            for &(j, m) in responses.observed(r) {
                let j = j as usize;
                let lay = &self.items[j];
                let range = lay.offset..lay.offset + lay.intercepts.len();
                let view = ItemView {
                    kind,
                    slope: slopes[j],
                    intercepts: &ints[range.clone()],
                };
                if want {
                    let t = view.lik_grad(m as usize, eta, &mut g_int[range]);
                    lp += t.value;
                    d_eta += t.d_eta;
                    g_slope[j] += t.d_slope;
                } else {
                    lp += view.log_lik(m as usize, eta);
                }
            }
            if let Some(g) = grad.as_deref_mut() {
                g[ei] += d_eta;
            }
        }

        // trait and outcome models
        let c0 = neg_half_ln_2pi::<f64>();
        let (inv_e2, inv_y2) = (1.0 / (sig_e * sig_e), 1.0 / (sig_y * sig_y));
        let (ln_e, ln_y) = (sig_e.ln(), sig_y.ln());
        for i in 0..data.n_subjects() {
            let ei = self.eta_start + i;
            let eta = v[ei];
            let x = data.covariates(i);
            let zf = if data.z()[i] { 1.0 } else { 0.0 };
            let re = eta - beta0 - dot(beta, x);
            let mu_y = gamma0 + dot(gamma, x) + omega * eta + zf * (tau0 + tau1 * eta);
            let ry = data.y()[i] - mu_y;
            lp += 2.0 * c0 - ln_e - ln_y - 0.5 * (re * re * inv_e2 + ry * ry * inv_y2);
            if let Some(g) = grad.as_deref_mut() {
                let we = re * inv_e2;
                let wy = ry * inv_y2;
                g[ei] += -we + wy * (omega + zf * tau1);
                g[s.beta0] += we;
                g[s.log_sigma_eta] += re * we - 1.0;
                g[s.gamma0] += wy;
                for k in 0..p {
                    g[s.beta + k] += we * x[k];
                    g[s.gamma + k] += wy * x[k];
                }
                g[s.omega] += wy * eta;
                g[s.tau0] += wy * zf;
                g[s.tau1] += wy * zf * eta;
                g[s.log_sigma_y] += ry * wy - 1.0;
            }
        }

        // structural priors and scale Jacobians
        let pr = &self.prior;
        let coef = |idx: usize, prior, g: &mut Option<&mut [f64]>| {
            let (val, d) = block_term(prior, v[idx]);
            if let Some(g) = g.as_deref_mut() {
                g[idx] += d;
            }
            val
        };
        lp += coef(s.beta0, pr.eta_coef, &mut grad);
        for k in 0..p {
            lp += coef(s.beta + k, pr.eta_coef, &mut grad);
            lp += coef(s.gamma + k, pr.outcome_coef, &mut grad);
        }
        lp += coef(s.gamma0, pr.outcome_coef, &mut grad);
        lp += coef(s.omega, pr.outcome_coef, &mut grad);
        lp += coef(s.tau0, pr.effect, &mut grad);
        lp += coef(s.tau1, pr.effect, &mut grad);
        for (idx, prior, sigma) in [
            (s.log_sigma_eta, pr.sigma_eta, sig_e),
            (s.log_sigma_y, pr.sigma_y, sig_y),
        ] {
            let (val, d) = scale_term(prior, sigma);
            lp += val + v[idx];
            if let Some(g) = grad.as_deref_mut() {
                g[idx] += d * sigma + 1.0;
            }
        }

        // item priors, Jacobians and chain rule to unconstrained coordinates
        if self.fixed_items.is_none() {
            let grm = kind == ModelKind::Grm;
            for (j, lay) in self.items.iter().enumerate() {
                if let Some(c) = lay.slope {
                    let a = slopes[j];
                    let (val, d) = slope_term(pr.slope, a);
                    lp += val + v[c];
                    if let Some(g) = grad.as_deref_mut() {
                        g[c] = (g_slope[j] + d) * a + 1.0;
                    }
                }
                let kk = lay.intercepts.len();
                for k in 0..kk {
                    let di = lay.offset + k;
                    if let Some(c) = lay.intercepts[k] {
                        let (val, d) = intercept_term(pr.intercept, ints[di]);
                        lp += val;
                        if want {
                            g_int[di] += d;
                        }
                        if grm && k > 0 {
                            lp += v[c];
                        }
                    }
                }
                if let Some(g) = grad.as_deref_mut() {
                    let dd = &g_int[lay.offset..lay.offset + kk];
                    if grm {
                        let mut tail = 0.0;
                        for k in (1..kk).rev() {
                            tail += dd[k];
                            let c = lay.intercepts[k].expect("decrement coordinate");
                            g[c] = -v[c].exp() * tail + 1.0;
                        }
                        if let Some(c) = lay.intercepts[0] {
                            g[c] = tail + dd[0];
                        }
                    } else {
                        for (k, slot) in lay.intercepts.iter().enumerate() {
                            if let Some(c) = slot {
                                g[*c] = dd[k];
                            }
                        }
                    }
                }
            }
        }

        if lp.is_finite() {
            lp
        } else {
            if let Some(g) = grad {
                g.fill(0.0);
            }
            f64::NEG_INFINITY
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

impl LogDensity for FlpsModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density_grad(&self, position: &[f64], grad: &mut [f64]) -> f64 {
        self.evaluate(position, Some(grad))
    }

    fn param_names(&self) -> Vec<String> {
        self.names()
    }

    fn constrain(&self, position: &[f64], out: &mut [f64]) {
        self.constrain_into(position, out)
    }
}

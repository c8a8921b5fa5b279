use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measurement::{ItemParams, ModelKind, ResponseMatrix};
use crate::structural::StructuralParams;

/// How the latent scale is pinned down.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    /// Slope of item 1 fixed at one and its first intercept at zero. For
    /// Rasch items only the intercept is affected.
    FixFirstItem,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSpec {
    pub kind: ModelKind,
    /// Number of categories of each item.
    pub categories: Vec<usize>,
    pub constraint: Constraint,
}

impl MeasurementSpec {
    /// Uses the default identification: Rasch leaves every intercept free
    /// (the trait location comes from the structural model), the other
    /// kinds fix the first item.
    pub fn new(kind: ModelKind, n_items: usize, n_categories: usize) -> Result<Self> {
        let constraint = match kind {
            ModelKind::Rasch => Constraint::None,
            _ => Constraint::FixFirstItem,
        };
        let spec = Self {
            kind,
            categories: vec![n_categories; n_items],
            constraint,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_constraint(mut self, constraint: Constraint) -> Self {
        self.constraint = constraint;
        self
    }

    pub fn n_items(&self) -> usize {
        self.categories.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.categories.is_empty() {
            return Err(Error::Config("measurement needs at least one item".into()));
        }
        for (j, &k) in self.categories.iter().enumerate() {
            if k < 2 {
                return Err(Error::Config(format!(
                    "item {} has {k} categories; at least 2 required",
                    j + 1
                )));
            }
            if self.kind.is_binary() && k != 2 {
                return Err(Error::Config(format!(
                    "{} items are binary but item {} declares {k} categories",
                    self.kind,
                    j + 1
                )));
            }
            if k > 256 {
                return Err(Error::Config(format!(
                    "item {} has too many categories",
                    j + 1
                )));
            }
        }
        Ok(())
    }

    /// Whether `(item, intercept index)` is pinned by the identification scheme.
    pub fn intercept_fixed(&self, item: usize, k: usize) -> bool {
        self.constraint == Constraint::FixFirstItem && item == 0 && k == 0
    }

    pub fn slope_fixed(&self, item: usize) -> bool {
        !self.kind.has_slope() || (self.constraint == Constraint::FixFirstItem && item == 0)
    }

    /// Number of free item parameters under the identification scheme.
    pub fn n_free_item_params(&self) -> usize {
        let mut n = 0;
        for (j, &k) in self.categories.iter().enumerate() {
            if !self.slope_fixed(j) {
                n += 1;
            }
            n += (0..k - 1).filter(|&l| !self.intercept_fixed(j, l)).count();
        }
        n
    }
}

/// One randomized trial. Responses exist only for treated subjects; row `r`
/// of the response matrix belongs to the `r`-th treated subject in order.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialDataset {
    ids: Vec<String>,
    z: Vec<bool>,
    y: Vec<f64>,
    x: Vec<f64>,
    covariate_names: Vec<String>,
    responses: ResponseMatrix,
    spec: MeasurementSpec,
    treated: Vec<usize>,
    response_row: Vec<Option<usize>>,
}

impl TrialDataset {
    /// `x` is row-major `n x covariate_names.len()`.
    pub fn new(
        ids: Vec<String>,
        z: Vec<bool>,
        y: Vec<f64>,
        x: Vec<f64>,
        covariate_names: Vec<String>,
        responses: ResponseMatrix,
        spec: MeasurementSpec,
    ) -> Result<Self> {
        spec.validate()?;
        let n = z.len();
        let p = covariate_names.len();
        if ids.len() != n {
            return Err(Error::dim("subject ids", n, ids.len()));
        }
        if y.len() != n {
            return Err(Error::dim("outcomes", n, y.len()));
        }
        if x.len() != n * p {
            return Err(Error::dim("covariate cells", n * p, x.len()));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Dataset(format!(
                "outcome of subject {} is not finite",
                ids[i]
            )));
        }
        if let Some(c) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Dataset(format!(
                "covariate {} of subject {} is not finite",
                covariate_names[c % p],
                ids[c / p]
            )));
        }
        if responses.categories() != spec.categories.as_slice() {
            return Err(Error::Dataset(
                "response matrix categories disagree with the measurement spec".into(),
            ));
        }
        let treated: Vec<usize> = (0..n).filter(|&i| z[i]).collect();
        if responses.n_rows() != treated.len() {
            return Err(Error::Dataset(format!(
                "response matrix has {} rows but {} subjects are treated",
                responses.n_rows(),
                treated.len()
            )));
        }
        let mut response_row = vec![None; n];
        for (r, &i) in treated.iter().enumerate() {
            response_row[i] = Some(r);
        }
        Ok(Self {
            ids,
            z,
            y,
            x,
            covariate_names,
            responses,
            spec,
            treated,
            response_row,
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.z.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn n_treated(&self) -> usize {
        self.treated.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn z(&self) -> &[bool] {
        &self.z
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn covariates(&self, i: usize) -> &[f64] {
        let p = self.n_covariates();
        &self.x[i * p..(i + 1) * p]
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn responses(&self) -> &ResponseMatrix {
        &self.responses
    }

    pub fn spec(&self) -> &MeasurementSpec {
        &self.spec
    }

    /// Subject indices with `z = 1`, in dataset order.
    pub fn treated(&self) -> &[usize] {
        &self.treated
    }

    pub fn response_row(&self, subject: usize) -> Option<usize> {
        self.response_row[subject]
    }

    /// Same data with changed measurement identification.
    pub fn with_constraint(mut self, constraint: Constraint) -> Self {
        self.spec.constraint = constraint;
        self
    }
}

/// Every model parameter, including the per-subject traits of both arms.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet {
    pub items: Vec<ItemParams>,
    pub structural: StructuralParams,
    pub eta: Vec<f64>,
}

impl ParameterSet {
    /// `(name, value)` for every parameter, fixed ones included.
    pub fn entries(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for (j, item) in self.items.iter().enumerate() {
            if item.kind().has_slope() {
                out.push((format!("a[{}]", j + 1), item.slope()));
            }
            for (k, &d) in item.intercepts().iter().enumerate() {
                out.push((intercept_name(item.kind(), j, k), d));
            }
        }
        let sp = &self.structural;
        out.push(("beta0".into(), sp.beta0));
        for (k, &b) in sp.beta.iter().enumerate() {
            out.push((format!("beta[{}]", k + 1), b));
        }
        out.push(("sigma_eta".into(), sp.sigma_eta));
        out.push(("gamma0".into(), sp.gamma0));
        for (k, &g) in sp.gamma.iter().enumerate() {
            out.push((format!("gamma[{}]", k + 1), g));
        }
        out.push(("omega".into(), sp.omega));
        out.push(("tau0".into(), sp.tau0));
        out.push(("tau1".into(), sp.tau1));
        out.push(("sigma_y".into(), sp.sigma_y));
        for (i, &e) in self.eta.iter().enumerate() {
            out.push((format!("eta[{}]", i + 1), e));
        }
        out
    }
}

pub(crate) fn intercept_name(kind: ModelKind, item: usize, k: usize) -> String {
    if kind.is_binary() {
        format!("d[{}]", item + 1)
    } else {
        format!("d[{},{}]", item + 1, k + 1)
    }
}

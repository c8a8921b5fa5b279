//! Item-response measurement models: Rasch, 2PL, GPCM and GRM.
//!
//! All models share the linear kernel `a * eta + d`; categories are coded
//! `0..K` and responses are conditionally independent given the trait.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{log_logistic, log_sum_exp, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "rasch")]
    Rasch,
    #[serde(rename = "2pl")]
    TwoPl,
    #[serde(rename = "gpcm")]
    Gpcm,
    #[serde(rename = "grm")]
    Grm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Rasch,
        ModelKind::TwoPl,
        ModelKind::Gpcm,
        ModelKind::Grm,
    ];

    pub fn is_binary(self) -> bool {
        matches!(self, ModelKind::Rasch | ModelKind::TwoPl)
    }

    pub fn has_slope(self) -> bool {
        !matches!(self, ModelKind::Rasch)
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Rasch => "rasch",
            ModelKind::TwoPl => "2pl",
            ModelKind::Gpcm => "gpcm",
            ModelKind::Grm => "grm",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rasch" => Ok(ModelKind::Rasch),
            "2pl" | "twopl" => Ok(ModelKind::TwoPl),
            "gpcm" => Ok(ModelKind::Gpcm),
            "grm" => Ok(ModelKind::Grm),
            other => Err(Error::Config(format!(
                "unknown measurement model `{other}` (expected rasch, 2pl, gpcm or grm)"
            ))),
        }
    }
}

/// Parameters of one item. Construction validates every invariant, so a
/// value of this type always yields strictly positive category probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemParams<T: Real = f64> {
    kind: ModelKind,
    slope: T,
    intercepts: Vec<T>,
}

impl<T: Real> ItemParams<T> {
    /// `slope` must be `None` (or exactly one) for Rasch items.
    pub fn new(kind: ModelKind, slope: Option<T>, intercepts: Vec<T>) -> Result<Self> {
        let slope = match (kind, slope) {
            (ModelKind::Rasch, None) => T::one(),
            (ModelKind::Rasch, Some(a)) if a == T::one() => T::one(),
            (ModelKind::Rasch, Some(a)) => return Err(Error::RaschSlope(a.as_f64())),
            (_, None) => {
                return Err(Error::Config(format!("{kind} item requires a slope")));
            }
            (_, Some(a)) => {
                if !(a > T::zero() && a.is_finite()) {
                    return Err(Error::NonPositiveSlope(a.as_f64()));
                }
                a
            }
        };
        if kind.is_binary() && intercepts.len() != 1 {
            return Err(Error::InterceptCount {
                kind: kind.name(),
                expected: "1".into(),
                got: intercepts.len(),
            });
        }
        if intercepts.is_empty() {
            return Err(Error::InterceptCount {
                kind: kind.name(),
                expected: "at least 1".into(),
                got: 0,
            });
        }
        if let Some(bad) = intercepts.iter().find(|d| !d.is_finite()) {
            return Err(Error::NonFinite(format!("intercept {bad}")));
        }
        if kind == ModelKind::Grm {
            for (k, pair) in intercepts.windows(2).enumerate() {
                if !(pair[1] < pair[0]) {
                    return Err(Error::GrmOrdering {
                        prev_index: k + 1,
                        index: k + 2,
                        prev: pair[0].as_f64(),
                        next: pair[1].as_f64(),
                    });
                }
            }
        }
        Ok(Self {
            kind,
            slope,
            intercepts,
        })
    }

    pub fn rasch(d: T) -> Result<Self> {
        Self::new(ModelKind::Rasch, None, vec![d])
    }

    pub fn two_pl(a: T, d: T) -> Result<Self> {
        Self::new(ModelKind::TwoPl, Some(a), vec![d])
    }

    pub fn gpcm(a: T, d: Vec<T>) -> Result<Self> {
        Self::new(ModelKind::Gpcm, Some(a), d)
    }

    pub fn grm(a: T, d: Vec<T>) -> Result<Self> {
        Self::new(ModelKind::Grm, Some(a), d)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    /// Slope; identically one for Rasch items.
    pub fn slope(&self) -> T {
        self.slope
    }

    pub fn intercepts(&self) -> &[T] {
        &self.intercepts
    }

    pub fn n_categories(&self) -> usize {
        self.intercepts.len() + 1
    }

    pub fn view(&self) -> ItemView<'_, T> {
        ItemView {
            kind: self.kind,
            slope: self.slope,
            intercepts: &self.intercepts,
        }
    }

    fn check_category(&self, m: usize) -> Result<()> {
        if m >= self.n_categories() {
            return Err(Error::CategoryOutOfRange {
                category: m,
                categories: self.n_categories(),
            });
        }
        Ok(())
    }
}

/// Borrowed, unchecked item parameters for hot loops. Callers guarantee the
/// same invariants [`ItemParams::new`] enforces.
#[derive(Clone, Copy, Debug)]
pub struct ItemView<'a, T: Real = f64> {
    pub kind: ModelKind,
    pub slope: T,
    pub intercepts: &'a [T],
}

/// Value and partial derivatives of one response log-likelihood; the
/// intercept partials are accumulated into a caller-provided slice.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LikTerms<T> {
    pub value: T,
    pub d_eta: T,
    pub d_slope: T,
}

const STACK_CATEGORIES: usize = 16;

impl<'a, T: Real> ItemView<'a, T> {
    pub fn n_categories(&self) -> usize {
        self.intercepts.len() + 1
    }

    /// Writes `ln P(M = k)` for every category into `out`.
    pub fn log_probs_into(&self, eta: T, out: &mut [T]) {
        let k = self.n_categories();
        debug_assert_eq!(out.len(), k);
        let lin = self.slope * eta;
        match self.kind {
            ModelKind::Rasch | ModelKind::TwoPl => {
                let x = lin + self.intercepts[0];
                out[0] = log_logistic(-x);
                out[1] = log_logistic(x);
            }
            ModelKind::Gpcm => {
                out[0] = T::zero();
                for c in 1..k {
                    out[c] = out[c - 1] + lin + self.intercepts[c - 1];
                }
                let norm = log_sum_exp(out);
                out.iter_mut().for_each(|z| *z = *z - norm);
            }
            ModelKind::Grm => {
                for (c, slot) in out.iter_mut().enumerate() {
                    *slot = self.grm_log_prob(c, lin);
                }
            }
        }
    }

    fn grm_log_prob(&self, m: usize, lin: T) -> T {
        let k = self.n_categories();
        if m == 0 {
            return log_logistic(-(lin + self.intercepts[0]));
        }
        if m == k - 1 {
            return log_logistic(lin + self.intercepts[k - 2]);
        }
        let upper = lin + self.intercepts[m - 1];
        let lower = lin + self.intercepts[m];
        // logistic(u) - logistic(l) = logistic(u) * logistic(-l) * (1 - exp(l - u))
        log_logistic(upper) + log_logistic(-lower) + (-(lower - upper).exp_m1()).ln()
    }

    pub fn log_lik(&self, m: usize, eta: T) -> T {
        debug_assert!(m < self.n_categories());
        let lin = self.slope * eta;
        match self.kind {
            ModelKind::Rasch | ModelKind::TwoPl => {
                let x = lin + self.intercepts[0];
                if m == 1 {
                    log_logistic(x)
                } else {
                    log_logistic(-x)
                }
            }
            ModelKind::Grm => self.grm_log_prob(m, lin),
            ModelKind::Gpcm => self.with_scratch(|buf| {
                self.log_probs_into(eta, buf);
                buf[m]
            }),
        }
    }

    /// Log-likelihood of category `m` with its gradient. Intercept partials
    /// are added to `d_intercepts[..K-1]`.
    pub fn lik_grad(&self, m: usize, eta: T, d_intercepts: &mut [T]) -> LikTerms<T> {
        debug_assert!(m < self.n_categories());
        debug_assert_eq!(d_intercepts.len(), self.intercepts.len());
        let lin = self.slope * eta;
        match self.kind {
            ModelKind::Rasch | ModelKind::TwoPl => {
                let x = lin + self.intercepts[0];
                // One exponential serves both the log-probability and the residual.
                let e = (-x.abs()).exp();
                let l = e.ln_1p();
                let p = if x >= T::zero() {
                    (T::one() + e).recip()
                } else {
                    e / (T::one() + e)
                };
                let (value, resid) = match (m == 1, x >= T::zero()) {
                    (true, true) => (-l, T::one() - p),
                    (true, false) => (x - l, T::one() - p),
                    (false, true) => (-x - l, -p),
                    (false, false) => (-l, -p),
                };
                d_intercepts[0] = d_intercepts[0] + resid;
                LikTerms {
                    value,
                    d_eta: self.slope * resid,
                    d_slope: eta * resid,
                }
            }
            ModelKind::Gpcm => self.with_scratch(|buf| {
                self.log_probs_into(eta, buf);
                let value = buf[m];
                // Convert to probabilities, then tail sums P(M >= l).
                let mut expected = T::zero();
                for (c, lp) in buf.iter_mut().enumerate() {
                    *lp = lp.exp();
                    expected = expected + T::from_usize(c).unwrap() * *lp;
                }
                let mut tail = T::zero();
                for l in (1..buf.len()).rev() {
                    tail = tail + buf[l];
                    let hit = if m >= l { T::one() } else { T::zero() };
                    d_intercepts[l - 1] = d_intercepts[l - 1] + hit - tail;
                }
                let resid = T::from_usize(m).unwrap() - expected;
                LikTerms {
                    value,
                    d_eta: self.slope * resid,
                    d_slope: eta * resid,
                }
            }),
            ModelKind::Grm => {
                let k = self.n_categories();
                let value = self.grm_log_prob(m, lin);
                let density = |x: T| (log_logistic(x) + log_logistic(-x) - value).exp();
                let mut d_lin = T::zero();
                if m >= 1 {
                    let g = density(lin + self.intercepts[m - 1]);
                    d_intercepts[m - 1] = d_intercepts[m - 1] + g;
                    d_lin = d_lin + g;
                }
                if m + 1 < k {
                    let g = -density(lin + self.intercepts[m]);
                    d_intercepts[m] = d_intercepts[m] + g;
                    d_lin = d_lin + g;
                }
                LikTerms {
                    value,
                    d_eta: self.slope * d_lin,
                    d_slope: eta * d_lin,
                }
            }
        }
    }

    fn with_scratch<R>(&self, f: impl FnOnce(&mut [T]) -> R) -> R {
        let k = self.n_categories();
        if k <= STACK_CATEGORIES {
            let mut buf = [T::zero(); STACK_CATEGORIES];
            f(&mut buf[..k])
        } else {
            let mut buf = vec![T::zero(); k];
            f(&mut buf)
        }
    }
}

/// Category probabilities; index 1 of a binary item is the success probability.
pub fn category_probs<T: Real>(eta: T, params: &ItemParams<T>) -> Vec<T> {
    let mut out = vec![T::zero(); params.n_categories()];
    params.view().log_probs_into(eta, &mut out);
    out.iter_mut().for_each(|p| *p = p.exp());
    out
}

pub fn response_log_lik<T: Real>(m: usize, eta: T, params: &ItemParams<T>) -> Result<T> {
    params.check_category(m)?;
    Ok(params.view().log_lik(m, eta))
}

/// Gradient of [`response_log_lik`] over `(eta, slope, intercepts)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseGrad<T> {
    pub eta: T,
    /// Absent for Rasch items.
    pub slope: Option<T>,
    pub intercepts: Vec<T>,
}

pub fn response_grad<T: Real>(m: usize, eta: T, params: &ItemParams<T>) -> Result<ResponseGrad<T>> {
    params.check_category(m)?;
    let mut intercepts = vec![T::zero(); params.intercepts.len()];
    let terms = params.view().lik_grad(m, eta, &mut intercepts);
    Ok(ResponseGrad {
        eta: terms.d_eta,
        slope: params.kind.has_slope().then_some(terms.d_slope),
        intercepts,
    })
}

/// Item responses of the treated subjects. Cells hold a category in
/// `0..K_j` or `None` for missing; the observed cells of each row are
/// indexed at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseMatrix {
    n_rows: usize,
    categories: Vec<usize>,
    cells: Vec<Option<u8>>,
    row_start: Vec<usize>,
    observed: Vec<(u32, u8)>,
}

impl ResponseMatrix {
    /// `cells` is row-major, `n_rows * categories.len()` long.
    pub fn new(n_rows: usize, categories: Vec<usize>, cells: Vec<Option<u8>>) -> Result<Self> {
        let n_items = categories.len();
        if cells.len() != n_rows * n_items {
            return Err(Error::dim("response cells", n_rows * n_items, cells.len()));
        }
        if let Some(&k) = categories.iter().find(|&&k| !(2..=256).contains(&k)) {
            return Err(Error::Config(format!(
                "items need between 2 and 256 categories, got {k}"
            )));
        }
        let mut row_start = Vec::with_capacity(n_rows + 1);
        let mut observed = Vec::new();
        row_start.push(0);
        for row in cells.chunks(n_items.max(1)).take(n_rows) {
            for (j, cell) in row.iter().enumerate() {
                if let Some(m) = *cell {
                    if m as usize >= categories[j] {
                        return Err(Error::CategoryOutOfRange {
                            category: m as usize,
                            categories: categories[j],
                        });
                    }
                    observed.push((j as u32, m));
                }
            }
            row_start.push(observed.len());
        }
        // zero-item matrices still need one offset per row
        while row_start.len() < n_rows + 1 {
            row_start.push(observed.len());
        }
        Ok(Self {
            n_rows,
            categories,
            cells,
            row_start,
            observed,
        })
    }

    pub fn from_rows(rows: &[Vec<Option<u8>>], categories: Vec<usize>) -> Result<Self> {
        let n_items = categories.len();
        let mut cells = Vec::with_capacity(rows.len() * n_items);
        for row in rows {
            if row.len() != n_items {
                return Err(Error::dim("response row", n_items, row.len()));
            }
            cells.extend_from_slice(row);
        }
        Self::new(rows.len(), categories, cells)
    }

    pub fn empty(categories: Vec<usize>) -> Result<Self> {
        Self::new(0, categories, Vec::new())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_items(&self) -> usize {
        self.categories.len()
    }

    pub fn categories(&self) -> &[usize] {
        &self.categories
    }

    pub fn get(&self, row: usize, item: usize) -> Option<u8> {
        self.cells[row * self.n_items() + item]
    }

    pub fn row(&self, row: usize) -> &[Option<u8>] {
        let j = self.n_items();
        &self.cells[row * j..(row + 1) * j]
    }

    /// Observed `(item, category)` pairs of one row.
    pub fn observed(&self, row: usize) -> &[(u32, u8)] {
        &self.observed[self.row_start[row]..self.row_start[row + 1]]
    }

    pub fn n_observed(&self) -> usize {
        self.observed.len()
    }

    pub fn n_missing(&self) -> usize {
        self.cells.len() - self.observed.len()
    }
}

/// Sum of response log-likelihoods over all observed cells.
pub fn matrix_log_lik<T: Real>(
    responses: &ResponseMatrix,
    etas: &[T],
    items: &[ItemParams<T>],
) -> Result<T> {
    if etas.len() != responses.n_rows() {
        return Err(Error::dim("trait values", responses.n_rows(), etas.len()));
    }
    if items.len() != responses.n_items() {
        return Err(Error::dim("items", responses.n_items(), items.len()));
    }
    for (j, item) in items.iter().enumerate() {
        if item.n_categories() != responses.categories()[j] {
            return Err(Error::dim(
                format!("categories of item {}", j + 1),
                responses.categories()[j],
                item.n_categories(),
            ));
        }
    }
    let mut total = T::zero();
    for (i, &eta) in etas.iter().enumerate() {
        for &(j, m) in responses.observed(i) {
            total = total + items[j as usize].view().log_lik(m as usize, eta);
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    type P64 = ItemParams<f64>;
    use approx::assert_relative_eq;

    #[test]
    fn rasch_at_zero_is_even() {
        let p = category_probs(0.0, &P64::rasch(0.0).unwrap());
        assert_relative_eq!(p[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(p[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn gpcm_equal_kernels_is_uniform() {
        let item = P64::gpcm(1.0, vec![0.0, 0.0, 0.0]).unwrap();
        for p in category_probs(0.0, &item) {
            assert_relative_eq!(p, 0.25, epsilon = 1e-14);
        }
    }

    #[test]
    fn grm_symmetric_thresholds() {
        let item = P64::grm(1.0, vec![1.0, -1.0]).unwrap();
        let p = category_probs(0.0, &item);
        let lo = 1.0 / (1.0 + 1f64.exp());
        assert_relative_eq!(p[0], lo, epsilon = 1e-14);
        assert_relative_eq!(p[1], 1.0 - 2.0 * lo, epsilon = 1e-14);
        assert_relative_eq!(p[2], lo, epsilon = 1e-14);
        assert_relative_eq!(p[0], 0.26894, epsilon = 1e-5);
        assert_relative_eq!(p[1], 0.46212, epsilon = 1e-5);
    }

    #[test]
    fn two_pl_success_probability() {
        let p = category_probs(1.0, &P64::two_pl(1.0, 0.0).unwrap());
        assert_relative_eq!(p[1], 0.7310586, epsilon = 1e-7);
    }

    #[test]
    fn rasch_log_lik_and_grad() {
        let item = P64::rasch(0.0).unwrap();
        assert_relative_eq!(
            response_log_lik(1, 0.0, &item).unwrap(),
            -0.693_147_180_559_945_3,
            epsilon = 1e-15
        );
        let g = response_grad(1, 0.0, &item).unwrap();
        assert_eq!(g.slope, None);
        assert_relative_eq!(g.eta, 0.5);
        assert_relative_eq!(g.intercepts[0], 0.5);
    }

    #[test]
    fn two_pl_grad_scales_with_slope() {
        let g = response_grad(0, 0.0, &P64::two_pl(2.0, 0.0).unwrap()).unwrap();
        assert_relative_eq!(g.eta, -1.0);
    }

    #[test]
    fn two_pl_unit_slope_matches_rasch() {
        let a = response_log_lik(1, 0.7, &P64::two_pl(1.0, -0.3).unwrap()).unwrap();
        let b = response_log_lik(1, 0.7, &P64::rasch(-0.3).unwrap()).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn grm_matches_high_precision_value() {
        // 50-digit evaluation of ln(logistic(1.3*0.4+0.8) - logistic(1.3*0.4-0.5))
        let item = P64::grm(1.3, vec![0.8, -0.5]).unwrap();
        let v = response_log_lik(1, 0.4, &item).unwrap();
        assert_relative_eq!(v, -1.258_140_847_259_506_0, epsilon = 1e-13);
    }

    #[test]
    fn gpcm_grad_matches_finite_differences() {
        let d = [0.3, -0.4, 0.9];
        let (a, eta, m) = (1.4, -0.35, 2);
        let f = |eta: f64, a: f64, d: &[f64]| {
            response_log_lik(m, eta, &P64::gpcm(a, d.to_vec()).unwrap()).unwrap()
        };
        let g = response_grad(m, eta, &P64::gpcm(a, d.to_vec()).unwrap()).unwrap();
        let h = 1e-5;
        let rel = |x: f64, y: f64| (x - y).abs() / y.abs().max(1e-8);
        assert!(rel(g.eta, (f(eta + h, a, &d) - f(eta - h, a, &d)) / (2.0 * h)) < 1e-6);
        assert!(
            rel(
                g.slope.unwrap(),
                (f(eta, a + h, &d) - f(eta, a - h, &d)) / (2.0 * h)
            ) < 1e-6
        );
        for l in 0..3 {
            let mut up = d;
            let mut dn = d;
            up[l] += h;
            dn[l] -= h;
            let fd = (f(eta, a, &up) - f(eta, a, &dn)) / (2.0 * h);
            assert!(rel(g.intercepts[l], fd) < 1e-6, "intercept {l}");
        }
    }

    #[test]
    fn invalid_params_name_the_invariant() {
        assert!(matches!(
            P64::two_pl(0.0, 0.0),
            Err(Error::NonPositiveSlope(_))
        ));
        assert!(matches!(
            P64::grm(1.0, vec![-1.0, 1.0]),
            Err(Error::GrmOrdering { .. })
        ));
        assert!(matches!(
            P64::grm(1.0, vec![0.5, 0.5]),
            Err(Error::GrmOrdering { .. })
        ));
        assert!(matches!(
            P64::new(ModelKind::TwoPl, Some(1.0), vec![0.0, 1.0]),
            Err(Error::InterceptCount { .. })
        ));
        assert!(matches!(
            P64::new(ModelKind::Rasch, Some(2.0), vec![0.0]),
            Err(Error::RaschSlope(_))
        ));
    }

    #[test]
    fn out_of_range_category_is_rejected() {
        let item = P64::rasch(0.0).unwrap();
        assert!(matches!(
            response_log_lik(2, 0.0, &item),
            Err(Error::CategoryOutOfRange { .. })
        ));
        assert!(response_grad(5, 0.0, &item).is_err());
        assert!(ResponseMatrix::from_rows(&[vec![Some(2)]], vec![2]).is_err());
    }

    #[test]
    fn logistic_is_stable_at_extremes() {
        let item = P64::two_pl(1.0, 0.0).unwrap();
        for eta in [-700.0, 700.0] {
            let lp = response_log_lik(0, eta, &item).unwrap();
            let lq = response_log_lik(1, eta, &item).unwrap();
            assert!(lp.is_finite() && lq.is_finite());
        }
    }

    #[test]
    fn matrix_log_lik_cases() {
        let items = vec![P64::rasch(0.0).unwrap(); 2];
        let all_missing = ResponseMatrix::from_rows(&[vec![None, None]], vec![2, 2]).unwrap();
        assert_eq!(matrix_log_lik(&all_missing, &[0.3], &items).unwrap(), 0.0);

        let single = ResponseMatrix::from_rows(&[vec![Some(1)]], vec![2]).unwrap();
        let v = matrix_log_lik(&single, &[0.0], &items[..1]).unwrap();
        assert_relative_eq!(v, -0.6931472, epsilon = 1e-7);

        let items = vec![P64::rasch(0.4).unwrap(), P64::rasch(-1.1).unwrap()];
        let rows = vec![
            vec![Some(1), Some(0)],
            vec![None, Some(1)],
            vec![Some(0), Some(0)],
        ];
        let etas = [0.2, -0.5, 1.3];
        let m = ResponseMatrix::from_rows(&rows, vec![2, 2]).unwrap();
        let mut oracle = 0.0;
        for (i, row) in rows.iter().enumerate() {
            for (j, cell) in row.iter().enumerate() {
                if let Some(c) = cell {
                    let p = 1.0 / (1.0 + (-(etas[i] + items[j].intercepts()[0])).exp());
                    oracle += if *c == 1 { p.ln() } else { (1.0 - p).ln() };
                }
            }
        }
        assert_eq!(m.n_observed(), 5);
        assert_relative_eq!(
            matrix_log_lik(&m, &etas, &items).unwrap(),
            oracle,
            epsilon = 1e-13
        );
        assert!(matrix_log_lik(&m, &etas[..2], &items).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let item = ItemParams::<f32>::grm(1.2, vec![0.7, 0.0, -0.9]).unwrap();
        let total: f32 = category_probs(0.3f32, &item).iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
    }
}

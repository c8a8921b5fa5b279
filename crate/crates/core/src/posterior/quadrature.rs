//! Quadrature rules for integrating out a normal latent trait.

use std::f64::consts::PI;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// `n`-point rule, exact for polynomials of degree `2n - 1`. Roots are
    /// refined by Newton iteration on the orthonormal Hermite recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "a quadrature rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let pim4 = PI.powf(-0.25);
        let nf = n as f64;
        let mut z = 0.0;
        for i in 0..n.div_ceil(2) {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * nodes[0],
                3 => 1.91 * z - 0.91 * nodes[1],
                _ => 2.0 * z - nodes[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let (mut p1, mut p2) = (pim4, 0.0);
                for j in 1..=n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let step = p1 / pp;
                z -= step;
                if step.abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            weights[i] = 2.0 / (pp * pp);
            weights[n - 1 - i] = weights[i];
        }
        // Ascending order.
        nodes.reverse();
        weights.reverse();
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `ln E[exp(log_g(X))]` for `X ~ N(mean, sd^2)`, accumulated in log space.
    pub fn log_normal_expectation(
        &self,
        mean: f64,
        sd: f64,
        mut log_g: impl FnMut(f64) -> f64,
    ) -> f64 {
        let scale = std::f64::consts::SQRT_2 * sd;
        let mut terms = Vec::with_capacity(self.len());
        let mut max = f64::NEG_INFINITY;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            let t = w.ln() + log_g(mean + scale * x);
            max = max.max(t);
            terms.push(t);
        }
        if !max.is_finite() {
            return max;
        }
        let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
        max + sum.ln() - 0.5 * PI.ln()
    }
}

/// Mode-centred trapezoid rule for `ln ∫ exp(f)` over the real line.
///
/// For integrands analytic in a strip around the real axis the error falls
/// like `exp(-2 pi d / h)` in the spacing `h`, so the rule copes with the
/// step-like item factors that defeat Gauss-Hermite when the trait prior is
/// wide. The window runs out from the mode until `f` has dropped by
/// [`Trapezoid::TAIL_DROP`] on both sides; the spacing is the smaller of the
/// window over `nodes - 1` intervals and `MAX_SPACING_SPAN / (nodes - 1)`, so
/// doubling `nodes` halves it everywhere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Trapezoid {
    pub nodes: usize,
}

impl Trapezoid {
    pub const TAIL_DROP: f64 = 50.0;
    pub const MAX_SPACING_SPAN: f64 = 30.0;
    const MAX_INTERVALS: usize = 1 << 20;

    pub fn new(nodes: usize) -> Self {
        assert!(nodes >= 2, "a trapezoid rule needs at least two nodes");
        Self { nodes }
    }

    /// `ln E[exp(log_g(X))]` for `X ~ N(mean, sd^2)`. The integrand must be
    /// log-concave for the window search to be valid.
    pub fn log_normal_expectation(
        &self,
        mean: f64,
        sd: f64,
        mut log_g: impl FnMut(f64) -> f64,
    ) -> f64 {
        let mut f = |x: f64| {
            let r = (x - mean) / sd;
            -0.5 * r * r - sd.ln() - 0.5 * (2.0 * PI).ln() + log_g(x)
        };
        let Some((c, w, fc)) = find_mode(&mut f, mean, sd) else {
            return f64::NEG_INFINITY;
        };
        let mut reach = |dir: f64| {
            let mut r = 10.0 * w;
            for _ in 0..200 {
                if !(f(c + dir * r) > fc - Self::TAIL_DROP) {
                    break;
                }
                r *= 1.5;
            }
            r
        };
        let (lo, hi) = (c - reach(-1.0), c + reach(1.0));
        let base = (self.nodes - 1) as f64;
        let h_max = Self::MAX_SPACING_SPAN / base;
        let m = (((hi - lo) / h_max).ceil() as usize).clamp(self.nodes - 1, Self::MAX_INTERVALS);
        let h = (hi - lo) / m as f64;
        let mut sum = 0.0;
        for k in 0..=m {
            let v = (f(lo + k as f64 * h) - fc).exp();
            sum += if k == 0 || k == m { 0.5 * v } else { v };
        }
        fc + (h * sum).ln()
    }
}

/// Mode and curvature width of a log-concave `f`, by damped Newton steps on
/// finite differences. `None` when `f` is not finite at the start.
fn find_mode(f: &mut impl FnMut(f64) -> f64, start: f64, width: f64) -> Option<(f64, f64, f64)> {
    let (mut center, mut width) = (start, width);
    let mut fc = f(center);
    if !fc.is_finite() {
        return None;
    }
    for _ in 0..100 {
        let h = 1e-3 * width;
        let (fp, fm) = (f(center + h), f(center - h));
        let d1 = (fp - fm) / (2.0 * h);
        let d2 = (fp - 2.0 * fc + fm) / (h * h);
        if d2 < 0.0 && d2.is_finite() {
            width = (-1.0 / d2).sqrt();
        }
        let mut step = if d2 < 0.0 {
            -d1 / d2
        } else {
            d1.signum() * width
        };
        if !step.is_finite() {
            break;
        }
        step = step.clamp(-10.0 * width, 10.0 * width);
        let mut moved = false;
        for _ in 0..30 {
            let cand = center + step;
            let fn_ = f(cand);
            if fn_ >= fc {
                center = cand;
                fc = fn_;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved || step.abs() < 1e-8 * width {
            break;
        }
    }
    Some((center, width, fc))
}

//! Warmup adaptation: dual-averaging step size and windowed diagonal metric.

use rand::Rng;

use super::hmc::{leapfrog, Metric, Point};
use super::LogDensity;

#[derive(Clone, Debug)]
pub struct DualAveraging {
    target: f64,
    mu: f64,
    gamma: f64,
    t0: f64,
    kappa: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
    log_eps: f64,
}

impl DualAveraging {
    pub fn new(eps0: f64, target: f64) -> Self {
        Self {
            target,
            mu: (10.0 * eps0).ln(),
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
            counter: 0.0,
            s_bar: 0.0,
            x_bar: 0.0,
            log_eps: eps0.ln(),
        }
    }

    pub fn restart(&mut self, eps0: f64) {
        *self = Self::new(eps0, self.target);
    }

    pub fn step_size(&self) -> f64 {
        self.log_eps.exp()
    }

    pub fn final_step_size(&self) -> f64 {
        if self.counter == 0.0 {
            self.step_size()
        } else {
            self.x_bar.exp()
        }
    }

    pub fn update(&mut self, accept_stat: f64) {
        let accept = if accept_stat.is_nan() {
            0.0
        } else {
            accept_stat.min(1.0)
        };
        self.counter += 1.0;
        let w = 1.0 / (self.counter + self.t0);
        self.s_bar = (1.0 - w) * self.s_bar + w * (self.target - accept);
        let x = self.mu - self.s_bar * self.counter.sqrt() / self.gamma;
        let xw = self.counter.powf(-self.kappa);
        self.x_bar = (1.0 - xw) * self.x_bar + xw * x;
        self.log_eps = x;
    }
}

/// Three-phase warmup layout: a fast initial buffer, a sequence of doubling
/// slow windows that estimate the metric, and a fast terminal buffer.
///
/// With the default 2000 warmup iterations the slow phase spans iterations
/// 75..1950 in windows of 25, 50, 100, 200, 400 and 1100 draws, the last one
/// stretched to reach the terminal buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct WarmupSchedule {
    pub init_buffer: usize,
    pub term_buffer: usize,
    /// Iterations (0-based) after which the metric is updated.
    pub window_ends: Vec<usize>,
}

const INIT_BUFFER: usize = 75;
const TERM_BUFFER: usize = 50;
const BASE_WINDOW: usize = 25;

impl WarmupSchedule {
    pub fn new(warmup: usize) -> Self {
        if warmup < 20 {
            return Self {
                init_buffer: warmup,
                term_buffer: 0,
                window_ends: Vec::new(),
            };
        }
        let (init, term, base) = if INIT_BUFFER + TERM_BUFFER + BASE_WINDOW > warmup {
            let init = (0.15 * warmup as f64) as usize;
            let term = (0.1 * warmup as f64) as usize;
            (init, term, warmup - init - term)
        } else {
            (INIT_BUFFER, TERM_BUFFER, BASE_WINDOW)
        };
        let last = warmup - term;
        let mut ends = Vec::new();
        let (mut start, mut size) = (init, base);
        while start < last {
            let mut end = start + size;
            if end + 2 * size > last {
                end = last;
            }
            ends.push(end - 1);
            start = end;
            size *= 2;
        }
        Self {
            init_buffer: init,
            term_buffer: term,
            window_ends: ends,
        }
    }

    pub fn in_slow_phase(&self, it: usize) -> bool {
        match self.window_ends.last() {
            Some(&last) => it >= self.init_buffer && it <= last,
            None => false,
        }
    }

    pub fn is_window_end(&self, it: usize) -> bool {
        self.window_ends.binary_search(&it).is_ok()
    }
}

/// Running per-coordinate variance.
#[derive(Clone, Debug)]
pub struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    pub fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn add(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &xi) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let delta = xi - *m;
            *m += delta / n;
            *s += delta * (xi - *m);
        }
    }

    pub fn count(&self) -> usize {
        self.n
    }

    /// Variance shrunk towards `1e-3` with weight `5 / (n + 5)`.
    pub fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2
            .iter()
            .map(|s| {
                let var = if self.n > 1 { s / (n - 1.0) } else { 1.0 };
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }

    pub fn reset(&mut self) {
        *self = Self::new(self.mean.len());
    }
}

/// Doubles or halves `eps` until a single leapfrog step crosses an
/// acceptance probability of 0.8.
pub fn find_step_size<T, R>(target: &T, metric: &Metric, at: &Point, eps0: f64, rng: &mut R) -> f64
where
    T: LogDensity + ?Sized,
    R: Rng,
{
    let mut z = at.clone();
    metric.sample_momentum(rng, &mut z.p);
    let h0 = metric.hamiltonian(&z);
    let log_target = 0.8f64.ln();
    let delta = |eps: f64| {
        let mut trial = z.clone();
        leapfrog(target, metric, &mut trial, eps);
        let d = h0 - metric.hamiltonian(&trial);
        if d.is_nan() {
            f64::NEG_INFINITY
        } else {
            d
        }
    };
    let mut eps = eps0;
    let up = delta(eps) > log_target;
    for _ in 0..60 {
        let next = if up { eps * 2.0 } else { eps * 0.5 };
        let d = delta(next);
        if up && !(d > log_target) {
            break;
        }
        eps = next;
        if !up && d > log_target {
            break;
        }
        if !(1e-10..=1e7).contains(&eps) {
            break;
        }
    }
    eps
}

//! Leapfrog integration and the two trajectory kernels: multinomial
//! no-U-turn trees and fixed-length jittered trajectories.

use rand::Rng;
use rand_distr::StandardNormal;

use super::LogDensity;

/// Energy error (in nats) beyond which a trajectory is declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;

#[derive(Clone, Debug)]
pub struct Point {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub grad: Vec<f64>,
    pub logp: f64,
}

impl Point {
    pub fn new<T: LogDensity + ?Sized>(target: &T, q: Vec<f64>) -> Self {
        let mut grad = vec![0.0; q.len()];
        let logp = target.log_density_grad(&q, &mut grad);
        Self {
            p: vec![0.0; q.len()],
            q,
            grad,
            logp,
        }
    }
}

/// Diagonal Euclidean metric, stored as the inverse mass.
#[derive(Clone, Debug, PartialEq)]
pub struct Metric {
    pub inv_mass: Vec<f64>,
}

impl Metric {
    pub fn unit(dim: usize) -> Self {
        Self {
            inv_mass: vec![1.0; dim],
        }
    }

    pub fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p
            .iter()
            .zip(&self.inv_mass)
            .map(|(pi, m)| pi * pi * m)
            .sum::<f64>()
    }

    pub fn sample_momentum<R: Rng + ?Sized>(&self, rng: &mut R, p: &mut [f64]) {
        for (pi, m) in p.iter_mut().zip(&self.inv_mass) {
            let z: f64 = rng.sample(StandardNormal);
            *pi = z / m.sqrt();
        }
    }

    pub fn hamiltonian(&self, pt: &Point) -> f64 {
        -pt.logp + self.kinetic(&pt.p)
    }

    fn sharp_dot(&self, p: &[f64], rho: &[f64]) -> f64 {
        p.iter()
            .zip(&self.inv_mass)
            .zip(rho)
            .map(|((pi, m), r)| pi * m * r)
            .sum()
    }
}

/// One leapfrog step of size `eps` (negative integrates backwards).
pub fn leapfrog<T: LogDensity + ?Sized>(target: &T, metric: &Metric, pt: &mut Point, eps: f64) {
    let half = 0.5 * eps;
    for (p, g) in pt.p.iter_mut().zip(&pt.grad) {
        *p += half * g;
    }
    for ((q, p), m) in pt.q.iter_mut().zip(&pt.p).zip(&metric.inv_mass) {
        *q += eps * m * p;
    }
    pt.logp = target.log_density_grad(&pt.q, &mut pt.grad);
    for (p, g) in pt.p.iter_mut().zip(&pt.grad) {
        *p += half * g;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TransitionStats {
    pub accept_stat: f64,
    pub n_leapfrog: usize,
    pub depth: usize,
    pub divergent: bool,
    pub energy: f64,
}

struct Tree {
    left: Point,
    right: Point,
    proposal: Point,
    rho: Vec<f64>,
    log_w: f64,
    sum_accept: f64,
    n_leapfrog: usize,
    divergent: bool,
    turning: bool,
}

struct Nuts<'a, T: ?Sized, R> {
    target: &'a T,
    metric: &'a Metric,
    rng: &'a mut R,
    eps: f64,
    h0: f64,
}

impl<T: LogDensity + ?Sized, R: Rng> Nuts<'_, T, R> {
    fn no_u_turn(&self, a: &Point, b: &Point, rho: &[f64]) -> bool {
        self.metric.sharp_dot(&a.p, rho) > 0.0 && self.metric.sharp_dot(&b.p, rho) > 0.0
    }

    /// Checks the merged span and the two spans straddling the seam.
    fn merged_ok(
        &self,
        lt: (&Point, &Point, &[f64]),
        rt: (&Point, &Point, &[f64]),
        rho: &[f64],
    ) -> bool {
        let (ll, lr, lrho) = lt;
        let (rl, rr, rrho) = rt;
        if !self.no_u_turn(ll, rr, rho) {
            return false;
        }
        let ext: Vec<f64> = lrho.iter().zip(&rl.p).map(|(a, b)| a + b).collect();
        if !self.no_u_turn(ll, rl, &ext) {
            return false;
        }
        let ext: Vec<f64> = rrho.iter().zip(&lr.p).map(|(a, b)| a + b).collect();
        self.no_u_turn(lr, rr, &ext)
    }

    fn build(&mut self, start: &Point, depth: usize, forward: bool) -> Tree {
        if depth == 0 {
            let mut pt = start.clone();
            let step = if forward { self.eps } else { -self.eps };
            leapfrog(self.target, self.metric, &mut pt, step);
            let h = self.metric.hamiltonian(&pt);
            let divergent = !h.is_finite() || h - self.h0 > DIVERGENCE_THRESHOLD;
            let log_w = if h.is_finite() {
                self.h0 - h
            } else {
                f64::NEG_INFINITY
            };
            let accept = if h.is_finite() {
                log_w.exp().min(1.0)
            } else {
                0.0
            };
            return Tree {
                left: pt.clone(),
                right: pt.clone(),
                rho: pt.p.clone(),
                proposal: pt,
                log_w,
                sum_accept: accept,
                n_leapfrog: 1,
                divergent,
                turning: false,
            };
        }
        let first = self.build(start, depth - 1, forward);
        if first.divergent || first.turning {
            return first;
        }
        let edge = if forward { &first.right } else { &first.left };
        let second = self.build(&edge.clone(), depth - 1, forward);
        let n_leapfrog = first.n_leapfrog + second.n_leapfrog;
        let sum_accept = first.sum_accept + second.sum_accept;
        if second.divergent || second.turning {
            return Tree {
                n_leapfrog,
                sum_accept,
                ..second
            };
        }
        let log_w = log_add(first.log_w, second.log_w);
        let take_second = self.rng.random::<f64>() < (second.log_w - log_w).exp();
        let rho: Vec<f64> = first
            .rho
            .iter()
            .zip(&second.rho)
            .map(|(a, b)| a + b)
            .collect();
        let (lt, rt) = if forward {
            (first, second)
        } else {
            (second, first)
        };
        let ok = self.merged_ok(
            (&lt.left, &lt.right, &lt.rho),
            (&rt.left, &rt.right, &rt.rho),
            &rho,
        );
        let proposal = if take_second == forward {
            rt.proposal
        } else {
            lt.proposal
        };
        Tree {
            left: lt.left,
            right: rt.right,
            proposal,
            rho,
            log_w,
            sum_accept,
            n_leapfrog,
            divergent: false,
            turning: !ok,
        }
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// One multinomial NUTS transition with biased progressive sampling at the
/// top level.
pub fn nuts_transition<T, R>(
    target: &T,
    metric: &Metric,
    current: &Point,
    eps: f64,
    max_depth: usize,
    rng: &mut R,
) -> (Point, TransitionStats)
where
    T: LogDensity + ?Sized,
    R: Rng,
{
    let mut z0 = current.clone();
    metric.sample_momentum(rng, &mut z0.p);
    let h0 = metric.hamiltonian(&z0);
    let mut nuts = Nuts {
        target,
        metric,
        rng,
        eps,
        h0,
    };
    let mut left = z0.clone();
    let mut right = z0.clone();
    let mut rho = z0.p.clone();
    let mut log_w = 0.0;
    let mut sample = z0;
    let mut stats = TransitionStats::default();
    let mut sum_accept = 0.0;

    while stats.depth < max_depth {
        let forward = nuts.rng.random::<bool>();
        let edge = if forward { right.clone() } else { left.clone() };
        let sub = nuts.build(&edge, stats.depth, forward);
        stats.depth += 1;
        stats.n_leapfrog += sub.n_leapfrog;
        sum_accept += sub.sum_accept;
        if sub.divergent {
            stats.divergent = true;
            break;
        }
        if sub.turning {
            break;
        }
        if nuts.rng.random::<f64>().ln() < sub.log_w - log_w {
            sample = sub.proposal.clone();
        }
        log_w = log_add(log_w, sub.log_w);
        let merged: Vec<f64> = rho.iter().zip(&sub.rho).map(|(a, b)| a + b).collect();
        let ok = if forward {
            nuts.merged_ok(
                (&left, &right, &rho),
                (&sub.left, &sub.right, &sub.rho),
                &merged,
            )
        } else {
            nuts.merged_ok(
                (&sub.left, &sub.right, &sub.rho),
                (&left, &right, &rho),
                &merged,
            )
        };
        if forward {
            right = sub.right;
        } else {
            left = sub.left;
        }
        rho = merged;
        if !ok {
            break;
        }
    }
    stats.accept_stat = if stats.n_leapfrog > 0 {
        sum_accept / stats.n_leapfrog as f64
    } else {
        0.0
    };
    stats.energy = metric.hamiltonian(&sample);
    (sample, stats)
}

/// Fixed number of leapfrog steps with the step size jittered by +-10%,
/// followed by a Metropolis correction.
pub fn static_transition<T, R>(
    target: &T,
    metric: &Metric,
    current: &Point,
    eps: f64,
    steps: usize,
    rng: &mut R,
) -> (Point, TransitionStats)
where
    T: LogDensity + ?Sized,
    R: Rng,
{
    let mut z = current.clone();
    metric.sample_momentum(rng, &mut z.p);
    let h0 = metric.hamiltonian(&z);
    let step = eps * rng.random_range(0.9..1.1);
    let mut divergent = false;
    let mut n = 0;
    for _ in 0..steps.max(1) {
        leapfrog(target, metric, &mut z, step);
        n += 1;
        let h = metric.hamiltonian(&z);
        if !h.is_finite() || h - h0 > DIVERGENCE_THRESHOLD {
            divergent = true;
            break;
        }
    }
    let h1 = metric.hamiltonian(&z);
    let accept = if divergent || !h1.is_finite() {
        0.0
    } else {
        (h0 - h1).exp().min(1.0)
    };
    let stats = TransitionStats {
        accept_stat: accept,
        n_leapfrog: n,
        depth: 0,
        divergent,
        energy: h1,
    };
    if rng.random::<f64>() < accept {
        (z, stats)
    } else {
        let mut back = current.clone();
        back.p.fill(0.0);
        (
            back,
            TransitionStats {
                energy: h0,
                ..stats
            },
        )
    }
}

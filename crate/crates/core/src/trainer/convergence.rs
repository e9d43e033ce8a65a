//! Convergence probe on a convex stand-in for the filter objective.
//!
//! The adversary term is linear, `L_a(G) = c'G`, and the utility term a
//! separable quadratic, `L_u(G) = 1/2 sum_i w_i (G_i - m_i)^2`. Their sum has
//! the minimizer `G* = m - c / w`, so the loss gap of every iterate is known
//! exactly and can be checked against the subgradient bound
//! `min_k gap_k <= (r^2 + sum eta_k^2 delta_k^2) / (2 sum eta_k)`, with
//! `r = |G_1 - G*|` and `delta_k` the norm of the combined gradient.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexSurrogate {
    /// Gradient of the linear adversary term.
    pub c: DVector<f64>,
    /// Curvatures `w` of the quadratic utility term.
    pub curvature: DVector<f64>,
    /// Center `m` of the quadratic utility term.
    pub center: DVector<f64>,
}

impl ConvexSurrogate {
    pub fn new(c: DVector<f64>, curvature: DVector<f64>, center: DVector<f64>) -> Result<Self> {
        let n = c.len();
        if curvature.len() != n || center.len() != n {
            return Err(Error::Dimension("surrogate vectors differ in length".into()));
        }
        for i in 0..n {
            if !(curvature[i] >= 0.0) {
                return Err(Error::invalid("surrogate curvature must be nonnegative"));
            }
            if curvature[i] == 0.0 && c[i] != 0.0 {
                return Err(Error::invalid(
                    "a linear term on a flat coordinate leaves the surrogate unbounded below",
                ));
            }
        }
        Ok(Self { c, curvature, center })
    }

    /// `c`, `m` uniform on `(-1, 1)` and curvatures uniform on `[5, 9]`.
    pub fn random(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
        let curvature = DVector::from_fn(dim, |_, _| rng.random_range(5.0..=9.0));
        let center = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
        Self { c, curvature, center }
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn adversary_loss(&self, g: &DVector<f64>) -> f64 {
        self.c.dot(g)
    }

    pub fn utility_loss(&self, g: &DVector<f64>) -> f64 {
        0.5 * (0..self.dim())
            .map(|i| self.curvature[i] * (g[i] - self.center[i]).powi(2))
            .sum::<f64>()
    }

    pub fn objective(&self, g: &DVector<f64>) -> f64 {
        self.adversary_loss(g) + self.utility_loss(g)
    }

    pub fn adversary_grad(&self, _g: &DVector<f64>) -> DVector<f64> {
        self.c.clone()
    }

    pub fn utility_grad(&self, g: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| self.curvature[i] * (g[i] - self.center[i]))
    }

    /// Minimizer of the summed objective; flat coordinates keep the center.
    pub fn optimum(&self) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| {
            if self.curvature[i] > 0.0 {
                self.center[i] - self.c[i] / self.curvature[i]
            } else {
                self.center[i]
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbeRecord {
    /// 1-based iterate index.
    pub k: usize,
    pub eta: f64,
    /// `F(G_k) - F*`.
    pub gap: f64,
    /// `min_{j <= k} gap_j`.
    pub min_gap: f64,
    /// Right-hand side of the bound after `k` iterates.
    pub bound: f64,
    /// `|grad L_a(G_k) + grad L_u(G_k)|`.
    pub delta: f64,
}

/// Runs `k_max` combined updates from `g1` with step `eta(k)` and records the
/// gap and bound after each iterate. Both gradients are taken at `G_k`: the
/// adversary step produces `G^_{k+1}` and the utility step moves it on to
/// `G_{k+1}`.
pub fn convergence_probe(
    s: &ConvexSurrogate,
    g1: &DVector<f64>,
    k_max: usize,
    eta: impl Fn(usize) -> f64,
) -> Result<Vec<ProbeRecord>> {
    if g1.len() != s.dim() {
        return Err(Error::Dimension("start point does not match the surrogate".into()));
    }
    let opt = s.optimum();
    let f_star = s.objective(&opt);
    let r2 = (g1 - &opt).norm_squared();
    let mut g = g1.clone();
    let (mut sum_eta, mut sum_sq) = (0.0, 0.0);
    let mut min_gap = f64::INFINITY;
    let mut out = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let e = eta(k);
        if !(e > 0.0) {
            return Err(Error::invalid("step sizes must be positive"));
        }
        let ga = s.adversary_grad(&g);
        let gu = s.utility_grad(&g);
        let delta = (&ga + &gu).norm();
        let gap = s.objective(&g) - f_star;
        min_gap = min_gap.min(gap);
        sum_eta += e;
        sum_sq += e * e * delta * delta;
        out.push(ProbeRecord {
            k,
            eta: e,
            gap,
            min_gap,
            bound: (r2 + sum_sq) / (2.0 * sum_eta),
            delta,
        });
        let g_hat = &g - &ga * e;
        g = g_hat - &gu * e;
    }
    Ok(out)
}

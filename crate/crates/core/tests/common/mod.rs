//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use meterguard::battery::{BatterySpec, CanonicalQP};
use meterguard::data::PriceSchedule;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central difference of `f` at `x` along coordinate `i`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, step: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[i] += step;
    xm[i] -= step;
    (f(&xp) - f(&xm)) / (2.0 * step)
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Battery spec drawn inside its validity ranges.
pub fn random_spec(rng: &mut ChaCha8Rng) -> BatterySpec {
    let capacity = rng.random_range(2.0..10.0);
    let log_beta = |rng: &mut ChaCha8Rng| 10f64.powf(rng.random_range(-6.0..-2.0));
    BatterySpec {
        capacity,
        alpha: rng.random_range(0.2..0.8),
        beta1: log_beta(rng),
        beta2: log_beta(rng),
        beta3: log_beta(rng),
        eta_in: rng.random_range(0.85..=1.0),
        eta_out: rng.random_range(0.85..=1.0),
        c_in: rng.random_range(0.5..3.0),
        c_out: rng.random_range(0.5..3.0),
        b_init: rng.random_range(0.0..0.3) * capacity,
    }
}

/// Positive random prices.
pub fn random_prices(rng: &mut ChaCha8Rng, h: usize) -> PriceSchedule {
    PriceSchedule {
        prices: (0..h).map(|_| rng.random_range(0.1..0.5)).collect(),
        tiers: Vec::new(),
    }
}

/// Demand with a daily shape, noise and occasional negative (exporting)
/// intervals.
pub fn random_demand(rng: &mut ChaCha8Rng, h: usize, allow_negative: bool) -> Vec<f64> {
    (0..h)
        .map(|j| {
            let phase = (j as f64 / h as f64) * std::f64::consts::TAU;
            let base = 1.5 - 0.8 * phase.cos() + rng.random_range(-0.5..0.5);
            if allow_negative {
                base - rng.random_range(0.0..1.5) * phase.sin().max(0.0)
            } else {
                base.max(0.05)
            }
        })
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Euclidean projection onto `{A x = b, G x <= h}` by Dykstra's alternating
/// projections over simple pieces: coordinate boxes, the affine set, and
/// groups of halfspaces with pairwise disjoint supports.
pub struct PolytopeProjector {
    lo: DVector<f64>,
    hi: DVector<f64>,
    /// `A' (A A')^-1`, or `None` without equalities.
    a_pinv: Option<DMatrix<f64>>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    /// Each group: (row coefficients as (col, value) lists, rhs, |row|^2).
    groups: Vec<Vec<(Vec<(usize, f64)>, f64, f64)>>,
}

impl PolytopeProjector {
    pub fn new(qp: &CanonicalQP) -> Self {
        let n = qp.n();
        let mut lo = DVector::from_element(n, f64::NEG_INFINITY);
        let mut hi = DVector::from_element(n, f64::INFINITY);
        let mut general: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
        for i in 0..qp.g.nrows() {
            let nz: Vec<(usize, f64)> = (0..n).filter(|&c| qp.g[(i, c)] != 0.0).map(|c| (c, qp.g[(i, c)])).collect();
            if nz.len() == 1 {
                let (c, v) = nz[0];
                let bound = qp.h[i] / v;
                if v > 0.0 {
                    hi[c] = hi[c].min(bound);
                } else {
                    lo[c] = lo[c].max(bound);
                }
            } else if !nz.is_empty() {
                general.push((nz, qp.h[i]));
            }
        }
        let mut groups: Vec<Vec<(Vec<(usize, f64)>, f64, f64)>> = Vec::new();
        let mut used: Vec<Vec<bool>> = Vec::new();
        for (nz, rhs) in general {
            let norm2: f64 = nz.iter().map(|(_, v)| v * v).sum();
            let slot = used.iter().position(|u| nz.iter().all(|&(c, _)| !u[c]));
            let gi = slot.unwrap_or_else(|| {
                groups.push(Vec::new());
                used.push(vec![false; n]);
                groups.len() - 1
            });
            for &(c, _) in &nz {
                used[gi][c] = true;
            }
            groups[gi].push((nz, rhs, norm2));
        }
        let a_pinv = (qp.a.nrows() > 0).then(|| {
            let aat = &qp.a * qp.a.transpose();
            let inv = aat.try_inverse().expect("equality rows are independent");
            qp.a.transpose() * inv
        });
        Self {
            lo,
            hi,
            a_pinv,
            a: qp.a.clone(),
            b: qp.b.clone(),
            groups,
        }
    }

    fn project_piece(&self, piece: usize, z: &DVector<f64>) -> DVector<f64> {
        if piece == 0 {
            return DVector::from_fn(z.len(), |i, _| z[i].clamp(self.lo[i], self.hi[i]));
        }
        if piece == 1 {
            return match &self.a_pinv {
                Some(p) => z - p * (&self.a * z - &self.b),
                None => z.clone(),
            };
        }
        let mut out = z.clone();
        for (nz, rhs, norm2) in &self.groups[piece - 2] {
            let v: f64 = nz.iter().map(|&(c, a)| a * z[c]).sum();
            if v > *rhs {
                let s = (v - rhs) / norm2;
                for &(c, a) in nz {
                    out[c] -= s * a;
                }
            }
        }
        out
    }

    /// Projection of `z`; stops once a full sweep moves the iterate by less
    /// than `tol` (scaled by `1 + |z|`) and the iterate is feasible to the
    /// same tolerance, or after `max_sweeps`.
    pub fn project(&self, z: &DVector<f64>, tol: f64, max_sweeps: usize) -> DVector<f64> {
        let pieces = 2 + self.groups.len();
        let mut x = z.clone();
        let mut corr = vec![DVector::zeros(z.len()); pieces];
        let scale = 1.0 + z.amax();
        for _ in 0..max_sweeps {
            let start = x.clone();
            for (p, c) in corr.iter_mut().enumerate() {
                let y = &x + &*c;
                let nx = self.project_piece(p, &y);
                *c = y - &nx;
                x = nx;
            }
            if (&x - &start).amax() < tol * scale && self.infeasibility(&x) < tol * scale {
                break;
            }
        }
        x
    }

    fn infeasibility(&self, x: &DVector<f64>) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..x.len() {
            worst = worst.max(self.lo[i] - x[i]).max(x[i] - self.hi[i]);
        }
        if self.a.nrows() > 0 {
            worst = worst.max((&self.a * x - &self.b).amax());
        }
        for group in &self.groups {
            for (nz, rhs, _) in group {
                worst = worst.max(nz.iter().map(|&(c, a)| a * x[c]).sum::<f64>() - rhs);
            }
        }
        worst
    }

    /// Largest constraint violation of `x`.
    pub fn violation(&self, qp: &CanonicalQP, x: &DVector<f64>) -> f64 {
        let eq = if qp.a.nrows() > 0 { (&qp.a * x - &qp.b).amax() } else { 0.0 };
        let ineq = (&qp.g * x - &qp.h).iter().fold(0.0f64, |m, &v| m.max(v));
        eq.max(ineq)
    }
}

/// Minimizes `x'Qx + q'x` over the feasible polytope by projected gradient
/// with step `1/L` (capped at `max_step`), starting from the projection of
/// the origin. Returns the final iterate and its objective.
pub fn projected_gradient(qp: &CanonicalQP, max_step: f64, iters: usize) -> (DVector<f64>, f64) {
    let proj = PolytopeProjector::new(qp);
    let l = 2.0 * qp.quad.amax();
    let step = if l > 0.0 { (1.0 / l).min(max_step) } else { max_step };
    let mut x = proj.project(&DVector::zeros(qp.n()), 1e-13, 1_000_000);
    for _ in 0..iters {
        let grad = qp.quad.component_mul(&x) * 2.0 + &qp.lin;
        let nx = proj.project(&(&x - grad * step), 1e-13, 1_000_000);
        let moved = (&nx - &x).amax();
        x = nx;
        if moved < 1e-12 {
            break;
        }
    }
    let obj = qp.objective(&x);
    (x, obj)
}

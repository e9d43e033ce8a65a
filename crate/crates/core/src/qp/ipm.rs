//! Primal-dual interior-point method (Mehrotra predictor-corrector) with an
//! active-set polish of the converged point.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, LU};

use super::active_set;
use super::banded::{Band, BandPlan};
use super::kkt::{select_independent, solve_reduced};
use super::sparse::SparseRows;
use super::{KktResiduals, QpError, QpSolution, SolverConfig, Status};
use crate::battery::CanonicalQP;

/// Fraction of the distance to the boundary taken by each step.
const STEP_FRACTION: f64 = 0.99;
/// `|A'y + G'z| (1 + |b, h|) / -(b'y + h'z)` below which `(y, z)` is
/// accepted as a certificate of primal infeasibility.
const CERTIFICATE_TOL: f64 = 1e-7;
/// Residual reduction sought beyond the tolerance before polishing.
const REFINE_FACTOR: f64 = 1e-4;
const REFINE_STEPS: usize = 6;
/// The banded factorization is used when `bandwidth * BAND_RATIO < n`.
const BAND_RATIO: usize = 4;
/// Iterative-refinement passes applied to every Newton solve.
const NEWTON_REFINE: usize = 2;

/// The QP data the iteration works with: Hessian diagonal `2 Q` and
/// row-compressed constraints.
pub(crate) struct Problem<'a> {
    pub hess: DVector<f64>,
    pub q: &'a DVector<f64>,
    pub a: SparseRows,
    pub b: &'a DVector<f64>,
    pub g: SparseRows,
    pub h: &'a DVector<f64>,
    quad: &'a DVector<f64>,
}

impl<'a> Problem<'a> {
    pub fn new(qp: &'a CanonicalQP) -> Result<Self, QpError> {
        qp.check_dims()
            .map_err(|e| QpError::Dimension(e.to_string()))?;
        for (i, &v) in qp.quad.iter().enumerate() {
            if !v.is_finite() {
                return Err(QpError::NonFinite("Q"));
            }
            if v < 0.0 {
                return Err(QpError::NotPsd { index: i, value: v });
            }
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(qp.lin.as_slice()) {
            return Err(QpError::NonFinite("q"));
        }
        if !finite(qp.a.as_slice()) || !finite(qp.b.as_slice()) {
            return Err(QpError::NonFinite("A, b"));
        }
        if !finite(qp.g.as_slice()) || !finite(qp.h.as_slice()) {
            return Err(QpError::NonFinite("G, h"));
        }
        Ok(Self {
            hess: &qp.quad * 2.0,
            q: &qp.lin,
            a: SparseRows::from_dense(&qp.a),
            b: &qp.b,
            g: SparseRows::from_dense(&qp.g),
            h: &qp.h,
            quad: &qp.quad,
        })
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        self.quad
            .iter()
            .zip(x.iter())
            .map(|(q, v)| q * v * v)
            .sum::<f64>()
            + self.q.dot(x)
    }

    /// `2Qx + q + A'y + G'z`.
    pub fn dual_residual(&self, x: &DVector<f64>, y: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
        self.hess.component_mul(x) + self.q + self.a.tmul(y) + self.g.tmul(z)
    }

    /// Scaled residuals. With `s` given, the primal inequality residual is
    /// `Gx + s - h` and complementarity uses `s`; otherwise both use the true
    /// slack `h - Gx`.
    pub fn residuals(
        &self,
        x: &DVector<f64>,
        y: &DVector<f64>,
        z: &DVector<f64>,
        s: Option<&DVector<f64>>,
    ) -> KktResiduals {
        let obj = self.objective(x);
        let gx = self.g.mul(x);
        let primal_eq = if self.b.is_empty() {
            0.0
        } else {
            (self.a.mul(x) - self.b).amax() / (1.0 + self.b.amax())
        };
        let hmax = if self.h.is_empty() { 0.0 } else { self.h.amax() };
        let (primal_ineq, complementarity) = match s {
            Some(s) => {
                let ri = (&gx + s - self.h).amax();
                let comp = s.component_mul(z).amax();
                (ri, comp)
            }
            None => {
                let slack = self.h - &gx;
                let viol = slack.iter().fold(0.0f64, |m, &v| m.max(-v));
                let comp = slack.component_mul(z).amax();
                (viol, comp)
            }
        };
        let m = self.h.len();
        KktResiduals {
            primal_eq,
            primal_ineq: if m == 0 { 0.0 } else { primal_ineq / (1.0 + hmax) },
            dual: self.dual_residual(x, y, z).amax() / (1.0 + self.q.amax()),
            complementarity: if m == 0 { 0.0 } else { complementarity / (1.0 + obj.abs()) },
        }
    }
}

/// Cholesky factor of `K = 2Q + G' W G`, banded when the sparsity allows.
enum KFactor<'p> {
    Dense(Cholesky<f64, Dyn>),
    Band { plan: &'p BandPlan, band: Band },
}

impl KFactor<'_> {
    fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        match self {
            KFactor::Dense(c) => c.solve(b),
            KFactor::Band { plan, band } => {
                let mut v = plan.permute(b);
                band.solve_in_place(&mut v);
                plan.unpermute(&v)
            }
        }
    }
}

/// Diagonal shifts (relative to the largest diagonal entry) tried when `K`
/// is numerically semidefinite.
const K_SHIFTS: [f64; 3] = [0.0, 1e-13, 1e-10];

fn dense_k(pr: &Problem, w: &DVector<f64>) -> DMatrix<f64> {
    let mut k = DMatrix::from_diagonal(&pr.hess);
    pr.g.add_weighted_gram(w, &mut k);
    k
}

fn factor_k<'p>(pr: &Problem, plan: Option<&'p BandPlan>, w: &DVector<f64>) -> Option<KFactor<'p>> {
    match plan {
        Some(plan) => {
            let band = plan.assemble(&pr.hess, &pr.g, w);
            let scale = band.max_diag().max(1.0);
            K_SHIFTS.iter().find_map(|&shift| {
                let mut b = band.clone();
                if shift > 0.0 {
                    b.shift_diag(shift * scale);
                }
                b.cholesky().map(|band| KFactor::Band { plan, band })
            })
        }
        None => {
            let k = dense_k(pr, w);
            let scale = k.diagonal().amax().max(1.0);
            K_SHIFTS.iter().find_map(|&shift| {
                let mut kk = k.clone();
                if shift > 0.0 {
                    for i in 0..kk.nrows() {
                        kk[(i, i)] += shift * scale;
                    }
                }
                Cholesky::new(kk).map(KFactor::Dense)
            })
        }
    }
}

/// Factored Newton system `[[K, A'], [A, 0]]`.
enum Newton<'p> {
    Schur {
        k: KFactor<'p>,
        /// `K^-1 A'`
        kinv_at: DMatrix<f64>,
        s: Option<Cholesky<f64, Dyn>>,
    },
    Full {
        lu: LU<f64, Dyn, Dyn>,
        n: usize,
    },
}

impl<'p> Newton<'p> {
    fn factor(pr: &Problem, plan: Option<&'p BandPlan>, w: &DVector<f64>) -> Option<Self> {
        let n = pr.n();
        let p = pr.a.nrows();
        if let Some(k) = factor_k(pr, plan, w) {
            if p == 0 {
                return Some(Newton::Schur {
                    k,
                    kinv_at: DMatrix::zeros(n, 0),
                    s: None,
                });
            }
            let mut kinv_at = DMatrix::zeros(n, p);
            for (i, row) in pr.a.rows.iter().enumerate() {
                let mut e = DVector::zeros(n);
                for &(j, v) in row {
                    e[j] = v;
                }
                kinv_at.set_column(i, &k.solve(&e));
            }
            let mut schur = DMatrix::zeros(p, p);
            for (i, row) in pr.a.rows.iter().enumerate() {
                for c in 0..p {
                    schur[(i, c)] = row.iter().map(|&(j, v)| v * kinv_at[(j, c)]).sum();
                }
            }
            if let Some(sc) = Cholesky::new(schur) {
                return Some(Newton::Schur {
                    k,
                    kinv_at,
                    s: Some(sc),
                });
            }
        }
        let k = dense_k(pr, w);
        let mut full = DMatrix::zeros(n + p, n + p);
        full.view_mut((0, 0), (n, n)).copy_from(&k);
        for (i, row) in pr.a.rows.iter().enumerate() {
            for &(j, v) in row {
                full[(n + i, j)] = v;
                full[(j, n + i)] = v;
            }
        }
        let lu = full.lu();
        lu.is_invertible().then_some(Newton::Full { lu, n })
    }

    /// Solves `K dx + A' dy = r1`, `A dx = r2`.
    fn solve(&self, a: &SparseRows, r1: &DVector<f64>, r2: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
        match self {
            Newton::Schur { k, kinv_at, s } => {
                let u = k.solve(r1);
                match s {
                    None => Some((u, DVector::zeros(0))),
                    Some(s) => {
                        let dy = s.solve(&(a.mul(&u) - r2));
                        let dx = u - kinv_at * &dy;
                        Some((dx, dy))
                    }
                }
            }
            Newton::Full { lu, n } => {
                let mut rhs = DVector::zeros(n + r2.len());
                rhs.rows_mut(0, *n).copy_from(r1);
                rhs.rows_mut(*n, r2.len()).copy_from(r2);
                let sol = lu.solve(&rhs)?;
                Some((sol.rows(0, *n).into_owned(), sol.rows(*n, r2.len()).into_owned()))
            }
        }
    }
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, &d)| d < 0.0)
        .map(|(&x, &d)| -x / d)
        .fold(1.0, f64::min)
}

/// Solves `min x'Qx + q'x s.t. Ax = b, Gx <= h`.
///
/// Returns `Ok` with a non-`Optimal` status when the iteration limit is hit
/// or a certificate of infeasibility is found; errors are reserved for
/// malformed input.
pub fn solve(qp: &CanonicalQP, cfg: &SolverConfig) -> Result<QpSolution, QpError> {
    cfg.validate()?;
    let pr = Problem::new(qp)?;
    let m = pr.g.nrows();

    if m == 0 {
        return Ok(solve_equality_only(&pr, cfg));
    }

    // Initial point from the regularized KKT system, shifted into the
    // interior.
    let plan = BandPlan::new(pr.n(), &pr.g);
    let plan = (plan.bw * BAND_RATIO < pr.n()).then_some(&plan);
    let Some(newton0) = Newton::factor(&pr, plan, &DVector::from_element(m, 1.0)) else {
        return Ok(failure(&pr, Status::MaxIter, 0, "initial KKT system is singular"));
    };
    let Some((mut x, mut y)) = newton0.solve(&pr.a, &(pr.g.tmul(pr.h) - pr.q), pr.b) else {
        return Ok(failure(&pr, Status::MaxIter, 0, "initial KKT system is singular"));
    };
    let r0 = pr.h - pr.g.mul(&x);
    let mut s = r0.clone();
    let mut z = -r0;
    let shift_s = -s.min();
    if shift_s >= 0.0 {
        s.add_scalar_mut(1.0 + shift_s);
    }
    let shift_z = -z.min();
    if shift_z >= 0.0 {
        z.add_scalar_mut(1.0 + shift_z);
    }

    let mut status = Status::MaxIter;
    let mut note = None;
    let mut iterations = 0;
    // Once the stopping test passes, a few extra steps tighten the point so
    // the active set read off it is unambiguous; the last point passing the
    // test is kept in case those steps stall.
    let mut accepted = None;
    let mut refinements = 0;
    let mut best = f64::INFINITY;
    for it in 0..=cfg.max_iter {
        let rr = pr.residuals(&x, &y, &z, Some(&s));
        let res = rr.max();
        if res <= cfg.tol && res < best {
            status = Status::Optimal;
            accepted = Some((x.clone(), y.clone(), z.clone(), s.clone(), iterations));
            let stalled = res > 0.5 * best;
            best = res;
            if res <= cfg.tol * REFINE_FACTOR || refinements == REFINE_STEPS || stalled {
                break;
            }
            refinements += 1;
        } else if status == Status::Optimal {
            break;
        }
        if status != Status::Optimal {
            if let Some(msg) = infeasibility_certificate(&pr, &y, &z) {
                status = Status::Infeasible;
                note = Some(msg);
                break;
            }
        }
        if it == cfg.max_iter {
            if status != Status::Optimal {
                note = Some(format!(
                    "iteration limit {} reached with scaled residual {:e}",
                    cfg.max_iter,
                    res
                ));
            }
            break;
        }
        iterations = it + 1;

        let rd = pr.dual_residual(&x, &y, &z);
        let rp = pr.a.mul(&x) - pr.b;
        let ri = pr.g.mul(&x) + &s - pr.h;
        let w = z.component_div(&s);
        let Some(newton) = Newton::factor(&pr, plan, &w) else {
            note = Some(format!("Newton system singular at iteration {iterations}"));
            break;
        };

        // Newton direction for right-hand sides (rd, rp, ri, rc):
        //   2Q dx + A'dy + G'dz = -rd,  A dx = -rp,  G dx + ds = -ri,
        //   z.ds + s.dz = rc.
        let raw = |rd: &DVector<f64>, rp: &DVector<f64>, ri: &DVector<f64>, rc: &DVector<f64>| {
            let t = (rc + z.component_mul(ri)).component_div(&s);
            let r1 = -rd - pr.g.tmul(&t);
            let r2 = -rp;
            let (dx, dy) = newton.solve(&pr.a, &r1, &r2)?;
            let gdx = pr.g.mul(&dx);
            let dz = t + w.component_mul(&gdx);
            let ds = -ri - gdx;
            Some((dx, dy, dz, ds))
        };
        // The condensed system loses accuracy as z/s spreads over many
        // orders of magnitude; refinement against the unreduced equations
        // recovers it.
        let direction = |rc: &DVector<f64>| {
            let (mut dx, mut dy, mut dz, mut ds) = raw(&rd, &rp, &ri, rc)?;
            for _ in 0..NEWTON_REFINE {
                let e1 = -&rd - (pr.hess.component_mul(&dx) + pr.a.tmul(&dy) + pr.g.tmul(&dz));
                let e2 = -&rp - pr.a.mul(&dx);
                let e3 = -&ri - (pr.g.mul(&dx) + &ds);
                let e4 = rc - (z.component_mul(&ds) + s.component_mul(&dz));
                let (cx, cy, cz, cs) = raw(&-e1, &-e2, &-e3, &e4)?;
                dx += cx;
                dy += cy;
                dz += cz;
                ds += cs;
            }
            Some((dx, dy, dz, ds))
        };

        let mu = s.dot(&z) / m as f64;
        let rc_aff = -s.component_mul(&z);
        let Some((_, _, dz_a, ds_a)) = direction(&rc_aff) else {
            note = Some(format!("Newton solve failed at iteration {iterations}"));
            break;
        };
        let alpha_aff = max_step(&s, &ds_a).min(max_step(&z, &dz_a));
        let mu_aff = (&s + &ds_a * alpha_aff).dot(&(&z + &dz_a * alpha_aff)) / m as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
        let rc = rc_aff - ds_a.component_mul(&dz_a) + DVector::from_element(m, sigma * mu);
        let Some((dx, dy, dz, ds)) = direction(&rc) else {
            note = Some(format!("Newton solve failed at iteration {iterations}"));
            break;
        };
        let alpha = (STEP_FRACTION * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0);
        x += &dx * alpha;
        y += &dy * alpha;
        z += &dz * alpha;
        s += &ds * alpha;
        if x.iter().chain(y.iter()).chain(z.iter()).chain(s.iter()).any(|v| !v.is_finite()) {
            note = Some(format!("iterate became non-finite at iteration {iterations}"));
            break;
        }
    }

    if status == Status::Optimal {
        if let Some((xa, ya, za, sa, it)) = accepted {
            (x, y, z, s, iterations) = (xa, ya, za, sa, it);
        }
        note = None;
    }
    let mut polished = false;
    if status == Status::Optimal {
        let fin = active_set::finish(&pr, &x, &z, &s, cfg);
        if let Some((xp, yp, zp)) = fin {
            x = xp;
            y = yp;
            z = zp;
            polished = true;
        }
    }
    // An unpolished point is reported against its own slack variables, the
    // quantities the stopping test was applied to.
    let residuals = if polished {
        pr.residuals(&x, &y, &z, None)
    } else {
        pr.residuals(&x, &y, &z, Some(&s))
    };
    Ok(QpSolution {
        objective: pr.objective(&x),
        x,
        lambda: z,
        nu: y,
        status,
        kkt_residual: residuals.max(),
        residuals,
        iterations,
        polished,
        note,
    })
}

fn failure(pr: &Problem, status: Status, iterations: usize, note: &str) -> QpSolution {
    let x = DVector::zeros(pr.n());
    let y = DVector::zeros(pr.a.nrows());
    let z = DVector::zeros(pr.g.nrows());
    let residuals = pr.residuals(&x, &y, &z, None);
    QpSolution {
        objective: 0.0,
        x,
        lambda: z,
        nu: y,
        status,
        kkt_residual: residuals.max(),
        residuals,
        iterations,
        polished: false,
        note: Some(note.to_string()),
    }
}

fn solve_equality_only(pr: &Problem, cfg: &SolverConfig) -> QpSolution {
    let all: Vec<&[(usize, f64)]> = pr.a.rows.iter().map(|r| r.as_slice()).collect();
    let Some((kept, _)) = select_independent(pr.n(), &all, 0) else {
        return failure(pr, Status::MaxIter, 0, "equality rows could not be reduced");
    };
    let rows: Vec<_> = kept.iter().map(|&i| all[i]).collect();
    let rhs: Vec<f64> = kept.iter().map(|&i| pr.b[i]).collect();
    let Some((x, w)) = solve_reduced(&pr.hess, &rows, &(-pr.q), &rhs) else {
        return failure(pr, Status::MaxIter, 0, "equality-constrained KKT system is singular");
    };
    let mut y = DVector::zeros(pr.a.nrows());
    for (k, &i) in kept.iter().enumerate() {
        y[i] = w[k];
    }
    let z = DVector::zeros(0);
    let residuals = pr.residuals(&x, &y, &z, None);
    let (status, note) = if residuals.primal_eq > cfg.tol {
        (Status::Infeasible, Some("inconsistent equality constraints".to_string()))
    } else if residuals.max() <= cfg.tol {
        (Status::Optimal, None)
    } else {
        (Status::MaxIter, Some(format!("scaled residual {:e}", residuals.max())))
    };
    QpSolution {
        objective: pr.objective(&x),
        x,
        lambda: z,
        nu: y,
        status,
        kkt_residual: residuals.max(),
        residuals,
        iterations: 0,
        polished: true,
        note,
    }
}

/// Farkas-type test: `z >= 0` with `A'y + G'z ~ 0` and `b'y + h'z < 0` proves
/// `{Ax = b, Gx <= h}` empty. With a nonzero residual `r = A'y + G'z` the
/// pair only excludes points with `|x| < tau / |r|`, so the ratio is scaled
/// by the size of the data before comparing.
fn infeasibility_certificate(pr: &Problem, y: &DVector<f64>, z: &DVector<f64>) -> Option<String> {
    let tau = -(pr.b.dot(y) + pr.h.dot(z));
    if !(tau > 0.0) {
        return None;
    }
    let bmax = if pr.b.is_empty() { 0.0 } else { pr.b.amax() };
    let data_scale = 1.0 + bmax.max(pr.h.amax());
    let r = (pr.a.tmul(y) + pr.g.tmul(z)).amax() * data_scale / tau;
    (r <= CERTIFICATE_TOL).then(|| {
        format!("primal infeasible: |A'y + G'z| (1 + |b, h|) / -(b'y + h'z) = {r:e}")
    })
}

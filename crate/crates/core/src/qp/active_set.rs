//! Primal active-set iteration that turns an interior-point solution into an
//! exact vertex-face solution.
//!
//! Battery problems have tiny quadratic weights next to prices, so many
//! multipliers sit near the interior-point tolerance and the active set
//! cannot be read off reliably. A few exact working-set steps fix that.

use nalgebra::DVector;

use super::ipm::Problem;
use super::kkt::{select_independent, solve_reduced, Row};
use super::SolverConfig;

/// Working-set iterations allowed beyond the number of inequality rows.
const EXTRA_ITERS: usize = 50;
/// Step length below which the current point counts as the working-set
/// minimizer.
const STEP_TOL: f64 = 1e-12;

struct WorkingSolve {
    x: DVector<f64>,
    y: DVector<f64>,
    /// Multipliers of the working rows, in working-set order.
    zw: DVector<f64>,
}

fn solve_working(pr: &Problem, working: &[usize]) -> Option<WorkingSolve> {
    let me = pr.a.nrows();
    let mut rows: Vec<&Row> = pr.a.rows.iter().map(|r| r.as_slice()).collect();
    let mut rhs: Vec<f64> = pr.b.iter().copied().collect();
    for &i in working {
        rows.push(&pr.g.rows[i]);
        rhs.push(pr.h[i]);
    }
    let (x, w) = solve_reduced(&pr.hess, &rows, &(-pr.q), &rhs)?;
    Some(WorkingSolve {
        x,
        y: w.rows(0, me).into_owned(),
        zw: w.rows(me, working.len()).into_owned(),
    })
}

/// Starts from the interior point `x` with rows `z > s` as the working set.
/// Returns `(x, y, z)` satisfying the stopping test on the true slack, or
/// `None` if the iteration fails or cycles.
pub(crate) fn finish(
    pr: &Problem,
    x0: &DVector<f64>,
    z0: &DVector<f64>,
    s0: &DVector<f64>,
    cfg: &SolverConfig,
) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let m = pr.g.nrows();
    let me = pr.a.nrows();
    let n = pr.n();

    // Initial working set: confidently active rows first, then filtered
    // against the equalities and each other for independence.
    let mut guess: Vec<usize> = (0..m).filter(|&i| z0[i] > s0[i]).collect();
    guess.sort_by(|&a, &b| (z0[b] / s0[b]).total_cmp(&(z0[a] / s0[a])));
    let mut cand: Vec<&Row> = pr.a.rows.iter().map(|r| r.as_slice()).collect();
    cand.extend(guess.iter().map(|&i| pr.g.rows[i].as_slice()));
    let (kept, _) = select_independent(n, &cand, me)?;
    let mut working: Vec<usize> = kept.iter().filter(|&&k| k >= me).map(|&k| guess[k - me]).collect();
    let mut in_set = vec![false; m];
    for &i in &working {
        in_set[i] = true;
    }

    // Project the interior point onto the working faces so the working rows
    // hold exactly; later steps then keep them exact.
    let mut x = {
        let mut rows: Vec<&Row> = pr.a.rows.iter().map(|r| r.as_slice()).collect();
        let mut rhs: Vec<f64> = pr.b.iter().copied().collect();
        for &i in &working {
            rows.push(&pr.g.rows[i]);
            rhs.push(pr.h[i]);
        }
        solve_reduced(&DVector::from_element(n, 1.0), &rows, x0, &rhs)?.0
    };
    let hscale = 1.0 + pr.h.amax();
    for _ in 0..m + EXTRA_ITERS {
        let ws = solve_working(pr, &working)?;
        let p = &ws.x - &x;
        if p.amax() <= STEP_TOL * (1.0 + x.amax()) {
            x = ws.x;
            let zscale = 1.0 + ws.zw.amax();
            let (k_min, z_min) = ws
                .zw
                .iter()
                .enumerate()
                .fold((usize::MAX, 0.0), |acc, (k, &v)| if v < acc.1 { (k, v) } else { acc });
            if z_min >= -cfg.tol * zscale {
                let mut z = DVector::zeros(m);
                for (k, &i) in working.iter().enumerate() {
                    z[i] = ws.zw[k].max(0.0);
                }
                let res = pr.residuals(&x, &ws.y, &z, None);
                return (res.max() <= cfg.tol).then_some((x, ws.y, z));
            }
            let i = working.remove(k_min);
            in_set[i] = false;
            continue;
        }
        let gx = pr.g.mul(&x);
        let gp = pr.g.mul(&p);
        let mut alpha = 1.0;
        let mut block = None;
        for i in 0..m {
            if in_set[i] || gp[i] <= 1e-14 * hscale {
                continue;
            }
            let a = ((pr.h[i] - gx[i]) / gp[i]).max(0.0);
            if a < alpha {
                alpha = a;
                block = Some(i);
            }
        }
        x.axpy(alpha, &p, 1.0);
        if let Some(i) = block {
            working.push(i);
            in_set[i] = true;
        }
    }
    None
}

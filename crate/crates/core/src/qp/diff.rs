//! Reverse-mode sensitivity of a QP solution to the demand entries of `h`.

use nalgebra::DVector;

use super::ipm::Problem;
use super::kkt::{select_independent, solve_reduced, Row};
use super::{QpError, QpSolution, SolverConfig, Status};
use crate::battery::CanonicalQP;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintClass {
    /// Positive multiplier, zero slack.
    Active,
    /// Positive slack, zero multiplier.
    Inactive,
    /// Neither: both slack and multiplier are within the margin, or both
    /// exceed it.
    Weak,
}

/// Classifies every inequality row of `qp` at `sol` using `margin` as the
/// threshold for "zero".
pub fn classify_constraints(qp: &CanonicalQP, sol: &QpSolution, margin: f64) -> Vec<ConstraintClass> {
    let gx = &qp.g * &sol.x;
    (0..qp.h.len())
        .map(|i| {
            let slack = qp.h[i] - gx[i];
            let lam = sol.lambda[i];
            if lam > margin && slack <= margin {
                ConstraintClass::Active
            } else if slack > margin && lam <= margin {
                ConstraintClass::Inactive
            } else {
                ConstraintClass::Weak
            }
        })
        .collect()
}

/// Returns `(dx*/dd)' c` for the demand vector `d` encoded in `qp.h`.
///
/// The active set is read off the solution; the equality-constrained KKT
/// system on that set is differentiated implicitly. A weakly active row is
/// tolerated only when it lies in the span of the equalities and strongly
/// active rows, since then it cannot change the local solution map.
pub fn vjp_demand(
    qp: &CanonicalQP,
    sol: &QpSolution,
    cotangent: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<DVector<f64>, QpError> {
    if sol.status != Status::Optimal {
        return Err(QpError::NotOptimal(sol.status));
    }
    let pr = Problem::new(qp)?;
    let n = pr.n();
    if cotangent.len() != n || sol.x.len() != n || sol.lambda.len() != qp.h.len() {
        return Err(QpError::Dimension(format!(
            "cotangent {}, solution {}, multipliers {} for a QP with {n} variables and {} inequalities",
            cotangent.len(),
            sol.x.len(),
            sol.lambda.len(),
            qp.h.len()
        )));
    }
    let classes = classify_constraints(qp, sol, cfg.degenerate_margin);

    let me = pr.a.nrows();
    let active: Vec<usize> = (0..classes.len())
        .filter(|&i| classes[i] == ConstraintClass::Active)
        .collect();
    let mut cand: Vec<&Row> = pr.a.rows.iter().map(|r| r.as_slice()).collect();
    cand.extend(active.iter().map(|&i| pr.g.rows[i].as_slice()));
    let (kept, span) = select_independent(pr.n(), &cand, me).ok_or(QpError::SingularKkt)?;
    for (i, _) in classes.iter().enumerate().filter(|(_, c)| **c == ConstraintClass::Weak) {
        if !span.contains(&pr.g.rows[i]) {
            return Err(QpError::DegenerateActiveSet {
                index: i,
                slack: qp.h[i] - pr.g.row_dot(i, &sol.x),
                multiplier: sol.lambda[i],
            });
        }
    }
    let rows: Vec<&Row> = kept.iter().map(|&k| cand[k]).collect();
    let kept_ineq: Vec<Option<usize>> = kept
        .iter()
        .map(|&k| (k >= me).then(|| active[k - me]))
        .collect();

    let zeros = vec![0.0; rows.len()];
    let (_, w) = solve_reduced(&pr.hess, &rows, cotangent, &zeros).ok_or(QpError::SingularKkt)?;

    let mut row_of = vec![None; qp.h.len()];
    for r in &qp.demand_rows {
        row_of[r.row] = Some((r.interval, r.coef));
    }
    let mut out = DVector::zeros(qp.horizon);
    for (k, slot) in kept_ineq.iter().enumerate() {
        if let Some(i) = *slot {
            if let Some((j, coef)) = row_of[i] {
                out[j] += w[k] * coef;
            }
        }
    }
    Ok(out)
}

//! Equality-constrained KKT solves shared by the active-set finish and the
//! differentiation pass.
//!
//! Constraint rows are sparse. Rows with a single nonzero ("bound rows") fix
//! one variable each and are eliminated before any factorization, which
//! keeps the dense part small for battery problems where most active rows
//! are bounds.

use nalgebra::{DMatrix, DVector};

use super::banded::{band_lu_solve, rcm};

pub(crate) type Row = [(usize, f64)];

/// Relative threshold below which a row counts as a combination of rows
/// already selected.
pub(crate) const DEPENDENCE_TOL: f64 = 1e-9;

fn single_var(row: &Row) -> Option<(usize, f64)> {
    match row {
        [(j, c)] if *c != 0.0 => Some((*j, *c)),
        _ => None,
    }
}

/// Span of a linearly independent set of rows: the coordinate axes of bound
/// variables plus an orthonormal basis of the other rows restricted to the
/// remaining coordinates.
#[derive(Debug)]
pub(crate) struct RowSpan {
    n: usize,
    bound: Vec<bool>,
    q: Vec<DVector<f64>>,
}

impl RowSpan {
    fn restricted(&self, row: &Row) -> DVector<f64> {
        let mut v = DVector::zeros(self.n);
        for &(j, c) in row {
            if !self.bound[j] {
                v[j] += c;
            }
        }
        v
    }

    fn residual(&self, mut r: DVector<f64>) -> DVector<f64> {
        for _ in 0..2 {
            for q in &self.q {
                let c = q.dot(&r);
                r.axpy(-c, q, 1.0);
            }
        }
        r
    }

    fn row_norm(row: &Row) -> f64 {
        row.iter().map(|(_, c)| c * c).sum::<f64>().sqrt()
    }

    fn add_general(&mut self, row: &Row) -> bool {
        let norm = Self::row_norm(row);
        let r = self.residual(self.restricted(row));
        let rn = r.norm();
        if norm == 0.0 || rn <= DEPENDENCE_TOL * norm {
            return false;
        }
        self.q.push(r / rn);
        true
    }

    /// Whether `row` is (numerically) a combination of the selected rows.
    pub fn contains(&self, row: &Row) -> bool {
        let norm = Self::row_norm(row);
        norm == 0.0 || self.residual(self.restricted(row)).norm() <= 1e3 * DEPENDENCE_TOL * norm
    }
}

/// Indices of a maximal independent subset of `rows` that contains all of
/// `rows[..required]`.
///
/// Bound rows are taken first (one per variable), then the other rows in
/// order. When a required row turns out to depend on optional bound rows,
/// the last such bound row is dropped and the selection redone. Returns
/// `None` if the required rows are themselves dependent. The returned
/// indices are sorted.
pub(crate) fn select_independent(n: usize, rows: &[&Row], required: usize) -> Option<(Vec<usize>, RowSpan)> {
    let mut excluded = vec![false; rows.len()];
    'outer: loop {
        let mut span = RowSpan {
            n,
            bound: vec![false; n],
            q: Vec::new(),
        };
        let mut bound_row = vec![usize::MAX; n];
        let mut kept = Vec::with_capacity(rows.len());
        for (k, row) in rows.iter().enumerate() {
            if excluded[k] {
                continue;
            }
            if let Some((j, _)) = single_var(row) {
                if !span.bound[j] {
                    span.bound[j] = true;
                    bound_row[j] = k;
                    kept.push(k);
                } else if k < required {
                    return None;
                }
            }
        }
        for (k, row) in rows.iter().enumerate() {
            if single_var(row).is_some() || excluded[k] {
                continue;
            }
            if span.add_general(row) {
                kept.push(k);
            } else if k < required {
                let drop = row
                    .iter()
                    .filter(|(j, c)| *c != 0.0 && span.bound[*j] && bound_row[*j] >= required)
                    .map(|(j, _)| bound_row[*j])
                    .max()?;
                excluded[drop] = true;
                continue 'outer;
            }
        }
        kept.sort_unstable();
        return Some((kept, span));
    }
}

/// Solves a symmetric system through a bandwidth-reducing ordering when that
/// pays off, dense LU otherwise.
fn solve_sparse_symmetric(k: DMatrix<f64>, rhs: DVector<f64>) -> Option<DVector<f64>> {
    let dim = k.nrows();
    if dim == 0 {
        return Some(rhs);
    }
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); dim];
    for j in 0..dim {
        for i in 0..dim {
            if i != j && k[(i, j)] != 0.0 {
                adj[i].push(j);
            }
        }
    }
    let (perm, _, bw) = rcm(&adj);
    if bw * 4 >= dim {
        return k.lu().solve(&rhs);
    }
    let mut kp = DMatrix::from_fn(dim, dim, |i, j| k[(perm[i], perm[j])]);
    let mut bp = DVector::from_fn(dim, |i, _| rhs[perm[i]]);
    band_lu_solve(&mut kp, bw, &mut bp)?;
    let mut sol = DVector::zeros(dim);
    for (new, &old) in perm.iter().enumerate() {
        sol[old] = bp[new];
    }
    Some(sol)
}

/// Solves `[[diag(hess), C'], [C, 0]] [u; w] = [f; g]` where `C` stacks
/// `rows`, which must be linearly independent. Returns `None` when the
/// system is singular or the solution fails a residual check.
pub(crate) fn solve_reduced(
    hess: &DVector<f64>,
    rows: &[&Row],
    f: &DVector<f64>,
    g: &[f64],
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = hess.len();
    let r = rows.len();
    debug_assert_eq!(g.len(), r);

    // Bound rows pin their variable directly.
    let mut fixed_by: Vec<Option<usize>> = vec![None; n];
    let mut u = DVector::zeros(n);
    let mut general = Vec::new();
    for (a, row) in rows.iter().enumerate() {
        match single_var(row) {
            Some((j, c)) => {
                if fixed_by[j].is_some() {
                    return None;
                }
                fixed_by[j] = Some(a);
                u[j] = g[a] / c;
            }
            None if row.is_empty() => return None,
            None => general.push(a),
        }
    }
    let free: Vec<usize> = (0..n).filter(|&j| fixed_by[j].is_none()).collect();
    let mut pos = vec![usize::MAX; n];
    for (p, &j) in free.iter().enumerate() {
        pos[j] = p;
    }
    let nf = free.len();
    let dim = nf + general.len();
    let mut k = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    for (p, &j) in free.iter().enumerate() {
        k[(p, p)] = hess[j];
        rhs[p] = f[j];
    }
    for (ga, &a) in general.iter().enumerate() {
        let mut b = g[a];
        for &(j, c) in rows[a] {
            if pos[j] == usize::MAX {
                b -= c * u[j];
            } else {
                k[(nf + ga, pos[j])] += c;
                k[(pos[j], nf + ga)] += c;
            }
        }
        rhs[nf + ga] = b;
    }
    let sol = solve_sparse_symmetric(k, rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut w = DVector::zeros(r);
    for (p, &j) in free.iter().enumerate() {
        u[j] = sol[p];
    }
    for (ga, &a) in general.iter().enumerate() {
        w[a] = sol[nf + ga];
    }
    // Stationarity of each fixed variable yields its bound row multiplier.
    let mut stat = DVector::<f64>::zeros(n);
    for &a in &general {
        for &(j, c) in rows[a] {
            stat[j] += c * w[a];
        }
    }
    for j in 0..n {
        if let Some(a) = fixed_by[j] {
            let (_, c) = single_var(rows[a]).expect("bound row");
            w[a] = (f[j] - hess[j] * u[j] - stat[j]) / c;
        }
    }

    // Residual check on the unreduced system.
    let mut res: f64 = 0.0;
    let mut scale: f64 = 1.0 + f.amax() + hess.amax() * u.amax();
    let mut top = hess.component_mul(&u) - f;
    for (a, row) in rows.iter().enumerate() {
        let mut cu = -g[a];
        for &(j, c) in row.iter() {
            top[j] += c * w[a];
            cu += c * u[j];
            scale = scale.max(c.abs() * (u[j].abs() + w[a].abs()));
        }
        res = res.max(cu.abs());
        scale = scale.max(g[a].abs());
    }
    res = res.max(top.amax());
    (res <= 1e-9 * scale).then_some((u, w))
}

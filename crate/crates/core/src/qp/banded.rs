//! Banded Cholesky under a reverse Cuthill-McKee ordering, for the
//! `2Q + G' W G` block of the Newton system.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use super::sparse::SparseRows;

/// Symmetric permutation and resulting half-bandwidth of `diag + G' W G`.
#[derive(Debug, Clone)]
pub(crate) struct BandPlan {
    /// `perm[new] = old`
    perm: Vec<usize>,
    /// `iperm[old] = new`
    iperm: Vec<usize>,
    pub bw: usize,
}

/// Reverse Cuthill-McKee ordering of an undirected graph. Returns
/// `(perm, iperm, bandwidth)` with `perm[new] = old`.
pub(crate) fn rcm(adj: &[Vec<usize>]) -> (Vec<usize>, Vec<usize>, usize) {
    let n = adj.len();
    let deg: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let start = (0..n)
            .filter(|&v| !seen[v])
            .min_by_key(|&v| deg[v])
            .expect("unvisited vertex");
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&u| !seen[u]).collect();
            next.sort_by_key(|&u| deg[u]);
            for u in next {
                seen[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    let mut iperm = vec![0; n];
    for (new, &old) in order.iter().enumerate() {
        iperm[old] = new;
    }
    let bw = adj
        .iter()
        .enumerate()
        .flat_map(|(a, list)| list.iter().map(move |&b| (a, b)))
        .map(|(a, b)| iperm[a].abs_diff(iperm[b]))
        .max()
        .unwrap_or(0);
    (order, iperm, bw)
}

/// Solves `M x = b` for `M` with half-bandwidth `bw` by Gaussian elimination
/// with partial pivoting, touching only the band (and the fill it allows).
/// `m` is overwritten.
pub(crate) fn band_lu_solve(m: &mut DMatrix<f64>, bw: usize, b: &mut DVector<f64>) -> Option<()> {
    let n = m.nrows();
    let scale = m.amax();
    if n == 0 {
        return Some(());
    }
    if !(scale > 0.0) {
        return None;
    }
    // Row swaps widen the upper band to 2 bw.
    let upper = 2 * bw;
    for k in 0..n {
        let last = (k + bw).min(n - 1);
        let (mut p, mut best) = (k, m[(k, k)].abs());
        for i in k + 1..=last {
            let v = m[(i, k)].abs();
            if v > best {
                p = i;
                best = v;
            }
        }
        if best <= f64::EPSILON * 1e-3 * scale {
            return None;
        }
        let cols = (k + upper).min(n - 1);
        if p != k {
            for j in k..=cols {
                m.swap((k, j), (p, j));
            }
            b.swap_rows(k, p);
        }
        let pivot = m[(k, k)];
        for i in k + 1..=last {
            let l = m[(i, k)] / pivot;
            if l == 0.0 {
                continue;
            }
            m[(i, k)] = 0.0;
            for j in k + 1..=cols {
                let u = m[(k, j)];
                if u != 0.0 {
                    m[(i, j)] -= l * u;
                }
            }
            b[i] -= l * b[k];
        }
    }
    for k in (0..n).rev() {
        let cols = (k + upper).min(n - 1);
        let mut sum = b[k];
        for j in k + 1..=cols {
            sum -= m[(k, j)] * b[j];
        }
        b[k] = sum / m[(k, k)];
    }
    Some(())
}

impl BandPlan {
    pub fn new(n: usize, g: &SparseRows) -> Self {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for row in &g.rows {
            for &(a, _) in row {
                for &(b, _) in row {
                    if a != b {
                        adj[a].push(b);
                    }
                }
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        let (perm, iperm, bw) = rcm(&adj);
        Self { perm, iperm, bw }
    }

    pub fn n(&self) -> usize {
        self.perm.len()
    }

    /// Assembles `diag(d) + G' diag(w) G` in permuted band storage.
    pub fn assemble(&self, d: &DVector<f64>, g: &SparseRows, w: &DVector<f64>) -> Band {
        let n = self.n();
        let width = self.bw + 1;
        let mut band = Band {
            n,
            bw: self.bw,
            data: vec![0.0; n * width],
        };
        for old in 0..n {
            let i = self.iperm[old];
            band.data[i * width + self.bw] += d[old];
        }
        for (row, &wi) in g.rows.iter().zip(w.iter()) {
            for &(a, va) in row {
                let i = self.iperm[a];
                for &(b, vb) in row {
                    let j = self.iperm[b];
                    if j <= i {
                        band.data[i * width + self.bw - (i - j)] += wi * va * vb;
                    }
                }
            }
        }
        band
    }

    pub fn permute(&self, v: &DVector<f64>) -> Vec<f64> {
        self.perm.iter().map(|&old| v[old]).collect()
    }

    pub fn unpermute(&self, v: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.n(), (0..self.n()).map(|old| v[self.iperm[old]]))
    }
}

/// Lower triangle of a symmetric band matrix, row-major: entry `(i, j)` with
/// `i - bw <= j <= i` lives at `data[i * (bw + 1) + bw - (i - j)]`.
#[derive(Debug, Clone)]
pub(crate) struct Band {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl Band {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * (self.bw + 1) + self.bw - (i - j)]
    }

    pub fn max_diag(&self) -> f64 {
        (0..self.n).map(|i| self.at(i, i)).fold(0.0, f64::max)
    }

    pub fn shift_diag(&mut self, delta: f64) {
        let w = self.bw + 1;
        for i in 0..self.n {
            self.data[i * w + self.bw] += delta;
        }
    }

    /// In-place Cholesky `L L'`; `None` if a pivot is not positive.
    pub fn cholesky(mut self) -> Option<Self> {
        let w = self.bw + 1;
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            for j in lo..=i {
                let mut sum = self.data[i * w + self.bw - (i - j)];
                let klo = lo.max(j.saturating_sub(self.bw));
                for k in klo..j {
                    sum -= self.data[i * w + self.bw - (i - k)] * self.data[j * w + self.bw - (j - k)];
                }
                if i == j {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return None;
                    }
                    self.data[i * w + self.bw] = sum.sqrt();
                } else {
                    self.data[i * w + self.bw - (i - j)] = sum / self.data[j * w + self.bw];
                }
            }
        }
        Some(self)
    }

    /// Solves `L L' x = b` in place, for a factored band.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let w = self.bw + 1;
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let mut sum = b[i];
            for k in lo..i {
                sum -= self.data[i * w + self.bw - (i - k)] * b[k];
            }
            b[i] = sum / self.data[i * w + self.bw];
        }
        for i in (0..self.n).rev() {
            let hi = (i + self.bw).min(self.n - 1);
            let mut sum = b[i];
            for k in i + 1..=hi {
                sum -= self.data[k * w + self.bw - (k - i)] * b[k];
            }
            b[i] = sum / self.data[i * w + self.bw];
        }
    }
}

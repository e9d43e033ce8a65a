use nalgebra::{DMatrix, DVector};

/// Row-compressed copy of a dense constraint matrix. Battery rows carry at
/// most three nonzeros, so products go through this instead of the dense
/// matrix.
#[derive(Debug, Clone)]
pub(crate) struct SparseRows {
    pub ncols: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let rows = (0..m.nrows())
            .map(|i| {
                (0..m.ncols())
                    .filter_map(|j| {
                        let v = m[(i, j)];
                        (v != 0.0).then_some((j, v))
                    })
                    .collect()
            })
            .collect();
        Self {
            ncols: m.ncols(),
            rows,
        }
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn row_dot(&self, i: usize, x: &DVector<f64>) -> f64 {
        self.rows[i].iter().map(|&(j, v)| v * x[j]).sum()
    }

    pub fn mul(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.nrows(), (0..self.nrows()).map(|i| self.row_dot(i, x)))
    }

    pub fn tmul(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.ncols);
        for (row, &vi) in self.rows.iter().zip(v.iter()) {
            if vi != 0.0 {
                for &(j, a) in row {
                    out[j] += a * vi;
                }
            }
        }
        out
    }

    /// `k += M' diag(w) M`.
    pub fn add_weighted_gram(&self, w: &DVector<f64>, k: &mut DMatrix<f64>) {
        for (row, &wi) in self.rows.iter().zip(w.iter()) {
            for &(a, va) in row {
                for &(b, vb) in row {
                    k[(a, b)] += wi * va * vb;
                }
            }
        }
    }
}

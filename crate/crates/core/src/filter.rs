//! The linear privatizing filter `d~ = d + diag(gamma) eps + V y`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FilterWeights {
    /// Diagonal of `Gamma`.
    pub gamma: DVector<f64>,
    /// `H x 2`, one column per class.
    pub v: DMatrix<f64>,
}

impl FilterWeights {
    /// Entries uniform on `(-1/(H+2), 1/(H+2))`, `H + 2` being the column
    /// count of `G = [Gamma, V]`.
    pub fn init(horizon: usize, seed: u64) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::invalid("filter horizon must be positive"));
        }
        let bound = 1.0 / (horizon + 2) as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gamma = DVector::from_fn(horizon, |_, _| rng.random_range(-bound..bound));
        let v = DMatrix::from_fn(horizon, 2, |_, _| rng.random_range(-bound..bound));
        Ok(Self { gamma, v })
    }

    /// The identity filter.
    pub fn zeros(horizon: usize) -> Self {
        Self {
            gamma: DVector::zeros(horizon),
            v: DMatrix::zeros(horizon, 2),
        }
    }

    pub fn horizon(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.v.shape() != (self.horizon(), 2) {
            return Err(Error::Dimension(format!(
                "filter V has shape {:?} for horizon {}",
                self.v.shape(),
                self.horizon()
            )));
        }
        if self.gamma.iter().chain(self.v.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("filter weights must be finite"));
        }
        Ok(())
    }

    /// `d + gamma .* eps + V y`.
    pub fn perturb(&self, d: &[f64], eps: &[f64], y: [f64; 2]) -> Vec<f64> {
        (0..self.horizon())
            .map(|j| d[j] + self.gamma[j] * eps[j] + self.v[(j, 0)] * y[0] + self.v[(j, 1)] * y[1])
            .collect()
    }

    /// `kappa_gamma |gamma|^2 + kappa_v sum_k pi_k |v_k|^2`, where `pi` is the
    /// class distribution in one-hot index order (`pi_k = P(y = e_k)`).
    pub fn weighted_penalty(&self, pi: [f64; 2], kappa_gamma: f64, kappa_v: f64) -> f64 {
        let v_term: f64 = (0..2).map(|k| pi[k] * self.v.column(k).norm_squared()).sum();
        kappa_gamma * self.gamma.norm_squared() + kappa_v * v_term
    }

    /// Gradient of [`FilterWeights::weighted_penalty`]:
    /// `2 kappa_gamma gamma` and `2 kappa_v pi_k v_k`.
    pub fn weighted_penalty_grad(&self, pi: [f64; 2], kappa_gamma: f64, kappa_v: f64) -> Self {
        let mut v = self.v.clone();
        for k in 0..2 {
            v.column_mut(k).scale_mut(2.0 * kappa_v * pi[k]);
        }
        Self {
            gamma: &self.gamma * (2.0 * kappa_gamma),
            v,
        }
    }

    /// `E |d~ - d|^2` over `eps ~ N(0, I)` and one-hot `y ~ pi`, in closed
    /// form. The cross term vanishes because `eps` has zero mean, and
    /// `E[y y'] = diag(pi)` for one-hot `y`.
    pub fn distortion_penalty(&self, pi: [f64; 2]) -> f64 {
        self.weighted_penalty(pi, 1.0, 1.0)
    }

    pub fn distortion_penalty_grad(&self, pi: [f64; 2]) -> Self {
        self.weighted_penalty_grad(pi, 1.0, 1.0)
    }

    /// Pulls an upstream gradient on `d~` back to the weights:
    /// `d/dgamma_j = u_j eps_j`, `d/dV_jk = u_j y_k`.
    pub fn grad_wrt_weights(eps: &[f64], y: [f64; 2], upstream: &[f64]) -> Self {
        let h = upstream.len();
        Self {
            gamma: DVector::from_fn(h, |j, _| upstream[j] * eps[j]),
            v: DMatrix::from_fn(h, 2, |j, k| upstream[j] * y[k]),
        }
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &Self) {
        self.gamma.axpy(a, &other.gamma, 1.0);
        self.v += &other.v * a;
    }

    pub fn scale(&mut self, a: f64) {
        self.gamma *= a;
        self.v *= a;
    }

    pub fn norm_squared(&self) -> f64 {
        self.gamma.norm_squared() + self.v.norm_squared()
    }

    /// `[gamma; vec(V)]` with `V` column-major.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.gamma.as_slice().to_vec();
        out.extend_from_slice(self.v.as_slice());
        out
    }

    pub fn from_flat(horizon: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != 3 * horizon {
            return Err(Error::Dimension(format!(
                "{} values for a filter of horizon {horizon}",
                flat.len()
            )));
        }
        Ok(Self {
            gamma: DVector::from_column_slice(&flat[..horizon]),
            v: DMatrix::from_column_slice(horizon, 2, &flat[horizon..]),
        })
    }

    /// `self - lr * grads`.
    pub fn sgd_step(&self, grads: &Self, lr: f64) -> Self {
        let mut out = self.clone();
        out.axpy(-lr, grads);
        out
    }
}

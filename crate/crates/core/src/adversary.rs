//! The attribute classifier: `H -> H (ELU) -> ceil(H/2) (ELU) -> 2 (softmax)`
//! with hand-written reverse mode.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::{Error, Result};

/// Floor on probabilities inside the log of the cross-entropy.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
    pub w3: DMatrix<f64>,
    pub b3: DVector<f64>,
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let bound = 1.0 / cols as f64;
    // Column-major fill, so the draw order is fixed by the shape alone.
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
}

impl MlpParams {
    /// Weights uniform on `(-1/fan_in, 1/fan_in)`, biases zero.
    pub fn init(horizon: usize, seed: u64) -> Result<Self> {
        if horizon < 2 {
            return Err(Error::invalid("adversary needs a horizon of at least 2"));
        }
        let h2 = horizon.div_ceil(2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            w1: uniform_matrix(&mut rng, horizon, horizon),
            b1: DVector::zeros(horizon),
            w2: uniform_matrix(&mut rng, h2, horizon),
            b2: DVector::zeros(h2),
            w3: uniform_matrix(&mut rng, 2, h2),
            b3: DVector::zeros(2),
        })
    }

    pub fn zeros(horizon: usize) -> Self {
        let h2 = horizon.div_ceil(2);
        Self {
            w1: DMatrix::zeros(horizon, horizon),
            b1: DVector::zeros(horizon),
            w2: DMatrix::zeros(h2, horizon),
            b2: DVector::zeros(h2),
            w3: DMatrix::zeros(2, h2),
            b3: DVector::zeros(2),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.horizon())
    }

    pub fn horizon(&self) -> usize {
        self.w1.ncols()
    }

    /// Checks the layer shapes against each other and that entries are finite.
    pub fn validate(&self) -> Result<()> {
        let h = self.horizon();
        let h2 = h.div_ceil(2);
        let shapes = [
            (self.w1.shape(), (h, h)),
            (self.b1.shape(), (h, 1)),
            (self.w2.shape(), (h2, h)),
            (self.b2.shape(), (h2, 1)),
            (self.w3.shape(), (2, h2)),
            (self.b3.shape(), (2, 1)),
        ];
        for (i, (got, want)) in shapes.iter().enumerate() {
            if got != want {
                return Err(Error::Dimension(format!(
                    "adversary tensor {i} has shape {got:?}, expected {want:?}"
                )));
            }
        }
        if self.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::invalid("adversary parameters must be finite"));
        }
        Ok(())
    }

    /// `(name, rows, cols)` per tensor, in storage order.
    pub fn layout(&self) -> [(&'static str, usize, usize); 6] {
        [
            ("w1", self.w1.nrows(), self.w1.ncols()),
            ("b1", self.b1.len(), 1),
            ("w2", self.w2.nrows(), self.w2.ncols()),
            ("b2", self.b2.len(), 1),
            ("w3", self.w3.nrows(), self.w3.ncols()),
            ("b3", self.b3.len(), 1),
        ]
    }

    /// Column-major views of all tensors.
    pub fn tensors(&self) -> [&[f64]; 6] {
        [
            self.w1.as_slice(),
            self.b1.as_slice(),
            self.w2.as_slice(),
            self.b2.as_slice(),
            self.w3.as_slice(),
            self.b3.as_slice(),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w1.as_mut_slice(),
            self.b1.as_mut_slice(),
            self.w2.as_mut_slice(),
            self.b2.as_mut_slice(),
            self.w3.as_mut_slice(),
            self.b3.as_mut_slice(),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    /// Inverse of [`MlpParams::to_flat`] for a network of this shape.
    pub fn from_flat_like(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(Error::Dimension(format!(
                "{} values for {} adversary parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut out = self.zeros_like();
        let mut at = 0;
        for t in out.tensors_mut() {
            t.copy_from_slice(&flat[at..at + t.len()]);
            at += t.len();
        }
        Ok(out)
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &Self) {
        for (t, o) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in t.iter_mut().zip(o) {
                *x += a * y;
            }
        }
    }

    pub fn scale(&mut self, a: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= a);
        }
    }

    pub fn norm_squared(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.iter()).map(|v| v * v).sum()
    }

    /// `self - lr * grads`.
    pub fn sgd_step(&self, grads: &Self, lr: f64) -> Self {
        let mut out = self.clone();
        out.axpy(-lr, grads);
        out
    }
}

pub fn elu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        z.exp_m1()
    }
}

fn elu_prime(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        z.exp()
    }
}

pub fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// Activations cached by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: DVector<f64>,
    pub z1: DVector<f64>,
    pub a1: DVector<f64>,
    pub z2: DVector<f64>,
    pub a2: DVector<f64>,
    pub logits: [f64; 2],
    pub probs: [f64; 2],
}

pub fn forward(params: &MlpParams, input: &[f64]) -> ([f64; 2], ForwardTrace) {
    let x = DVector::from_column_slice(input);
    let z1 = &params.w1 * &x + &params.b1;
    let a1 = z1.map(elu);
    let z2 = &params.w2 * &a1 + &params.b2;
    let a2 = z2.map(elu);
    let out = &params.w3 * &a2 + &params.b3;
    let logits = [out[0], out[1]];
    let probs = softmax2(logits);
    (
        probs,
        ForwardTrace {
            input: x,
            z1,
            a1,
            z2,
            a2,
            logits,
            probs,
        },
    )
}

/// Two-class cross-entropy `-sum_k y_k ln max(p_k, 1e-12)`.
pub fn ce_loss(probs: [f64; 2], y: [f64; 2]) -> f64 {
    -(y[0] * probs[0].max(LOG_CLAMP).ln() + y[1] * probs[1].max(LOG_CLAMP).ln())
}

/// Gradients of [`ce_loss`] at the traced forward pass, with respect to the
/// parameters and to the input. Softmax and cross-entropy are fused, so the
/// logit gradient is `p - y` (exact wherever the clamp is inactive).
pub fn backward(params: &MlpParams, trace: &ForwardTrace, y: [f64; 2]) -> (MlpParams, DVector<f64>) {
    let g3 = DVector::from_vec(vec![trace.probs[0] - y[0], trace.probs[1] - y[1]]);
    let w3 = &g3 * trace.a2.transpose();
    let g_a2 = params.w3.tr_mul(&g3);
    let g2 = g_a2.zip_map(&trace.z2, |g, z| g * elu_prime(z));
    let w2 = &g2 * trace.a1.transpose();
    let g_a1 = params.w2.tr_mul(&g2);
    let g1 = g_a1.zip_map(&trace.z1, |g, z| g * elu_prime(z));
    let w1 = &g1 * trace.input.transpose();
    let g_in = params.w1.tr_mul(&g1);
    (
        MlpParams {
            w1,
            b1: g1,
            w2,
            b2: g2,
            w3,
            b3: g3,
        },
        g_in,
    )
}

/// Predicted class; ties go to class 0.
pub fn predict(params: &MlpParams, input: &[f64]) -> u8 {
    let (p, _) = forward(params, input);
    u8::from(p[1] > p[0])
}

/// Batch-mean loss and parameter gradient of the cross-entropy against
/// `targets`, plus per-row input gradients (not divided by the batch size).
/// Rows of `inputs` are samples.
pub fn batch_loss_grad(
    params: &MlpParams,
    inputs: &DMatrix<f64>,
    targets: &[[f64; 2]],
) -> (f64, MlpParams, DMatrix<f64>) {
    let m = inputs.nrows();
    assert_eq!(m, targets.len(), "one target per input row");
    let mut grads = params.zeros_like();
    let mut input_grads = DMatrix::zeros(m, inputs.ncols());
    let mut loss = 0.0;
    for i in 0..m {
        let row: Vec<f64> = inputs.row(i).iter().copied().collect();
        let (p, trace) = forward(params, &row);
        loss += ce_loss(p, targets[i]);
        let (g, gi) = backward(params, &trace, targets[i]);
        grads.axpy(1.0, &g);
        input_grads.set_row(i, &gi.transpose());
    }
    if m > 0 {
        grads.scale(1.0 / m as f64);
        loss /= m as f64;
    }
    (loss, grads, input_grads)
}

/// Fraction of rows of `inputs` whose predicted class equals the label.
pub fn accuracy_on(params: &MlpParams, inputs: &DMatrix<f64>, labels: &[u8]) -> f64 {
    assert_eq!(inputs.nrows(), labels.len());
    if labels.is_empty() {
        return 0.0;
    }
    let hits = (0..labels.len())
        .filter(|&i| {
            let row: Vec<f64> = inputs.row(i).iter().copied().collect();
            predict(params, &row) == labels[i]
        })
        .count();
    hits as f64 / labels.len() as f64
}

/// Accuracy on the raw demand of `ds`.
pub fn accuracy(params: &MlpParams, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Empty("dataset for accuracy".into()));
    }
    let hits = ds
        .records
        .iter()
        .filter(|r| predict(params, &r.demand) == r.label)
        .count();
    Ok(hits as f64 / ds.len() as f64)
}

//! The battery cost-minimization problem in canonical QP form, and the
//! utility loss that prices a control decision against raw demand.
//!
//! Decision layout for a horizon `H`: `x = [x_in; x_out; x_s]` (3H), with the
//! epigraph form appending one auxiliary `t` per interval (4H). The state
//! follows `x_s(j+1) = x_s(j) + eta_in x_in(j) - x_out(j) / eta_out` for
//! `j < H-1`, `x_s(0) = B_init`, and the state after the last interval is
//! kept inside `[0, B]` by a pair of terminal rows.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::PriceSchedule;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatterySpec {
    /// Energy capacity `B`, kWh.
    pub capacity: f64,
    /// Target state of charge as a fraction of capacity.
    pub alpha: f64,
    /// Penalty on `||x_in||^2`.
    pub beta1: f64,
    /// Penalty on `||x_out||^2`.
    pub beta2: f64,
    /// Penalty on `||x_s - alpha B||^2`.
    pub beta3: f64,
    pub eta_in: f64,
    pub eta_out: f64,
    /// Charging power limit per interval.
    pub c_in: f64,
    /// Discharging power limit per interval.
    pub c_out: f64,
    /// Initial charge, kWh.
    pub b_init: f64,
}

impl Default for BatterySpec {
    fn default() -> Self {
        let capacity = 6.0;
        Self {
            capacity,
            alpha: 0.5,
            beta1: 1e-5,
            beta2: 1e-5,
            beta3: 1e-5,
            eta_in: 0.95,
            eta_out: 0.95,
            c_in: 2.0,
            c_out: 2.0,
            b_init: 0.01 * capacity,
        }
    }
}

impl BatterySpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.capacity >= 0.0
            && self.alpha > 0.0
            && self.alpha < 1.0
            && self.b_init >= 0.0
            && self.b_init <= self.capacity
            && self.c_in > 0.0
            && self.c_out > 0.0
            && self.beta1 >= 0.0
            && self.beta2 >= 0.0
            && self.beta3 >= 0.0
            && self.eta_in > 0.0
            && self.eta_in <= 1.0
            && self.eta_out > 0.0
            && self.eta_out <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("battery spec out of range: {self:?}")))
        }
    }

    /// The constant `beta3 alpha^2 B^2 H` the canonical objective drops.
    pub fn target_constant(&self, horizon: usize) -> f64 {
        self.beta3 * (self.alpha * self.capacity).powi(2) * horizon as f64
    }
}

/// Which reformulation of the hinge `(x_in - x_out + d)_+` a QP uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpForm {
    /// Adds `x_out - x_in <= d` so the hinge is always active. Infeasible
    /// when demand is negative enough.
    Direct,
    /// One auxiliary `t >= 0, t >= x_in - x_out + d` per interval, priced
    /// linearly. Always feasible.
    Epigraph,
}

/// Inequality row whose right-hand side is `coef * d[interval]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemandRow {
    pub row: usize,
    pub interval: usize,
    pub coef: f64,
}

/// Minimize `x' diag(quad) x + lin' x` subject to `A x = b`, `G x <= h`.
///
/// The quadratic is stored as the diagonal of `Q` and enters the objective
/// without a 1/2 factor, so with `Q = diag(beta)` the objective plus
/// [`constant`](Self::constant) reproduces the battery cost exactly. The
/// solver's Hessian is therefore `2 Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalQP {
    pub quad: DVector<f64>,
    pub lin: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub demand_rows: Vec<DemandRow>,
    /// The `beta3 alpha^2 B^2 H` term dropped from the objective.
    pub target_constant: f64,
    pub form: Option<QpForm>,
    pub horizon: usize,
}

impl CanonicalQP {
    /// A bare QP with no demand dependence.
    pub fn new(
        quad: DVector<f64>,
        lin: DVector<f64>,
        a: DMatrix<f64>,
        b: DVector<f64>,
        g: DMatrix<f64>,
        h: DVector<f64>,
    ) -> Result<Self> {
        let qp = Self {
            quad,
            lin,
            a,
            b,
            g,
            h,
            demand_rows: Vec::new(),
            target_constant: 0.0,
            form: None,
            horizon: 0,
        };
        qp.check_dims()?;
        Ok(qp)
    }

    pub fn n(&self) -> usize {
        self.lin.len()
    }

    pub fn check_dims(&self) -> Result<()> {
        let n = self.n();
        let bad = self.quad.len() != n
            || self.a.ncols() != n
            || self.g.ncols() != n
            || self.a.nrows() != self.b.len()
            || self.g.nrows() != self.h.len()
            || self.demand_rows.iter().any(|r| r.row >= self.h.len());
        if bad {
            return Err(Error::Dimension(format!(
                "qp with n={n}: Q {}, A {}x{}, b {}, G {}x{}, h {}",
                self.quad.len(),
                self.a.nrows(),
                self.a.ncols(),
                self.b.len(),
                self.g.nrows(),
                self.g.ncols(),
                self.h.len()
            )));
        }
        Ok(())
    }

    /// `x' Q x + q' x`.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        self.quad
            .iter()
            .zip(x.iter())
            .map(|(q, v)| q * v * v)
            .sum::<f64>()
            + self.lin.dot(x)
    }

    /// Constant added to [`objective`](Self::objective) to recover the
    /// natural battery cost: `beta3 alpha^2 B^2 H`, plus `p' d` for the direct
    /// form whose linear term omits the demand.
    pub fn constant(&self) -> f64 {
        let mut c = self.target_constant;
        if self.form == Some(QpForm::Direct) {
            c += self
                .demand_rows
                .iter()
                .map(|r| self.lin[r.interval] * self.h[r.row] / r.coef)
                .sum::<f64>();
        }
        c
    }

    /// Rewrites the demand-dependent entries of `h` for a new demand vector.
    pub fn set_demand(&mut self, demand: &[f64]) -> Result<()> {
        if demand.len() != self.horizon {
            return Err(Error::Dimension(format!(
                "demand has {} entries, qp horizon is {}",
                demand.len(),
                self.horizon
            )));
        }
        for r in &self.demand_rows {
            self.h[r.row] = r.coef * demand[r.interval];
        }
        Ok(())
    }

    /// Demand vector currently encoded in `h`.
    pub fn demand(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.horizon];
        for r in &self.demand_rows {
            d[r.interval] = self.h[r.row] / r.coef;
        }
        d
    }
}

/// Index helpers for the decision vector.
#[derive(Debug, Clone, Copy)]
pub struct Layout {
    pub horizon: usize,
}

impl Layout {
    pub fn x_in(&self, j: usize) -> usize {
        j
    }
    pub fn x_out(&self, j: usize) -> usize {
        self.horizon + j
    }
    pub fn x_s(&self, j: usize) -> usize {
        2 * self.horizon + j
    }
    pub fn t(&self, j: usize) -> usize {
        3 * self.horizon + j
    }
}

fn check_inputs(spec: &BatterySpec, price: &PriceSchedule, demand: &[f64]) -> Result<usize> {
    spec.validate()?;
    let h = price.horizon();
    if h == 0 {
        return Err(Error::invalid("empty price schedule"));
    }
    if demand.len() != h {
        return Err(Error::Dimension(format!(
            "demand has {} entries, price schedule has {h}",
            demand.len()
        )));
    }
    Ok(h)
}

/// Battery rows shared by both forms: six box groups, the terminal pair, and
/// the equality block. `n` is the total decision size.
fn battery_rows(spec: &BatterySpec, h: usize, n: usize) -> (Vec<(Vec<(usize, f64)>, f64)>, DMatrix<f64>, DVector<f64>) {
    let l = Layout { horizon: h };
    let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::with_capacity(6 * h + 2);
    for j in 0..h {
        rows.push((vec![(l.x_in(j), 1.0)], spec.c_in));
    }
    for j in 0..h {
        rows.push((vec![(l.x_in(j), -1.0)], 0.0));
    }
    for j in 0..h {
        rows.push((vec![(l.x_out(j), 1.0)], spec.c_out));
    }
    for j in 0..h {
        rows.push((vec![(l.x_out(j), -1.0)], 0.0));
    }
    for j in 0..h {
        rows.push((vec![(l.x_s(j), 1.0)], spec.capacity));
    }
    for j in 0..h {
        rows.push((vec![(l.x_s(j), -1.0)], 0.0));
    }
    let last = h - 1;
    let terminal = vec![
        (l.x_s(last), 1.0),
        (l.x_in(last), spec.eta_in),
        (l.x_out(last), -1.0 / spec.eta_out),
    ];
    rows.push((terminal.clone(), spec.capacity));
    rows.push((terminal.into_iter().map(|(c, v)| (c, -v)).collect(), 0.0));

    let mut a = DMatrix::zeros(h, n);
    let mut b = DVector::zeros(h);
    a[(0, l.x_s(0))] = 1.0;
    b[0] = spec.b_init;
    for j in 1..h {
        a[(j, l.x_s(j))] = 1.0;
        a[(j, l.x_s(j - 1))] = -1.0;
        a[(j, l.x_in(j - 1))] = -spec.eta_in;
        a[(j, l.x_out(j - 1))] = 1.0 / spec.eta_out;
    }
    (rows, a, b)
}

fn dense_rows(rows: &[(Vec<(usize, f64)>, f64)], n: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut g = DMatrix::zeros(rows.len(), n);
    let mut hv = DVector::zeros(rows.len());
    for (i, (coefs, rhs)) in rows.iter().enumerate() {
        for &(c, v) in coefs {
            g[(i, c)] = v;
        }
        hv[i] = *rhs;
    }
    (g, hv)
}

/// Direct form (n = 3H): seven inequality groups (boxes on `x_in`, `x_out`,
/// `x_s`, then `x_out - x_in <= d` as the last H rows) plus the terminal pair
/// before the demand rows; `q = [p; -p; -2 beta3 alpha B 1]`.
pub fn build_qp_direct_form(
    spec: &BatterySpec,
    price: &PriceSchedule,
    demand: &[f64],
) -> Result<CanonicalQP> {
    let h = check_inputs(spec, price, demand)?;
    let n = 3 * h;
    let l = Layout { horizon: h };
    let (mut rows, a, b) = battery_rows(spec, h, n);
    let first_demand = rows.len();
    for (j, &dj) in demand.iter().enumerate() {
        rows.push((vec![(l.x_in(j), -1.0), (l.x_out(j), 1.0)], dj));
    }
    let (g, hv) = dense_rows(&rows, n);

    let mut quad = DVector::zeros(n);
    let mut lin = DVector::zeros(n);
    for j in 0..h {
        quad[l.x_in(j)] = spec.beta1;
        quad[l.x_out(j)] = spec.beta2;
        quad[l.x_s(j)] = spec.beta3;
        lin[l.x_in(j)] = price.prices[j];
        lin[l.x_out(j)] = -price.prices[j];
        lin[l.x_s(j)] = -2.0 * spec.beta3 * spec.alpha * spec.capacity;
    }
    let demand_rows = (0..h)
        .map(|j| DemandRow {
            row: first_demand + j,
            interval: j,
            coef: 1.0,
        })
        .collect();
    let qp = CanonicalQP {
        quad,
        lin,
        a,
        b,
        g,
        h: hv,
        demand_rows,
        target_constant: spec.target_constant(h),
        form: Some(QpForm::Direct),
        horizon: h,
    };
    qp.check_dims()?;
    Ok(qp)
}

/// Epigraph form (n = 4H): the battery rows, then `-t <= 0` and
/// `x_in - x_out - t <= -d` (the last H rows). Objective
/// `beta-penalties + p' t`.
pub fn build_qp_epigraph_form(
    spec: &BatterySpec,
    price: &PriceSchedule,
    demand: &[f64],
) -> Result<CanonicalQP> {
    let h = check_inputs(spec, price, demand)?;
    let n = 4 * h;
    let l = Layout { horizon: h };
    let (mut rows, a, b) = battery_rows(spec, h, n);
    for j in 0..h {
        rows.push((vec![(l.t(j), -1.0)], 0.0));
    }
    let first_demand = rows.len();
    for (j, &dj) in demand.iter().enumerate() {
        rows.push((
            vec![(l.x_in(j), 1.0), (l.x_out(j), -1.0), (l.t(j), -1.0)],
            -dj,
        ));
    }
    let (g, hv) = dense_rows(&rows, n);

    let mut quad = DVector::zeros(n);
    let mut lin = DVector::zeros(n);
    for j in 0..h {
        quad[l.x_in(j)] = spec.beta1;
        quad[l.x_out(j)] = spec.beta2;
        quad[l.x_s(j)] = spec.beta3;
        lin[l.x_s(j)] = -2.0 * spec.beta3 * spec.alpha * spec.capacity;
        lin[l.t(j)] = price.prices[j];
    }
    let demand_rows = (0..h)
        .map(|j| DemandRow {
            row: first_demand + j,
            interval: j,
            coef: -1.0,
        })
        .collect();
    let qp = CanonicalQP {
        quad,
        lin,
        a,
        b,
        g,
        h: hv,
        demand_rows,
        target_constant: spec.target_constant(h),
        form: Some(QpForm::Epigraph),
        horizon: h,
    };
    qp.check_dims()?;
    Ok(qp)
}

pub fn build_qp(
    form: QpForm,
    spec: &BatterySpec,
    price: &PriceSchedule,
    demand: &[f64],
) -> Result<CanonicalQP> {
    match form {
        QpForm::Direct => build_qp_direct_form(spec, price, demand),
        QpForm::Epigraph => build_qp_epigraph_form(spec, price, demand),
    }
}

/// Charge, discharge and state-of-charge schedules.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlDecision {
    pub x_in: DVector<f64>,
    pub x_out: DVector<f64>,
    pub x_s: DVector<f64>,
    /// Epigraph auxiliaries, when the decision came from that form.
    pub t: Option<DVector<f64>>,
}

impl ControlDecision {
    /// Splits a solver vector of length 3H or 4H.
    pub fn from_solution(x: &DVector<f64>, horizon: usize) -> Result<Self> {
        let h = horizon;
        if x.len() != 3 * h && x.len() != 4 * h {
            return Err(Error::Dimension(format!(
                "solution of length {} does not fit horizon {h}",
                x.len()
            )));
        }
        let t = (x.len() == 4 * h).then(|| x.rows(3 * h, h).into_owned());
        Ok(Self {
            x_in: x.rows(0, h).into_owned(),
            x_out: x.rows(h, h).into_owned(),
            x_s: x.rows(2 * h, h).into_owned(),
            t,
        })
    }

    pub fn idle(horizon: usize, b_init: f64) -> Self {
        Self {
            x_in: DVector::zeros(horizon),
            x_out: DVector::zeros(horizon),
            x_s: DVector::from_element(horizon, b_init),
            t: None,
        }
    }

    pub fn horizon(&self) -> usize {
        self.x_in.len()
    }

    /// `x_in - x_out + d`.
    pub fn net(&self, demand: &[f64]) -> Vec<f64> {
        (0..self.horizon())
            .map(|j| self.x_in[j] - self.x_out[j] + demand[j])
            .collect()
    }
}

/// Electricity cost of `x` against demand `d`:
/// `p' (x_in - x_out + d)_+ + beta1 |x_in|^2 + beta2 |x_out|^2 + beta3 |x_s - alpha B|^2`.
pub fn utility_loss(
    x: &ControlDecision,
    d_raw: &[f64],
    price: &PriceSchedule,
    spec: &BatterySpec,
) -> f64 {
    let target = spec.alpha * spec.capacity;
    let mut cost = 0.0;
    for j in 0..x.horizon() {
        let net = x.x_in[j] - x.x_out[j] + d_raw[j];
        cost += price.prices[j] * net.max(0.0);
        cost += spec.beta1 * x.x_in[j].powi(2)
            + spec.beta2 * x.x_out[j].powi(2)
            + spec.beta3 * (x.x_s[j] - target).powi(2);
    }
    cost
}

/// Gradient of [`utility_loss`] in `x = [x_in; x_out; x_s]` (length 3H).
///
/// The price term contributes `+p_j` to `x_in(j)` and `-p_j` to `x_out(j)`
/// only where the net is strictly positive; the subgradient 0 is used at the
/// kink.
pub fn utility_loss_grad_x(
    x: &ControlDecision,
    d_raw: &[f64],
    price: &PriceSchedule,
    spec: &BatterySpec,
) -> DVector<f64> {
    let h = x.horizon();
    let l = Layout { horizon: h };
    let target = spec.alpha * spec.capacity;
    let mut g = DVector::zeros(3 * h);
    for j in 0..h {
        g[l.x_in(j)] = 2.0 * spec.beta1 * x.x_in[j];
        g[l.x_out(j)] = 2.0 * spec.beta2 * x.x_out[j];
        g[l.x_s(j)] = 2.0 * spec.beta3 * (x.x_s[j] - target);
        if x.x_in[j] - x.x_out[j] + d_raw[j] > 0.0 {
            g[l.x_in(j)] += price.prices[j];
            g[l.x_out(j)] -= price.prices[j];
        }
    }
    g
}

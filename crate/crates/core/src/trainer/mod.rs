//! Alternating minimax training of the filter against the adversary, with
//! the battery controller in the loop.
//!
//! Per step: draw a batch and one noise vector per record, update the
//! adversary on the privatized batch, push the filter up the adversary's
//! loss (step 1), solve the controller on the new privatized demand (step 2)
//! and pull the filter down the raw-demand cost through the QP (step 3).

pub mod convergence;

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::adversary::{self, backward, batch_loss_grad, ce_loss, forward, MlpParams};
use crate::battery::{build_qp_epigraph_form, utility_loss, utility_loss_grad_x, BatterySpec, CanonicalQP, ControlDecision};
use crate::data::{one_hot, Batch, Batcher, Dataset, PriceSchedule};
use crate::filter::FilterWeights;
use crate::numfmt::fmt9;
use crate::qp::{vjp_demand, QpEngine, QpError, QpSolution, SolverConfig, Status};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    /// `lr0 (1 - decay)^floor((k - 1) / interval)`.
    StepDecay,
    /// `lr0 / k`.
    Diminishing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_a: f64,
    /// Weight on `|gamma|^2`, and on the `V` term of the penalty unless
    /// `kappa_v` is set.
    pub kappa: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa_v: Option<f64>,
    pub lr_adversary: f64,
    /// Adversary steps on raw demand before the minimax loop starts.
    pub adversary_warmup: usize,
    pub lr_generator_initial: f64,
    /// Fraction the generator rate loses at each decay.
    pub lr_decay: f64,
    pub decay_interval: usize,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Stop once the joint parameter change stays below this for
    /// `convergence_window` consecutive steps.
    pub convergence_tol: f64,
    pub convergence_window: usize,
    pub schedule_mode: ScheduleMode,
    /// Evaluate on the test split every this many steps; 0 disables.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_a: 32.0,
            kappa: 1e-3,
            kappa_v: None,
            lr_adversary: 1e-3,
            adversary_warmup: 0,
            lr_generator_initial: 0.1,
            lr_decay: 0.2,
            decay_interval: 100,
            batch_size: 64,
            max_steps: 500,
            convergence_tol: 1e-5,
            convergence_window: 10,
            schedule_mode: ScheduleMode::StepDecay,
            eval_every: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.lambda_a) || !finite_nonneg(self.kappa) || !self.kappa_v.is_none_or(finite_nonneg) {
            return Err(Error::invalid("lambda_a and kappa must be finite and nonnegative"));
        }
        if !(self.lr_adversary > 0.0 && self.lr_generator_initial > 0.0)
            || !self.lr_adversary.is_finite()
            || !self.lr_generator_initial.is_finite()
        {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if !(0.0..1.0).contains(&self.lr_decay) {
            return Err(Error::invalid("lr_decay must lie in [0, 1)"));
        }
        if self.decay_interval == 0 || self.batch_size == 0 || self.convergence_window == 0 {
            return Err(Error::invalid(
                "decay_interval, batch_size and convergence_window must be positive",
            ));
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(Error::invalid("convergence_tol must be nonnegative"));
        }
        Ok(())
    }

    pub fn kappa_v(&self) -> f64 {
        self.kappa_v.unwrap_or(self.kappa)
    }

    /// Generator learning rate at 1-based step `k`.
    pub fn generator_lr(&self, k: usize) -> f64 {
        let k = k.max(1);
        match self.schedule_mode {
            ScheduleMode::StepDecay => {
                let decays = ((k - 1) / self.decay_interval) as i32;
                self.lr_generator_initial * (1.0 - self.lr_decay).powi(decays)
            }
            ScheduleMode::Diminishing => self.lr_generator_initial / k as f64,
        }
    }
}

/// Battery, tariff and solver pool shared by every step.
#[derive(Debug)]
pub struct Controller {
    pub spec: BatterySpec,
    pub price: PriceSchedule,
    engine: QpEngine,
}

/// A solved controller instance.
#[derive(Debug, Clone)]
pub struct Solved {
    pub qp: CanonicalQP,
    pub solution: QpSolution,
}

impl Solved {
    pub fn decision(&self) -> ControlDecision {
        ControlDecision::from_solution(&self.solution.x, self.qp.horizon).expect("solver output has QP shape")
    }
}

impl Controller {
    pub fn new(spec: BatterySpec, price: PriceSchedule, solver: SolverConfig) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            price,
            engine: QpEngine::new(solver)?,
        })
    }

    pub fn solver(&self) -> &SolverConfig {
        self.engine.config()
    }

    pub fn engine(&self) -> &QpEngine {
        &self.engine
    }

    pub fn horizon(&self) -> usize {
        self.price.horizon()
    }

    /// Solves the epigraph QP for one demand vector; anything but an optimal
    /// status is an error.
    pub fn solve_one(&self, demand: &[f64]) -> Result<Solved> {
        let qp = build_qp_epigraph_form(&self.spec, &self.price, demand)?;
        let solution = self.engine.solve(&qp)?;
        if solution.status != Status::Optimal {
            return Err(QpError::NotOptimal(solution.status).into());
        }
        Ok(Solved { qp, solution })
    }

    /// Solves every row of `demands` on the pool, in order.
    pub fn solve_rows(&self, demands: &DMatrix<f64>) -> Vec<Result<Solved>> {
        let rows: Vec<Vec<f64>> = (0..demands.nrows())
            .map(|i| demands.row(i).iter().copied().collect())
            .collect();
        self.engine.map(&rows, |d| self.solve_one(d))
    }

    /// Cost of a decision against `d_raw`.
    pub fn cost(&self, x: &ControlDecision, d_raw: &[f64]) -> f64 {
        utility_loss(x, d_raw, &self.price, &self.spec)
    }
}

fn row_vec(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

/// `m x H` standard normal draws.
pub fn sample_noise(rng: &mut ChaCha8Rng, m: usize, horizon: usize) -> DMatrix<f64> {
    // Row by row so record i always gets the i-th block of the stream.
    let mut eps = DMatrix::zeros(m, horizon);
    for i in 0..m {
        for j in 0..horizon {
            eps[(i, j)] = rng.sample(StandardNormal);
        }
    }
    eps
}

/// Privatized demand for each record of the batch.
pub fn privatize(w: &FilterWeights, batch: &Batch, eps: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(batch.len(), w.horizon());
    for i in 0..batch.len() {
        let d = w.perturb(&row_vec(&batch.demand, i), &row_vec(eps, i), batch.one_hot_row(i));
        out.set_row(i, &DVector::from_vec(d).transpose());
    }
    out
}

fn flipped(y: [f64; 2]) -> [f64; 2] {
    [y[1], y[0]]
}

/// Step-1 objective `mean_i[-lambda_a ln(1 - f_y(d~_i))] + kappa penalty` and
/// its gradient in the filter weights. With a two-way softmax,
/// `1 - f_y = f_{1-y}`, so the log term is cross-entropy against the flipped
/// label.
pub fn step1_objective_grad(
    w: &FilterWeights,
    params: &MlpParams,
    batch: &Batch,
    eps: &DMatrix<f64>,
    cfg: &TrainConfig,
    prior: [f64; 2],
) -> (f64, FilterWeights) {
    let m = batch.len();
    let d_tilde = privatize(w, batch, eps);
    let mut grad = w.weighted_penalty_grad(prior, cfg.kappa, cfg.kappa_v());
    let mut obj = w.weighted_penalty(prior, cfg.kappa, cfg.kappa_v());
    if cfg.lambda_a == 0.0 || m == 0 {
        return (obj, grad);
    }
    let scale = cfg.lambda_a / m as f64;
    for i in 0..m {
        let y = batch.one_hot_row(i);
        let (p, trace) = forward(params, &row_vec(&d_tilde, i));
        obj += scale * ce_loss(p, flipped(y));
        let (_, g_in) = backward(params, &trace, flipped(y));
        grad.axpy(scale, &FilterWeights::grad_wrt_weights(&row_vec(eps, i), y, g_in.as_slice()));
    }
    (obj, grad)
}

pub fn step1_generator_privacy_update(
    w: &FilterWeights,
    params: &MlpParams,
    batch: &Batch,
    eps: &DMatrix<f64>,
    cfg: &TrainConfig,
    prior: [f64; 2],
    lr: f64,
) -> FilterWeights {
    let (_, grad) = step1_objective_grad(w, params, batch, eps, cfg, prior);
    w.sgd_step(&grad, lr)
}

/// Privatized demand and the controller's solve on it, per record.
#[derive(Debug)]
pub struct ControlSolve {
    pub d_tilde: Vec<f64>,
    pub solved: Result<Solved>,
}

pub fn step2_solve_controls(w: &FilterWeights, batch: &Batch, eps: &DMatrix<f64>, ctrl: &Controller) -> Vec<ControlSolve> {
    let d_tilde = privatize(w, batch, eps);
    ctrl.solve_rows(&d_tilde)
        .into_iter()
        .enumerate()
        .map(|(i, solved)| ControlSolve {
            d_tilde: row_vec(&d_tilde, i),
            solved,
        })
        .collect()
}

/// Batch-mean step-3 gradient.
#[derive(Debug, Clone)]
pub struct UtilityGradient {
    pub grad: FilterWeights,
    /// Mean raw-demand cost over records whose solve succeeded.
    pub mean_loss: f64,
    /// Records contributing to `grad`.
    pub used: usize,
    /// `(record position, reason)` for records left out of `grad`.
    pub skipped: Vec<(usize, String)>,
}

/// `d L_u(x*(d~), d) / d d~` for one record, or why it is unavailable.
fn record_utility_grad(
    solve: &ControlSolve,
    d_raw: &[f64],
    ctrl: &Controller,
) -> (Option<f64>, std::result::Result<DVector<f64>, String>) {
    let solved = match &solve.solved {
        Ok(s) => s,
        Err(e) => return (None, Err(e.to_string())),
    };
    let x = solved.decision();
    let loss = ctrl.cost(&x, d_raw);
    let g3 = utility_loss_grad_x(&x, d_raw, &ctrl.price, &ctrl.spec);
    let mut cot = DVector::zeros(solved.qp.n());
    cot.rows_mut(0, g3.len()).copy_from(&g3);
    let upstream = vjp_demand(&solved.qp, &solved.solution, &cot, ctrl.solver()).map_err(|e| e.to_string());
    (Some(loss), upstream)
}

pub fn step3_utility_gradient(
    w: &FilterWeights,
    batch: &Batch,
    eps: &DMatrix<f64>,
    solves: &[ControlSolve],
    ctrl: &Controller,
) -> UtilityGradient {
    let idx: Vec<usize> = (0..batch.len()).collect();
    let per: Vec<_> = ctrl
        .engine()
        .map(&idx, |&i| record_utility_grad(&solves[i], &row_vec(&batch.demand, i), ctrl));
    let mut grad = FilterWeights::zeros(w.horizon());
    let mut skipped = Vec::new();
    let (mut loss_sum, mut n_loss, mut used) = (0.0, 0usize, 0usize);
    for (i, (loss, up)) in per.into_iter().enumerate() {
        if let Some(l) = loss {
            loss_sum += l;
            n_loss += 1;
        }
        match up {
            Ok(u) => {
                grad.axpy(
                    1.0,
                    &FilterWeights::grad_wrt_weights(&row_vec(eps, i), batch.one_hot_row(i), u.as_slice()),
                );
                used += 1;
            }
            Err(reason) => {
                log::debug!("record {} left out of the utility gradient: {reason}", batch.indices[i]);
                skipped.push((i, reason));
            }
        }
    }
    if used > 0 {
        grad.scale(1.0 / used as f64);
    }
    UtilityGradient {
        grad,
        mean_loss: if n_loss > 0 { loss_sum / n_loss as f64 } else { f64::NAN },
        used,
        skipped,
    }
}

pub fn step3_generator_utility_update(
    w: &FilterWeights,
    batch: &Batch,
    eps: &DMatrix<f64>,
    solves: &[ControlSolve],
    ctrl: &Controller,
    lr: f64,
) -> (FilterWeights, UtilityGradient) {
    let ug = step3_utility_gradient(w, batch, eps, solves, ctrl);
    (w.sgd_step(&ug.grad, lr), ug)
}

/// One SGD step of the adversary on the privatized batch with true labels.
/// Returns the new parameters and the batch-mean loss before the step.
pub fn adversary_update(
    params: &MlpParams,
    w: &FilterWeights,
    batch: &Batch,
    eps: &DMatrix<f64>,
    lr: f64,
) -> (MlpParams, f64) {
    let d_tilde = privatize(w, batch, eps);
    let targets: Vec<[f64; 2]> = (0..batch.len()).map(|i| batch.one_hot_row(i)).collect();
    let (loss, grads, _) = batch_loss_grad(params, &d_tilde, &targets);
    (params.sgd_step(&grads, lr), loss)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub adversary_loss: f64,
    pub utility_loss: f64,
    pub distortion: f64,
    pub generator_lr: f64,
    pub test_accuracy: Option<f64>,
    pub utility_gap_pct: Option<f64>,
    /// Records left out of the utility gradient.
    pub skipped: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
}

impl TrainLog {
    pub const HEADER: &'static str =
        "step,adversary_loss,utility_loss,distortion,generator_lr,test_accuracy,utility_gap_pct,skipped";

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        writeln!(out, "{}", Self::HEADER).map_err(|e| Error::io(path, e))?;
        for r in &self.steps {
            writeln!(out, "{}", r.csv_row()).map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

impl StepRecord {
    /// One line of the log CSV, without the newline.
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(fmt9).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step,
            fmt9(self.adversary_loss),
            fmt9(self.utility_loss),
            fmt9(self.distortion),
            fmt9(self.generator_lr),
            opt(self.test_accuracy),
            opt(self.utility_gap_pct),
            self.skipped
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub filter: FilterWeights,
    pub adversary: MlpParams,
    pub log: TrainLog,
    /// Step at which the convergence test fired, if it did.
    pub converged_at: Option<usize>,
}

/// Seeds for the independent random streams of one run.
#[derive(Debug, Clone, Copy)]
struct RunSeeds {
    filter: u64,
    adversary: u64,
    batches: u64,
    noise: u64,
    eval: u64,
    warmup: u64,
}

impl RunSeeds {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            filter: rng.random(),
            adversary: rng.random(),
            batches: rng.random(),
            noise: rng.random(),
            eval: rng.random(),
            warmup: rng.random(),
        }
    }
}

/// Initial adversary, fitted to raw demand for `cfg.adversary_warmup` steps.
fn warm_adversary(train_ds: &Dataset, cfg: &TrainConfig, seeds: &RunSeeds) -> Result<MlpParams> {
    let h = train_ds.horizon;
    let mut psi = MlpParams::init(h, seeds.adversary)?;
    if cfg.adversary_warmup == 0 {
        return Ok(psi);
    }
    let identity = FilterWeights::zeros(h);
    let batcher = Batcher::new(train_ds, cfg.batch_size.min(train_ds.len()), seeds.warmup)?;
    for batch in batcher.stream().take(cfg.adversary_warmup) {
        let eps = DMatrix::zeros(batch.len(), h);
        psi = adversary_update(&psi, &identity, &batch, &eps, cfg.lr_adversary).0;
    }
    Ok(psi)
}

/// Filter and adversary a run of [`train`] starts from.
pub fn initial_state(train_ds: &Dataset, cfg: &TrainConfig) -> Result<(FilterWeights, MlpParams)> {
    let seeds = RunSeeds::new(cfg.seed);
    Ok((
        FilterWeights::init(train_ds.horizon, seeds.filter)?,
        warm_adversary(train_ds, cfg, &seeds)?,
    ))
}

/// Seed of the noise stream used to privatize the test split in evaluation.
pub fn eval_seed(cfg: &TrainConfig) -> u64 {
    RunSeeds::new(cfg.seed).eval
}

pub fn train(train_ds: &Dataset, test_ds: Option<&Dataset>, ctrl: &Controller, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_observed(train_ds, test_ds, ctrl, cfg, &mut |_, _, _| Ok(()))
}

/// Called after every step with its log record and the updated filter and
/// adversary. An error aborts training.
pub type StepObserver<'a> = dyn FnMut(&StepRecord, &FilterWeights, &MlpParams) -> Result<()> + 'a;

/// [`train`] with `observe` run after each step.
pub fn train_observed(
    train_ds: &Dataset,
    test_ds: Option<&Dataset>,
    ctrl: &Controller,
    cfg: &TrainConfig,
    observe: &mut StepObserver<'_>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let h = train_ds.horizon;
    if h != ctrl.horizon() {
        return Err(Error::Dimension(format!(
            "dataset horizon {h} but price horizon {}",
            ctrl.horizon()
        )));
    }
    let seeds = RunSeeds::new(cfg.seed);
    let (mut w, mut psi) = initial_state(train_ds, cfg)?;
    let mut log = TrainLog::default();
    if cfg.max_steps == 0 {
        return Ok(TrainOutcome {
            filter: w,
            adversary: psi,
            log,
            converged_at: None,
        });
    }
    let prior = train_ds.class_probs();
    let batcher = Batcher::new(train_ds, cfg.batch_size.min(train_ds.len()), seeds.batches)?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seeds.noise);
    let baseline = match (cfg.eval_every, test_ds) {
        (0, _) | (_, None) => None,
        (_, Some(t)) => Some(raw_baseline(t, ctrl)?),
    };
    let mut last_utility_grad: Option<FilterWeights> = None;
    let mut quiet_steps = 0;
    let mut converged_at = None;

    for (k, batch) in (1..=cfg.max_steps).zip(batcher.stream()) {
        let lr = cfg.generator_lr(k);
        let eps = sample_noise(&mut noise_rng, batch.len(), h);

        let (psi_next, adv_loss) = adversary_update(&psi, &w, &batch, &eps, cfg.lr_adversary);
        let w_hat = step1_generator_privacy_update(&w, &psi_next, &batch, &eps, cfg, prior, lr);
        let solves = step2_solve_controls(&w_hat, &batch, &eps, ctrl);
        let ug = step3_utility_gradient(&w_hat, &batch, &eps, &solves, ctrl);
        let utility_grad = if ug.used > 0 {
            ug.grad.clone()
        } else {
            log::warn!(
                "step {k}: no record yielded a utility gradient ({} skipped); reusing the previous one",
                ug.skipped.len()
            );
            last_utility_grad.clone().unwrap_or_else(|| FilterWeights::zeros(h))
        };
        if !ug.skipped.is_empty() {
            log::info!("step {k}: {} of {} records skipped in the utility gradient", ug.skipped.len(), batch.len());
        }
        let w_next = w_hat.sgd_step(&utility_grad, lr);
        last_utility_grad = Some(utility_grad);

        let mut dw = w_next.clone();
        dw.axpy(-1.0, &w);
        let mut dpsi = psi_next.clone();
        dpsi.axpy(-1.0, &psi);
        let delta = (dw.norm_squared() + dpsi.norm_squared()).sqrt();
        w = w_next;
        psi = psi_next;

        let (test_accuracy, utility_gap_pct) = match (&baseline, test_ds) {
            (Some(base), Some(t)) if k % cfg.eval_every == 0 || k == cfg.max_steps => {
                let m = evaluate_with_baseline(&w, &psi, t, ctrl, prior, seeds.eval, base)?.0;
                (Some(m.accuracy), Some(m.utility_gap_pct))
            }
            _ => (None, None),
        };
        let record = StepRecord {
            step: k,
            adversary_loss: adv_loss,
            utility_loss: ug.mean_loss,
            distortion: w.distortion_penalty(prior),
            generator_lr: lr,
            test_accuracy,
            utility_gap_pct,
            skipped: ug.skipped.len(),
        };
        observe(&record, &w, &psi)?;
        log.steps.push(record);

        quiet_steps = if delta < cfg.convergence_tol { quiet_steps + 1 } else { 0 };
        if quiet_steps >= cfg.convergence_window {
            log::info!("converged at step {k}: parameter change below {} for {quiet_steps} steps", cfg.convergence_tol);
            converged_at = Some(k);
            break;
        }
    }
    Ok(TrainOutcome {
        filter: w,
        adversary: psi,
        log,
        converged_at,
    })
}

/// Adversary trained on raw demand (identity filter) with the same
/// initialization, warm-up, batches and step budget as [`train`].
pub fn train_raw_adversary(train_ds: &Dataset, cfg: &TrainConfig) -> Result<MlpParams> {
    cfg.validate()?;
    let h = train_ds.horizon;
    let seeds = RunSeeds::new(cfg.seed);
    let mut psi = warm_adversary(train_ds, cfg, &seeds)?;
    if cfg.max_steps == 0 {
        return Ok(psi);
    }
    let identity = FilterWeights::zeros(h);
    let batcher = Batcher::new(train_ds, cfg.batch_size.min(train_ds.len()), seeds.batches)?;
    for batch in batcher.stream().take(cfg.max_steps) {
        let eps = DMatrix::zeros(batch.len(), h);
        psi = adversary_update(&psi, &identity, &batch, &eps, cfg.lr_adversary).0;
    }
    Ok(psi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    /// Adversary accuracy on the privatized test split.
    pub accuracy: f64,
    /// Mean over records of the relative cost increase, percent.
    pub utility_gap_pct: f64,
    /// Closed-form `E |d~ - d|^2`.
    pub distortion: f64,
    /// Records left out of the gap (failed solve or nonpositive baseline).
    pub skipped: usize,
}

/// Raw-demand optimal controls and costs of a test split.
#[derive(Debug, Clone)]
pub struct RawBaseline {
    pub decisions: Vec<Option<ControlDecision>>,
    pub costs: Vec<Option<f64>>,
}

pub fn raw_baseline(test: &Dataset, ctrl: &Controller) -> Result<RawBaseline> {
    if test.is_empty() {
        return Err(Error::Empty("test split".into()));
    }
    let demands = DMatrix::from_fn(test.len(), test.horizon, |i, j| test.records[i].demand[j]);
    let mut decisions = Vec::with_capacity(test.len());
    let mut costs = Vec::with_capacity(test.len());
    for (i, s) in ctrl.solve_rows(&demands).into_iter().enumerate() {
        match s {
            Ok(s) => {
                let x = s.decision();
                costs.push(Some(ctrl.cost(&x, &test.records[i].demand)));
                decisions.push(Some(x));
            }
            Err(e) => {
                log::warn!("raw solve failed for test record {i}: {e}");
                costs.push(None);
                decisions.push(None);
            }
        }
    }
    Ok(RawBaseline { decisions, costs })
}

/// Per-record evaluation output.
#[derive(Debug, Clone)]
pub struct RecordEval {
    pub index: usize,
    pub label: u8,
    pub predicted: u8,
    pub d_tilde: Vec<f64>,
    pub raw_cost: Option<f64>,
    pub private_cost: Option<f64>,
    pub raw: Option<ControlDecision>,
    pub private: Option<ControlDecision>,
}

impl RecordEval {
    pub fn delta(&self) -> Option<f64> {
        Some(self.private_cost? - self.raw_cost?)
    }
}

/// `prior` is the training class distribution in one-hot index order
/// ([`Dataset::class_probs`]).
///
/// Privatizes the test split with a noise stream seeded by `seed`, scores
/// the adversary on it and compares controller costs against `baseline`.
pub fn evaluate_with_baseline(
    w: &FilterWeights,
    params: &MlpParams,
    test: &Dataset,
    ctrl: &Controller,
    prior: [f64; 2],
    seed: u64,
    baseline: &RawBaseline,
) -> Result<(Metrics, Vec<RecordEval>)> {
    if test.is_empty() {
        return Err(Error::Empty("test split".into()));
    }
    if baseline.costs.len() != test.len() {
        return Err(Error::Dimension("baseline does not match the test split".into()));
    }
    let h = test.horizon;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = sample_noise(&mut rng, test.len(), h);
    let mut d_tilde = DMatrix::zeros(test.len(), h);
    for (i, r) in test.records.iter().enumerate() {
        let d = w.perturb(&r.demand, &row_vec(&eps, i), one_hot(r.label));
        d_tilde.set_row(i, &DVector::from_vec(d).transpose());
    }
    let labels: Vec<u8> = test.records.iter().map(|r| r.label).collect();
    let solves = ctrl.solve_rows(&d_tilde);

    let mut records = Vec::with_capacity(test.len());
    let (mut hits, mut gap_sum, mut gap_n, mut skipped) = (0usize, 0.0, 0usize, 0usize);
    for (i, s) in solves.into_iter().enumerate() {
        let row = row_vec(&d_tilde, i);
        let predicted = adversary::predict(params, &row);
        hits += usize::from(predicted == labels[i]);
        let raw_demand = &test.records[i].demand;
        let (private, private_cost) = match s {
            Ok(s) => {
                let x = s.decision();
                let c = ctrl.cost(&x, raw_demand);
                (Some(x), Some(c))
            }
            Err(e) => {
                log::warn!("private solve failed for test record {i}: {e}");
                (None, None)
            }
        };
        match (baseline.costs[i], private_cost) {
            (Some(raw), Some(p)) if raw > 0.0 => {
                gap_sum += (p - raw) / raw * 100.0;
                gap_n += 1;
            }
            _ => skipped += 1,
        }
        records.push(RecordEval {
            index: i,
            label: labels[i],
            predicted,
            d_tilde: row,
            raw_cost: baseline.costs[i],
            private_cost,
            raw: baseline.decisions[i].clone(),
            private,
        });
    }
    let metrics = Metrics {
        accuracy: hits as f64 / test.len() as f64,
        utility_gap_pct: if gap_n > 0 { gap_sum / gap_n as f64 } else { f64::NAN },
        distortion: w.distortion_penalty(prior),
        skipped,
    };
    Ok((metrics, records))
}

pub fn evaluate(
    w: &FilterWeights,
    params: &MlpParams,
    test: &Dataset,
    ctrl: &Controller,
    prior: [f64; 2],
    seed: u64,
) -> Result<Metrics> {
    let base = raw_baseline(test, ctrl)?;
    Ok(evaluate_with_baseline(w, params, test, ctrl, prior, seed, &base)?.0)
}

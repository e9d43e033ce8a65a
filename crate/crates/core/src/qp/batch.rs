//! Parallel batch solves over a fixed-size worker pool.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::{solve, QpError, QpSolution, SolverConfig};
use crate::battery::{build_qp_epigraph_form, BatterySpec, CanonicalQP};
use crate::data::{synth_generate, PriceSchedule, SynthConfig};

/// A solver configuration bound to a thread pool of `cfg.threads` workers.
pub struct QpEngine {
    cfg: SolverConfig,
    pool: rayon::ThreadPool,
}

impl std::fmt::Debug for QpEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("QpEngine")
            .field("cfg", &self.cfg)
            .field("threads", &self.pool.current_num_threads())
            .finish()
    }
}

impl QpEngine {
    pub fn new(cfg: SolverConfig) -> Result<Self, QpError> {
        cfg.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| QpError::Pool(e.to_string()))?;
        Ok(Self { cfg, pool })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }

    pub fn solve(&self, qp: &CanonicalQP) -> Result<QpSolution, QpError> {
        solve(qp, &self.cfg)
    }

    /// Solves every instance; the outer error is reserved for an empty batch,
    /// per-instance failures stay in their own slot.
    pub fn solve_batch(&self, qps: &[CanonicalQP]) -> Result<Vec<Result<QpSolution, QpError>>, QpError> {
        if qps.is_empty() {
            return Err(QpError::EmptyBatch);
        }
        Ok(self.map(qps, |qp| solve(qp, &self.cfg)))
    }

    /// Order-preserving parallel map on this engine's pool.
    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        self.pool.install(|| items.par_iter().map(&f).collect())
    }
}

/// One-shot [`QpEngine::solve_batch`].
pub fn solve_batch(
    qps: &[CanonicalQP],
    cfg: &SolverConfig,
) -> Result<Vec<Result<QpSolution, QpError>>, QpError> {
    if qps.is_empty() {
        return Err(QpError::EmptyBatch);
    }
    QpEngine::new(*cfg)?.solve_batch(qps)
}

/// Epigraph-form battery QPs over synthetic demand and the default
/// time-of-use tariff. `horizon` must be a multiple of 24.
pub fn random_battery_instances(horizon: usize, count: usize, seed: u64) -> crate::Result<Vec<CanonicalQP>> {
    let ds = synth_generate(&SynthConfig {
        n_records: count,
        horizon,
        seed,
        ..SynthConfig::for_horizon(horizon)
    })?;
    let price = PriceSchedule::default_tou(horizon)?;
    let spec = BatterySpec::default();
    ds.records
        .iter()
        .map(|r| build_qp_epigraph_form(&spec, &price, &r.demand))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchRow {
    pub threads: usize,
    pub batch: usize,
    pub mean_s: f64,
    /// Sample standard deviation over repeats (0 for a single repeat).
    pub sd_s: f64,
}

/// Wall-clock time of [`QpEngine::solve_batch`] over `instances` for each
/// thread count, after one untimed warm-up run.
pub fn bench(
    instances: &[CanonicalQP],
    thread_counts: &[usize],
    repeats: usize,
    cfg: &SolverConfig,
) -> Result<Vec<BenchRow>, QpError> {
    if instances.is_empty() {
        return Err(QpError::EmptyBatch);
    }
    if repeats == 0 || thread_counts.is_empty() {
        return Err(QpError::Config("bench needs at least one repeat and one thread count".into()));
    }
    let mut rows = Vec::with_capacity(thread_counts.len());
    for &threads in thread_counts {
        let engine = QpEngine::new(SolverConfig { threads, ..*cfg })?;
        engine.solve_batch(instances)?;
        let times: Vec<f64> = (0..repeats)
            .map(|_| {
                let start = Instant::now();
                let out = engine.solve_batch(instances);
                std::hint::black_box(&out);
                start.elapsed().as_secs_f64()
            })
            .collect();
        let mean = times.iter().sum::<f64>() / repeats as f64;
        let sd = if repeats > 1 {
            (times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (repeats - 1) as f64).sqrt()
        } else {
            0.0
        };
        log::info!("bench threads={threads} batch={} mean={mean:.4}s sd={sd:.4}s", instances.len());
        rows.push(BenchRow {
            threads,
            batch: instances.len(),
            mean_s: mean,
            sd_s: sd,
        });
    }
    Ok(rows)
}

//! The five subcommands. Each takes a validated [`RunConfig`] and writes its
//! artifacts under `paths.out`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use meterguard::adversary::{accuracy, MlpParams};
use meterguard::checkpoint::Checkpoint;
use meterguard::data::{load_csv, split, synth_generate, write_csv, Dataset};
use meterguard::filter::FilterWeights;
use meterguard::numfmt::fmt9;
use meterguard::qp::{bench, random_battery_instances, BenchRow};
use meterguard::trainer::{
    eval_seed, evaluate_with_baseline, raw_baseline, train_observed, train_raw_adversary, Controller, RawBaseline,
    RecordEval, TrainConfig, TrainLog, TrainOutcome,
};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Context, Result};

pub const DATA_FILE: &str = "data.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const LOG_FILE: &str = "train_log.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const BENCH_FILE: &str = "bench.csv";
pub const EVAL_METRICS_FILE: &str = "eval_metrics.json";
pub const EVAL_RECORDS_FILE: &str = "eval_records.csv";

/// Summary of one train-and-evaluate run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub raw_accuracy: f64,
    pub priv_accuracy: f64,
    pub utility_gap_pct: f64,
    pub distortion: f64,
    pub lambda_a: f64,
}

/// Paths written by [`cmd_train`].
#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub metrics: RunMetrics,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub metrics_json: PathBuf,
    pub converged_at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda_a: f64,
    pub result: std::result::Result<RunMetrics, String>,
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.paths.out.clone();
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| CliError::io(path, e))?))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn opt9(v: Option<f64>) -> String {
    v.map(fmt9).unwrap_or_default()
}

pub fn controller(cfg: &RunConfig) -> Result<Controller> {
    Controller::new(cfg.battery, cfg.prices()?, cfg.solver).context(|| "building the controller".into())
}

/// The configured CSV if `paths.data` is set, else a synthetic dataset.
/// The split seed always comes from `data.split_seed`.
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let mut ds = match &cfg.paths.data {
        Some(path) => load_csv(path, cfg.data.horizon).context(|| format!("loading {}", path.display()))?,
        None => synth_generate(&cfg.synth).context(|| "synthesizing data".into())?,
    };
    ds.split_seed = cfg.data.split_seed;
    Ok(ds)
}

pub fn split_dataset(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let ds = load_dataset(cfg)?;
    split(&ds, cfg.data.train_fraction).context(|| "splitting the dataset".into())
}

/// Writes the synthetic dataset to `paths.data`, or `out/data.csv`.
pub fn cmd_synth(cfg: &RunConfig) -> Result<PathBuf> {
    let path = match &cfg.paths.data {
        Some(p) => p.clone(),
        None => out_dir(cfg)?.join(DATA_FILE),
    };
    let ds = synth_generate(&cfg.synth).context(|| "synthesizing data".into())?;
    write_csv(&ds, &path).context(|| format!("writing {}", path.display()))?;
    log::info!("wrote {} records to {}", ds.len(), path.display());
    Ok(path)
}

/// Adversary accuracy on the raw test split after training on raw demand.
pub fn raw_accuracy(train: &Dataset, test: &Dataset, tc: &TrainConfig) -> Result<f64> {
    let params = train_raw_adversary(train, tc).context(|| "training the raw adversary".into())?;
    Ok(accuracy(&params, test)?)
}

struct Prepared {
    train: Dataset,
    test: Dataset,
    ctrl: Controller,
    baseline: RawBaseline,
    raw_accuracy: f64,
}

fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let (train, test) = split_dataset(cfg)?;
    let ctrl = controller(cfg)?;
    let baseline = raw_baseline(&test, &ctrl).context(|| "solving raw test controls".into())?;
    let raw_accuracy = raw_accuracy(&train, &test, &cfg.train)?;
    log::info!(
        "{} train / {} test records, raw adversary accuracy {raw_accuracy:.4}",
        train.len(),
        test.len()
    );
    Ok(Prepared {
        train,
        test,
        ctrl,
        baseline,
        raw_accuracy,
    })
}

fn run_one(
    p: &Prepared,
    tc: &TrainConfig,
    on_step: &mut meterguard::trainer::StepObserver<'_>,
) -> Result<(TrainOutcome, RunMetrics)> {
    let outcome = train_observed(&p.train, Some(&p.test), &p.ctrl, tc, on_step)
        .context(|| format!("training at lambda_a {}", tc.lambda_a))?;
    let prior = p.train.class_probs();
    let (m, _) = evaluate_with_baseline(
        &outcome.filter,
        &outcome.adversary,
        &p.test,
        &p.ctrl,
        prior,
        eval_seed(tc),
        &p.baseline,
    )
    .context(|| format!("evaluating at lambda_a {}", tc.lambda_a))?;
    let metrics = RunMetrics {
        raw_accuracy: p.raw_accuracy,
        priv_accuracy: m.accuracy,
        utility_gap_pct: m.utility_gap_pct,
        distortion: m.distortion,
        lambda_a: tc.lambda_a,
    };
    log::info!(
        "lambda_a {}: accuracy {:.4} (raw {:.4}), gap {:.3}%, distortion {:.4}",
        tc.lambda_a,
        metrics.priv_accuracy,
        metrics.raw_accuracy,
        metrics.utility_gap_pct,
        metrics.distortion
    );
    Ok((outcome, metrics))
}

/// Trains a filter and adversary, appending the log as it goes; writes the
/// final checkpoint and the metrics JSON.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainArtifacts> {
    let dir = out_dir(cfg)?;
    let p = prepare(cfg)?;
    let log_path = dir.join(LOG_FILE);
    let mut log_out = create(&log_path)?;
    writeln!(log_out, "{}", TrainLog::HEADER).map_err(|e| CliError::io(&log_path, e))?;
    let prior = p.train.class_probs();
    let h = p.train.horizon;
    let every = cfg.paths.checkpoint_every;
    let mut on_step = |r: &meterguard::trainer::StepRecord, w: &FilterWeights, psi: &MlpParams| {
        writeln!(log_out, "{}", r.csv_row())
            .and_then(|_| log_out.flush())
            .map_err(|e| meterguard::Error::io(&log_path, e))?;
        if every > 0 && r.step % every == 0 {
            let ck = Checkpoint {
                horizon: h,
                prior,
                step: r.step,
                filter: w.clone(),
                adversary: psi.clone(),
            };
            ck.save(dir.join(format!("checkpoint_{}.txt", r.step)))?;
        }
        Ok(())
    };
    let (outcome, metrics) = run_one(&p, &cfg.train, &mut on_step)?;

    let checkpoint = dir.join(CHECKPOINT_FILE);
    Checkpoint {
        horizon: h,
        prior,
        step: outcome.log.steps.len(),
        filter: outcome.filter,
        adversary: outcome.adversary,
    }
    .save(&checkpoint)?;
    let metrics_json = dir.join(METRICS_FILE);
    write_json(&metrics_json, &metrics)?;
    Ok(TrainArtifacts {
        metrics,
        checkpoint,
        log: log_path,
        metrics_json,
        converged_at: outcome.converged_at,
    })
}

/// One independent run per `sweep.lambdas` entry on a shared split and
/// shared seeds. A failed point is recorded and the sweep moves on.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<Vec<SweepRow>> {
    if cfg.sweep.lambdas.is_empty() {
        return Err(CliError::Config("sweep.lambdas is empty".into()));
    }
    let dir = out_dir(cfg)?;
    let p = prepare(cfg)?;
    let mut rows = Vec::with_capacity(cfg.sweep.lambdas.len());
    for &lambda_a in &cfg.sweep.lambdas {
        let tc = TrainConfig {
            lambda_a,
            ..cfg.train.clone()
        };
        let result = run_one(&p, &tc, &mut |_, _, _| Ok(())).map(|(_, m)| m).map_err(|e| {
            log::error!("sweep point lambda_a {lambda_a} failed: {e}");
            e.to_string()
        });
        rows.push(SweepRow { lambda_a, result });
    }
    let path = dir.join(SWEEP_FILE);
    let mut out = create(&path)?;
    let io = |e| CliError::io(&path, e);
    writeln!(out, "lambda_a,raw_accuracy,accuracy,utility_gap_pct,distortion,error").map_err(io)?;
    for r in &rows {
        match &r.result {
            Ok(m) => writeln!(
                out,
                "{},{},{},{},{},",
                fmt9(r.lambda_a),
                fmt9(m.raw_accuracy),
                fmt9(m.priv_accuracy),
                fmt9(m.utility_gap_pct),
                fmt9(m.distortion)
            ),
            Err(e) => writeln!(out, "{},,,,,\"{}\"", fmt9(r.lambda_a), e.replace('"', "'")),
        }
        .map_err(io)?;
    }
    out.flush().map_err(io)?;
    Ok(rows)
}

/// Thread counts with 0 replaced by the number of available cores.
pub fn resolve_threads(counts: &[usize]) -> Vec<usize> {
    let max = std::thread::available_parallelism().map_or(1, |n| n.get());
    counts.iter().map(|&t| if t == 0 { max } else { t }).collect()
}

/// Times batched solves of random battery instances over the configured
/// grid of batch sizes and thread counts.
pub fn cmd_bench(cfg: &RunConfig) -> Result<Vec<BenchRow>> {
    let dir = out_dir(cfg)?;
    let threads = resolve_threads(&cfg.bench.thread_counts);
    let mut rows = Vec::new();
    for &batch in &cfg.bench.batch_sizes {
        // The instance generator wants at least two draws.
        let mut instances = random_battery_instances(cfg.data.horizon, batch.max(2), cfg.bench.seed)?;
        instances.truncate(batch);
        rows.extend(bench(&instances, &threads, cfg.bench.repeats, &cfg.solver).map_err(meterguard::Error::from)?);
    }
    let path = dir.join(BENCH_FILE);
    let mut out = create(&path)?;
    let io = |e| CliError::io(&path, e);
    writeln!(out, "threads,batch,mean_s,sd_s").map_err(io)?;
    for r in &rows {
        writeln!(out, "{},{},{},{}", r.threads, r.batch, fmt9(r.mean_s), fmt9(r.sd_s)).map_err(io)?;
    }
    out.flush().map_err(io)?;
    Ok(rows)
}

/// Evaluates a checkpoint on the test split: metrics JSON plus one CSV row
/// per test record with raw and private costs and both schedules.
pub fn cmd_eval(cfg: &RunConfig) -> Result<(RunMetrics, Vec<RecordEval>)> {
    let dir = out_dir(cfg)?;
    let ck_path = cfg.paths.checkpoint.clone().unwrap_or_else(|| dir.join(CHECKPOINT_FILE));
    let ck = Checkpoint::load(&ck_path).context(|| format!("loading {}", ck_path.display()))?;
    if ck.horizon != cfg.data.horizon {
        return Err(CliError::Config(format!(
            "checkpoint horizon {} does not match data.horizon {}",
            ck.horizon, cfg.data.horizon
        )));
    }
    let p = prepare(cfg)?;
    let (m, records) = evaluate_with_baseline(
        &ck.filter,
        &ck.adversary,
        &p.test,
        &p.ctrl,
        ck.prior,
        eval_seed(&cfg.train),
        &p.baseline,
    )
    .context(|| "evaluating the checkpoint".into())?;
    let metrics = RunMetrics {
        raw_accuracy: p.raw_accuracy,
        priv_accuracy: m.accuracy,
        utility_gap_pct: m.utility_gap_pct,
        distortion: m.distortion,
        lambda_a: cfg.train.lambda_a,
    };
    write_json(&dir.join(EVAL_METRICS_FILE), &metrics)?;
    write_records(&dir.join(EVAL_RECORDS_FILE), &records, ck.horizon)?;
    Ok((metrics, records))
}

fn write_records(path: &Path, records: &[RecordEval], h: usize) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| CliError::io(path, e);
    let mut header = vec!["index".to_string(), "label".into(), "predicted".into()];
    header.extend(["raw_cost", "private_cost", "delta"].map(String::from));
    for side in ["raw", "private"] {
        for series in ["x_in", "x_out", "x_s"] {
            header.extend((0..h).map(|j| format!("{side}_{series}_{j}")));
        }
    }
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    for r in records {
        let mut row = vec![
            r.index.to_string(),
            r.label.to_string(),
            r.predicted.to_string(),
            opt9(r.raw_cost),
            opt9(r.private_cost),
            opt9(r.delta()),
        ];
        for x in [&r.raw, &r.private] {
            match x {
                Some(x) => {
                    for series in [&x.x_in, &x.x_out, &x.x_s] {
                        row.extend(series.iter().map(|&v| fmt9(v)));
                    }
                }
                None => row.extend(std::iter::repeat_n(String::new(), 3 * h)),
            }
        }
        writeln!(out, "{}", row.join(",")).map_err(io)?;
    }
    out.flush().map_err(io)
}

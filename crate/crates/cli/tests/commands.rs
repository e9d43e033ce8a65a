use std::path::Path;
use std::process::Command;

use meterguard::checkpoint::Checkpoint;
use meterguard::filter::FilterWeights;
use meterguard::adversary::MlpParams;
use meterguard_cli::commands::{resolve_threads, split_dataset, BENCH_FILE, EVAL_RECORDS_FILE, LOG_FILE, SWEEP_FILE};
use meterguard_cli::{cmd_bench, cmd_eval, cmd_sweep, cmd_synth, cmd_train, RunConfig};

/// Small, fast configuration with the tuned training rates.
fn small(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.paths.out = out.to_path_buf();
    cfg.synth.n_records = 1000;
    cfg.train.lr_adversary = 0.1;
    cfg.train.lr_generator_initial = 0.01;
    cfg.train.adversary_warmup = 300;
    cfg.train.batch_size = 16;
    cfg.train.max_steps = 12;
    cfg
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn synth_writes_n_rows_of_h_plus_one_columns() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.synth.n_records = 50;
    let path = cmd_synth(&cfg).unwrap();
    let text = read(&path);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 51);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 25));
    let negative = lines[1..]
        .iter()
        .flat_map(|l| l.split(',').take(24))
        .any(|v| v.parse::<f64>().unwrap() < 0.0);
    assert!(negative, "solar netting should produce exports");

    let again = cmd_synth(&cfg).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn synth_without_solar_stays_nonnegative() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.synth.n_records = 50;
    cfg.synth.solar_depth = 0.0;
    cfg.synth.noise_sd = 0.05;
    let text = read(&cmd_synth(&cfg).unwrap());
    assert!(text.lines().skip(1).flat_map(|l| l.split(',').take(24)).all(|v| v.parse::<f64>().unwrap() >= 0.0));
}

#[test]
fn train_without_privacy_weight_tracks_the_raw_adversary() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.synth.n_records = 2000;
    cfg.train.max_steps = 30;
    cfg.train.lambda_a = 0.0;
    let a = cmd_train(&cfg).unwrap();
    let m = a.metrics;
    assert!(m.raw_accuracy >= 0.9, "{m:?}");
    assert!((m.priv_accuracy - m.raw_accuracy).abs() <= 0.02, "{m:?}");
    assert!(m.utility_gap_pct.abs() <= 1.0, "{m:?}");
    assert_eq!(m.lambda_a, 0.0);

    let log = read(&a.log);
    assert_eq!(log.lines().count(), 1 + cfg.train.max_steps);
    let json: serde_json::Value = serde_json::from_str(&read(&a.metrics_json)).unwrap();
    let mut keys: Vec<&str> = json.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort();
    assert_eq!(keys, ["distortion", "lambda_a", "priv_accuracy", "raw_accuracy", "utility_gap_pct"]);
    let ck = Checkpoint::load(&a.checkpoint).unwrap();
    assert_eq!(ck.step, cfg.train.max_steps);
    assert_eq!(ck.horizon, 24);
    assert!(dir.path().join(LOG_FILE).exists());
}

#[test]
fn periodic_checkpoints_follow_the_configured_interval() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.synth.n_records = 200;
    cfg.train.max_steps = 5;
    cfg.paths.checkpoint_every = 2;
    cmd_train(&cfg).unwrap();
    for step in [2, 4] {
        let ck = Checkpoint::load(dir.path().join(format!("checkpoint_{step}.txt"))).unwrap();
        assert_eq!(ck.step, step);
    }
    assert!(!dir.path().join("checkpoint_5.txt").exists());
}

#[test]
fn repeated_train_runs_write_identical_metrics() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut cfg = small(a.path());
    cfg.synth.n_records = 300;
    cfg.train.max_steps = 6;
    let first = cmd_train(&cfg).unwrap();
    cfg.paths.out = b.path().to_path_buf();
    cfg.solver.threads = 3;
    let second = cmd_train(&cfg).unwrap();
    assert_eq!(read(&first.metrics_json), read(&second.metrics_json));
    assert_eq!(read(&first.log), read(&second.log));
}

#[test]
fn singleton_sweep_writes_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.synth.n_records = 300;
    cfg.train.max_steps = 4;
    cfg.sweep.lambdas = vec![2.0];
    let rows = cmd_sweep(&cfg).unwrap();
    assert_eq!(rows.len(), 1);
    let m = rows[0].result.as_ref().unwrap();
    assert_eq!(m.lambda_a, 2.0);
    let text = read(&dir.path().join(SWEEP_FILE));
    assert_eq!(text.lines().count(), 2);
    assert!(text.starts_with("lambda_a,raw_accuracy,accuracy,utility_gap_pct"));

    cfg.sweep.lambdas.clear();
    assert!(cmd_sweep(&cfg).is_err());
}

#[test]
fn bench_covers_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.bench.repeats = 1;
    cfg.bench.batch_sizes = vec![1, 8, 32];
    let rows = cmd_bench(&cfg).unwrap();
    assert_eq!(rows.len(), 12);
    let max = resolve_threads(&[0])[0];
    assert_eq!(rows.iter().map(|r| r.threads).take(4).collect::<Vec<_>>(), [1, 2, 4, max]);
    let text = read(&dir.path().join(BENCH_FILE));
    assert_eq!(text.lines().next().unwrap(), "threads,batch,mean_s,sd_s");
    assert_eq!(text.lines().count(), 13);
    assert_eq!(RunConfig::default().bench.repeats, 8);
    assert_eq!(RunConfig::default().bench.batch_sizes.len() * RunConfig::default().bench.thread_counts.len(), 16);
}

fn write_checkpoint(path: &Path, filter: FilterWeights, prior: [f64; 2]) {
    Checkpoint {
        horizon: filter.horizon(),
        prior,
        step: 0,
        adversary: MlpParams::init(filter.horizon(), 5).unwrap(),
        filter,
    }
    .save(path)
    .unwrap();
}

#[test]
fn identity_checkpoint_has_zero_cost_deltas() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.synth.n_records = 200;
    let ck = dir.path().join("identity.txt");
    write_checkpoint(&ck, FilterWeights::zeros(24), [0.5, 0.5]);
    cfg.paths.checkpoint = Some(ck);
    let (m, records) = cmd_eval(&cfg).unwrap();
    assert_eq!(m.distortion, 0.0);
    assert!(records.iter().all(|r| r.delta() == Some(0.0)));
    assert_eq!(m.utility_gap_pct, 0.0);

    let text = read(&dir.path().join(EVAL_RECORDS_FILE));
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    assert_eq!(header.len(), 6 + 6 * 24);
    assert_eq!(&header[..6], ["index", "label", "predicted", "raw_cost", "private_cost", "delta"]);
    assert_eq!(text.lines().count(), 1 + split_dataset(&cfg).unwrap().1.len());
}

#[test]
fn private_costs_never_beat_raw_optimal_costs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.synth.n_records = 200;
    let ck = dir.path().join("noisy.txt");
    let mut w = FilterWeights::init(24, 1).unwrap();
    w.scale(5.0);
    write_checkpoint(&ck, w, [0.5, 0.5]);
    cfg.paths.checkpoint = Some(ck);
    let (_, records) = cmd_eval(&cfg).unwrap();
    let mut checked = 0;
    for r in &records {
        if let (Some(raw), Some(private)) = (r.raw_cost, r.private_cost) {
            assert!(private >= raw - 1e-6 * (1.0 + raw.abs()), "record {}: {private} < {raw}", r.index);
            checked += 1;
        }
    }
    assert!(checked > records.len() / 2);

    // Deltas bin at 2.5 from the CSV alone.
    let text = read(&dir.path().join(EVAL_RECORDS_FILE));
    let bins: Vec<i64> = text
        .lines()
        .skip(1)
        .filter_map(|l| l.split(',').nth(5).and_then(|v| v.parse::<f64>().ok()))
        .map(|d| (d / 2.5).floor() as i64)
        .collect();
    assert_eq!(bins.len(), checked);
}

#[test]
fn eval_rejects_a_checkpoint_of_another_horizon() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    let ck = dir.path().join("h12.txt");
    write_checkpoint(&ck, FilterWeights::zeros(12), [0.5, 0.5]);
    cfg.paths.checkpoint = Some(ck);
    assert!(cmd_eval(&cfg).is_err());
    cfg.paths.checkpoint = Some(dir.path().join("missing.txt"));
    assert!(cmd_eval(&cfg).is_err());
}

#[test]
fn binary_applies_global_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.toml");
    std::fs::write(&cfg_path, "[synth]\nn_records = 20\n").unwrap();
    let out = dir.path().join("o");
    let status = Command::new(env!("CARGO_BIN_EXE_meterguard"))
        .args(["--config", cfg_path.to_str().unwrap(), "--seed", "9", "--out", out.to_str().unwrap(), "synth"])
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(read(&out.join("data.csv")).lines().count(), 21);

    let printed = Command::new(env!("CARGO_BIN_EXE_meterguard"))
        .args(["--config", cfg_path.to_str().unwrap(), "--seed", "9", "--threads", "3", "config"])
        .output()
        .unwrap();
    let effective = RunConfig::from_toml(std::str::from_utf8(&printed.stdout).unwrap()).unwrap();
    assert_eq!((effective.synth.seed, effective.train.seed, effective.solver.threads), (9, 9, 3));

    let bad = Command::new(env!("CARGO_BIN_EXE_meterguard"))
        .args(["--config", dir.path().join("nope.toml").to_str().unwrap(), "synth"])
        .output()
        .unwrap();
    assert!(!bad.status.success());
}

#[test]
fn shipped_example_config_is_valid() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic.toml");
    let cfg = RunConfig::load(path).unwrap();
    assert_eq!(cfg.synth.n_records, 4000);
    assert_eq!(cfg.data.train_fraction, 0.85);
}

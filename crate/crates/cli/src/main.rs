use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use meterguard_cli::{cmd_bench, cmd_eval, cmd_sweep, cmd_synth, cmd_train, RunConfig};

#[derive(Parser)]
#[command(name = "meterguard", version, about = "Privatize demand series for battery control")]
struct Cli {
    /// TOML run config; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Sets the data, split and training seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Solver worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset CSV.
    Synth,
    /// Train a filter and adversary; write checkpoint, log and metrics.
    Train,
    /// Train and evaluate once per configured privacy weight.
    Sweep,
    /// Time batched solves over batch sizes and thread counts.
    Bench,
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Print the effective config.
    Config,
}

fn run(cli: Cli) -> meterguard_cli::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.set_seed(s);
    }
    if let Some(t) = cli.threads {
        cfg.set_threads(t);
    }
    if let Some(o) = cli.out {
        cfg.paths.out = o;
    }
    if let Command::Eval { checkpoint: Some(c) } = &cli.command {
        cfg.paths.checkpoint = Some(c.clone());
    }
    cfg.validate()?;
    match cli.command {
        Command::Synth => {
            let path = cmd_synth(&cfg)?;
            println!("{}", path.display());
        }
        Command::Train => {
            let a = cmd_train(&cfg)?;
            println!("{}", serde_json::to_string(&a.metrics)?);
        }
        Command::Sweep => {
            for r in cmd_sweep(&cfg)? {
                match r.result {
                    Ok(m) => println!(
                        "lambda_a {}: accuracy {:.4}, gap {:.3}%",
                        r.lambda_a, m.priv_accuracy, m.utility_gap_pct
                    ),
                    Err(e) => println!("lambda_a {}: failed: {e}", r.lambda_a),
                }
            }
        }
        Command::Bench => {
            for r in cmd_bench(&cfg)? {
                println!("threads {:>3} batch {:>4}: {:.4}s ± {:.4}s", r.threads, r.batch, r.mean_s, r.sd_s);
            }
        }
        Command::Eval { .. } => {
            let (m, _) = cmd_eval(&cfg)?;
            println!("{}", serde_json::to_string(&m)?);
        }
        Command::Config => print!("{}", cfg.to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

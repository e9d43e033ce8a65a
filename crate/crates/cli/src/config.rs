//! The run configuration, read from and written to TOML.

use std::path::{Path, PathBuf};

use meterguard::battery::BatterySpec;
use meterguard::data::{build_tou_prices, default_tou_tiers, PriceSchedule, PriceTier, SynthConfig};
use meterguard::qp::SolverConfig;
use meterguard::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub battery: BatterySpec,
    pub prices: PriceConfig,
    pub train: TrainConfig,
    pub solver: SolverConfig,
    pub sweep: SweepConfig,
    pub bench: BenchConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Dataset CSV. Without it, commands that need data synthesize it in
    /// memory from `[synth]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    /// Checkpoint read by `eval`; defaults to the one `train` writes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Also write `checkpoint_<step>.txt` every this many training steps;
    /// 0 disables.
    pub checkpoint_every: usize,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data: None,
            out: PathBuf::from("out"),
            checkpoint: None,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub horizon: usize,
    pub train_fraction: f64,
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            horizon: 24,
            train_fraction: 0.85,
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriceConfig {
    pub tiers: Vec<PriceTier>,
}

impl Default for PriceConfig {
    fn default() -> Self {
        Self {
            tiers: default_tou_tiers(24).expect("24 is a valid horizon"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub lambdas: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            lambdas: vec![0.01, 1.0, 32.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub batch_sizes: Vec<usize>,
    /// 0 stands for every available core.
    pub thread_counts: Vec<usize>,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            batch_sizes: vec![1, 8, 32, 128],
            thread_counts: vec![1, 2, 4, 0],
            repeats: 8,
            seed: 0,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            data: DataConfig::default(),
            synth: SynthConfig::default(),
            battery: BatterySpec::default(),
            prices: PriceConfig::default(),
            train: TrainConfig::default(),
            solver: SolverConfig::default(),
            sweep: SweepConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()).map_err(|e| CliError::io(path, e))
    }

    /// Sets the data, split and training seeds together.
    pub fn set_seed(&mut self, seed: u64) {
        self.synth.seed = seed;
        self.data.split_seed = seed;
        self.train.seed = seed;
    }

    pub fn set_threads(&mut self, threads: usize) {
        self.solver.threads = threads;
    }

    pub fn prices(&self) -> Result<PriceSchedule> {
        Ok(build_tou_prices(self.data.horizon, &self.prices.tiers)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        self.battery.validate()?;
        self.synth.validate()?;
        self.train.validate()?;
        self.solver.validate().map_err(meterguard::Error::from)?;
        self.prices()?;
        if self.synth.horizon != self.data.horizon {
            return bad(format!(
                "synth.horizon {} differs from data.horizon {}",
                self.synth.horizon, self.data.horizon
            ));
        }
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            return bad(format!("data.train_fraction {} must lie in (0, 1)", self.data.train_fraction));
        }
        if let Some(l) = self.sweep.lambdas.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return bad(format!("sweep lambda {l} must be finite and nonnegative"));
        }
        if self.bench.repeats == 0 {
            return bad("bench.repeats must be positive".into());
        }
        if self.bench.batch_sizes.is_empty() || self.bench.batch_sizes.contains(&0) {
            return bad("bench.batch_sizes must be nonempty and positive".into());
        }
        if self.bench.thread_counts.is_empty() {
            return bad("bench.thread_counts must be nonempty".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn every_section_is_emitted() {
        let text = RunConfig::default().to_toml();
        for section in ["[paths]", "[data]", "[synth]", "[battery]", "[[prices.tiers]]", "[train]", "[solver]", "[sweep]", "[bench]"] {
            assert!(text.contains(section), "missing {section}");
        }
        assert!(text.contains("beta1 = 1e-5") || text.contains("beta1 = 0.00001"));
    }

    #[test]
    fn partial_files_fill_in_defaults() {
        let cfg = RunConfig::from_toml("[train]\nlambda_a = 8.0\n").unwrap();
        assert_eq!(cfg.train.lambda_a, 8.0);
        assert_eq!(cfg.train.kappa, TrainConfig::default().kappa);
        assert_eq!(cfg.data.train_fraction, 0.85);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(RunConfig::from_toml("[train]\nlamda = 1.0\n").is_err());
        assert!(RunConfig::from_toml("[data]\ntrain_fraction = 1.0\n").is_err());
        assert!(RunConfig::from_toml("[sweep]\nlambdas = [-1.0]\n").is_err());
        assert!(RunConfig::from_toml("[data]\nhorizon = 48\n").is_err());
    }

    #[test]
    fn seed_override_reaches_every_stream() {
        let mut cfg = RunConfig::default();
        cfg.set_seed(42);
        assert_eq!((cfg.synth.seed, cfg.data.split_seed, cfg.train.seed), (42, 42, 42));
    }
}

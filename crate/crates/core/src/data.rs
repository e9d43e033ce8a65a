//! Labeled demand series: ingestion, synthesis, splitting, batching, and the
//! time-of-use price schedule the controller optimizes against.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::numfmt::{fmt9, quantize9};
use crate::{Error, Result};

/// One day (or horizon) of demand with its binary sensitive label.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandRecord {
    /// kWh per interval. Raw residential demand is nonnegative; solar-netted
    /// series may dip below zero.
    pub demand: Vec<f64>,
    pub label: u8,
}

impl DemandRecord {
    pub fn new(demand: Vec<f64>, label: u8) -> Result<Self> {
        if label > 1 {
            return Err(Error::invalid(format!("label must be 0 or 1, got {label}")));
        }
        Ok(Self { demand, label })
    }

    /// Class `k` is encoded as the unit vector `e_k`.
    pub fn one_hot(&self) -> [f64; 2] {
        one_hot(self.label)
    }
}

pub fn one_hot(label: u8) -> [f64; 2] {
    if label == 0 {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<DemandRecord>,
    pub horizon: usize,
    /// `[p, 1 - p]` where `p` is the empirical fraction of label-1 records.
    pub prior: [f64; 2],
    pub split_seed: u64,
}

impl Dataset {
    pub fn new(records: Vec<DemandRecord>, horizon: usize, split_seed: u64) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::invalid("horizon must be positive"));
        }
        if let Some((i, r)) = records
            .iter()
            .enumerate()
            .find(|(_, r)| r.demand.len() != horizon)
        {
            return Err(Error::Dimension(format!(
                "record {i} has {} intervals, expected {horizon}",
                r.demand.len()
            )));
        }
        let prior = empirical_prior(&records);
        Ok(Self {
            records,
            horizon,
            prior,
            split_seed,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Probability of each one-hot index: `[P(label 0), P(label 1)]`.
    ///
    /// This is `prior` reversed; `prior` keeps the positive class first.
    pub fn class_probs(&self) -> [f64; 2] {
        [self.prior[1], self.prior[0]]
    }

    fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        let records = idx.iter().map(|&i| self.records[i].clone()).collect();
        Dataset::new(records, self.horizon, self.split_seed)
    }
}

fn empirical_prior(records: &[DemandRecord]) -> [f64; 2] {
    if records.is_empty() {
        return [0.0, 1.0];
    }
    let ones = records.iter().filter(|r| r.label == 1).count();
    let p = ones as f64 / records.len() as f64;
    [p, 1.0 - p]
}

/// Reads `H` demand columns followed by one integer label column per row.
/// A non-numeric first row is treated as a header.
pub fn load_csv(path: impl AsRef<Path>, horizon: usize) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = i + 1;
        if row.len() != horizon + 1 {
            if i == 0 && !row_is_numeric(&row) {
                continue;
            }
            return Err(Error::Parse {
                row: line,
                msg: format!("expected {} columns, found {}", horizon + 1, row.len()),
            });
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            row.iter().take(horizon).map(str::parse::<f64>).collect();
        let demand = match parsed {
            Ok(d) => d,
            Err(_) if i == 0 => continue,
            Err(e) => {
                return Err(Error::Parse {
                    row: line,
                    msg: format!("bad demand value: {e}"),
                })
            }
        };
        let label: u8 = row[horizon].parse().map_err(|_| Error::Parse {
            row: line,
            msg: format!("bad label {:?}", &row[horizon]),
        })?;
        if label > 1 {
            return Err(Error::Parse {
                row: line,
                msg: format!("label must be 0 or 1, got {label}"),
            });
        }
        records.push(DemandRecord { demand, label });
    }
    if records.is_empty() {
        return Err(Error::Empty(format!("{} has no records", path.display())));
    }
    Dataset::new(records, horizon, 0)
}

fn row_is_numeric(row: &csv::StringRecord) -> bool {
    row.iter().all(|f| f.parse::<f64>().is_ok())
}

/// Writes the dataset with a `d0,...,d{H-1},label` header, floats at 9
/// significant digits.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut header: Vec<String> = (0..ds.horizon).map(|j| format!("d{j}")).collect();
    header.push("label".into());
    writeln!(w, "{}", header.join(",")).map_err(|e| Error::io(path, e))?;
    for r in &ds.records {
        let mut line: Vec<String> = r.demand.iter().map(|&v| fmt9(v)).collect();
        line.push(r.label.to_string());
        writeln!(w, "{}", line.join(",")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parameters of the synthetic two-class demand generator.
///
/// Peak-hour entries sit at the class peak height, other hours at the base
/// load minus a midday solar bump. Noise is Gaussian per entry, plus a shared
/// per-record jitter on the peak block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_records: usize,
    pub horizon: usize,
    pub class0_peak: f64,
    pub class1_peak: f64,
    /// Interval indices of the evening peak.
    pub peak_hours: Vec<usize>,
    pub base_load: f64,
    pub noise_sd: f64,
    /// Maximum solar reduction at midday; zero disables solar netting.
    pub solar_depth: f64,
    pub class1_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_records: 4000,
            horizon: 24,
            class0_peak: 2.0,
            class1_peak: 3.0,
            peak_hours: (16..21).collect(),
            base_load: 1.0,
            noise_sd: 0.25,
            solar_depth: 1.5,
            class1_fraction: 0.5,
            seed: 7,
        }
    }
}

impl SynthConfig {
    /// Defaults with the peak block rescaled to `horizon` intervals per day.
    pub fn for_horizon(horizon: usize) -> Self {
        let base = Self::default();
        let per = horizon as f64 / 24.0;
        let start = (16.0 * per).round() as usize;
        let end = ((21.0 * per).round() as usize).max(start + 1).min(horizon);
        Self {
            horizon,
            peak_hours: (start..end).collect(),
            ..base
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_records < 2 {
            return Err(Error::invalid("synthetic dataset needs at least 2 records"));
        }
        if self.horizon == 0 {
            return Err(Error::invalid("horizon must be positive"));
        }
        if self.peak_hours.is_empty() || self.peak_hours.iter().any(|&h| h >= self.horizon) {
            return Err(Error::invalid("peak hours must be nonempty and inside the horizon"));
        }
        if !(self.noise_sd >= 0.0) || !(self.solar_depth >= 0.0) {
            return Err(Error::invalid("noise sd and solar depth must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.class1_fraction) {
            return Err(Error::invalid("class1 fraction must lie in [0, 1]"));
        }
        if (self.class1_peak - self.class0_peak).abs() < 3.0 * self.noise_sd {
            return Err(Error::invalid(
                "class peak heights must differ by at least 3 noise sd",
            ));
        }
        Ok(())
    }

    /// Midday solar reduction at interval `j`: a half-sine over 08:00-17:00.
    pub fn solar_profile(&self, j: usize) -> f64 {
        if self.solar_depth == 0.0 {
            return 0.0;
        }
        let per_hour = self.horizon as f64 / 24.0;
        let (start, end) = (8.0 * per_hour, 17.0 * per_hour);
        let mid = j as f64 + 0.5;
        if mid <= start || mid >= end {
            return 0.0;
        }
        self.solar_depth * (PI * (mid - start) / (end - start)).sin()
    }
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| Error::invalid(e.to_string()))?;
    let mut is_peak = vec![false; cfg.horizon];
    for &h in &cfg.peak_hours {
        is_peak[h] = true;
    }

    let mut records = Vec::with_capacity(cfg.n_records);
    for _ in 0..cfg.n_records {
        let label = u8::from(rng.random::<f64>() < cfg.class1_fraction);
        let peak = if label == 1 { cfg.class1_peak } else { cfg.class0_peak };
        let jitter = noise.sample(&mut rng);
        let demand = (0..cfg.horizon)
            .map(|j| {
                let e = noise.sample(&mut rng);
                let v = if is_peak[j] {
                    peak + jitter + e
                } else {
                    cfg.base_load + e - cfg.solar_profile(j)
                };
                quantize9(v)
            })
            .collect();
        records.push(DemandRecord { demand, label });
    }
    Dataset::new(records, cfg.horizon, cfg.seed)
}

/// Seeded shuffle into `(train, test)`; train gets `ceil(fraction * n)`.
pub fn split(ds: &Dataset, train_fraction: f64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid("train fraction must lie in (0, 1)"));
    }
    let n = ds.len();
    let n_train = ((train_fraction * n as f64) - 1e-9).ceil() as usize;
    if n_train >= n {
        return Err(Error::invalid("test split empty"));
    }
    if n_train == 0 {
        return Err(Error::invalid("train split empty"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(ds.split_seed);
    idx.shuffle(&mut rng);
    let (tr, te) = idx.split_at(n_train);
    Ok((ds.subset(tr)?, ds.subset(te)?))
}

#[derive(Debug, Clone)]
pub struct Batch {
    /// Indices into the source dataset.
    pub indices: Vec<usize>,
    /// `m x H`, one record per row.
    pub demand: DMatrix<f64>,
    pub labels: Vec<u8>,
    /// `m x 2`.
    pub one_hot: DMatrix<f64>,
}

impl Batch {
    pub fn from_indices(ds: &Dataset, indices: Vec<usize>) -> Self {
        let m = indices.len();
        let h = ds.horizon;
        let demand = DMatrix::from_fn(m, h, |i, j| ds.records[indices[i]].demand[j]);
        let labels: Vec<u8> = indices.iter().map(|&i| ds.records[i].label).collect();
        let one_hot = DMatrix::from_fn(m, 2, |i, k| one_hot(labels[i])[k]);
        Self {
            indices,
            demand,
            labels,
            one_hot,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn one_hot_row(&self, i: usize) -> [f64; 2] {
        one_hot(self.labels[i])
    }
}

/// Mini-batch source. Epoch `e` is a shuffle drawn from stream `e` of a
/// ChaCha generator seeded with `seed`; the short final batch is kept.
#[derive(Debug, Clone)]
pub struct Batcher<'a> {
    ds: &'a Dataset,
    batch_size: usize,
    seed: u64,
}

impl<'a> Batcher<'a> {
    pub fn new(ds: &'a Dataset, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 || batch_size > ds.len() {
            return Err(Error::invalid(format!(
                "batch size {batch_size} outside [1, {}]",
                ds.len()
            )));
        }
        Ok(Self {
            ds,
            batch_size,
            seed,
        })
    }

    pub fn epoch_order(&self, epoch: u64) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.ds.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch);
        idx.shuffle(&mut rng);
        idx
    }

    pub fn epoch(&self, epoch: u64) -> impl Iterator<Item = Batch> + 'a {
        let order = self.epoch_order(epoch);
        let ds = self.ds;
        let m = self.batch_size;
        let chunks: Vec<Vec<usize>> = order.chunks(m).map(<[usize]>::to_vec).collect();
        chunks.into_iter().map(move |c| Batch::from_indices(ds, c))
    }

    /// Endless batch sequence, epoch after epoch.
    pub fn stream(&self) -> impl Iterator<Item = Batch> + 'a {
        let this = self.clone();
        (0u64..).flat_map(move |e| this.epoch(e))
    }
}

/// One epoch of batches.
pub fn batches(ds: &Dataset, m: usize, seed: u64) -> Result<impl Iterator<Item = Batch> + '_> {
    Ok(Batcher::new(ds, m, seed)?.epoch(0))
}

/// Half-open interval range `[start, end)` billed at `price`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceTier {
    pub start: usize,
    pub end: usize,
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceSchedule {
    /// Currency per kWh, one entry per interval.
    pub prices: Vec<f64>,
    pub tiers: Vec<PriceTier>,
}

pub const TOU_PEAK_PRICE: f64 = 0.463;
pub const TOU_OFFPEAK_PRICE: f64 = 0.202;

/// Two-tier time-of-use tariff: 0.463 from 16:00 to 21:00, 0.202 otherwise,
/// scaled to `horizon / 24` intervals per hour.
pub fn default_tou_tiers(horizon: usize) -> Result<Vec<PriceTier>> {
    if horizon == 0 || horizon % 24 != 0 {
        return Err(Error::invalid(format!(
            "default tariff needs a horizon that is a multiple of 24, got {horizon}"
        )));
    }
    let s = horizon / 24;
    Ok(vec![
        PriceTier {
            start: 0,
            end: 16 * s,
            price: TOU_OFFPEAK_PRICE,
        },
        PriceTier {
            start: 16 * s,
            end: 21 * s,
            price: TOU_PEAK_PRICE,
        },
        PriceTier {
            start: 21 * s,
            end: 24 * s,
            price: TOU_OFFPEAK_PRICE,
        },
    ])
}

pub fn build_tou_prices(horizon: usize, tiers: &[PriceTier]) -> Result<PriceSchedule> {
    if horizon == 0 {
        return Err(Error::invalid("horizon must be positive"));
    }
    let mut sorted = tiers.to_vec();
    sorted.sort_by_key(|t| t.start);
    let mut next = 0;
    for t in &sorted {
        if t.start >= t.end {
            return Err(Error::invalid(format!("empty tier [{}, {})", t.start, t.end)));
        }
        if t.start < next {
            return Err(Error::invalid(format!("tier starting at {} overlaps", t.start)));
        }
        if t.start > next {
            return Err(Error::invalid(format!("intervals [{next}, {}) not covered", t.start)));
        }
        if !(t.price > 0.0) || !t.price.is_finite() {
            return Err(Error::invalid(format!("tier price {} must be positive", t.price)));
        }
        next = t.end;
    }
    if next != horizon {
        return Err(Error::invalid(format!(
            "tiers cover [0, {next}) but horizon is {horizon}"
        )));
    }
    let mut prices = vec![0.0; horizon];
    for t in &sorted {
        prices[t.start..t.end].fill(t.price);
    }
    Ok(PriceSchedule {
        prices,
        tiers: sorted,
    })
}

impl PriceSchedule {
    pub fn default_tou(horizon: usize) -> Result<Self> {
        build_tou_prices(horizon, &default_tou_tiers(horizon)?)
    }

    pub fn flat(horizon: usize, price: f64) -> Result<Self> {
        build_tou_prices(
            horizon,
            &[PriceTier {
                start: 0,
                end: horizon,
                price,
            }],
        )
    }

    pub fn horizon(&self) -> usize {
        self.prices.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy(n: usize, ones: usize) -> Dataset {
        let records = (0..n)
            .map(|i| DemandRecord::new(vec![i as f64; 3], u8::from(i < ones)).unwrap())
            .collect();
        Dataset::new(records, 3, 11).unwrap()
    }

    #[test]
    fn one_hot_matches_label() {
        let r = DemandRecord::new(vec![1.0], 1).unwrap();
        assert_eq!(r.one_hot(), [0.0, 1.0]);
        let r = DemandRecord::new(vec![1.0], 0).unwrap();
        assert_eq!(r.one_hot(), [1.0, 0.0]);
        assert!(DemandRecord::new(vec![1.0], 2).is_err());
    }

    #[test]
    fn load_parses_rows_in_order() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for i in 0..3 {
            let cols: Vec<String> = (0..24).map(|j| format!("{}.5", i + j)).collect();
            writeln!(f, "{},{}", cols.join(","), i % 2).unwrap();
        }
        let ds = load_csv(f.path(), 24).unwrap();
        assert_eq!(ds.horizon, 24);
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.records[2].demand[0], 2.5);
        assert_eq!(ds.records[1].label, 1);
        assert_eq!(ds.prior, [1.0 / 3.0, 1.0 - 1.0 / 3.0]);
    }

    #[test]
    fn load_all_zero_labels_gives_degenerate_prior() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "d0,d1,label").unwrap();
        writeln!(f, "1.0,2.0,0").unwrap();
        writeln!(f, "3.0,4.0,0").unwrap();
        let ds = load_csv(f.path(), 2).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.prior, [0.0, 1.0]);
    }

    #[test]
    fn load_rejects_wrong_arity_with_row_number() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "1.0,2.0,0").unwrap();
        writeln!(f, "1.0,0").unwrap();
        match load_csv(f.path(), 2) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_bad_number_and_empty_file() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "1.0,2.0,0").unwrap();
        writeln!(f, "1.0,abc,1").unwrap();
        assert!(matches!(load_csv(f.path(), 2), Err(Error::Parse { row: 2, .. })));

        let empty = tempfile::NamedTempFile::new().unwrap();
        assert!(matches!(load_csv(empty.path(), 2), Err(Error::Empty(_))));
    }

    #[test]
    fn load_cer_shaped_file() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        {
            let mut w = std::io::BufWriter::new(f.as_file_mut());
            let row: Vec<String> = (0..48).map(|j| format!("0.{j}")).collect();
            let row = row.join(",");
            for i in 0..54478 {
                writeln!(w, "{row},{}", i % 2).unwrap();
            }
        }
        let ds = load_csv(f.path(), 48).unwrap();
        assert_eq!(ds.horizon, 48);
        assert_eq!(ds.len(), 54478);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let ds = synth_generate(&SynthConfig {
            n_records: 50,
            ..SynthConfig::default()
        })
        .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_csv(&ds, f.path()).unwrap();
        let back = load_csv(f.path(), ds.horizon).unwrap();
        assert_eq!(back.records, ds.records);
        assert_eq!(back.prior, ds.prior);
    }

    #[test]
    fn synth_zero_noise_hits_peaks_exactly() {
        let cfg = SynthConfig {
            n_records: 40,
            noise_sd: 0.0,
            class0_peak: 1.0,
            class1_peak: 5.0,
            ..SynthConfig::default()
        };
        let ds = synth_generate(&cfg).unwrap();
        assert!(ds.records.iter().any(|r| r.label == 1));
        for r in ds.records.iter().filter(|r| r.label == 1) {
            for &h in &cfg.peak_hours {
                assert_eq!(r.demand[h], 5.0);
            }
        }
        for r in ds.records.iter().filter(|r| r.label == 0) {
            for &h in &cfg.peak_hours {
                assert_eq!(r.demand[h], 1.0);
            }
        }
    }

    #[test]
    fn synth_is_deterministic_and_has_solar_dips() {
        let cfg = SynthConfig {
            n_records: 30,
            ..SynthConfig::default()
        };
        let a = synth_generate(&cfg).unwrap();
        let b = synth_generate(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.records.iter().flat_map(|r| &r.demand).any(|&v| v < 0.0));

        let no_solar = synth_generate(&SynthConfig {
            solar_depth: 0.0,
            noise_sd: 0.0,
            ..cfg
        })
        .unwrap();
        assert!(no_solar.records.iter().flat_map(|r| &r.demand).all(|&v| v > 0.0));
    }

    #[test]
    fn synth_rejects_bad_configs() {
        let small = SynthConfig {
            n_records: 1,
            ..SynthConfig::default()
        };
        assert!(synth_generate(&small).is_err());
        let close = SynthConfig {
            class0_peak: 2.0,
            class1_peak: 2.5,
            noise_sd: 0.25,
            ..SynthConfig::default()
        };
        assert!(synth_generate(&close).is_err());
    }

    #[test]
    fn synth_class_means_within_three_standard_errors() {
        let cfg = SynthConfig {
            n_records: 2000,
            ..SynthConfig::default()
        };
        let ds = synth_generate(&cfg).unwrap();
        let k = cfg.peak_hours.len() as f64;
        // Per-record peak mean = peak + jitter + mean of k iid entries.
        let sd = (cfg.noise_sd.powi(2) * (1.0 + 1.0 / k)).sqrt();
        for (label, peak) in [(0u8, cfg.class0_peak), (1, cfg.class1_peak)] {
            let means: Vec<f64> = ds
                .records
                .iter()
                .filter(|r| r.label == label)
                .map(|r| cfg.peak_hours.iter().map(|&h| r.demand[h]).sum::<f64>() / k)
                .collect();
            let n = means.len() as f64;
            let m = means.iter().sum::<f64>() / n;
            assert!((m - peak).abs() <= 3.0 * sd / n.sqrt(), "class {label}: {m}");
        }
    }

    #[test]
    fn split_sizes_and_errors() {
        let ds = toy(100, 30);
        let (tr, te) = split(&ds, 0.85).unwrap();
        assert_eq!((tr.len(), te.len()), (85, 15));
        let (tr2, te2) = split(&ds, 0.85).unwrap();
        assert_eq!(tr, tr2);
        assert_eq!(te, te2);

        let tiny = toy(2, 1);
        let err = split(&tiny, 0.85).unwrap_err();
        assert!(err.to_string().contains("test split empty"));
        assert!(split(&ds, 1.0).is_err());
        assert!(split(&ds, 0.0).is_err());
    }

    #[test]
    fn split_is_a_partition_preserving_the_prior() {
        let ds = toy(37, 13);
        let (tr, te) = split(&ds, 0.7).unwrap();
        let mut seen: Vec<f64> = tr
            .records
            .iter()
            .chain(&te.records)
            .map(|r| r.demand[0])
            .collect();
        seen.sort_by(f64::total_cmp);
        let expect: Vec<f64> = (0..37).map(|i| i as f64).collect();
        assert_eq!(seen, expect);
        let union = Dataset::new(
            tr.records.iter().chain(&te.records).cloned().collect(),
            3,
            0,
        )
        .unwrap();
        assert_eq!(union.prior, ds.prior);
    }

    #[test]
    fn batch_sizes_keep_the_remainder() {
        let ds = toy(10, 5);
        let sizes: Vec<usize> = batches(&ds, 3, 1).unwrap().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![3, 3, 3, 1]);
        assert!(Batcher::new(&ds, 0, 1).is_err());
        assert!(Batcher::new(&ds, 11, 1).is_err());
    }

    #[test]
    fn full_batch_follows_shuffle_order() {
        let ds = toy(10, 5);
        let b = Batcher::new(&ds, 10, 4).unwrap();
        let all: Vec<Batch> = b.epoch(0).collect();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].indices, b.epoch_order(0));
        assert_eq!(all[0].demand.nrows(), 10);
        assert_eq!(all[0].demand.ncols(), 3);
        for (i, &idx) in all[0].indices.iter().enumerate() {
            assert_eq!(all[0].demand[(i, 0)], ds.records[idx].demand[0]);
            assert_eq!(all[0].one_hot[(i, 1)], f64::from(ds.records[idx].label));
        }
    }

    #[test]
    fn batch_stream_is_deterministic_across_epochs() {
        let ds = toy(10, 5);
        let a: Vec<Vec<usize>> = Batcher::new(&ds, 4, 9)
            .unwrap()
            .stream()
            .take(6)
            .map(|b| b.indices)
            .collect();
        let b: Vec<Vec<usize>> = Batcher::new(&ds, 4, 9)
            .unwrap()
            .stream()
            .take(6)
            .map(|b| b.indices)
            .collect();
        assert_eq!(a, b);
        // Epochs reshuffle.
        assert_ne!(a[0..3].concat(), a[3..6].concat());
    }

    #[test]
    fn default_tou_hourly() {
        let p = PriceSchedule::default_tou(24).unwrap();
        for (j, &v) in p.prices.iter().enumerate() {
            let expect = if (16..21).contains(&j) { 0.463 } else { 0.202 };
            assert_eq!(v, expect, "interval {j}");
        }
    }

    #[test]
    fn default_tou_half_hourly() {
        let p = PriceSchedule::default_tou(48).unwrap();
        let high: Vec<usize> = (0..48).filter(|&j| p.prices[j] == 0.463).collect();
        assert_eq!(high, (32..42).collect::<Vec<_>>());
        assert_eq!(high.len(), 10);
    }

    #[test]
    fn tiers_validation() {
        let flat = PriceSchedule::flat(5, 0.2).unwrap();
        assert_eq!(flat.prices, vec![0.2; 5]);
        let t = |s, e, p| PriceTier { start: s, end: e, price: p };
        assert!(build_tou_prices(5, &[t(0, 3, 0.2), t(2, 5, 0.3)]).is_err());
        assert!(build_tou_prices(5, &[t(0, 2, 0.2), t(3, 5, 0.3)]).is_err());
        assert!(build_tou_prices(5, &[t(0, 4, 0.2)]).is_err());
        assert!(build_tou_prices(5, &[t(0, 5, 0.0)]).is_err());
        assert!(default_tou_tiers(30).is_err());
    }

    proptest! {
        #[test]
        fn split_union_prior_is_exact(n in 3usize..200, ones_frac in 0.0f64..1.0, frac in 0.05f64..0.95) {
            let ones = (ones_frac * n as f64) as usize;
            let ds = toy(n, ones);
            if let Ok((tr, te)) = split(&ds, frac) {
                prop_assert_eq!(tr.len() + te.len(), n);
                let c1 = tr.records.iter().chain(&te.records).filter(|r| r.label == 1).count();
                prop_assert_eq!(c1, ones);
            }
        }
    }
}

mod common;

use common::rng;
use meterguard::data::one_hot;
use meterguard::filter::FilterWeights;
use rand::Rng;
use rand_distr::StandardNormal;

/// Mean and standard error of `samples`.
fn mean_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn random_case(seed: u64, h: usize) -> (FilterWeights, [f64; 2]) {
    let mut r = rng(seed);
    let flat: Vec<f64> = (0..3 * h).map(|_| r.random_range(-1.0..1.0)).collect();
    let p1 = r.random_range(0.05..0.95);
    (FilterWeights::from_flat(h, &flat).unwrap(), [1.0 - p1, p1])
}

#[test]
fn closed_form_distortion_matches_monte_carlo() {
    let h = 24;
    let n = 100_000;
    for seed in 0..20 {
        let (w, pi) = random_case(seed, h);
        let d = vec![0.0; h];
        let mut r = rng(10_000 + seed);
        let samples: Vec<f64> = (0..n)
            .map(|_| {
                let eps: Vec<f64> = (0..h).map(|_| r.sample(StandardNormal)).collect();
                let y = one_hot(u8::from(r.random_bool(pi[1])));
                w.perturb(&d, &eps, y).iter().map(|v| v * v).sum::<f64>()
            })
            .collect();
        let (mean, se) = mean_se(&samples);
        let closed = w.distortion_penalty(pi);
        assert!((closed - mean).abs() <= 3.0 * se, "seed {seed}: closed {closed} mc {mean} se {se}");
    }
}

#[test]
fn privatized_mean_is_demand_plus_class_shift() {
    let h = 6;
    let n = 100_000;
    for seed in 0..3 {
        let (w, pi) = random_case(100 + seed, h);
        let d: Vec<f64> = (0..h).map(|j| 1.0 + j as f64 * 0.1).collect();
        let mut r = rng(20_000 + seed);
        let draws: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let eps: Vec<f64> = (0..h).map(|_| r.sample(StandardNormal)).collect();
                w.perturb(&d, &eps, one_hot(u8::from(r.random_bool(pi[1]))))
            })
            .collect();
        for j in 0..h {
            let col: Vec<f64> = draws.iter().map(|v| v[j]).collect();
            let (mean, se) = mean_se(&col);
            let expected = d[j] + w.v[(j, 0)] * pi[0] + w.v[(j, 1)] * pi[1];
            assert!((expected - mean).abs() <= 3.0 * se, "seed {seed} interval {j}: {expected} vs {mean} (se {se})");
        }
    }
}

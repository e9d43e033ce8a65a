mod common;

use common::{random_demand, random_prices, random_spec, rng};
use meterguard::adversary::{softmax2, MlpParams};
use meterguard::battery::{build_qp_epigraph_form, utility_loss, ControlDecision, Layout};
use meterguard::checkpoint::Checkpoint;
use meterguard::filter::FilterWeights;
use meterguard::numfmt::{fmt9, quantize9};
use meterguard::qp::{solve, SolverConfig, Status};
use proptest::prelude::*;

proptest! {
    #[test]
    fn softmax_is_a_distribution(a in -700.0f64..700.0, b in -700.0f64..700.0) {
        let p = softmax2([a, b]);
        prop_assert!(p[0] >= 0.0 && p[1] >= 0.0);
        prop_assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        prop_assert_eq!(p[0] >= p[1], a >= b);
    }

    #[test]
    fn perturb_is_affine_in_noise(seed in 0u64..1000, s in -3.0f64..3.0, label in 0u8..2) {
        let h = 5;
        let w = FilterWeights::init(h, seed).unwrap();
        let mut r = rng(seed);
        let d = random_demand(&mut r, h, true);
        let e: Vec<f64> = (0..h).map(|j| (j as f64 - 2.0) * 0.7).collect();
        let y = meterguard::data::one_hot(label);
        let zero = w.perturb(&d, &vec![0.0; h], y);
        let one = w.perturb(&d, &e, y);
        let scaled: Vec<f64> = e.iter().map(|v| v * s).collect();
        let mid = w.perturb(&d, &scaled, y);
        for j in 0..h {
            let expected = zero[j] + s * (one[j] - zero[j]);
            prop_assert!((mid[j] - expected).abs() < 1e-12 * (1.0 + expected.abs()));
        }
    }

    #[test]
    fn distortion_penalty_is_nonnegative(seed in 0u64..1000, p1 in 0.0f64..=1.0) {
        let w = FilterWeights::init(7, seed).unwrap();
        prop_assert!(w.distortion_penalty([1.0 - p1, p1]) >= 0.0);
    }

    #[test]
    fn checkpoint_text_round_trips(seed in 0u64..1000, step in 0usize..10_000, p1 in 0.0f64..=1.0) {
        let h = 6;
        let ck = Checkpoint {
            horizon: h,
            prior: [1.0 - p1, p1],
            step,
            filter: FilterWeights::init(h, seed).unwrap(),
            adversary: MlpParams::init(h, seed + 1).unwrap(),
        };
        prop_assert_eq!(Checkpoint::from_text(&ck.to_text()).unwrap(), ck);
    }

    #[test]
    fn nine_digit_text_is_idempotent(x in prop::num::f64::NORMAL) {
        let q = quantize9(x);
        prop_assert_eq!(fmt9(q), fmt9(x));
        prop_assert!(((q - x) / x).abs() <= 5e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn battery_solutions_are_optimal_and_dual_feasible(seed in 0u64..100_000, negative in any::<bool>()) {
        let h = 12;
        let mut r = rng(seed);
        let spec = random_spec(&mut r);
        let price = random_prices(&mut r, h);
        let d = random_demand(&mut r, h, negative);
        let qp = build_qp_epigraph_form(&spec, &price, &d).unwrap();
        let lay = Layout { horizon: h };
        let sol = solve(&qp, &SolverConfig::default()).unwrap();
        prop_assert_eq!(sol.status, Status::Optimal);
        prop_assert!(sol.kkt_residual <= 1e-8);
        prop_assert!(sol.lambda.iter().all(|&l| l >= 0.0));
        for j in 0..h {
            prop_assert!(sol.x[lay.x_s(j)] >= -1e-7 && sol.x[lay.x_s(j)] <= spec.capacity + 1e-7);
        }
        // The optimum never costs more than leaving the battery idle, as long
        // as idling is feasible for the terminal rows.
        let x = ControlDecision::from_solution(&sol.x, h).unwrap();
        let idle = ControlDecision::idle(h, spec.b_init);
        let natural = sol.objective + qp.constant();
        prop_assert!((natural - utility_loss(&x, &d, &price, &spec)).abs() < 1e-6 * (1.0 + natural.abs()));
        let idle_feasible = qp.g.nrows() == 0 || {
            let mut xi = nalgebra::DVector::zeros(qp.n());
            for j in 0..h {
                xi[lay.x_s(j)] = spec.b_init;
                xi[lay.t(j)] = d[j].max(0.0);
            }
            (&qp.g * &xi - &qp.h).iter().all(|&v| v <= 1e-12)
                && (qp.a.nrows() == 0 || (&qp.a * &xi - &qp.b).amax() <= 1e-12)
        };
        if idle_feasible {
            prop_assert!(natural <= utility_loss(&idle, &d, &price, &spec) + 1e-6);
        }
    }
}

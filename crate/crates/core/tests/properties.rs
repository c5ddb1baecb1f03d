use adamrel_core::optim::{clip_global_norm, OptimizerConfig, OptimizerState, Variant};
use adamrel_core::telemetry::{chunk_average, iqm, StepRecord};
use adamrel_core::theory::{adam_limit_update, adam_peak_bound, adamrel_limit_update};
use proptest::prelude::*;

fn ulps(a: f64, b: f64) -> u64 {
    if a == b {
        return 0;
    }
    (a.to_bits() as i64 - b.to_bits() as i64).unsigned_abs()
}

fn grad_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![-1e3..-1e-3f64, 1e-3..1e3f64], n)
}

fn variant() -> impl Strategy<Value = Variant> {
    prop::sample::select(Variant::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn first_step_is_alpha_times_sign(g in grad_vec(6), alpha in 1e-5..1.0f64, v in variant()) {
        let cfg = OptimizerConfig::new(v, alpha, 0.9, 0.999, 0.0, None).unwrap();
        let mut s = OptimizerState::new(6).unwrap();
        let mut p = vec![0.0; 6];
        let r = s.step(&cfg, &mut p, &g).unwrap();
        for (u, gi) in r.update.iter().zip(&g) {
            prop_assert!(ulps(*u, -alpha * gi.signum()) <= 4, "{u} vs {gi}");
        }
    }

    #[test]
    fn power_of_two_scaling_is_exact(
        seq in prop::collection::vec(grad_vec(4), 1..30),
        j in -20i32..20,
    ) {
        let c = 2f64.powi(j);
        let cfg = OptimizerConfig::new(Variant::Adam, 1e-2, 0.9, 0.999, 0.0, None).unwrap();
        let (mut a, mut b) = (OptimizerState::new(4).unwrap(), OptimizerState::new(4).unwrap());
        let (mut pa, mut pb) = (vec![0.0; 4], vec![0.0; 4]);
        for g in &seq {
            let gs: Vec<f64> = g.iter().map(|x| x * c).collect();
            let ua = a.step(&cfg, &mut pa, g).unwrap().update;
            let ub = b.step(&cfg, &mut pb, &gs).unwrap().update;
            prop_assert_eq!(ua, ub);
        }
    }

    #[test]
    fn scale_equivariance_of_adam(
        seq in prop::collection::vec(prop::collection::vec(1e-3..1e3f64, 4), 1..20),
        c in 1e-3..1e3f64,
    ) {
        // Same-sign gradients keep the moments free of cancellation, so the
        // only difference is rounding accumulated over the sequence.
        let cfg = OptimizerConfig::new(Variant::Adam, 1e-2, 0.9, 0.999, 0.0, None).unwrap();
        let (mut a, mut b) = (OptimizerState::new(4).unwrap(), OptimizerState::new(4).unwrap());
        let (mut pa, mut pb) = (vec![0.0; 4], vec![0.0; 4]);
        for g in &seq {
            let gs: Vec<f64> = g.iter().map(|x| x * c).collect();
            let ua = a.step(&cfg, &mut pa, g).unwrap().update;
            let ub = b.step(&cfg, &mut pb, &gs).unwrap().update;
            for (x, y) in ua.iter().zip(&ub) {
                prop_assert!((x - y).abs() <= 1e-13 * x.abs(), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn second_moment_stays_nonnegative(
        seq in prop::collection::vec((grad_vec(3), any::<bool>()), 1..40),
        v in variant(),
    ) {
        let cfg = OptimizerConfig::new(v, 1e-3, 0.9, 0.999, 1e-8, Some(5.0)).unwrap();
        let mut s = OptimizerState::new(3).unwrap();
        let mut p = vec![0.0; 3];
        for (g, reset) in &seq {
            s.step(&cfg, &mut p, g).unwrap();
            if *reset {
                s.notify_boundary(&cfg);
            }
            prop_assert!(s.v().iter().all(|x| *x >= 0.0));
        }
    }

    #[test]
    fn mr_reset_matches_fresh_first_step(
        history in prop::collection::vec(grad_vec(5), 1..15),
        g in grad_vec(5),
    ) {
        let cfg = OptimizerConfig::new(Variant::AdamMr, 3e-3, 0.9, 0.999, 1e-8, None).unwrap();
        let mut s = OptimizerState::new(5).unwrap();
        let mut p = vec![0.5; 5];
        for h in &history {
            s.step(&cfg, &mut p, h).unwrap();
        }
        s.notify_boundary(&cfg);
        let mut fresh = OptimizerState::new(5).unwrap();
        let mut q = vec![0.5; 5];
        let a = s.step(&cfg, &mut p, &g).unwrap().update;
        let b = fresh.step(&cfg, &mut q, &g).unwrap().update;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn rel_reset_keeps_moments(history in prop::collection::vec(grad_vec(3), 1..15)) {
        let cfg = OptimizerConfig::new(Variant::AdamRel, 1e-3, 0.9, 0.999, 1e-8, None).unwrap();
        let mut s = OptimizerState::new(3).unwrap();
        let mut p = vec![0.0; 3];
        for h in &history {
            s.step(&cfg, &mut p, h).unwrap();
        }
        let (m, v, total) = (s.m().to_vec(), s.v().to_vec(), s.steps_total());
        s.notify_boundary(&cfg);
        prop_assert_eq!(s.m(), &m[..]);
        prop_assert_eq!(s.v(), &v[..]);
        prop_assert_eq!(s.t_local(), 0);
        prop_assert_eq!(s.steps_total(), total);
    }

    #[test]
    fn clipping_is_idempotent(g in prop::collection::vec(-1e4..1e4f64, 1..30), c in 1e-3..1e3f64) {
        let once = clip_global_norm(&g, c).unwrap();
        let twice = clip_global_norm(&once, c).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn prefactor_identity(k in 1e-3..1e6f64, t in 0u64..3000) {
        let (b1, b2) = (0.9f64, 0.999f64);
        let ratio = adamrel_limit_update(k, t, b1, b2).unwrap() / adam_limit_update(k, t, b1, b2).unwrap();
        let expected = (1.0 - b2.powi(t as i32 + 1)).sqrt() / (1.0 - b1.powi(t as i32 + 1));
        prop_assert!(ulps(ratio, expected) <= 8, "{ratio} vs {expected}");
    }

    #[test]
    fn adam_peak_is_bounded(log_k in -6.0..12.0f64) {
        let k = 10f64.powf(log_k);
        let u = adam_limit_update(k, 0, 0.9, 0.999).unwrap();
        prop_assert!(u <= adam_peak_bound(0.9, 0.999) + 1e-12);
        prop_assert!(u <= 3.28803);
    }

    #[test]
    fn iqm_is_monotone(
        scores in prop::collection::vec(-100.0..100.0f64, 4..40),
        idx in any::<prop::sample::Index>(),
        bump in 0.0..50.0f64,
    ) {
        let before = iqm(&scores).unwrap();
        let mut raised = scores.clone();
        let i = idx.index(raised.len());
        raised[i] += bump;
        prop_assert!(iqm(&raised).unwrap() >= before - 1e-12);
    }

    #[test]
    fn chunk_average_is_linear_and_order_free(
        values in prop::collection::vec(prop::collection::vec((0.0..10.0f64, 0.0..1.0f64), 5), 2..8),
        c in 0.1..10.0f64,
        rot in 0usize..8,
    ) {
        let build = |chunks: &[Vec<(f64, f64)>], scale: f64| -> Vec<StepRecord> {
            let mut out = Vec::new();
            for (ci, chunk) in chunks.iter().enumerate() {
                for (pi, &(g, u)) in chunk.iter().enumerate() {
                    out.push(StepRecord {
                        step_index: out.len() as u64,
                        chunk_index: ci as u64,
                        pos_in_chunk: pi as u64,
                        grad_norm: g * scale,
                        update_norm: u * scale,
                        max_abs_update: u * scale,
                        t_local: pi as u64 + 1,
                    });
                }
            }
            out
        };
        let base = chunk_average(&build(&values, 1.0), 5).unwrap();
        let scaled = chunk_average(&build(&values, c), 5).unwrap();
        for i in 0..5 {
            let (a, b) = (base.grad_norm_mean[i] * c, scaled.grad_norm_mean[i]);
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            let (a, b) = (base.update_norm_se[i] * c, scaled.update_norm_se[i]);
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
        let mut rotated = values.clone();
        let r = rot % rotated.len();
        rotated.rotate_left(r);
        let perm = chunk_average(&build(&rotated, 1.0), 5).unwrap();
        for i in 0..5 {
            prop_assert!((perm.grad_norm_mean[i] - base.grad_norm_mean[i]).abs() < 1e-12);
            prop_assert!((perm.update_norm_mean[i] - base.update_norm_mean[i]).abs() < 1e-12);
        }
    }
}

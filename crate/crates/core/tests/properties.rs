use blo_core::estimators::{
    exact_grad_checkpointed, exact_grad_rerun, exact_grad_stored, fo_grad, ufo_grad_given,
};
use blo_core::oracle::enumerate_expected_grad;
use blo_core::problems::{piecewise_grad, piecewise_hess, piecewise_value, PiecewiseTask, QuadraticTask};
use blo_core::vector::clip_entries;
use blo_core::{rollout, AnalyticProblem, BilevelProblem, EstimatorKind, InnerLoopConfig, ParamVector, TaskSpec};
use proptest::prelude::*;

fn quadratic(max_p: usize) -> impl Strategy<Value = (TaskSpec, ParamVector)> {
    (1..=max_p).prop_flat_map(|p| {
        (
            prop::collection::vec(0.1f64..3.0, p),
            prop::collection::vec(-2.0f64..2.0, p),
            prop::collection::vec(-5.0f64..5.0, p),
        )
            .prop_map(|(a, b, x)| {
                (
                    QuadraticTask::new(a, b).unwrap().into(),
                    ParamVector::new(x).unwrap(),
                )
            })
    })
}

fn piecewise(max_p: usize) -> impl Strategy<Value = (TaskSpec, ParamVector)> {
    (1..=max_p, 0.5f64..4.0).prop_flat_map(|(p, big_a)| {
        (
            prop::collection::vec(0.1f64..2.0, p),
            prop::collection::vec(-3.0f64..3.0, p),
            prop::collection::vec(-10.0f64..10.0, p),
        )
            .prop_map(move |(a, b, x)| {
                (
                    PiecewiseTask::new(a, b, big_a).unwrap().into(),
                    ParamVector::new(x).unwrap(),
                )
            })
    })
}

fn any_task(max_p: usize) -> impl Strategy<Value = (TaskSpec, ParamVector)> {
    prop_oneof![quadratic(max_p), piecewise(max_p)]
}

fn inner() -> impl Strategy<Value = InnerLoopConfig> {
    (0.0f64..0.4, 1usize..=20).prop_map(|(a, r)| InnerLoopConfig::new(a, r).unwrap())
}

fn direction(p: usize) -> impl Strategy<Value = ParamVector> {
    prop::collection::vec(-3.0f64..3.0, p).prop_map(|v| ParamVector::new(v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn exact_variants_agree_bitwise((task, theta) in any_task(12), cfg in inner(), pick in 0.0f64..1.0) {
        let stored = exact_grad_stored(&AnalyticProblem, &task, &theta, &cfg).unwrap();
        let rerun = exact_grad_rerun(&AnalyticProblem, &task, &theta, &cfg).unwrap();
        let n = 1 + ((cfg.r() - 1) as f64 * pick) as usize;
        let ckpt = exact_grad_checkpointed(&AnalyticProblem, &task, &theta, &cfg, n).unwrap();
        prop_assert_eq!(&stored.gradient, &rerun.gradient);
        prop_assert_eq!(&stored.gradient, &ckpt.gradient);
        prop_assert_eq!(stored.meta.peak_cached_states, cfg.r());
        prop_assert!(rerun.meta.peak_cached_states <= 3);
        prop_assert_eq!(rerun.meta.inner_grad_evals, cfg.r() + cfg.r() * (cfg.r() - 1) / 2);
        prop_assert_eq!(ckpt.meta.inner_grad_evals, 2 * cfg.r() - n);
    }

    #[test]
    fn hvp_is_linear_and_symmetric((task, theta) in any_task(12), s in -3.0f64..3.0, t in -3.0f64..3.0, seed in any::<u64>()) {
        let p = theta.len();
        let mk = |k: u64| {
            let v: Vec<f64> = (0..p).map(|i| (((seed ^ k).wrapping_mul(6364136223846793005).wrapping_add(i as u64 * 1442695040888963407) >> 11) as f64 / (1u64 << 53) as f64) - 0.5).collect();
            ParamVector::new(v).unwrap()
        };
        let (u, v) = (mk(1), mk(2));
        let h = |d: &ParamVector| AnalyticProblem.inner_hvp(&theta, &task, d).unwrap();
        let (hu, hv) = (h(&u), h(&v));
        let scale = (u.norm() * hv.norm() + v.norm() * hu.norm()).max(1.0);
        prop_assert!((u.dot(&hv).unwrap() - v.dot(&hu).unwrap()).abs() <= 1e-12 * scale);
        let combo = h(&u.scale(s).unwrap().axpy(t, &v).unwrap());
        let expected = hu.scale(s).unwrap().axpy(t, &hv).unwrap();
        prop_assert!(combo.sub(&expected).unwrap().norm() <= 1e-12 * expected.norm().max(1.0));
    }

    #[test]
    fn ufo_enumeration_is_exact((task, theta) in any_task(8), cfg in inner(), q in 0.01f64..=1.0) {
        let exact = exact_grad_stored(&AnalyticProblem, &task, &theta, &cfg).unwrap().gradient;
        let fo = fo_grad(&AnalyticProblem, &task, &theta, &cfg).unwrap().gradient;
        let on = ufo_grad_given(&AnalyticProblem, &task, &theta, &cfg, q, true).unwrap().gradient;
        let mixed = fo.scale(1.0 - q).unwrap().axpy(q, &on).unwrap();
        let scale = exact.norm().max(fo.norm()).max(1.0);
        prop_assert!(mixed.sub(&exact).unwrap().norm() <= 1e-12 * scale);
        let e = enumerate_expected_grad(&AnalyticProblem, &[(task.clone(), 1.0)], &theta, &cfg, EstimatorKind::Ufo { q }).unwrap();
        prop_assert!(e.sub(&exact).unwrap().norm() <= 1e-12 * scale);
    }

    #[test]
    fn clipping_is_idempotent_and_bounded(v in prop::collection::vec(-100.0f64..100.0, 1..20), bound in 0.01f64..50.0) {
        let v = ParamVector::new(v).unwrap();
        let once = clip_entries(&v, bound).unwrap();
        prop_assert_eq!(&clip_entries(&once, bound).unwrap(), &once);
        prop_assert!(once.max_abs() <= bound);
        for (c, x) in once.iter().zip(v.iter()) {
            if x.abs() <= bound {
                prop_assert_eq!(c, x);
            }
        }
    }

    #[test]
    fn piecewise_is_continuous_at_breakpoints(a in 0.05f64..5.0, b in -10.0f64..10.0, big_a in 0.1f64..20.0, side in prop::bool::ANY) {
        let sign = if side { 1.0 } else { -1.0 };
        for z in [big_a, big_a + 1.0] {
            let lo = b / a + sign * z * (1.0 - 1e-13);
            let hi = b / a + sign * z * (1.0 + 1e-13);
            prop_assert!((piecewise_value(lo, a, b, big_a) - piecewise_value(hi, a, b, big_a)).abs() < 1e-9);
            prop_assert!((piecewise_grad(lo, a, b, big_a) - piecewise_grad(hi, a, b, big_a)).abs() < 1e-9);
            prop_assert!((piecewise_hess(lo, a, b, big_a) - piecewise_hess(hi, a, b, big_a)).abs() < 1e-9);
        }
    }

    #[test]
    fn piecewise_gradient_is_increasing_and_bounded(a in 0.05f64..5.0, b in -10.0f64..10.0, big_a in 0.1f64..20.0, x in -100.0f64..100.0, dx in 1e-6f64..5.0) {
        let g0 = piecewise_grad(x, a, b, big_a);
        let g1 = piecewise_grad(x + dx, a, b, big_a);
        prop_assert!(g1 >= g0);
        prop_assert!(g0.abs() <= a * (0.5 + big_a) * (1.0 + 1e-12));
        let h = piecewise_hess(x, a, b, big_a);
        prop_assert!((0.0..=a).contains(&h));
    }

    #[test]
    fn kept_and_lean_rollouts_match((task, theta) in any_task(12), cfg in inner()) {
        let kept = rollout(&AnalyticProblem, &task, &theta, &cfg, true).unwrap();
        let lean = rollout(&AnalyticProblem, &task, &theta, &cfg, false).unwrap();
        prop_assert_eq!(kept.final_state(), lean.final_state());
        prop_assert_eq!(kept.cached_states(), cfg.r() + 1);
    }

    #[test]
    fn hvp_of_zero_direction_is_zero((task, theta) in any_task(12)) {
        let zero = ParamVector::zeros(theta.len()).unwrap();
        let h = AnalyticProblem.inner_hvp(&theta, &task, &zero).unwrap();
        prop_assert_eq!(h.max_abs(), 0.0);
    }

    #[test]
    fn quadratic_hvp_is_diagonal((task, theta) in quadratic(12), d in direction(12)) {
        prop_assume!(d.len() >= theta.len());
        let d = ParamVector::from_slice(&d.as_slice()[..theta.len()]).unwrap();
        let h = AnalyticProblem.inner_hvp(&theta, &task, &d).unwrap();
        if let TaskSpec::Quadratic(q) = &task {
            for i in 0..theta.len() {
                prop_assert_eq!(h[i], q.a()[i] * d[i]);
            }
        }
    }
}

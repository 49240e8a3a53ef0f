use blo_core::estimators::exact_grad_stored;
use blo_core::oracle::{fd_grad, fd_hvp, FdConfig};
use blo_core::problems::{cce_loss, softmax, FewShotLogisticTask, FewShotSampler};
use blo_core::rng::SeedStreams;
use blo_core::{rollout, AnalyticProblem, BilevelProblem, InnerLoopConfig, ParamVector, TaskDistribution, TaskSpec};

fn rel_err(a: &ParamVector, b: &ParamVector) -> f64 {
    a.sub(b).unwrap().norm() / b.norm()
}

fn sample_task(seed: u64) -> FewShotLogisticTask {
    let sampler = FewShotSampler::new(3, 4, 3, 4, 2.0, 1.0).unwrap();
    sampler.sample(&mut SeedStreams::new(seed).substream(0, 0)).unwrap()
}

fn point(seed: u64, p: usize) -> ParamVector {
    let v = (0..p).map(|i| ((seed as f64 + 1.0) * 0.37 * (i as f64 + 1.0)).sin()).collect();
    ParamVector::new(v).unwrap()
}

#[test]
fn cce_gradient_matches_finite_differences() {
    for seed in 0..10 {
        let task = sample_task(seed);
        let phi = point(seed, task.dim());
        let fd = fd_grad(|p| Ok(task.train_loss(p)), &phi, FdConfig::default()).unwrap();
        assert!(rel_err(&fd, &task.train_grad(&phi).unwrap()) < 1e-6);
        let fd = fd_grad(|p| Ok(task.test_loss(p)), &phi, FdConfig::default()).unwrap();
        assert!(rel_err(&fd, &task.test_grad(&phi).unwrap()) < 1e-6);
    }
}

#[test]
fn softmax_hvp_matches_finite_differences() {
    for seed in 0..10 {
        let task = sample_task(seed);
        let phi = point(seed, task.dim());
        let dir = point(seed + 100, task.dim());
        let fd = fd_hvp(|p| task.train_grad(p), &phi, &dir, FdConfig::default()).unwrap();
        assert!(rel_err(&fd, &task.train_hvp(&phi, &dir).unwrap()) < 1e-6);
    }
}

#[test]
fn gradient_at_zero_weights_is_mean_residual_outer_product() {
    let task = sample_task(3);
    let (n, m) = (task.n_inputs(), task.n_classes());
    let zero = ParamVector::zeros(n * m).unwrap();
    let g = task.train_grad(&zero).unwrap();
    // uniform logits: softmax is 1/m for every example
    let uniform = softmax(&vec![0.0; m]);
    assert!(uniform.iter().all(|s| (s - 1.0 / m as f64).abs() < 1e-15));
    let fd = fd_grad(|p| Ok(task.train_loss(p)), &zero, FdConfig::default()).unwrap();
    assert!(rel_err(&fd, &g) < 1e-8);
    assert!((task.train_loss(&zero) - (m as f64).ln()).abs() < 1e-12);
}

#[test]
fn cce_examples() {
    assert!((cce_loss(&[0.0, 0.0], &[1.0, 0.0]) - std::f64::consts::LN_2).abs() < 1e-15);
    let big = cce_loss(&[1000.0, 0.0], &[1.0, 0.0]);
    assert!(big.is_finite() && big.abs() < 1e-12);
}

#[test]
fn composed_objective_gradient_on_fewshot() {
    for seed in 0..10 {
        let task: TaskSpec = sample_task(seed).into();
        let theta = point(seed, task.dim());
        let cfg = InnerLoopConfig::new(0.3, 1 + seed as usize % 10).unwrap();
        let objective = |th: &ParamVector| {
            let phi = rollout(&AnalyticProblem, &task, th, &cfg, false)?.into_final();
            AnalyticProblem.outer_loss(&phi, &task)
        };
        let fd = fd_grad(objective, &theta, FdConfig::default()).unwrap();
        let exact = exact_grad_stored(&AnalyticProblem, &task, &theta, &cfg).unwrap().gradient;
        assert!(rel_err(&fd, &exact) < 1e-5, "seed {seed}");
    }
}

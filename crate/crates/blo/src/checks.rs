//! Property suites run by `blo check`.
//!
//! Suites that exercise the stored exact estimator take it as a function
//! pointer so that a deliberately broken variant can be substituted.

use blo_core::diagnostics::{grad_sq_bound, resource_report, RegularityConstants};
use blo_core::estimators::{
    default_checkpoints, estimate, exact_grad_checkpointed, exact_grad_rerun, exact_grad_stored, fo_grad,
    ufo_grad, ufo_grad_given, EstimatorKind, GradientEstimate,
};
use blo_core::oracle::{fd_grad, mc_mean_test, FdConfig};
use blo_core::problems::{
    derive_b2, piecewise_grad, piecewise_hess, piecewise_value, CounterexampleSpec, FewShotSampler, PiecewiseTask,
    QuadraticTask,
};
use blo_core::rng::{standard_normal, uniform01, SeedStreams, StreamRng};
use blo_core::task::TaskDistribution;
use blo_core::{rollout, AnalyticProblem, BilevelProblem, InnerLoopConfig, ParamVector, TaskSpec};

/// Signature of [`exact_grad_stored`] specialised to the analytic families.
pub type ExactFn =
    fn(&AnalyticProblem, &TaskSpec, &ParamVector, &InnerLoopConfig) -> blo_core::Result<GradientEstimate>;

pub const EXACT_STORED: ExactFn = exact_grad_stored::<AnalyticProblem>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Quadratic,
    Piecewise,
    FewShot,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Quadratic, Family::Piecewise, Family::FewShot];

    pub fn name(&self) -> &'static str {
        match self {
            Family::Quadratic => "quadratic",
            Family::Piecewise => "piecewise",
            Family::FewShot => "fewshot",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub task: TaskSpec,
    pub theta: ParamVector,
    pub cfg: InnerLoopConfig,
}

fn unif(rng: &mut StreamRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * uniform01(rng)
}

fn int(rng: &mut StreamRng, lo: usize, hi: usize) -> usize {
    (lo + (uniform01(rng) * (hi - lo + 1) as f64) as usize).min(hi)
}

fn vector(rng: &mut StreamRng, p: usize, mut f: impl FnMut(&mut StreamRng) -> f64) -> ParamVector {
    ParamVector::new((0..p).map(|_| f(rng)).collect()).expect("finite draws")
}

/// A random task, starting point and inner loop with `p ≤ max_dim` and
/// `r ≤ max_r`.
pub fn random_instance(family: Family, rng: &mut StreamRng, max_dim: usize, max_r: usize) -> Instance {
    let r = int(rng, 1, max_r);
    match family {
        Family::Quadratic => {
            let p = int(rng, 1, max_dim);
            let a = (0..p).map(|_| unif(rng, 0.1, 3.0)).collect();
            let b = (0..p).map(|_| unif(rng, -2.0, 2.0)).collect();
            let alpha = unif(rng, 0.01, 0.3);
            Instance {
                task: QuadraticTask::new(a, b).expect("valid").into(),
                theta: vector(rng, p, |g| unif(g, -5.0, 5.0)),
                cfg: InnerLoopConfig::new(alpha, r).expect("valid"),
            }
        }
        Family::Piecewise => {
            let p = int(rng, 1, max_dim);
            let a: Vec<f64> = (0..p).map(|_| unif(rng, 0.1, 2.0)).collect();
            let b: Vec<f64> = (0..p).map(|_| unif(rng, -3.0, 3.0)).collect();
            let big_a = unif(rng, 0.5, 4.0);
            let alpha = unif(rng, 0.01, 0.4);
            let centers: Vec<f64> = a.iter().zip(&b).map(|(a, b)| b / a).collect();
            let theta = ParamVector::new(
                centers.iter().map(|c| c + unif(rng, -(big_a + 3.0), big_a + 3.0)).collect(),
            )
            .expect("finite");
            Instance {
                task: PiecewiseTask::new(a, b, big_a).expect("valid").into(),
                theta,
                cfg: InnerLoopConfig::new(alpha, r).expect("valid"),
            }
        }
        Family::FewShot => {
            let m = int(rng, 2, 5.min(max_dim.max(2)));
            let n = int(rng, 1, (max_dim / m).max(1));
            let sampler = FewShotSampler::new(n, m, int(rng, 1, 5), int(rng, 1, 5), 2.0, 1.0).expect("valid");
            let task = sampler.sample(rng).expect("valid");
            let alpha = unif(rng, 0.01, 0.5);
            Instance {
                theta: vector(rng, n * m, |g| 0.5 * standard_normal(g)),
                task: task.into(),
                cfg: InnerLoopConfig::new(alpha, r).expect("valid"),
            }
        }
    }
}

/// Outcome of one suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl SuiteResult {
    fn new(name: &'static str, failures: Vec<String>, summary: String) -> Self {
        let passed = failures.is_empty();
        let detail = if passed {
            summary
        } else {
            let mut d = format!("{} failure(s); first: {}", failures.len(), failures[0]);
            if !summary.is_empty() {
                d = format!("{summary}; {d}");
            }
            d
        };
        Self { name, passed, detail }
    }
}

fn stream(seed: u64, suite: u64, family: usize) -> StreamRng {
    SeedStreams::new(seed).substream(suite, family as u64)
}

/// Stored, recomputing and checkpointed exact gradients agree bitwise.
pub fn estimator_equivalence(exact: ExactFn, seed: u64, per_family: usize, max_dim: usize, max_r: usize) -> SuiteResult {
    let mut failures = Vec::new();
    for (fi, family) in Family::ALL.iter().enumerate() {
        let mut rng = stream(seed, 1, fi);
        for i in 0..per_family {
            let inst = random_instance(*family, &mut rng, max_dim, max_r);
            let n = int(&mut rng, 1, inst.cfg.r());
            let run = || -> blo_core::Result<bool> {
                let s = exact(&AnalyticProblem, &inst.task, &inst.theta, &inst.cfg)?.gradient;
                let rr = exact_grad_rerun(&AnalyticProblem, &inst.task, &inst.theta, &inst.cfg)?.gradient;
                let c1 = exact_grad_checkpointed(&AnalyticProblem, &inst.task, &inst.theta, &inst.cfg, n)?.gradient;
                let c2 = exact_grad_checkpointed(
                    &AnalyticProblem,
                    &inst.task,
                    &inst.theta,
                    &inst.cfg,
                    default_checkpoints(inst.cfg.r()),
                )?
                .gradient;
                Ok(s == rr && s == c1 && s == c2)
            };
            match run() {
                Ok(true) => {}
                Ok(false) => failures.push(format!("{} instance {i}: gradients differ", family.name())),
                Err(e) => failures.push(format!("{} instance {i}: {e}", family.name())),
            }
        }
    }
    SuiteResult::new(
        "estimator-equivalence",
        failures,
        format!("{} instances per family", per_family),
    )
}

/// Central differences of `θ ↦ L_out(U(θ, 𝒯), 𝒯)` against the exact
/// gradient. Piecewise instances whose rollout passes within `1e-3` of a
/// breakpoint are redrawn.
pub fn fd_agreement(exact: ExactFn, seed: u64, per_family: usize, max_dim: usize, max_r: usize, tol: f64) -> (SuiteResult, f64) {
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for (fi, family) in Family::ALL.iter().enumerate() {
        let mut rng = stream(seed, 2, fi);
        let mut done = 0;
        let mut attempts = 0;
        while done < per_family && attempts < 100 * per_family {
            attempts += 1;
            let inst = random_instance(*family, &mut rng, max_dim, max_r);
            if let TaskSpec::Counterexample(t) = &inst.task {
                let states = match rollout(&AnalyticProblem, &inst.task, &inst.theta, &inst.cfg, true) {
                    Ok(blo_core::RolloutOutput::Trajectory(s)) => s.into_states(),
                    _ => continue,
                };
                if states.iter().any(|s| t.breakpoint_distance(s) < 1e-3) {
                    continue;
                }
            }
            let objective = |th: &ParamVector| {
                let phi = rollout(&AnalyticProblem, &inst.task, th, &inst.cfg, false)?.into_final();
                AnalyticProblem.outer_loss(&phi, &inst.task)
            };
            let result = (|| -> blo_core::Result<Option<f64>> {
                let g = exact(&AnalyticProblem, &inst.task, &inst.theta, &inst.cfg)?.gradient;
                if g.norm() < 1e-4 {
                    return Ok(None);
                }
                let fd = fd_grad(objective, &inst.theta, FdConfig::default())?;
                Ok(Some(fd.sub(&g)?.norm() / g.norm()))
            })();
            match result {
                Ok(None) => continue,
                Ok(Some(rel)) => {
                    worst = worst.max(rel);
                    if !(rel < tol) {
                        failures.push(format!("{} instance {done}: relative error {rel:.3e}", family.name()));
                    }
                }
                Err(e) => failures.push(format!("{} instance {done}: {e}", family.name())),
            }
            done += 1;
        }
        if done < per_family {
            failures.push(format!("{}: only {done} usable instances", family.name()));
        }
    }
    (
        SuiteResult::new(
            "fd-gradient",
            failures,
            format!("{per_family} instances per family, worst relative error {worst:.3e}"),
        ),
        worst,
    )
}

/// `(1 − q)·𝒢(ξ=0) + q·𝒢(ξ=1)` equals the exact gradient for random
/// tasks, points and `q`.
pub fn unbiasedness_enumeration(seed: u64, count: usize) -> (SuiteResult, f64) {
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    let mut rng = stream(seed, 3, 0);
    for i in 0..count {
        let family = Family::ALL[i % 3];
        let inst = random_instance(family, &mut rng, 10, 10);
        let q = unif(&mut rng, 0.01, 1.0);
        let res = (|| -> blo_core::Result<f64> {
            let (p, t, th, c) = (&AnalyticProblem, &inst.task, &inst.theta, &inst.cfg);
            let off = ufo_grad_given(p, t, th, c, q, false)?.gradient;
            let on = ufo_grad_given(p, t, th, c, q, true)?.gradient;
            let exact = exact_grad_stored(p, t, th, c)?.gradient;
            let mix = off.scale(1.0 - q)?.axpy(q, &on)?;
            let scale = 1f64.max(exact.norm()).max(off.norm());
            Ok(mix.sub(&exact)?.norm() / scale)
        })();
        match res {
            Ok(err) => {
                worst = worst.max(err);
                if !(err < 1e-12) {
                    failures.push(format!("instance {i} (q = {q}): error {err:.3e}"));
                }
            }
            Err(e) => failures.push(format!("instance {i}: {e}")),
        }
    }
    (
        SuiteResult::new("unbiasedness-enumeration", failures, format!("{count} instances, worst {worst:.3e}")),
        worst,
    )
}

/// Monte-Carlo mean of UFO(`q = 0.1`) on the counterexample at `θ = 5`
/// against the exact meta-gradient.
pub fn unbiasedness_monte_carlo(seed: u64, draws: usize) -> (SuiteResult, f64) {
    let spec = CounterexampleSpec::synthetic_default();
    let dist = spec.distribution();
    let cfg = spec.inner_config();
    let theta = ParamVector::scalar(5.0).expect("finite");
    let streams = SeedStreams::new(seed);
    let mut rng = streams.auxiliary(4);
    let res = (|| -> blo_core::Result<f64> {
        let reference = blo_core::diagnostics::meta_grad_exact(&AnalyticProblem, &dist, &theta, &cfg)?;
        let report = mc_mean_test(
            || {
                let task = dist.sample(&mut rng)?;
                Ok(ufo_grad(&AnalyticProblem, &task, &theta, &cfg, 0.1, &mut rng)?.gradient)
            },
            &reference,
            draws,
        )?;
        Ok(report.max_abs_z)
    })();
    match res {
        Ok(z) => (
            SuiteResult::new(
                "unbiasedness-monte-carlo",
                if z < 4.0 { vec![] } else { vec![format!("max |z| = {z:.3}")] },
                format!("{draws} draws, max |z| = {z:.3}"),
            ),
            z,
        ),
        Err(e) => (SuiteResult::new("unbiasedness-monte-carlo", vec![e.to_string()], String::new()), f64::INFINITY),
    }
}

/// UFO with `q = 1` returns the exact gradient bitwise.
pub fn ufo_q1_bitwise(seed: u64, count: usize) -> SuiteResult {
    let mut failures = Vec::new();
    let mut rng = stream(seed, 5, 0);
    for i in 0..count {
        let inst = random_instance(Family::ALL[i % 3], &mut rng, 10, 10);
        let res = (|| -> blo_core::Result<bool> {
            let u = ufo_grad(&AnalyticProblem, &inst.task, &inst.theta, &inst.cfg, 1.0, &mut rng)?;
            let e = exact_grad_stored(&AnalyticProblem, &inst.task, &inst.theta, &inst.cfg)?;
            Ok(u.gradient == e.gradient)
        })();
        match res {
            Ok(true) => {}
            Ok(false) => failures.push(format!("instance {i}: gradients differ")),
            Err(e) => failures.push(format!("instance {i}: {e}")),
        }
    }
    SuiteResult::new("ufo-q1-bitwise", failures, format!("{count} instances"))
}

/// Tallies of the resource report for every estimator over `calls` calls
/// on the counterexample with `r = 10`.
pub fn resource_laws(seed: u64, calls: usize) -> SuiteResult {
    let spec = CounterexampleSpec::synthetic_default();
    let dist = spec.distribution();
    let cfg = spec.inner_config();
    let streams = SeedStreams::new(seed);
    let kinds = [
        EstimatorKind::Fo,
        EstimatorKind::ExactStored,
        EstimatorKind::ExactRerun,
        EstimatorKind::ExactCheckpointed { checkpoints: None },
        EstimatorKind::Ufo { q: 0.2 },
    ];
    let mut failures = Vec::new();
    let mut notes = Vec::new();
    for (ki, kind) in kinds.iter().enumerate() {
        let mut estimates = Vec::with_capacity(calls);
        for c in 0..calls {
            let mut rng = streams.substream(6 + ki as u64, c as u64);
            let res = dist.sample(&mut rng).and_then(|task| {
                let theta = ParamVector::scalar(unif(&mut rng, -10.0, 30.0))?;
                estimate(*kind, &AnalyticProblem, &task, &theta, &cfg, &mut rng)
            });
            match res {
                Ok(e) => estimates.push(e),
                Err(e) => failures.push(format!("{}: {e}", kind.name())),
            }
        }
        match resource_report(&estimates, *kind, &cfg) {
            Ok(rep) => {
                if let Some(f) = rep.correction_frequency {
                    notes.push(format!("ufo frequency {f:.4}"));
                }
                for c in rep.checks.iter().filter(|c| !c.passed) {
                    failures.push(format!("{}: {}", c.name, c.detail));
                }
            }
            Err(e) => failures.push(format!("{}: {e}", kind.name())),
        }
    }
    SuiteResult::new("resource-laws", failures, format!("{calls} calls per estimator; {}", notes.join(", ")))
}

/// Continuity of the piecewise value and its two derivatives across both
/// breakpoints, and the derivative bounds on sampled points.
pub fn piecewise_regularity(seed: u64, samples: usize) -> SuiteResult {
    let mut failures = Vec::new();
    let mut rng = stream(seed, 11, 0);
    let delta = 1e-12;
    for i in 0..100 {
        let a = unif(&mut rng, 0.1, 3.0);
        let b = unif(&mut rng, -5.0, 5.0);
        let big_a = unif(&mut rng, 0.5, 10.0);
        let c = b / a;
        for side in [-1.0, 1.0] {
            for z in [big_a, big_a + 1.0] {
                let lo = c + side * (z - delta * z);
                let hi = c + side * (z + delta * z);
                let jumps = [
                    (piecewise_value(lo, a, b, big_a) - piecewise_value(hi, a, b, big_a)).abs(),
                    (piecewise_grad(lo, a, b, big_a) - piecewise_grad(hi, a, b, big_a)).abs(),
                    (piecewise_hess(lo, a, b, big_a) - piecewise_hess(hi, a, b, big_a)).abs(),
                ];
                if jumps.iter().any(|j| !(*j < 1e-9)) {
                    failures.push(format!("case {i}: jump {jumps:?} at z = {z}"));
                }
            }
        }
    }
    for i in 0..samples {
        let a = unif(&mut rng, 0.05, 5.0);
        let b = unif(&mut rng, -10.0, 10.0);
        let big_a = unif(&mut rng, 0.1, 20.0);
        let x = b / a + unif(&mut rng, -2.0 * (big_a + 2.0), 2.0 * (big_a + 2.0));
        let g = piecewise_grad(x, a, b, big_a).abs();
        let h = piecewise_hess(x, a, b, big_a);
        let gb = a * (0.5 + big_a);
        if g > gb * (1.0 + 1e-12) || !(h >= 0.0 && h <= a * (1.0 + 1e-12)) {
            failures.push(format!("sample {i}: |f'| = {g}, f'' = {h}, a = {a}, A = {big_a}"));
        }
    }
    SuiteResult::new(
        "piecewise-regularity",
        failures,
        format!("400 breakpoint comparisons, {samples} bound samples"),
    )
}

/// `(â x* − b̂)² = 2D` and `x*, θ* ∈ I` for the default and random
/// counterexample parameters, and the second-moment bound for exact
/// gradients with `q = 1`.
pub fn gap_identity(seed: u64) -> SuiteResult {
    let mut failures = Vec::new();
    let mut rng = stream(seed, 12, 0);
    let mut specs = vec![CounterexampleSpec::synthetic_default()];
    while specs.len() < 50 {
        let a1 = unif(&mut rng, 0.1, 3.0);
        let a2 = unif(&mut rng, 0.1, 3.0);
        let alpha = unif(&mut rng, 0.01, 0.3);
        let r = int(&mut rng, 1, 20);
        let d = unif(&mut rng, 0.01, 1.0);
        // large offsets make the gap a difference of huge terms
        match CounterexampleSpec::new(a1, a2, alpha, r, d, None) {
            Ok(s) if s.b2.abs() <= 1e4 => specs.push(s),
            _ => {}
        }
    }
    for (i, spec) in specs.iter().enumerate() {
        let c = spec.constants();
        let rel = (c.gap * c.gap - 2.0 * spec.d).abs() / (2.0 * spec.d);
        if !(rel < 1e-9) {
            failures.push(format!("spec {i}: gap² = {}, 2D = {}", c.gap * c.gap, 2.0 * spec.d));
        }
        if !(c.in_interval(c.x_star) && c.in_interval(c.theta_star)) {
            failures.push(format!("spec {i}: x* or θ* outside I"));
        }
        match derive_b2(spec.a1, spec.a2, spec.alpha, spec.r, spec.d) {
            Ok(b2) if b2 == spec.b2 => {}
            other => failures.push(format!("spec {i}: b2 re-derivation {other:?}")),
        }
        if let Ok(consts) = RegularityConstants::new(spec.smoothness(), spec.alpha, spec.r, 1.0, 1) {
            let bound = grad_sq_bound(&consts);
            let cfg = spec.inner_config();
            for task in spec.tasks() {
                let task: TaskSpec = task.into();
                for _ in 0..20 {
                    let x = unif(&mut rng, c.interval.0 - 20.0, c.interval.1 + 20.0);
                    if let Ok(g) = exact_grad_stored(&AnalyticProblem, &task, &ParamVector::scalar(x).unwrap(), &cfg) {
                        if g.gradient.norm_sq() > bound {
                            failures.push(format!("spec {i}: ‖∇‖² = {} > {bound}", g.gradient.norm_sq()));
                        }
                    }
                }
            }
        }
    }
    SuiteResult::new("gap-identity", failures, format!("{} parameter sets", specs.len()))
}

/// Symmetry `⟨u, Hv⟩ = ⟨v, Hu⟩` and linearity of the inner HVP.
pub fn hvp_properties(seed: u64, per_family: usize) -> (SuiteResult, f64) {
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for (fi, family) in Family::ALL.iter().enumerate() {
        let mut rng = stream(seed, 13, fi);
        for i in 0..per_family {
            let inst = random_instance(*family, &mut rng, 20, 1);
            let p = inst.theta.len();
            let u = vector(&mut rng, p, standard_normal);
            let v = vector(&mut rng, p, standard_normal);
            let (s, t) = (unif(&mut rng, -3.0, 3.0), unif(&mut rng, -3.0, 3.0));
            let res = (|| -> blo_core::Result<(f64, f64)> {
                let h = |d: &ParamVector| AnalyticProblem.inner_hvp(&inst.theta, &inst.task, d);
                let (hu, hv) = (h(&u)?, h(&v)?);
                let sym = (u.dot(&hv)? - v.dot(&hu)?).abs() / (u.norm() * hv.norm() + v.norm() * hu.norm()).max(1.0);
                let combo = h(&u.scale(s)?.axpy(t, &v)?)?;
                let expected = hu.scale(s)?.axpy(t, &hv)?;
                let lin = combo.sub(&expected)?.norm() / expected.norm().max(1.0);
                Ok((sym, lin))
            })();
            match res {
                Ok((sym, lin)) => {
                    worst = worst.max(sym).max(lin);
                    if !(sym < 1e-12 && lin < 1e-12) {
                        failures.push(format!("{} instance {i}: symmetry {sym:.2e}, linearity {lin:.2e}", family.name()));
                    }
                }
                Err(e) => failures.push(format!("{} instance {i}: {e}", family.name())),
            }
        }
    }
    (
        SuiteResult::new("hvp-properties", failures, format!("{per_family} instances per family, worst {worst:.2e}")),
        worst,
    )
}

/// First-order and exact gradients differ on the counterexample, so the
/// check suites are not vacuous.
pub fn fo_differs(seed: u64) -> SuiteResult {
    let spec = CounterexampleSpec::synthetic_default();
    let cfg = spec.inner_config();
    let mut rng = stream(seed, 14, 0);
    let mut failures = Vec::new();
    for task in spec.tasks() {
        let task: TaskSpec = task.into();
        let x = ParamVector::scalar(unif(&mut rng, -5.0, 5.0)).unwrap();
        match (fo_grad(&AnalyticProblem, &task, &x, &cfg), exact_grad_stored(&AnalyticProblem, &task, &x, &cfg)) {
            (Ok(f), Ok(e)) if f.gradient != e.gradient => {}
            other => failures.push(format!("{other:?}")),
        }
    }
    SuiteResult::new("fo-differs-from-exact", failures, String::new())
}

/// Sizes of a full check run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckScale {
    pub instances: usize,
    pub resource_calls: usize,
    pub regularity_samples: usize,
    pub mc_draws: usize,
}

impl Default for CheckScale {
    fn default() -> Self {
        Self {
            instances: 100,
            resource_calls: 10_000,
            regularity_samples: 100_000,
            mc_draws: 100_000,
        }
    }
}

/// Every suite, in a fixed order.
pub fn run_all(exact: ExactFn, seed: u64, scale: CheckScale) -> Vec<SuiteResult> {
    vec![
        estimator_equivalence(exact, seed, scale.instances, 50, 20),
        fd_agreement(exact, seed, scale.instances / 2, 10, 10, 1e-5).0,
        unbiasedness_enumeration(seed, scale.instances).0,
        unbiasedness_monte_carlo(seed, scale.mc_draws).0,
        ufo_q1_bitwise(seed, scale.instances),
        resource_laws(seed, scale.resource_calls),
        piecewise_regularity(seed, scale.regularity_samples),
        gap_identity(seed),
        hvp_properties(seed, scale.instances).0,
        fo_differs(seed),
    ]
}

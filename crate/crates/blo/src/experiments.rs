//! Experiment drivers behind the CLI subcommands.

use blo_core::diagnostics::meta_grad_exact;
use blo_core::estimators::{estimate, exact_grad_stored, EstimatorKind};
use blo_core::outer::{run_minibatch_gd, InitialPoint, McDiagnostics, RunConfig, Trajectory};
use blo_core::problems::{CounterexampleConstants, CounterexampleSpec, FewShotSampler, QuadraticSampler};
use blo_core::rng::{uniform01, SeedStreams};
use blo_core::task::TaskDistribution;
use blo_core::{AnalyticProblem, InnerLoopConfig, ParamVector, SpecSampler, TaskSpec};

use crate::config::{estimator_label, ExperimentConfig, SweepQ, Theta0};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Core(#[from] blo_core::Error),
    #[error("seed {seed}, estimator {estimator}: run aborted at iteration {k}: {error}")]
    Diverged {
        seed: u64,
        estimator: String,
        k: usize,
        error: blo_core::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

fn initial_point(theta0: Theta0, dim: usize) -> Result<InitialPoint, RunError> {
    Ok(match theta0 {
        Theta0::Uniform { low, high } => InitialPoint::Uniform { low, high, dim },
        Theta0::Fixed(x) => InitialPoint::Fixed(ParamVector::new(vec![x; dim])?),
    })
}

fn run_config(cfg: &ExperimentConfig, estimator: EstimatorKind, seed: u64, dim: usize) -> Result<RunConfig, RunError> {
    Ok(RunConfig {
        tau: cfg.tau,
        batch_size: cfg.batch_size,
        inner: InnerLoopConfig::new(cfg.alpha, cfg.r)?,
        estimator,
        schedule: cfg.schedule,
        clip_bound: cfg.clip_bound,
        seed,
        theta0: initial_point(cfg.theta0, dim)?,
        mc_diagnostics: Some(McDiagnostics {
            every: cfg.mc_every,
            samples: cfg.mc_samples,
        }),
    })
}

fn completed(traj: Trajectory) -> Result<Trajectory, RunError> {
    match traj.failure {
        Some(f) => Err(RunError::Diverged {
            seed: traj.seed,
            estimator: estimator_label(&traj.estimator),
            k: f.k,
            error: f.error,
        }),
        None => Ok(traj),
    }
}

pub fn counterexample_spec(cfg: &ExperimentConfig) -> Result<CounterexampleSpec, RunError> {
    Ok(CounterexampleSpec::new(cfg.a1, cfg.a2, cfg.alpha, cfg.r, cfg.d, cfg.big_a)?)
}

/// One iterate of a synthetic run.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRow {
    pub seed: u64,
    pub estimator: String,
    pub k: usize,
    pub gamma: Option<f64>,
    pub theta: f64,
    pub grad_m: f64,
    pub grad_m_sq: f64,
    pub min_grad_m_sq: f64,
    pub correction_taken: Option<bool>,
}

/// Per-run summary; `seed = None` marks the average over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSummary {
    pub seed: Option<u64>,
    pub estimator: String,
    pub tau: usize,
    pub final_theta: Option<f64>,
    pub final_min_grad_m_sq: f64,
    pub min_abs_grad_m: f64,
    /// Mean of `‖∇M(θ_k)‖²` over the final tenth of the iterations.
    pub tail_mean_grad_m_sq: f64,
    /// Seeds meeting the estimator's criterion (aggregate rows only).
    pub seeds_passing: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticOutput {
    pub spec: CounterexampleSpec,
    pub constants: CounterexampleConstants,
    pub ufo_threshold: f64,
    pub rows: Vec<SyntheticRow>,
    pub summaries: Vec<SyntheticSummary>,
}

impl SyntheticOutput {
    pub fn sqrt_2d(&self) -> f64 {
        (2.0 * self.spec.d).sqrt()
    }

    pub fn aggregate(&self, estimator: &str) -> Option<&SyntheticSummary> {
        self.summaries.iter().find(|s| s.seed.is_none() && s.estimator == estimator)
    }
}

/// The two-task counterexample with FO and UFO (`q = cfg.q`) for every
/// seed. `τ = 0` writes only the starting points.
pub fn run_synthetic(cfg: &ExperimentConfig) -> Result<SyntheticOutput, RunError> {
    if cfg.seeds.is_empty() {
        return Err(RunError::Config("at least one seed is required".into()));
    }
    let spec = counterexample_spec(cfg)?;
    let constants = spec.constants();
    let dist = spec.distribution();
    let inner = spec.inner_config();
    let estimators = [EstimatorKind::Fo, EstimatorKind::Ufo { q: cfg.q }];
    let mut rows = Vec::new();
    let mut summaries = Vec::new();

    for kind in estimators {
        let label = estimator_label(&kind);
        let mut per_seed = Vec::new();
        for &seed in &cfg.seeds {
            let series: Vec<(usize, Option<f64>, f64, f64, Option<bool>)> = if cfg.tau == 0 {
                let theta0 = initial_point(cfg.theta0, 1)?.draw(&SeedStreams::new(seed))?;
                let g = meta_grad_exact(&AnalyticProblem, &dist, &theta0, &inner)?;
                vec![(0, None, theta0[0], g[0], None)]
            } else {
                let traj = run_minibatch_gd(&AnalyticProblem, &dist, &run_config(cfg, kind, seed, 1)?)?;
                let traj = completed(traj)?;
                traj.records
                    .iter()
                    .map(|rec| {
                        let g = rec.meta_grad.as_ref().expect("finite distribution")[0];
                        (rec.k, rec.gamma, rec.theta[0], g, rec.corrections.map(|c| c > 0))
                    })
                    .collect()
            };
            let mut min_sq = f64::INFINITY;
            let mut min_abs = f64::INFINITY;
            let tail_start = cfg.tau.saturating_sub((cfg.tau / 10).max(1));
            let (mut tail_sum, mut tail_n) = (0.0, 0usize);
            for &(k, gamma, theta, g, xi) in &series {
                min_sq = min_sq.min(g * g);
                min_abs = min_abs.min(g.abs());
                if k > tail_start || cfg.tau == 0 {
                    tail_sum += g * g;
                    tail_n += 1;
                }
                rows.push(SyntheticRow {
                    seed,
                    estimator: label.clone(),
                    k,
                    gamma,
                    theta,
                    grad_m: g,
                    grad_m_sq: g * g,
                    min_grad_m_sq: min_sq,
                    correction_taken: xi,
                });
            }
            per_seed.push(SyntheticSummary {
                seed: Some(seed),
                estimator: label.clone(),
                tau: cfg.tau,
                final_theta: series.last().map(|s| s.2),
                final_min_grad_m_sq: min_sq,
                min_abs_grad_m: min_abs,
                tail_mean_grad_m_sq: tail_sum / tail_n as f64,
                seeds_passing: None,
            });
        }
        let n = per_seed.len() as f64;
        let passing = per_seed
            .iter()
            .filter(|s| match kind {
                EstimatorKind::Ufo { .. } => s.min_abs_grad_m < cfg.ufo_threshold,
                _ => s.tail_mean_grad_m_sq > spec.d,
            })
            .count();
        let aggregate = SyntheticSummary {
            seed: None,
            estimator: label,
            tau: cfg.tau,
            final_theta: None,
            final_min_grad_m_sq: per_seed.iter().map(|s| s.final_min_grad_m_sq).sum::<f64>() / n,
            min_abs_grad_m: per_seed.iter().map(|s| s.min_abs_grad_m).sum::<f64>() / n,
            tail_mean_grad_m_sq: per_seed.iter().map(|s| s.tail_mean_grad_m_sq).sum::<f64>() / n,
            seeds_passing: Some(passing),
        };
        summaries.extend(per_seed);
        summaries.push(aggregate);
    }
    Ok(SyntheticOutput {
        spec,
        constants,
        ufo_threshold: cfg.ufo_threshold,
        rows,
        summaries,
    })
}

/// One iterate of a sampled-family run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub seed: u64,
    pub estimator: String,
    pub k: usize,
    pub gamma: Option<f64>,
    pub theta_norm: f64,
    pub batch_grad_norm: Option<f64>,
    /// Monte-Carlo `‖∇M(θ_k)‖` every `mc_every` iterations.
    pub grad_m_norm: Option<f64>,
    pub inner_grad_evals: usize,
    pub outer_grad_evals: usize,
    pub hvp_evals: usize,
    pub peak_cached_states: usize,
    pub corrections: Option<usize>,
}

fn rows_of(traj: &Trajectory) -> Vec<RunRow> {
    let label = estimator_label(&traj.estimator);
    traj.records
        .iter()
        .map(|rec| RunRow {
            seed: traj.seed,
            estimator: label.clone(),
            k: rec.k,
            gamma: rec.gamma,
            theta_norm: rec.theta.norm(),
            batch_grad_norm: rec.batch_grad.as_ref().map(ParamVector::norm),
            grad_m_norm: rec.meta_grad_norm(),
            inner_grad_evals: rec.tallies.inner_grad_evals,
            outer_grad_evals: rec.tallies.outer_grad_evals,
            hvp_evals: rec.tallies.hvp_evals,
            peak_cached_states: rec.tallies.peak_cached_states,
            corrections: rec.corrections,
        })
        .collect()
}

fn run_sampled<D>(cfg: &ExperimentConfig, dist: &D, dim: usize) -> Result<Vec<RunRow>, RunError>
where
    D: TaskDistribution<Task = TaskSpec>,
{
    if cfg.seeds.is_empty() {
        return Err(RunError::Config("at least one seed is required".into()));
    }
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let traj = run_minibatch_gd(&AnalyticProblem, dist, &run_config(cfg, cfg.estimator, seed, dim)?)?;
        rows.extend(rows_of(&completed(traj)?));
    }
    Ok(rows)
}

/// Random diagonal quadratics in `cfg.dim` dimensions.
pub fn run_quadratic(cfg: &ExperimentConfig) -> Result<Vec<RunRow>, RunError> {
    let dist = SpecSampler(QuadraticSampler::new(cfg.dim, cfg.a_range, cfg.b_range)?);
    run_sampled(cfg, &dist, cfg.dim)
}

/// Synthetic few-shot softmax regression.
pub fn run_fewshot(cfg: &ExperimentConfig) -> Result<Vec<RunRow>, RunError> {
    let sampler = FewShotSampler::new(
        cfg.n_inputs,
        cfg.n_classes,
        cfg.shots,
        cfg.test_shots,
        cfg.center_scale,
        cfg.noise,
    )?;
    let dim = sampler.dim();
    run_sampled(cfg, &SpecSampler(sampler), dim)
}

/// One estimator × `r` × `q` cell of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub estimator: String,
    pub r: usize,
    pub q: Option<f64>,
    pub calls: usize,
    pub mean_inner_grad_evals: f64,
    pub mean_outer_grad_evals: f64,
    pub mean_hvp_evals: f64,
    pub max_peak_cached_states: usize,
    pub correction_frequency: Option<f64>,
    /// `‖𝒢 − ∇_θ L_out(U(θ, 𝒯))‖` against the stored exact gradient at the
    /// same task and point.
    pub mean_grad_error: f64,
    pub max_grad_error: f64,
}

/// Estimator costs and errors on the counterexample tasks (with `b2`
/// re-derived for every `r`) at points drawn from the `theta0` range.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>, RunError> {
    if cfg.sweep_calls == 0 {
        return Err(RunError::Config("sweep_calls must be at least 1".into()));
    }
    let seed = *cfg.seeds.first().ok_or_else(|| RunError::Config("at least one seed is required".into()))?;
    let streams = SeedStreams::new(seed);
    let mut rows = Vec::new();
    let mut cell = 0u64;
    for &r in &cfg.sweep_r {
        let mut local = cfg.clone();
        local.r = r;
        let spec = counterexample_spec(&local)?;
        let dist = spec.distribution();
        let inner = spec.inner_config();
        for kind in &cfg.sweep_estimators {
            let variants: Vec<(EstimatorKind, Option<f64>)> = match kind {
                EstimatorKind::Ufo { .. } => cfg
                    .sweep_q
                    .iter()
                    .map(|q: &SweepQ| {
                        let q = q.resolve(r);
                        (EstimatorKind::Ufo { q }, Some(q))
                    })
                    .collect(),
                k => vec![(*k, None)],
            };
            for (kind, q) in variants {
                kind.validate()?;
                cell += 1;
                let (mut inner_evals, mut outer_evals, mut hvps, mut peak, mut taken) = (0, 0, 0, 0, 0);
                let (mut err_sum, mut err_max) = (0.0, 0.0f64);
                for call in 0..cfg.sweep_calls {
                    let mut rng = streams.substream(cell, call as u64);
                    let task = dist.sample(&mut rng)?;
                    let x = match cfg.theta0 {
                        Theta0::Uniform { low, high } => low + (high - low) * uniform01(&mut rng),
                        Theta0::Fixed(x) => x,
                    };
                    let theta = ParamVector::scalar(x)?;
                    let est = estimate(kind, &AnalyticProblem, &task, &theta, &inner, &mut rng)?;
                    let exact = exact_grad_stored(&AnalyticProblem, &task, &theta, &inner)?;
                    let err = est.gradient.sub(&exact.gradient)?.norm();
                    err_sum += err;
                    err_max = err_max.max(err);
                    inner_evals += est.meta.inner_grad_evals;
                    outer_evals += est.meta.outer_grad_evals;
                    hvps += est.meta.hvp_evals;
                    peak = peak.max(est.meta.peak_cached_states);
                    taken += usize::from(est.meta.correction_taken == Some(true));
                }
                let n = cfg.sweep_calls as f64;
                rows.push(SweepRow {
                    estimator: kind.name().to_string(),
                    r,
                    q,
                    calls: cfg.sweep_calls,
                    mean_inner_grad_evals: inner_evals as f64 / n,
                    mean_outer_grad_evals: outer_evals as f64 / n,
                    mean_hvp_evals: hvps as f64 / n,
                    max_peak_cached_states: peak,
                    correction_frequency: q.map(|_| taken as f64 / n),
                    mean_grad_error: err_sum / n,
                    max_grad_error: err_max,
                });
            }
        }
    }
    Ok(rows)
}

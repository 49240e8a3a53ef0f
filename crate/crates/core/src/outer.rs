//! Outer mini-batch gradient descent over sampled tasks.

use alloc::format;
use alloc::vec::Vec;

use crate::diagnostics::meta_grad_exact;
use crate::error::{Error, Result};
use crate::estimators::{estimate, exact_grad_stored, EstimateMeta, EstimatorKind};
use crate::math::sqrt;
use crate::problem::BilevelProblem;
use crate::rng::{uniform01, SeedStreams};
use crate::rollout::{check_theta, InnerLoopConfig};
use crate::task::TaskDistribution;
use crate::vector::ParamVector;

/// Outer step sizes `γ_k`, `k ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    Constant(f64),
    /// `γ_k = c/k`.
    Harmonic(f64),
    /// `γ_k = k^{-1/2}`.
    InverseSqrt,
}

impl StepSchedule {
    pub fn gamma(&self, k: usize) -> f64 {
        let k = k.max(1) as f64;
        match *self {
            StepSchedule::Constant(g) => g,
            StepSchedule::Harmonic(c) => c / k,
            StepSchedule::InverseSqrt => 1.0 / sqrt(k),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            StepSchedule::Constant(g) | StepSchedule::Harmonic(g) if !(g.is_finite() && g > 0.0) => Err(
                Error::InvalidConfig(format!("step-size constant must be positive, got {g}")),
            ),
            _ => Ok(()),
        }
    }
}

/// Analytic classification of a schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleReport {
    /// `Σ γ_k = ∞` and `γ_k → 0`.
    pub satisfies_step_conditions: bool,
    /// `Σ γ_k² < ∞`.
    pub square_summable: bool,
}

pub fn validate_schedule(schedule: &StepSchedule) -> ScheduleReport {
    match schedule {
        StepSchedule::Constant(_) => ScheduleReport {
            satisfies_step_conditions: false,
            square_summable: false,
        },
        StepSchedule::Harmonic(_) => ScheduleReport {
            satisfies_step_conditions: true,
            square_summable: true,
        },
        StepSchedule::InverseSqrt => ScheduleReport {
            satisfies_step_conditions: true,
            square_summable: false,
        },
    }
}

/// Starting point of the outer loop.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialPoint {
    Fixed(ParamVector),
    /// Each coordinate uniform on `[low, high)`, drawn from the run's
    /// auxiliary stream.
    Uniform { low: f64, high: f64, dim: usize },
}

impl InitialPoint {
    pub fn dim(&self) -> usize {
        match self {
            InitialPoint::Fixed(v) => v.len(),
            InitialPoint::Uniform { dim, .. } => *dim,
        }
    }

    /// The starting point a run with these streams uses.
    pub fn draw(&self, streams: &SeedStreams) -> Result<ParamVector> {
        match self {
            InitialPoint::Fixed(v) => Ok(v.clone()),
            InitialPoint::Uniform { low, high, dim } => {
                let mut rng = streams.auxiliary(THETA0_STREAM);
                ParamVector::new((0..*dim).map(|_| low + (high - low) * uniform01(&mut rng)).collect())
            }
        }
    }
}

const THETA0_STREAM: u32 = 0;
const MC_STREAM_BASE: u32 = 1;

/// Monte-Carlo estimate of `∇M` every `every` iterations from `samples`
/// tasks, for distributions without an explicit task list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McDiagnostics {
    pub every: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub tau: usize,
    pub batch_size: usize,
    pub inner: InnerLoopConfig,
    pub estimator: EstimatorKind,
    pub schedule: StepSchedule,
    pub clip_bound: Option<f64>,
    pub seed: u64,
    pub theta0: InitialPoint,
    pub mc_diagnostics: Option<McDiagnostics>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau == 0 {
            return Err(Error::InvalidConfig("tau must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        self.estimator.validate()?;
        self.schedule.validate()?;
        if let Some(c) = self.clip_bound {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::InvalidConfig(format!("clip bound must be positive, got {c}")));
            }
        }
        if let InitialPoint::Uniform { low, high, dim } = self.theta0 {
            if !(low.is_finite() && high.is_finite() && low < high) || dim == 0 {
                return Err(Error::InvalidConfig(format!(
                    "invalid initial range [{low}, {high}) in dimension {dim}"
                )));
            }
        }
        if let Some(mc) = self.mc_diagnostics {
            if mc.every == 0 || mc.samples == 0 {
                return Err(Error::InvalidConfig("Monte-Carlo diagnostics need every, samples >= 1".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetaGradSource {
    /// Probability-weighted exact gradients over a finite task list.
    Exact,
    MonteCarlo,
}

/// State after outer iteration `k`. For `k = 0` only `theta` and
/// `meta_grad` are set.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateRecord {
    pub k: usize,
    pub theta: ParamVector,
    pub gamma: Option<f64>,
    /// Averaged (and clipped, if enabled) estimate at `θ_{k−1}`.
    pub batch_grad: Option<ParamVector>,
    /// `∇M(θ_k)` when available.
    pub meta_grad: Option<ParamVector>,
    /// Number of UFO corrections taken in the batch.
    pub corrections: Option<usize>,
    /// Summed over the batch; `peak_cached_states` is the batch maximum.
    pub tallies: EstimateMeta,
}

impl IterateRecord {
    pub fn meta_grad_norm(&self) -> Option<f64> {
        self.meta_grad.as_ref().map(ParamVector::norm)
    }
}

/// Abort marker: iteration `k` failed with `error`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub k: usize,
    pub error: Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub seed: u64,
    pub estimator: EstimatorKind,
    pub schedule: StepSchedule,
    pub meta_grad_source: Option<MetaGradSource>,
    pub records: Vec<IterateRecord>,
    pub failure: Option<RunFailure>,
}

impl Trajectory {
    pub fn is_complete(&self) -> bool {
        self.failure.is_none()
    }

    pub fn final_theta(&self) -> &ParamVector {
        &self.records.last().expect("trajectory holds θ_0").theta
    }

    /// `‖∇M(θ_k)‖` for every record where it was computed.
    pub fn meta_grad_norms(&self) -> Vec<f64> {
        self.records.iter().filter_map(IterateRecord::meta_grad_norm).collect()
    }
}

fn monte_carlo_meta_grad<P, D>(
    problem: &P,
    dist: &D,
    theta: &ParamVector,
    inner: &InnerLoopConfig,
    streams: &SeedStreams,
    k: usize,
    samples: usize,
) -> Result<ParamVector>
where
    P: BilevelProblem,
    D: TaskDistribution<Task = P::Task>,
{
    let mut rng = streams.auxiliary(MC_STREAM_BASE.wrapping_add(k as u32));
    let mut acc = ParamVector::zeros(theta.len())?;
    for _ in 0..samples {
        let task = dist.sample(&mut rng)?;
        acc = acc.add(&exact_grad_stored(problem, &task, theta, inner)?.gradient)?;
    }
    acc.scale(1.0 / samples as f64)
}

/// Runs `cfg.tau` outer iterations
/// `θ_k = θ_{k−1} − γ_k · (1/v) Σ_w 𝒢(θ_{k−1}, 𝒯_{k,w})`.
///
/// Slot `w` of iteration `k` draws its task and then any estimator
/// randomness from substream `(k, w)`, so the run is a pure function of
/// `cfg`. A non-finite state ends the run early with
/// [`Trajectory::failure`] set; configuration errors are returned as `Err`.
pub fn run_minibatch_gd<P, D>(problem: &P, dist: &D, cfg: &RunConfig) -> Result<Trajectory>
where
    P: BilevelProblem,
    D: TaskDistribution<Task = P::Task>,
{
    cfg.validate()?;
    let streams = SeedStreams::new(cfg.seed);
    let finite = dist.as_finite();
    let meta_grad_source = match (finite, cfg.mc_diagnostics) {
        (Some(_), _) => Some(MetaGradSource::Exact),
        (None, Some(_)) => Some(MetaGradSource::MonteCarlo),
        (None, None) => None,
    };
    let meta_grad = |theta: &ParamVector, k: usize| -> Result<Option<ParamVector>> {
        if let Some(f) = finite {
            return meta_grad_exact(problem, f, theta, &cfg.inner).map(Some);
        }
        match cfg.mc_diagnostics {
            Some(mc) if k.is_multiple_of(mc.every) => {
                monte_carlo_meta_grad(problem, dist, theta, &cfg.inner, &streams, k, mc.samples).map(Some)
            }
            _ => Ok(None),
        }
    };

    let mut theta = cfg.theta0.draw(&streams)?;
    let mut traj = Trajectory {
        seed: cfg.seed,
        estimator: cfg.estimator,
        schedule: cfg.schedule,
        meta_grad_source,
        records: Vec::with_capacity(cfg.tau + 1),
        failure: None,
    };
    sample_and_check(problem, dist, &theta, &streams)?;
    traj.records.push(IterateRecord {
        k: 0,
        theta: theta.clone(),
        gamma: None,
        batch_grad: None,
        meta_grad: meta_grad(&theta, 0)?,
        corrections: None,
        tallies: EstimateMeta::default(),
    });

    let is_ufo = matches!(cfg.estimator, EstimatorKind::Ufo { .. });
    for k in 1..=cfg.tau {
        let step = (|| -> Result<IterateRecord> {
            let mut sum = ParamVector::zeros(theta.len())?;
            let mut tallies = EstimateMeta::default();
            let mut corrections = 0;
            for w in 0..cfg.batch_size {
                let mut rng = streams.substream(k as u64, w as u64);
                let task = dist.sample(&mut rng)?;
                let est = estimate(cfg.estimator, problem, &task, &theta, &cfg.inner, &mut rng)?;
                sum = sum.add(&est.gradient)?;
                tallies.inner_grad_evals += est.meta.inner_grad_evals;
                tallies.outer_grad_evals += est.meta.outer_grad_evals;
                tallies.hvp_evals += est.meta.hvp_evals;
                tallies.peak_cached_states = tallies.peak_cached_states.max(est.meta.peak_cached_states);
                if est.meta.correction_taken == Some(true) {
                    corrections += 1;
                }
            }
            let mut g = sum.scale(1.0 / cfg.batch_size as f64)?;
            if let Some(c) = cfg.clip_bound {
                g = g.clip_entries(c)?;
            }
            let gamma = cfg.schedule.gamma(k);
            let next = theta.axpy(-gamma, &g)?;
            Ok(IterateRecord {
                k,
                meta_grad: meta_grad(&next, k)?,
                theta: next,
                gamma: Some(gamma),
                batch_grad: Some(g),
                corrections: is_ufo.then_some(corrections),
                tallies,
            })
        })();
        match step {
            Ok(rec) => {
                theta = rec.theta.clone();
                traj.records.push(rec);
            }
            Err(error @ (Error::NonFiniteState { .. } | Error::NonFinite { .. })) => {
                traj.failure = Some(RunFailure { k, error });
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(traj)
}

/// Checks `θ_0` against one task before the run starts, so that dimension
/// errors surface as configuration errors.
fn sample_and_check<P, D>(problem: &P, dist: &D, theta: &ParamVector, streams: &SeedStreams) -> Result<()>
where
    P: BilevelProblem,
    D: TaskDistribution<Task = P::Task>,
{
    let task = match dist.as_finite() {
        Some(f) => return check_theta(problem, &f.entries()[0].0, theta),
        None => dist.sample(&mut streams.auxiliary(u32::MAX))?,
    };
    check_theta(problem, &task, theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{AnalyticProblem, SpecSampler, TaskSpec};
    use crate::problems::{QuadraticSampler, QuadraticTask};
    use crate::task::FiniteDistribution;
    use alloc::vec;

    fn quad_dist(a: f64, b: f64) -> FiniteDistribution<TaskSpec> {
        FiniteDistribution::uniform(vec![QuadraticTask::new(vec![a], vec![b]).unwrap().into()]).unwrap()
    }

    fn base(estimator: EstimatorKind) -> RunConfig {
        RunConfig {
            tau: 1,
            batch_size: 1,
            inner: InnerLoopConfig::new(0.1, 10).unwrap(),
            estimator,
            schedule: StepSchedule::Constant(0.5),
            clip_bound: None,
            seed: 7,
            theta0: InitialPoint::Fixed(ParamVector::scalar(1.0).unwrap()),
            mc_diagnostics: None,
        }
    }

    #[test]
    fn schedules() {
        assert_eq!(StepSchedule::Harmonic(10.0).gamma(4), 2.5);
        assert_eq!(StepSchedule::InverseSqrt.gamma(16), 0.25);
        assert_eq!(StepSchedule::Constant(0.1).gamma(1000), 0.1);
        let r = |s| {
            let rep = validate_schedule(&s);
            (rep.satisfies_step_conditions, rep.square_summable)
        };
        assert_eq!(r(StepSchedule::Harmonic(10.0)), (true, true));
        assert_eq!(r(StepSchedule::InverseSqrt), (true, false));
        assert_eq!(r(StepSchedule::Constant(0.1)), (false, false));
        assert!(StepSchedule::Harmonic(-1.0).validate().is_err());
    }

    #[test]
    fn single_step_by_hand() {
        let dist = quad_dist(0.5, 0.0);
        let traj = run_minibatch_gd(&AnalyticProblem, &dist, &base(EstimatorKind::ExactStored)).unwrap();
        assert_eq!(traj.records.len(), 2);
        let g = 0.5 * libm::pow(0.95, 20.0);
        assert!((traj.final_theta()[0] - (1.0 - 0.5 * g)).abs() < 1e-14);
        assert_eq!(traj.meta_grad_source, Some(MetaGradSource::Exact));
        let m0 = traj.records[0].meta_grad.as_ref().unwrap()[0];
        assert!((m0 - g).abs() < 1e-14);
    }

    #[test]
    fn replay_is_bitwise() {
        let dist = SpecSampler(QuadraticSampler::new(3, (0.2, 2.0), (-1.0, 1.0)).unwrap());
        let mut cfg = base(EstimatorKind::Ufo { q: 0.3 });
        cfg.tau = 30;
        cfg.batch_size = 3;
        cfg.theta0 = InitialPoint::Uniform {
            low: -10.0,
            high: 30.0,
            dim: 3,
        };
        cfg.mc_diagnostics = Some(McDiagnostics { every: 10, samples: 4 });
        let a = run_minibatch_gd(&AnalyticProblem, &dist, &cfg).unwrap();
        let b = run_minibatch_gd(&AnalyticProblem, &dist, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.meta_grad_norms().len(), 4);
        cfg.seed += 1;
        assert_ne!(run_minibatch_gd(&AnalyticProblem, &dist, &cfg).unwrap().records[0].theta, a.records[0].theta);
    }

    #[test]
    fn identical_batch_matches_single_task() {
        let dist = quad_dist(1.3, 0.4);
        let mut cfg = base(EstimatorKind::ExactRerun);
        cfg.tau = 5;
        let single = run_minibatch_gd(&AnalyticProblem, &dist, &cfg).unwrap();
        for v in [2, 4] {
            cfg.batch_size = v;
            let batch = run_minibatch_gd(&AnalyticProblem, &dist, &cfg).unwrap();
            assert_eq!(batch.final_theta(), single.final_theta());
        }
    }

    #[test]
    fn clipping_bounds_batch_gradient() {
        let dist = quad_dist(1.0, 0.0);
        let mut cfg = base(EstimatorKind::Fo);
        cfg.theta0 = InitialPoint::Fixed(ParamVector::scalar(100.0).unwrap());
        cfg.clip_bound = Some(0.25);
        let traj = run_minibatch_gd(&AnalyticProblem, &dist, &cfg).unwrap();
        assert_eq!(traj.records[1].batch_grad.as_ref().unwrap()[0], 0.25);
        cfg.clip_bound = Some(0.0);
        assert!(run_minibatch_gd(&AnalyticProblem, &dist, &cfg).is_err());
    }

    #[test]
    fn divergence_is_marked() {
        let dist = quad_dist(1e200, 0.0);
        let mut cfg = base(EstimatorKind::Fo);
        cfg.inner = InnerLoopConfig::new(1.0, 3).unwrap();
        cfg.tau = 3;
        let traj = run_minibatch_gd(&AnalyticProblem, &dist, &cfg);
        // θ_0 diagnostics already overflow
        assert!(matches!(traj, Err(Error::NonFiniteState { .. })));
        let mut cfg = base(EstimatorKind::Fo);
        cfg.schedule = StepSchedule::Constant(1e300);
        cfg.theta0 = InitialPoint::Fixed(ParamVector::scalar(1e10).unwrap());
        cfg.tau = 3;
        let traj = run_minibatch_gd(&AnalyticProblem, &quad_dist(1.0, 0.0), &cfg).unwrap();
        assert!(!traj.is_complete());
        assert_eq!(traj.failure.as_ref().unwrap().k, 1);
        assert_eq!(traj.records.len(), 1);
    }

    #[test]
    fn config_errors() {
        let dist = quad_dist(1.0, 0.0);
        let mut cfg = base(EstimatorKind::Fo);
        cfg.tau = 0;
        assert!(run_minibatch_gd(&AnalyticProblem, &dist, &cfg).is_err());
        let mut cfg = base(EstimatorKind::Fo);
        cfg.theta0 = InitialPoint::Fixed(ParamVector::zeros(2).unwrap());
        assert!(matches!(
            run_minibatch_gd(&AnalyticProblem, &dist, &cfg),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}

//! Estimators of the BLO gradient `∇_θ L_out(U(θ, T), T)`.
//!
//! * [`fo_grad`]: first-order approximation `∇L_out(φ_r)`, Hessian terms
//!   dropped.
//! * [`exact_grad_stored`]: back-propagation through the stored rollout,
//!   `b ← b − α ∇²L_in(φ_{j−1}) b` for `j = r, …, 1`.
//! * [`exact_grad_rerun`]: the same recursion, recomputing each `φ_{j−1}`
//!   from `θ` inside the backward pass (quadratic time, constant memory).
//! * [`exact_grad_checkpointed`]: the same recursion with evenly spaced
//!   checkpoints and per-segment replay.
//! * [`ufo_grad`]: first-order estimate plus a Bernoulli(`q`)-gated,
//!   `1/q`-weighted exact correction; unbiased for the exact gradient.
//!
//! All exact variants perform identical floating-point operations on
//! identical states, so their gradients agree bitwise.

use alloc::format;
use alloc::vec::Vec;

use rand::RngCore;

use crate::error::{Error, Result};
use crate::math::sqrt;
use crate::problem::BilevelProblem;
use crate::rng::bernoulli;
use crate::rollout::{at_step, check_theta, gd_update, InnerLoopConfig};
use crate::vector::ParamVector;

/// Resource tallies of one estimator call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EstimateMeta {
    pub inner_grad_evals: usize,
    pub outer_grad_evals: usize,
    pub hvp_evals: usize,
    /// Peak number of parameter states retained for later reuse (stored
    /// rollout, checkpoints, replay buffer, or the `θ` anchor used for
    /// recomputation). The single working iterate is not counted.
    pub peak_cached_states: usize,
    /// Bernoulli outcome; `Some` exactly for the UFO estimator.
    pub correction_taken: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub gradient: ParamVector,
    pub meta: EstimateMeta,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EstimatorKind {
    Fo,
    ExactStored,
    ExactRerun,
    /// `checkpoints = None` uses `⌈√r⌉`.
    ExactCheckpointed { checkpoints: Option<usize> },
    Ufo { q: f64 },
}

impl EstimatorKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            EstimatorKind::Ufo { q } => check_q(q),
            EstimatorKind::ExactCheckpointed { checkpoints: Some(0) } => {
                Err(Error::InvalidCheckpointCount { count: 0, r: 0 })
            }
            _ => Ok(()),
        }
    }

    /// True for the estimators whose output is the exact gradient.
    pub fn is_exact(&self) -> bool {
        matches!(
            self,
            EstimatorKind::ExactStored | EstimatorKind::ExactRerun | EstimatorKind::ExactCheckpointed { .. }
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Fo => "fo",
            EstimatorKind::ExactStored => "exact-stored",
            EstimatorKind::ExactRerun => "exact-rerun",
            EstimatorKind::ExactCheckpointed { .. } => "exact-checkpointed",
            EstimatorKind::Ufo { .. } => "ufo",
        }
    }
}

fn check_q(q: f64) -> Result<()> {
    if q > 0.0 && q <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("UFO probability q must lie in (0, 1], got {q}")))
    }
}

/// `⌈√r⌉`.
pub fn default_checkpoints(r: usize) -> usize {
    let mut n = sqrt(r as f64) as usize;
    while n * n < r {
        n += 1;
    }
    while n > 1 && (n - 1) * (n - 1) >= r {
        n -= 1;
    }
    n.max(1)
}

/// Checkpoint indices `⌊j·r/n⌋`, `j = 0, …, n−1`.
pub fn checkpoint_schedule(r: usize, n: usize) -> Vec<usize> {
    (0..n).map(|j| j * r / n).collect()
}

/// Routes every problem call through tallies.
struct Meter<'a, P: BilevelProblem> {
    problem: &'a P,
    task: &'a P::Task,
    alpha: f64,
    meta: EstimateMeta,
    cached: usize,
}

impl<'a, P: BilevelProblem> Meter<'a, P> {
    fn new(problem: &'a P, task: &'a P::Task, cfg: &InnerLoopConfig) -> Self {
        Self {
            problem,
            task,
            alpha: cfg.alpha(),
            meta: EstimateMeta::default(),
            cached: 0,
        }
    }

    /// Produces `φ_step` from `φ_{step−1}`.
    fn step(&mut self, phi: &ParamVector, step: usize) -> Result<ParamVector> {
        self.meta.inner_grad_evals += 1;
        let g = self.problem.inner_grad(phi, self.task).map_err(at_step(step))?;
        gd_update(phi, self.alpha, &g, step)
    }

    fn outer_grad(&mut self, phi: &ParamVector, step: usize) -> Result<ParamVector> {
        self.meta.outer_grad_evals += 1;
        self.problem.outer_grad(phi, self.task).map_err(at_step(step))
    }

    /// `b − α ∇²L_in(φ_{step−1}) b`.
    fn back(&mut self, b: &ParamVector, phi_prev: &ParamVector, step: usize) -> Result<ParamVector> {
        self.meta.hvp_evals += 1;
        let h = self.problem.inner_hvp(phi_prev, self.task, b).map_err(at_step(step))?;
        b.axpy(-self.alpha, &h).map_err(at_step(step))
    }

    fn hold(&mut self, n: usize) {
        self.cached += n;
        self.meta.peak_cached_states = self.meta.peak_cached_states.max(self.cached);
    }

    fn release(&mut self, n: usize) {
        self.cached -= n;
    }

    fn finish(self, gradient: ParamVector) -> GradientEstimate {
        GradientEstimate {
            gradient,
            meta: self.meta,
        }
    }
}

pub fn fo_grad<P: BilevelProblem>(
    problem: &P,
    task: &P::Task,
    theta: &ParamVector,
    cfg: &InnerLoopConfig,
) -> Result<GradientEstimate> {
    check_theta(problem, task, theta)?;
    let mut m = Meter::new(problem, task, cfg);
    let mut phi = theta.clone();
    for j in 1..=cfg.r() {
        phi = m.step(&phi, j)?;
    }
    let g = m.outer_grad(&phi, cfg.r())?;
    Ok(m.finish(g))
}

pub fn exact_grad_stored<P: BilevelProblem>(
    problem: &P,
    task: &P::Task,
    theta: &ParamVector,
    cfg: &InnerLoopConfig,
) -> Result<GradientEstimate> {
    check_theta(problem, task, theta)?;
    let r = cfg.r();
    let mut m = Meter::new(problem, task, cfg);
    let mut stored = Vec::with_capacity(r);
    let mut phi = theta.clone();
    for j in 1..=r {
        let next = m.step(&phi, j)?;
        stored.push(phi);
        m.hold(1);
        phi = next;
    }
    let mut b = m.outer_grad(&phi, r)?;
    for j in (1..=r).rev() {
        b = m.back(&b, &stored[j - 1], j)?;
    }
    Ok(m.finish(b))
}

pub fn exact_grad_rerun<P: BilevelProblem>(
    problem: &P,
    task: &P::Task,
    theta: &ParamVector,
    cfg: &InnerLoopConfig,
) -> Result<GradientEstimate> {
    check_theta(problem, task, theta)?;
    let r = cfg.r();
    let mut m = Meter::new(problem, task, cfg);
    // θ is kept as the recomputation anchor
    m.hold(1);
    let mut phi = theta.clone();
    for j in 1..=r {
        phi = m.step(&phi, j)?;
    }
    let mut b = m.outer_grad(&phi, r)?;
    for j1 in (1..=r).rev() {
        let mut phi = theta.clone();
        for j2 in 1..j1 {
            phi = m.step(&phi, j2)?;
        }
        b = m.back(&b, &phi, j1)?;
    }
    Ok(m.finish(b))
}

/// Exact gradient with `num_checkpoints` evenly spaced stored states; each
/// segment is replayed from its checkpoint during the backward pass.
pub fn exact_grad_checkpointed<P: BilevelProblem>(
    problem: &P,
    task: &P::Task,
    theta: &ParamVector,
    cfg: &InnerLoopConfig,
    num_checkpoints: usize,
) -> Result<GradientEstimate> {
    let r = cfg.r();
    if num_checkpoints == 0 || num_checkpoints > r {
        return Err(Error::InvalidCheckpointCount {
            count: num_checkpoints,
            r,
        });
    }
    check_theta(problem, task, theta)?;
    let schedule = checkpoint_schedule(r, num_checkpoints);
    let mut m = Meter::new(problem, task, cfg);

    let mut checkpoints: Vec<ParamVector> = Vec::with_capacity(num_checkpoints);
    checkpoints.push(theta.clone());
    m.hold(1);
    let mut next_mark = 1;
    let mut phi = theta.clone();
    for j in 1..=r {
        phi = m.step(&phi, j)?;
        if next_mark < num_checkpoints && schedule[next_mark] == j {
            checkpoints.push(phi.clone());
            m.hold(1);
            next_mark += 1;
        }
    }
    let mut b = m.outer_grad(&phi, r)?;

    for seg in (0..num_checkpoints).rev() {
        let start = schedule[seg];
        let end = schedule.get(seg + 1).copied().unwrap_or(r);
        // the checkpoint moves into the segment buffer
        let mut buffer = Vec::with_capacity(end - start);
        buffer.push(checkpoints.pop().expect("one checkpoint per segment"));
        for idx in start + 1..end {
            let next = m.step(buffer.last().expect("non-empty"), idx)?;
            buffer.push(next);
            m.hold(1);
        }
        for idx in (start..end).rev() {
            b = m.back(&b, &buffer[idx - start], idx + 1)?;
        }
        m.release(buffer.len());
    }
    Ok(m.finish(b))
}

/// Combines a first-order estimate `b` with an exact gradient `c` for the
/// Bernoulli outcome `ξ = 1`: `b + (1/q)(c − b)`, evaluated as
/// `(1 − 1/q)·b + (1/q)·c` so that `q = 1` returns `c` exactly.
pub fn ufo_combine(fo: &ParamVector, exact: &ParamVector, q: f64) -> Result<ParamVector> {
    let w = 1.0 / q;
    fo.scale(1.0 - w)?.axpy(w, exact)
}

/// UFO estimate for a given Bernoulli outcome `xi`. This is the
/// deterministic part of [`ufo_grad`] and is what enumeration over `ξ`
/// uses.
pub fn ufo_grad_given<P: BilevelProblem>(
    problem: &P,
    task: &P::Task,
    theta: &ParamVector,
    cfg: &InnerLoopConfig,
    q: f64,
    xi: bool,
) -> Result<GradientEstimate> {
    check_q(q)?;
    let fo = fo_grad(problem, task, theta, cfg)?;
    finish_ufo(problem, task, theta, cfg, q, fo, xi)
}

fn finish_ufo<P: BilevelProblem>(
    problem: &P,
    task: &P::Task,
    theta: &ParamVector,
    cfg: &InnerLoopConfig,
    q: f64,
    fo: GradientEstimate,
    xi: bool,
) -> Result<GradientEstimate> {
    let mut meta = fo.meta;
    meta.correction_taken = Some(xi);
    if !xi {
        return Ok(GradientEstimate {
            gradient: fo.gradient,
            meta,
        });
    }
    let exact = exact_grad_rerun(problem, task, theta, cfg)?;
    let gradient = ufo_combine(&fo.gradient, &exact.gradient, q).map_err(at_step(cfg.r()))?;
    meta.inner_grad_evals += exact.meta.inner_grad_evals;
    meta.outer_grad_evals += exact.meta.outer_grad_evals;
    meta.hvp_evals += exact.meta.hvp_evals;
    meta.peak_cached_states = meta.peak_cached_states.max(exact.meta.peak_cached_states);
    Ok(GradientEstimate { gradient, meta })
}

/// Unbiased first-order estimate. The first-order pass runs first; then
/// exactly one uniform value is drawn from `rng` to decide the correction.
pub fn ufo_grad<P: BilevelProblem, R: RngCore + ?Sized>(
    problem: &P,
    task: &P::Task,
    theta: &ParamVector,
    cfg: &InnerLoopConfig,
    q: f64,
    rng: &mut R,
) -> Result<GradientEstimate> {
    check_q(q)?;
    let fo = fo_grad(problem, task, theta, cfg)?;
    let xi = bernoulli(rng, q);
    finish_ufo(problem, task, theta, cfg, q, fo, xi)
}

/// Dispatches on `kind`. Only UFO consumes randomness.
pub fn estimate<P: BilevelProblem, R: RngCore + ?Sized>(
    kind: EstimatorKind,
    problem: &P,
    task: &P::Task,
    theta: &ParamVector,
    cfg: &InnerLoopConfig,
    rng: &mut R,
) -> Result<GradientEstimate> {
    match kind {
        EstimatorKind::Fo => fo_grad(problem, task, theta, cfg),
        EstimatorKind::ExactStored => exact_grad_stored(problem, task, theta, cfg),
        EstimatorKind::ExactRerun => exact_grad_rerun(problem, task, theta, cfg),
        EstimatorKind::ExactCheckpointed { checkpoints } => {
            let n = checkpoints.unwrap_or_else(|| default_checkpoints(cfg.r()));
            exact_grad_checkpointed(problem, task, theta, cfg, n)
        }
        EstimatorKind::Ufo { q } => ufo_grad(problem, task, theta, cfg, q, rng),
    }
}

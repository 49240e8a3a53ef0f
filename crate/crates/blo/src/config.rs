//! Flat `key = value` experiment configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use blo_core::estimators::EstimatorKind;
use blo_core::outer::StepSchedule;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}:{line}: expected `key = value`")]
    Syntax { path: String, line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    Value {
        key: String,
        value: String,
        reason: String,
    },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Synthetic,
    Quadratic,
    FewshotToy,
    Sweep,
    Check,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Synthetic => "synthetic",
            Experiment::Quadratic => "quadratic",
            Experiment::FewshotToy => "fewshot-toy",
            Experiment::Sweep => "sweep",
            Experiment::Check => "check",
        }
    }
}

/// Initial outer parameters, replicated across coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Theta0 {
    Uniform { low: f64, high: f64 },
    Fixed(f64),
}

/// UFO probability of a sweep cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepQ {
    Value(f64),
    /// `q = 1/r`.
    InverseR,
}

impl SweepQ {
    pub fn resolve(&self, r: usize) -> f64 {
        match *self {
            SweepQ::Value(q) => q,
            SweepQ::InverseR => 1.0 / r as f64,
        }
    }
}

impl fmt::Display for SweepQ {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepQ::Value(q) => write!(f, "{q}"),
            SweepQ::InverseR => f.write_str("1/r"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub tau: usize,
    pub batch_size: usize,
    pub alpha: f64,
    pub r: usize,
    /// Estimator for single-estimator experiments; `synthetic` always runs
    /// FO and UFO.
    pub estimator: EstimatorKind,
    pub q: f64,
    pub schedule: StepSchedule,
    pub clip_bound: Option<f64>,
    pub seeds: Vec<u64>,
    pub theta0: Theta0,
    pub out: Option<PathBuf>,

    pub a1: f64,
    pub a2: f64,
    pub d: f64,
    pub big_a: Option<f64>,
    pub ufo_threshold: f64,

    pub dim: usize,
    pub a_range: (f64, f64),
    pub b_range: (f64, f64),

    pub n_inputs: usize,
    pub n_classes: usize,
    pub shots: usize,
    pub test_shots: usize,
    pub center_scale: f64,
    pub noise: f64,

    pub mc_every: usize,
    pub mc_samples: usize,

    pub sweep_estimators: Vec<EstimatorKind>,
    pub sweep_r: Vec<usize>,
    pub sweep_q: Vec<SweepQ>,
    pub sweep_calls: usize,
}

impl ExperimentConfig {
    /// Defaults per experiment. `synthetic` mirrors the two-task
    /// counterexample setup: `p = 1`, `r = 10`, `v = 1`, `α = 0.1`,
    /// `q = 0.1`, `γ_k = 10/k`, `θ_0 ~ U[−10, 30]`, ten seeds.
    pub fn defaults(experiment: Experiment) -> Self {
        let mut c = Self {
            experiment,
            tau: 10_000,
            batch_size: 1,
            alpha: 0.1,
            r: 10,
            estimator: EstimatorKind::Ufo { q: 0.1 },
            q: 0.1,
            schedule: StepSchedule::Harmonic(10.0),
            clip_bound: None,
            seeds: (0..10).collect(),
            theta0: Theta0::Uniform { low: -10.0, high: 30.0 },
            out: None,
            a1: 0.5,
            a2: 1.5,
            d: 0.06,
            big_a: None,
            ufo_threshold: 0.05,
            dim: 5,
            a_range: (0.5, 2.0),
            b_range: (-1.0, 1.0),
            n_inputs: 4,
            n_classes: 3,
            shots: 5,
            test_shots: 10,
            center_scale: 2.0,
            noise: 1.0,
            mc_every: 50,
            mc_samples: 64,
            sweep_estimators: vec![
                EstimatorKind::Fo,
                EstimatorKind::ExactStored,
                EstimatorKind::ExactRerun,
                EstimatorKind::Ufo { q: 0.1 },
            ],
            sweep_r: vec![5, 10, 20],
            sweep_q: vec![SweepQ::InverseR],
            sweep_calls: 1000,
        };
        match experiment {
            Experiment::Synthetic | Experiment::Check | Experiment::Sweep => {}
            Experiment::Quadratic => {
                c.tau = 1000;
                c.r = 5;
                c.q = 0.2;
                c.estimator = EstimatorKind::Ufo { q: 0.2 };
                c.schedule = StepSchedule::InverseSqrt;
                c.seeds = vec![0];
                c.theta0 = Theta0::Uniform { low: -5.0, high: 5.0 };
            }
            Experiment::FewshotToy => {
                c.tau = 500;
                c.r = 5;
                c.alpha = 0.5;
                c.q = 0.2;
                c.estimator = EstimatorKind::Ufo { q: 0.2 };
                c.schedule = StepSchedule::Constant(0.2);
                c.batch_size = 4;
                c.clip_bound = Some(10.0);
                c.seeds = vec![0];
                c.theta0 = Theta0::Fixed(0.0);
                c.mc_samples = 32;
            }
        }
        c
    }

    /// Defaults overridden by `path`.
    pub fn from_file(experiment: Experiment, path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut c = Self::defaults(experiment);
        c.apply_text(&text, &path.display().to_string())?;
        Ok(c)
    }

    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                path: origin.to_string(),
                line: i + 1,
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Sets one key. `q` also updates a UFO estimator.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |reason: &str| ConfigError::Value {
            key: key.to_string(),
            value: value.to_string(),
            reason: reason.to_string(),
        };
        match key {
            "tau" => self.tau = num(key, value)?,
            "v" | "batch_size" => self.batch_size = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "r" => self.r = num(key, value)?,
            "q" => {
                self.q = num(key, value)?;
                if let EstimatorKind::Ufo { .. } = self.estimator {
                    self.estimator = EstimatorKind::Ufo { q: self.q };
                }
            }
            "estimator" => self.estimator = parse_estimator(value, self.q).map_err(|e| bad(&e))?,
            "schedule" => self.schedule = parse_schedule(value).map_err(|e| bad(&e))?,
            "clip_bound" => {
                self.clip_bound = match value {
                    "none" | "off" => None,
                    v => Some(num(key, v)?),
                }
            }
            "seeds" => self.seeds = list(key, value)?,
            "theta0" => self.theta0 = parse_theta0(value).map_err(|e| bad(&e))?,
            "out" => self.out = Some(PathBuf::from(value)),
            "a1" => self.a1 = num(key, value)?,
            "a2" => self.a2 = num(key, value)?,
            "d" => self.d = num(key, value)?,
            "big_a" => {
                self.big_a = match value {
                    "auto" => None,
                    v => Some(num(key, v)?),
                }
            }
            "ufo_threshold" => self.ufo_threshold = num(key, value)?,
            "dim" => self.dim = num(key, value)?,
            "a_range" => self.a_range = pair(key, value)?,
            "b_range" => self.b_range = pair(key, value)?,
            "n_inputs" => self.n_inputs = num(key, value)?,
            "n_classes" => self.n_classes = num(key, value)?,
            "shots" => self.shots = num(key, value)?,
            "test_shots" => self.test_shots = num(key, value)?,
            "center_scale" => self.center_scale = num(key, value)?,
            "noise" => self.noise = num(key, value)?,
            "mc_every" => self.mc_every = num(key, value)?,
            "mc_samples" => self.mc_samples = num(key, value)?,
            "sweep_estimators" => {
                self.sweep_estimators = value
                    .split(',')
                    .map(|s| parse_estimator(s.trim(), self.q))
                    .collect::<Result<_, _>>()
                    .map_err(|e| bad(&e))?
            }
            "sweep_r" => self.sweep_r = list(key, value)?,
            "sweep_q" => {
                self.sweep_q = value
                    .split(',')
                    .map(|s| match s.trim() {
                        "1/r" => Ok(SweepQ::InverseR),
                        v => v.parse().map(SweepQ::Value).map_err(|_| bad("expected a number or 1/r")),
                    })
                    .collect::<Result<_, _>>()?
            }
            "sweep_calls" => self.sweep_calls = num(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::Value {
        key: key.to_string(),
        value: value.to_string(),
        reason: "not a number".into(),
    })
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError> {
    value.split(',').map(|s| num(key, s.trim())).collect()
}

fn pair(key: &str, value: &str) -> Result<(f64, f64), ConfigError> {
    match list::<f64>(key, value)?.as_slice() {
        [lo, hi] => Ok((*lo, *hi)),
        _ => Err(ConfigError::Value {
            key: key.to_string(),
            value: value.to_string(),
            reason: "expected `low,high`".into(),
        }),
    }
}

/// `fo`, `exact-stored`, `exact-rerun`, `exact-checkpointed[:n]`,
/// `ufo[:q]` (default `q`).
pub fn parse_estimator(s: &str, q: f64) -> Result<EstimatorKind, String> {
    let (name, arg) = match s.split_once(':') {
        Some((n, a)) => (n, Some(a)),
        None => (s, None),
    };
    let kind = match (name, arg) {
        ("fo", None) => EstimatorKind::Fo,
        ("exact-stored" | "exact", None) => EstimatorKind::ExactStored,
        ("exact-rerun", None) => EstimatorKind::ExactRerun,
        ("exact-checkpointed", a) => EstimatorKind::ExactCheckpointed {
            checkpoints: a.map(|a| a.parse().map_err(|_| format!("bad checkpoint count `{a}`"))).transpose()?,
        },
        ("ufo", a) => EstimatorKind::Ufo {
            q: match a {
                Some(a) => a.parse().map_err(|_| format!("bad probability `{a}`"))?,
                None => q,
            },
        },
        _ => return Err(format!("unknown estimator `{s}`")),
    };
    kind.validate().map_err(|e| e.to_string())?;
    Ok(kind)
}

/// `harmonic:c`, `inverse-sqrt`, `constant:γ`.
pub fn parse_schedule(s: &str) -> Result<StepSchedule, String> {
    let num = |a: &str| a.parse::<f64>().map_err(|_| format!("bad constant `{a}`"));
    let sched = match s.split_once(':') {
        Some(("harmonic", c)) => StepSchedule::Harmonic(num(c)?),
        Some(("constant", g)) => StepSchedule::Constant(num(g)?),
        None if s == "inverse-sqrt" => StepSchedule::InverseSqrt,
        _ => return Err(format!("unknown schedule `{s}`")),
    };
    sched.validate().map_err(|e| e.to_string())?;
    Ok(sched)
}

/// `uniform:low:high` or `fixed:x`.
pub fn parse_theta0(s: &str) -> Result<Theta0, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |a: &str| a.parse::<f64>().map_err(|_| format!("bad number `{a}`"));
    match parts.as_slice() {
        ["uniform", lo, hi] => Ok(Theta0::Uniform {
            low: num(lo)?,
            high: num(hi)?,
        }),
        ["fixed", x] => Ok(Theta0::Fixed(num(x)?)),
        _ => Err(format!("expected uniform:low:high or fixed:x, got `{s}`")),
    }
}

pub fn estimator_label(kind: &EstimatorKind) -> String {
    match kind {
        EstimatorKind::Ufo { q } => format!("ufo:{q}"),
        EstimatorKind::ExactCheckpointed { checkpoints: Some(n) } => format!("exact-checkpointed:{n}"),
        k => k.name().to_string(),
    }
}

pub fn schedule_label(s: &StepSchedule) -> String {
    match s {
        StepSchedule::Constant(g) => format!("constant:{g}"),
        StepSchedule::Harmonic(c) => format!("harmonic:{c}"),
        StepSchedule::InverseSqrt => "inverse-sqrt".into(),
    }
}

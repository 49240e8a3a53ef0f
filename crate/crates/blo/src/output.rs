//! CSV serialization. Floats use 17 significant digits so every value
//! round-trips; absent values are empty fields.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::experiments::{RunRow, SweepRow, SyntheticOutput};

pub fn float(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt_float(x: Option<f64>) -> String {
    x.map(float).unwrap_or_default()
}

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn bit(b: Option<bool>) -> String {
    b.map(|b| if b { "1" } else { "0" }.to_string()).unwrap_or_default()
}

pub const SYNTHETIC_HEADER: [&str; 9] = [
    "seed",
    "estimator",
    "k",
    "gamma_k",
    "theta",
    "grad_M_exact",
    "grad_M_sq",
    "min_grad_M_sq_so_far",
    "correction_taken",
];

pub const SUMMARY_HEADER: [&str; 14] = [
    "seed",
    "estimator",
    "tau",
    "final_theta",
    "final_min_grad_M_sq_so_far",
    "min_abs_grad_M",
    "tail_mean_grad_M_sq",
    "seeds_passing",
    "x_star",
    "theta_star",
    "sqrt_2d",
    "b2",
    "big_a",
    "ufo_threshold",
];

pub fn write_synthetic<W: Write>(out: &SyntheticOutput, w: W) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(SYNTHETIC_HEADER)?;
    for row in &out.rows {
        wr.write_record([
            row.seed.to_string(),
            row.estimator.clone(),
            row.k.to_string(),
            opt_float(row.gamma),
            float(row.theta),
            float(row.grad_m),
            float(row.grad_m_sq),
            float(row.min_grad_m_sq),
            bit(row.correction_taken),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// One row per run plus one `seed = all` row per estimator.
pub fn write_synthetic_summary<W: Write>(out: &SyntheticOutput, w: W) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(SUMMARY_HEADER)?;
    for s in &out.summaries {
        wr.write_record([
            s.seed.map(|v| v.to_string()).unwrap_or_else(|| "all".into()),
            s.estimator.clone(),
            s.tau.to_string(),
            opt_float(s.final_theta),
            float(s.final_min_grad_m_sq),
            float(s.min_abs_grad_m),
            float(s.tail_mean_grad_m_sq),
            opt(s.seeds_passing),
            float(out.constants.x_star),
            float(out.constants.theta_star),
            float(out.sqrt_2d()),
            float(out.spec.b2),
            float(out.spec.big_a),
            float(out.ufo_threshold),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub const RUN_HEADER: [&str; 12] = [
    "seed",
    "estimator",
    "k",
    "gamma_k",
    "theta_norm",
    "batch_grad_norm",
    "grad_M_norm_mc",
    "inner_grad_evals",
    "outer_grad_evals",
    "hvp_evals",
    "peak_cached_states",
    "corrections",
];

pub fn write_runs<W: Write>(rows: &[RunRow], w: W) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(RUN_HEADER)?;
    for r in rows {
        wr.write_record([
            r.seed.to_string(),
            r.estimator.clone(),
            r.k.to_string(),
            opt_float(r.gamma),
            float(r.theta_norm),
            opt_float(r.batch_grad_norm),
            opt_float(r.grad_m_norm),
            r.inner_grad_evals.to_string(),
            r.outer_grad_evals.to_string(),
            r.hvp_evals.to_string(),
            r.peak_cached_states.to_string(),
            opt(r.corrections),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub const SWEEP_HEADER: [&str; 11] = [
    "estimator",
    "r",
    "q",
    "calls",
    "mean_inner_grad_evals",
    "mean_outer_grad_evals",
    "mean_hvp_evals",
    "max_peak_cached_states",
    "correction_frequency",
    "mean_grad_error",
    "max_grad_error",
];

pub fn write_sweep<W: Write>(rows: &[SweepRow], w: W) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(SWEEP_HEADER)?;
    for r in rows {
        wr.write_record([
            r.estimator.clone(),
            r.r.to_string(),
            opt_float(r.q),
            r.calls.to_string(),
            float(r.mean_inner_grad_evals),
            float(r.mean_outer_grad_evals),
            float(r.mean_hvp_evals),
            r.max_peak_cached_states.to_string(),
            opt_float(r.correction_frequency),
            float(r.mean_grad_error),
            float(r.max_grad_error),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// `runs.csv` → `runs_summary.csv`.
pub fn summary_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match out.extension() {
        Some(ext) => format!("{stem}_summary.{}", ext.to_string_lossy()),
        None => format!("{stem}_summary"),
    };
    out.with_file_name(name)
}

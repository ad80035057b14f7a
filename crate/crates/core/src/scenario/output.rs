//! CSV and JSON writers. Floats are printed with nine significant digits.

use std::io::Write;

use nalgebra::DVector;
use serde::Serialize;

use super::sweep::SweepRow;
use super::{FlagCounts, RunResult};
use crate::model::ArzModel;
use crate::num::Real;

/// `%.9g`-style formatting (trailing zeros kept).
pub fn fmt_sig9(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.8e}");
    let exp: i32 = sci[sci.find('e').expect("exponent") + 1..].parse().expect("integer exponent");
    if !(-5..9).contains(&exp) {
        sci
    } else {
        format!("{:.*}", (8 - exp) as usize, v)
    }
}

pub const TRAJECTORY_HEADER: [&str; 5] = ["step", "segment_id", "rho", "psi", "speed"];

/// One row per (step, segment); `states[i]` is written as step
/// `first_step + i`.
pub fn write_trajectory_csv<T: Real, W: Write>(
    w: W,
    model: &ArzModel<T>,
    states: &[DVector<T>],
    first_step: usize,
) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TRAJECTORY_HEADER)?;
    let p = model.params();
    for (i, x) in states.iter().enumerate() {
        let step = (first_step + i).to_string();
        for s in 0..x.len() / 2 {
            let (rho, psi) = (x[2 * s], x[2 * s + 1]);
            out.write_record([
                step.clone(),
                (s + 1).to_string(),
                fmt_sig9(rho.as_f64()),
                fmt_sig9(psi.as_f64()),
                fmt_sig9(p.speed(rho, psi).as_f64()),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub const SWEEP_HEADER: [&str; 17] = [
    "scenario",
    "sweep",
    "estimator",
    "added_sensors",
    "period_s",
    "start",
    "noise_std",
    "seeds",
    "failed",
    "rmse_rho",
    "rmse_v",
    "mean_step_time_s",
    "jitter",
    "collapse",
    "branch_tie",
    "qp_not_converged",
    "error",
];

/// Writes the sweep table. With `timing == false` the step-time column is
/// left empty so the file depends only on the configuration and seeds.
/// `dt_s` converts periods from steps to seconds.
pub fn write_sweep_csv<T: Real, W: Write>(
    w: W,
    scenario: &str,
    rows: &[SweepRow<T>],
    dt_s: f64,
    timing: bool,
) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SWEEP_HEADER)?;
    for r in rows {
        let period = match r.period {
            None => String::new(),
            Some(None) => "inf".into(),
            Some(Some(p)) => fmt_sig9(p as f64 * dt_s),
        };
        let start = r
            .start
            .as_ref()
            .map(|s| s.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" "))
            .unwrap_or_default();
        out.write_record([
            scenario.to_string(),
            r.sweep.name().to_string(),
            r.estimator.name().to_string(),
            r.added_sensors.map(|c| c.to_string()).unwrap_or_default(),
            period,
            start,
            fmt_sig9(r.noise_std.as_f64()),
            r.seeds.to_string(),
            r.failed.to_string(),
            fmt_sig9(r.rmse_rho.as_f64()),
            fmt_sig9(r.rmse_v.as_f64()),
            if timing { fmt_sig9(r.mean_step_time_s) } else { String::new() },
            r.flags.jitter.to_string(),
            r.flags.collapse.to_string(),
            r.flags.branch_tie.to_string(),
            r.flags.qp_not_converged.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct TrajectoryStep {
    step: usize,
    rho: Vec<f64>,
    psi: Vec<f64>,
    speed: Vec<f64>,
}

/// JSON dump `{"segments": n, "steps": [{"step", "rho", "psi", "speed"}]}`
/// with per-segment arrays in segment order.
pub fn write_trajectory_json<T: Real, W: Write>(
    w: W,
    model: &ArzModel<T>,
    states: &[DVector<T>],
    first_step: usize,
) -> serde_json::Result<()> {
    let p = model.params();
    let steps: Vec<TrajectoryStep> = states
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let n = x.len() / 2;
            TrajectoryStep {
                step: first_step + i,
                rho: (0..n).map(|s| x[2 * s].as_f64()).collect(),
                psi: (0..n).map(|s| x[2 * s + 1].as_f64()).collect(),
                speed: (0..n).map(|s| p.speed(x[2 * s], x[2 * s + 1]).as_f64()).collect(),
            }
        })
        .collect();
    serde_json::to_writer(
        w,
        &serde_json::json!({ "segments": model.n_segments(), "steps": steps }),
    )
}

/// Per-run summary. `mean_step_time_s` is `None` when timing is
/// suppressed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub estimator: &'static str,
    pub seed: u64,
    pub smooth_window: Option<usize>,
    pub rmse_rho: f64,
    pub rmse_v: f64,
    pub mean_step_time_s: Option<f64>,
    pub flags: FlagCounts,
}

impl RunSummary {
    pub fn of<T: Real>(run: &RunResult<T>, smooth_window: Option<usize>, timing: bool) -> Self {
        Self {
            estimator: run.kind.name(),
            seed: run.seed,
            smooth_window,
            rmse_rho: run.rmse_rho.as_f64(),
            rmse_v: run.rmse_v.as_f64(),
            mean_step_time_s: timing.then(|| run.mean_step_time()),
            flags: run.flags,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_sig9(0.0), "0");
        assert_eq!(fmt_sig9(1.0), "1.00000000");
        assert_eq!(fmt_sig9(102.0), "102.000000");
        assert_eq!(fmt_sig9(-0.5), "-0.500000000");
        assert_eq!(fmt_sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_sig9(123_456_789.0), "123456789");
        assert_eq!(fmt_sig9(1.0e9), "1.00000000e9");
        assert_eq!(fmt_sig9(1.5e-7), "1.50000000e-7");
        assert_eq!(fmt_sig9(f64::NAN), "NaN");
        assert_eq!(fmt_sig9(fmt_sig9(2.0 / 7.0).parse().unwrap()), fmt_sig9(2.0 / 7.0));
    }
}

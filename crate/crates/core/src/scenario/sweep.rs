//! Parameter sweeps over sensor count, rotation period, starting layout
//! and noise level. Each configuration is run for every seed and the
//! metrics are averaged; runs are independent and may execute in parallel.

use rayon::prelude::*;

use super::{generate_truth, run_with_truth, FlagCounts, Scenario, ScenarioError};
use crate::estimators::EstimatorKind;
use crate::num::Real;
use crate::sensing::SensorSchedule;

/// Order in which additional fixed sensors are placed on the mainline,
/// spread out first.
pub const PLACEMENT_ORDER: [usize; 8] = [1, 3, 7, 5, 2, 4, 6, 8];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    Sensors,
    Rotation,
    Spacing,
    Noise,
}

impl SweepKind {
    pub const ALL: [SweepKind; 4] = [Self::Sensors, Self::Rotation, Self::Spacing, Self::Noise];

    pub fn name(self) -> &'static str {
        match self {
            Self::Sensors => "sensors",
            Self::Rotation => "rotation",
            Self::Spacing => "spacing",
            Self::Noise => "noise",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan<T> {
    /// Additional fixed mainline sensors.
    pub sensor_counts: Vec<usize>,
    /// Rotation periods in steps; `None` keeps the probes in place.
    pub periods: Vec<Option<usize>>,
    /// Initial mobile positions for the rotation sweep.
    pub rotation_start: Vec<usize>,
    /// Initial mobile layouts compared in the spacing sweep.
    pub spacing_starts: Vec<Vec<usize>>,
    pub noise_stds: Vec<T>,
}

impl<T: Real> Default for SweepPlan<T> {
    fn default() -> Self {
        Self {
            sensor_counts: (0..=8).collect(),
            periods: vec![None, Some(20), Some(10), Some(5), Some(2), Some(1)],
            rotation_start: vec![1, 3, 7],
            spacing_starts: vec![vec![1, 2, 3], vec![1, 3, 5], vec![1, 4, 7]],
            noise_stds: [0.0, 1.0, 5.0, 10.0, 20.0, 40.0].iter().map(|&s| T::lit(s)).collect(),
        }
    }
}

/// One averaged table row.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow<T> {
    pub sweep: SweepKind,
    pub estimator: EstimatorKind,
    pub added_sensors: Option<usize>,
    /// `Some(None)` is an infinite period.
    pub period: Option<Option<usize>>,
    pub start: Option<Vec<usize>>,
    pub noise_std: T,
    pub seeds: usize,
    pub failed: usize,
    pub rmse_rho: T,
    pub rmse_v: T,
    pub mean_step_time_s: f64,
    pub flags: FlagCounts,
    pub error: Option<String>,
}

struct Variant<T: Real> {
    scenario: Scenario<T>,
    added_sensors: Option<usize>,
    period: Option<Option<usize>>,
    start: Option<Vec<usize>>,
    estimators: Vec<EstimatorKind>,
}

fn variants<T: Real>(base: &Scenario<T>, kind: SweepKind, plan: &SweepPlan<T>) -> Result<Vec<Variant<T>>, ScenarioError> {
    let topo = base.model.topology();
    let fixed = base.sensors.fixed().to_vec();
    let plain = |scenario: Scenario<T>| Variant {
        scenario,
        added_sensors: None,
        period: None,
        start: None,
        estimators: base.estimators.clone(),
    };
    let mut out = Vec::new();
    match kind {
        SweepKind::Sensors => {
            let free: Vec<usize> = PLACEMENT_ORDER
                .iter()
                .copied()
                .filter(|s| *s <= topo.n_mainline() && !fixed.contains(s))
                .collect();
            for &c in &plan.sensor_counts {
                if c > free.len() {
                    return Err(ScenarioError::Config(format!("{c} additional sensors requested, {} slots free", free.len())));
                }
                let mut ids = fixed.clone();
                ids.extend_from_slice(&free[..c]);
                let mut sc = base.clone();
                sc.sensors = SensorSchedule::fixed_only(topo, &ids)?;
                out.push(Variant {
                    added_sensors: Some(c),
                    ..plain(sc)
                });
            }
        }
        SweepKind::Rotation => {
            for &p in &plan.periods {
                let mut sc = base.clone();
                sc.sensors = SensorSchedule::new(topo, &fixed, &plan.rotation_start, p)?;
                out.push(Variant {
                    period: Some(p),
                    start: Some(plan.rotation_start.clone()),
                    ..plain(sc)
                });
            }
        }
        SweepKind::Spacing => {
            for start in &plan.spacing_starts {
                for &p in &plan.periods {
                    let mut sc = base.clone();
                    sc.sensors = SensorSchedule::new(topo, &fixed, start, p)?;
                    out.push(Variant {
                        period: Some(p),
                        start: Some(start.clone()),
                        estimators: vec![EstimatorKind::Mhe],
                        ..plain(sc)
                    });
                }
            }
        }
        SweepKind::Noise => {
            for &s in &plan.noise_stds {
                if !(s >= T::zero()) {
                    return Err(ScenarioError::Config("noise std must be nonnegative".into()));
                }
                let mut sc = base.clone();
                sc.noise_std = s;
                out.push(plain(sc));
            }
        }
    }
    Ok(out)
}

/// Runs every configuration of the sweep for every seed on `jobs` threads
/// and returns one averaged row per (configuration, estimator), in plan
/// order. Failed runs are counted in the row rather than aborting.
pub fn run_sweep<T: Real>(
    base: &Scenario<T>,
    kind: SweepKind,
    plan: &SweepPlan<T>,
    jobs: usize,
) -> Result<Vec<SweepRow<T>>, ScenarioError> {
    base.validate()?;
    let truth = generate_truth(base)?;
    let vars = variants(base, kind, plan)?;
    let mut cells = Vec::new();
    for (vi, v) in vars.iter().enumerate() {
        for &est in &v.estimators {
            for &seed in &base.seeds {
                cells.push((vi, est, seed));
            }
        }
    }
    let run = |&(vi, est, seed): &(usize, EstimatorKind, u64)| run_with_truth(&vars[vi].scenario, &truth, est, seed);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| ScenarioError::Config(format!("thread pool: {e}")))?;
    let results: Vec<_> = pool.install(|| cells.par_iter().map(run).collect());

    let mut rows = Vec::new();
    let mut idx = 0;
    for v in &vars {
        for &est in &v.estimators {
            let group = &results[idx..idx + base.seeds.len()];
            idx += base.seeds.len();
            let mut flags = FlagCounts::default();
            let (mut r, mut sv, mut t, mut ok) = (T::zero(), T::zero(), 0.0, 0usize);
            let mut error = None;
            for res in group {
                match res {
                    Ok(run) => {
                        r += run.rmse_rho;
                        sv += run.rmse_v;
                        t += run.mean_step_time();
                        flags.merge(&run.flags);
                        ok += 1;
                    }
                    Err(e) => {
                        error.get_or_insert_with(|| e.to_string());
                    }
                }
            }
            let (rmse_rho, rmse_v, mean_t) = if ok > 0 {
                let n = T::lit(ok as f64);
                (r / n, sv / n, t / ok as f64)
            } else {
                (T::lit(f64::NAN), T::lit(f64::NAN), f64::NAN)
            };
            rows.push(SweepRow {
                sweep: kind,
                estimator: est,
                added_sensors: v.added_sensors,
                period: v.period,
                start: v.start.clone(),
                noise_std: v.scenario.noise_std,
                seeds: ok,
                failed: group.len() - ok,
                rmse_rho,
                rmse_v,
                mean_step_time_s: mean_t,
                flags,
                error,
            });
        }
    }
    Ok(rows)
}

//! Twin experiments: the nonlinear model (with an optional local capacity
//! drop) generates the truth, sensors sample it with noise, and an
//! estimator running on the unperturbed model tries to recover it.

mod metrics;
pub mod output;
pub mod sweep;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::estimators::{build_estimator, EstimatorError, EstimatorKind, KfConfig, StepFlags, StepInput};
use crate::mhe::MheConfig;
use crate::model::{ArzModel, Inputs, ModelError, SegmentKind};
use crate::num::Real;
use crate::linearize::{linearize_measurement, linearize_model};
use crate::sensing::{
    observability_gramian, synthesize_measurements, GramianReport, NoiseModel, Selector, SensingError, SensorSchedule,
    GRAMIAN_TERMS,
};
pub use metrics::{moving_average, rmse};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("truth simulation failed at step {step}: {source}")]
    Truth { step: usize, source: ModelError },
    #[error("estimator failed at step {step}: {source}")]
    Estimator { step: usize, source: EstimatorError },
    #[error(transparent)]
    Sensing(#[from] SensingError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl ScenarioError {
    /// Whether the failure is numerical rather than a bad configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Self::Truth { .. } | Self::Estimator { .. })
    }
}

/// Demand and supply of one mainline segment scaled by `scale` over the
/// steps `start..end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JamSpec<T> {
    /// 1-based mainline segment id.
    pub segment: usize,
    pub start: usize,
    pub end: usize,
    pub scale: T,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InputSeries<T> {
    Constant(DVector<T>),
    /// `u[k]` for `k = 0, 1, ...`; the last entry repeats past the end.
    Series(Vec<DVector<T>>),
}

impl<T: Real> InputSeries<T> {
    pub fn at(&self, k: usize) -> &DVector<T> {
        match self {
            Self::Constant(u) => u,
            Self::Series(v) => &v[k.min(v.len() - 1)],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario<T: Real> {
    pub model: ArzModel<T>,
    /// Number of estimation steps `t_f`.
    pub duration: usize,
    pub inputs: InputSeries<T>,
    pub jam: Option<JamSpec<T>>,
    pub sensors: SensorSchedule,
    pub noise_std: T,
    pub seeds: Vec<u64>,
    /// Uniform density the truth starts from before the warm-up.
    pub truth_rho: T,
    /// Steps simulated with `u[0]` before time 0.
    pub warmup: usize,
    /// Uniform density of the estimators' initial guess (`psi = rho v_f`).
    pub guess_rho: T,
    /// Filter settings shared by the Kalman variants.
    pub kf: KfConfig<T>,
    /// Per-variant replacements for `kf`.
    pub kf_overrides: Vec<(EstimatorKind, KfConfig<T>)>,
    pub mhe: MheConfig<T>,
    pub estimators: Vec<EstimatorKind>,
}

impl<T: Real> Scenario<T> {
    /// Nine-cell highway, 500 s, jam at segment 7 over 100..300 s, fixed
    /// sensors on the last mainline segment and every ramp, unit noise.
    pub fn highway() -> Self {
        let model = ArzModel::highway();
        let p = *model.params();
        let capacity = p.capacity(p.v_free);
        let inputs = Inputs {
            demand_in: capacity * T::lit(0.7),
            w_in: p.v_free,
            rho_out: T::lit(30.0),
            on_ramps: vec![(T::lit(1500.0), p.v_free)],
            off_ramps: vec![T::lit(10.0); 2],
        };
        let sensors = SensorSchedule::fixed_only(model.topology(), &model.topology().minimum_sensor_set())
            .expect("minimum set is valid");
        Self {
            duration: 500,
            inputs: InputSeries::Constant(inputs.to_vector()),
            jam: Some(JamSpec {
                segment: 7,
                start: 100,
                end: 300,
                scale: T::lit(0.3),
            }),
            sensors,
            noise_std: T::one(),
            seeds: vec![1, 2, 3, 4, 5],
            truth_rho: T::lit(30.0),
            warmup: 300,
            guess_rho: T::lit(30.0),
            kf: KfConfig::default(),
            kf_overrides: Vec::new(),
            mhe: MheConfig::default(),
            estimators: EstimatorKind::ALL.to_vec(),
            model,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let topo = self.model.topology();
        if self.duration == 0 {
            return Err(ScenarioError::Config("duration must be positive".into()));
        }
        if let Some(j) = &self.jam {
            if topo.kind(j.segment) != Some(SegmentKind::Mainline) {
                return Err(ScenarioError::Config(format!("jam segment {} is not a mainline segment", j.segment)));
            }
            if !(j.start < j.end && j.end <= self.duration) {
                return Err(ScenarioError::Config("jam window must satisfy 0 <= start < end <= duration".into()));
            }
            if !(j.scale > T::zero() && j.scale <= T::one()) {
                return Err(ScenarioError::Config("jam scale must lie in (0, 1]".into()));
            }
        }
        let n_u = self.model.n_inputs();
        let check_u = |u: &DVector<T>| -> Result<(), ScenarioError> {
            if u.len() != n_u {
                return Err(ScenarioError::Config(format!("input vector has {} entries, expected {n_u}", u.len())));
            }
            Inputs::from_slice(topo, u.as_slice())?.validate(self.model.params())?;
            Ok(())
        };
        match &self.inputs {
            InputSeries::Constant(u) => check_u(u)?,
            InputSeries::Series(v) => {
                if v.is_empty() {
                    return Err(ScenarioError::Config("input series is empty".into()));
                }
                v.iter().try_for_each(check_u)?;
            }
        }
        if !(self.noise_std >= T::zero()) {
            return Err(ScenarioError::Config("noise std must be nonnegative".into()));
        }
        if self.seeds.is_empty() {
            return Err(ScenarioError::Config("at least one seed required".into()));
        }
        let rho_m = self.model.params().rho_max;
        for (name, r) in [("truth density", self.truth_rho), ("initial guess density", self.guess_rho)] {
            if !(r >= T::zero() && r <= rho_m) {
                return Err(ScenarioError::Config(format!("{name} outside [0, rho_m]")));
            }
        }
        for kf in std::iter::once(&self.kf).chain(self.kf_overrides.iter().map(|(_, c)| c)) {
            kf.validate().map_err(|e| ScenarioError::Config(e.to_string()))?;
        }
        self.mhe
            .validate()
            .map_err(|e| ScenarioError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn initial_guess(&self) -> DVector<T> {
        self.model.uniform_equilibrium(self.guess_rho)
    }

    pub fn kf_for(&self, kind: EstimatorKind) -> KfConfig<T> {
        self.kf_overrides
            .iter()
            .rev()
            .find(|(k, _)| *k == kind)
            .map_or(self.kf, |(_, c)| *c)
    }

    /// Truth state at time 0: the uniform start after the warm-up.
    pub fn initial_truth(&self) -> Result<DVector<T>, ScenarioError> {
        let mut x = self.model.uniform_equilibrium(self.truth_rho);
        let u0 = self.inputs.at(0);
        for _ in 0..self.warmup {
            x = self.model.step(&x, u0).map_err(|e| ScenarioError::Truth { step: 0, source: e })?;
        }
        Ok(x)
    }

    /// Truncated observability Gramian of the fixed sensors, in scaled
    /// coordinates, for the model linearized at the time-0 truth and `u[0]`.
    pub fn fixed_sensor_gramian(&self) -> Result<GramianReport<T>, ScenarioError> {
        let x0 = self.initial_truth()?;
        let lin = linearize_model(&self.model, &x0, self.inputs.at(0));
        let sel = Selector::new(self.sensors.fixed(), self.model.n_segments())?;
        let meas = linearize_measurement(&self.model, &x0, &sel);
        let scale = self.model.state_scale();
        let n = scale.len();
        let a = DMatrix::from_fn(n, n, |r, c| lin.a_tilde[(r, c)] * scale[c] / scale[r]);
        let c = DMatrix::from_fn(meas.c_tilde.nrows(), n, |r, k| meas.c_tilde[(r, k)] * scale[k]);
        Ok(observability_gramian(&a, &c, GRAMIAN_TERMS))
    }

    fn jam_scales(&self, step: usize) -> Option<Vec<T>> {
        let j = self.jam.as_ref()?;
        if step < j.start || step >= j.end {
            return None;
        }
        let mut s = vec![T::one(); self.model.n_segments()];
        s[j.segment - 1] = j.scale;
        Some(s)
    }
}

/// Ground truth `x[0..=t_f]` plus simulator diagnostics.
#[derive(Debug, Clone)]
pub struct Truth<T> {
    pub states: Vec<DVector<T>>,
    pub clamped: usize,
    /// Largest `|l sum(d rho) - T (net inflow)| / max(1, vehicles)` seen.
    pub conservation_residual: T,
}

/// Runs the warm-up and then `duration` steps, the transition into step
/// `k` using `u[k - 1]`.
pub fn generate_truth<T: Real>(sc: &Scenario<T>) -> Result<Truth<T>, ScenarioError> {
    let model = &sc.model;
    let p = model.params();
    let mut x = sc.initial_truth()?;
    let mut states = Vec::with_capacity(sc.duration + 1);
    states.push(x.clone());
    let mut clamped = 0;
    let mut worst = T::zero();
    for k in 1..=sc.duration {
        let u = sc.inputs.at(k - 1);
        let scales = sc.jam_scales(k - 1);
        let out = model
            .step_detailed(&x, u, scales.as_deref())
            .map_err(|e| ScenarioError::Truth { step: k, source: e })?;
        clamped += out.clamped;
        if out.clamped == 0 {
            let before: T = (0..x.len() / 2).map(|s| x[2 * s]).fold(T::zero(), |a, b| a + b);
            let after: T = (0..x.len() / 2).map(|s| out.state[2 * s]).fold(T::zero(), |a, b| a + b);
            let resid = (p.cell_len * (after - before) - p.dt * out.boundary.net_inflow()).abs();
            let vehicles = (p.cell_len * after).max(T::one());
            worst = worst.max(resid / vehicles);
        }
        x = out.state;
        states.push(x.clone());
    }
    Ok(Truth {
        states,
        clamped,
        conservation_residual: worst,
    })
}

/// Outcome of one estimator on one seed.
#[derive(Debug, Clone)]
pub struct RunResult<T> {
    pub kind: EstimatorKind,
    pub seed: u64,
    /// Truth for steps `1..=t_f`.
    pub truth: Vec<DVector<T>>,
    /// Estimates for steps `1..=t_f`.
    pub estimates: Vec<DVector<T>>,
    pub measured: Vec<Vec<usize>>,
    pub rmse_rho: T,
    pub rmse_v: T,
    pub step_times: Vec<f64>,
    pub flags: FlagCounts,
    pub truth_clamped: usize,
}

impl<T: Real> RunResult<T> {
    pub fn mean_step_time(&self) -> f64 {
        if self.step_times.is_empty() {
            0.0
        } else {
            self.step_times.iter().sum::<f64>() / self.step_times.len() as f64
        }
    }

    /// Replaces the estimates by their trailing moving average and rescores.
    pub fn smooth(&mut self, params: &crate::model::ModelParams<T>, window: usize) {
        self.estimates = moving_average(&self.estimates, window);
        let (r, v) = rmse(params, &self.truth, &self.estimates);
        self.rmse_rho = r;
        self.rmse_v = v;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize)]
pub struct FlagCounts {
    pub jitter: usize,
    pub collapse: usize,
    pub branch_tie: usize,
    pub qp_not_converged: usize,
}

impl FlagCounts {
    fn add(&mut self, f: StepFlags) {
        self.jitter += f.jitter as usize;
        self.collapse += f.collapse as usize;
        self.branch_tie += f.branch_tie as usize;
        self.qp_not_converged += f.qp_not_converged as usize;
    }

    pub fn merge(&mut self, o: &FlagCounts) {
        self.jitter += o.jitter;
        self.collapse += o.collapse;
        self.branch_tie += o.branch_tie;
        self.qp_not_converged += o.qp_not_converged;
    }
}

/// Seed of the ensemble filter's own generator, distinct from the
/// measurement-noise stream.
fn filter_seed(seed: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1)
}

/// Runs one estimator against a precomputed truth.
pub fn run_with_truth<T: Real>(
    sc: &Scenario<T>,
    truth: &Truth<T>,
    kind: EstimatorKind,
    seed: u64,
) -> Result<RunResult<T>, ScenarioError> {
    let model = &sc.model;
    let noise = NoiseModel::new(sc.noise_std);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kf = KfConfig {
        seed: filter_seed(seed),
        ..sc.kf_for(kind)
    };
    let x0 = sc.initial_guess();
    let mut est = build_estimator(kind, model, &x0, sc.inputs.at(0), &kf, &sc.mhe)
        .map_err(|e| ScenarioError::Estimator { step: 0, source: e })?;

    let mut estimates = Vec::with_capacity(sc.duration);
    let mut measured = Vec::with_capacity(sc.duration);
    let mut step_times = Vec::with_capacity(sc.duration);
    let mut flags = FlagCounts::default();
    for k in 1..=sc.duration {
        let sel = sc.sensors.selector_at(k);
        // probes inside an active jam report the reduced speed
        let scales = sc.jam_scales(k - 1);
        let y = synthesize_measurements(model, &truth.states[k], &sel, scales.as_deref(), &noise, &mut rng);
        let input = StepInput {
            u_prev: sc.inputs.at(k - 1),
            u_now: sc.inputs.at(k),
            y: &y,
            selector: &sel,
        };
        let t0 = Instant::now();
        let (xhat, f) = est
            .step(input)
            .map_err(|e| ScenarioError::Estimator { step: k, source: e })?;
        step_times.push(t0.elapsed().as_secs_f64());
        flags.add(f);
        estimates.push(xhat);
        measured.push(sel.segments().to_vec());
    }
    let truth_run: Vec<DVector<T>> = truth.states[1..].to_vec();
    let (rmse_rho, rmse_v) = rmse(model.params(), &truth_run, &estimates);
    Ok(RunResult {
        kind,
        seed,
        truth: truth_run,
        estimates,
        measured,
        rmse_rho,
        rmse_v,
        step_times,
        flags,
        truth_clamped: truth.clamped,
    })
}

/// Generates the truth and runs one estimator on it.
pub fn run_estimator<T: Real>(sc: &Scenario<T>, kind: EstimatorKind, seed: u64) -> Result<RunResult<T>, ScenarioError> {
    sc.validate()?;
    let truth = generate_truth(sc)?;
    run_with_truth(sc, &truth, kind, seed)
}

//! JSON scenario files. Times are given in seconds and lengths in metres;
//! they are converted to steps, hours and kilometres on load.

use std::path::{Path, PathBuf};

use arz_core::estimators::{EstimatorKind, KfConfig, UkfParams};
use arz_core::mhe::{MheConfig, QpSettings};
use arz_core::model::{ArzModel, Inputs, ModelParams, OffRamp, OnRamp, Topology};
use arz_core::scenario::sweep::SweepPlan;
use arz_core::scenario::{InputSeries, JamSpec, Scenario};
use arz_core::sensing::SensorSchedule;
use nalgebra::DVector;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    /// Identifier written into sweep tables; defaults to the file stem.
    #[serde(default)]
    pub name: Option<String>,
    pub params: ParamsSection,
    pub topology: TopologySection,
    pub inputs: InputsSection,
    #[serde(default)]
    pub jam: Option<JamSection>,
    pub sensors: SensorsSection,
    pub noise: NoiseSection,
    pub estimators: Vec<EstimatorSection>,
    pub duration_s: f64,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub sweeps: SweepsSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    pub v_f: f64,
    pub rho_m: f64,
    /// Relaxation time in seconds.
    pub tau: f64,
    pub gamma: f64,
    #[serde(rename = "T_s")]
    pub t_s: f64,
    pub l_m: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    pub n_mainline: usize,
    #[serde(default)]
    pub on_ramps: Vec<OnRampEntry>,
    #[serde(default)]
    pub off_ramps: Vec<OffRampEntry>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnRampEntry {
    pub at: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OffRampEntry {
    pub at: usize,
    pub alpha: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputsSection {
    Constant(ConstantInputs),
    /// CSV file, one row per step, relative to the config file.
    Series(PathBuf),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantInputs {
    pub demand_in: Demand,
    pub w_in: f64,
    pub rho_out: f64,
    #[serde(default)]
    pub on_ramps: Vec<RampInflow>,
    #[serde(default)]
    pub off_ramps: Vec<RampOutflow>,
}

/// Either a flow in veh/h or a fraction of mainline capacity.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Demand {
    Flow(f64),
    Fraction { capacity_fraction: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RampInflow {
    pub demand: f64,
    pub w: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RampOutflow {
    pub rho_out: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JamSection {
    pub segment: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorsSection {
    pub fixed: Vec<usize>,
    #[serde(default)]
    pub mobile: Option<MobileSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MobileSection {
    pub count: usize,
    /// `null` keeps the probes in place.
    #[serde(default)]
    pub period_s: Option<f64>,
    pub start: Vec<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub std: f64,
    pub seeds: Vec<u64>,
}

/// One estimator with optional tuning; omitted fields keep the defaults.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EstimatorSection {
    Ekf {
        #[serde(default)]
        q: Option<f64>,
        #[serde(default)]
        r: Option<f64>,
        #[serde(default)]
        p0: Option<f64>,
    },
    Ukf {
        #[serde(default)]
        q: Option<f64>,
        #[serde(default)]
        r: Option<f64>,
        #[serde(default)]
        p0: Option<f64>,
        #[serde(default)]
        alpha: Option<f64>,
        #[serde(default)]
        kappa: Option<f64>,
        #[serde(default)]
        beta: Option<f64>,
    },
    Enkf {
        #[serde(default)]
        q: Option<f64>,
        #[serde(default)]
        r: Option<f64>,
        #[serde(default)]
        p0: Option<f64>,
        #[serde(default)]
        ensemble_size: Option<usize>,
    },
    Mhe {
        #[serde(default)]
        horizon: Option<usize>,
        #[serde(default)]
        mu: Option<f64>,
        #[serde(default)]
        w1: Option<f64>,
        #[serde(default)]
        w2: Option<f64>,
        #[serde(default)]
        tol_kkt: Option<f64>,
        #[serde(default)]
        max_iter: Option<usize>,
    },
}

impl EstimatorSection {
    pub fn kind(&self) -> EstimatorKind {
        match self {
            Self::Ekf { .. } => EstimatorKind::Ekf,
            Self::Ukf { .. } => EstimatorKind::Ukf,
            Self::Enkf { .. } => EstimatorKind::Enkf,
            Self::Mhe { .. } => EstimatorKind::Mhe,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialSection {
    /// Uniform density the truth starts from.
    pub truth_rho: f64,
    pub warmup_s: f64,
    /// Uniform density of the estimators' first guess.
    pub guess_rho: f64,
}

impl Default for InitialSection {
    fn default() -> Self {
        Self {
            truth_rho: 30.0,
            warmup_s: 300.0,
            guess_rho: 30.0,
        }
    }
}

/// Overrides for the sweep grids; missing entries keep the defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepsSection {
    #[serde(default)]
    pub sensor_counts: Option<Vec<usize>>,
    /// `null` entries mean fixed positions.
    #[serde(default)]
    pub periods_s: Option<Vec<Option<f64>>>,
    #[serde(default)]
    pub rotation_start: Option<Vec<usize>>,
    #[serde(default)]
    pub spacing_starts: Option<Vec<Vec<usize>>>,
    #[serde(default)]
    pub noise_stds: Option<Vec<f64>>,
}

/// A loaded and validated configuration.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub name: String,
    pub scenario: Scenario<f64>,
    pub plan: SweepPlan<f64>,
    /// Step length in seconds.
    pub dt_s: f64,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Whole number of steps in `seconds`.
fn to_steps(seconds: f64, dt_s: f64, what: &str) -> Result<usize, CliError> {
    let steps = seconds / dt_s;
    let rounded = steps.round();
    if !(seconds >= 0.0) || !steps.is_finite() || (steps - rounded).abs() > 1e-9 * rounded.max(1.0) {
        return Err(config_err(format!(
            "{what} = {seconds} s is not a nonnegative multiple of the step T_s = {dt_s} s"
        )));
    }
    Ok(rounded as usize)
}

fn check_unique(ids: &[usize], what: &str) -> Result<(), CliError> {
    let mut seen = ids.to_vec();
    seen.sort_unstable();
    if seen.windows(2).any(|w| w[0] == w[1]) {
        return Err(config_err(format!("{what} contains duplicate segment ids: {ids:?}")));
    }
    Ok(())
}

/// Parses JSON text; `base` resolves relative paths inside it.
pub fn parse_config(text: &str, base: &Path, fallback_name: &str) -> Result<LoadedConfig, CliError> {
    let file: ScenarioFile = serde_json::from_str(text).map_err(|e| config_err(format!("config: {e}")))?;
    file.build(base, fallback_name)
}

pub fn load_config(path: &Path) -> Result<LoadedConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario");
    parse_config(&text, base, stem).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

impl ScenarioFile {
    pub fn build(&self, base: &Path, fallback_name: &str) -> Result<LoadedConfig, CliError> {
        let pr = &self.params;
        if !(pr.t_s > 0.0 && pr.t_s.is_finite()) {
            return Err(config_err(format!("params.T_s must be positive, got {}", pr.t_s)));
        }
        let params = ModelParams::new(pr.v_f, pr.rho_m, pr.tau / pr.t_s, pr.gamma, pr.t_s / 3600.0, pr.l_m / 1000.0)
            .map_err(|e| config_err(format!("params: {e}")))?;
        let topo = Topology::new(
            self.topology.n_mainline,
            self.topology.on_ramps.iter().map(|r| OnRamp { at: r.at }).collect(),
            self.topology
                .off_ramps
                .iter()
                .map(|r| OffRamp {
                    at: r.at,
                    alpha: r.alpha,
                })
                .collect(),
        )
        .map_err(|e| config_err(format!("topology: {e}")))?;
        let model = ArzModel::new(params, topo).map_err(|e| config_err(e.to_string()))?;
        let topo = model.topology();
        let dt_s = pr.t_s;

        let inputs = match &self.inputs {
            InputsSection::Constant(c) => InputSeries::Constant(c.to_vector(&model)?),
            InputsSection::Series(p) => InputSeries::Series(read_series(&base.join(p), model.n_inputs())?),
        };

        let duration = to_steps(self.duration_s, dt_s, "duration_s")?;
        let jam = self
            .jam
            .as_ref()
            .map(|j| -> Result<_, CliError> {
                Ok(JamSpec {
                    segment: j.segment,
                    start: to_steps(j.start_s, dt_s, "jam.start_s")?,
                    end: to_steps(j.end_s, dt_s, "jam.end_s")?,
                    scale: j.scale,
                })
            })
            .transpose()?;

        check_unique(&self.sensors.fixed, "sensors.fixed")?;
        let sensors = match &self.sensors.mobile {
            None => SensorSchedule::fixed_only(topo, &self.sensors.fixed),
            Some(m) => {
                if m.count != m.start.len() {
                    return Err(config_err(format!(
                        "sensors.mobile.count is {} but {} start positions are given",
                        m.count,
                        m.start.len()
                    )));
                }
                check_unique(&m.start, "sensors.mobile.start")?;
                let period = period_steps(m.period_s, dt_s)?;
                SensorSchedule::new(topo, &self.sensors.fixed, &m.start, period)
            }
        }
        .map_err(|e| config_err(format!("sensors: {e}")))?;

        if self.estimators.is_empty() {
            return Err(config_err("at least one estimator is required"));
        }
        let mut kinds = Vec::new();
        let mut kf_overrides = Vec::new();
        let mut mhe = MheConfig::default();
        for e in &self.estimators {
            let kind = e.kind();
            if kinds.contains(&kind) {
                return Err(config_err(format!("estimator `{}` listed twice", kind.name())));
            }
            kinds.push(kind);
            match e {
                EstimatorSection::Mhe {
                    horizon,
                    mu,
                    w1,
                    w2,
                    tol_kkt,
                    max_iter,
                } => {
                    let d = MheConfig::<f64>::default();
                    mhe = MheConfig {
                        horizon: horizon.unwrap_or(d.horizon),
                        mu: mu.unwrap_or(d.mu),
                        w1: w1.unwrap_or(d.w1),
                        w2: w2.unwrap_or(d.w2),
                        qp: QpSettings {
                            tol_kkt: tol_kkt.unwrap_or(d.qp.tol_kkt),
                            max_iter: max_iter.unwrap_or(d.qp.max_iter),
                            ..d.qp
                        },
                    };
                }
                _ => kf_overrides.push((kind, e.kf_config())),
            }
        }

        let guess_ok = |r: f64| r >= 0.0 && r <= pr.rho_m;
        if !guess_ok(self.initial.truth_rho) || !guess_ok(self.initial.guess_rho) {
            return Err(config_err("initial densities must lie in [0, rho_m]"));
        }
        let scenario = Scenario {
            duration,
            inputs,
            jam,
            sensors,
            noise_std: self.noise.std,
            seeds: self.noise.seeds.clone(),
            truth_rho: self.initial.truth_rho,
            warmup: to_steps(self.initial.warmup_s, dt_s, "initial.warmup_s")?,
            guess_rho: self.initial.guess_rho,
            kf: KfConfig::default(),
            kf_overrides,
            mhe,
            estimators: kinds,
            model,
        };
        scenario.validate().map_err(|e| config_err(e.to_string()))?;

        let plan = self.sweeps.plan(dt_s)?;
        Ok(LoadedConfig {
            name: self.name.clone().unwrap_or_else(|| fallback_name.to_string()),
            scenario,
            plan,
            dt_s,
        })
    }
}

fn period_steps(period_s: Option<f64>, dt_s: f64) -> Result<Option<usize>, CliError> {
    match period_s {
        None => Ok(None),
        Some(p) => {
            let k = to_steps(p, dt_s, "rotation period")?;
            if k == 0 {
                return Err(config_err("rotation period must be at least one step"));
            }
            Ok(Some(k))
        }
    }
}

impl EstimatorSection {
    fn kf_config(&self) -> KfConfig<f64> {
        let d = KfConfig::<f64>::default();
        let base = |q: &Option<f64>, r: &Option<f64>, p0: &Option<f64>| KfConfig {
            q: q.unwrap_or(d.q),
            r: r.unwrap_or(d.r),
            p0: p0.unwrap_or(d.p0),
            ..d
        };
        match self {
            Self::Ekf { q, r, p0 } => base(q, r, p0),
            Self::Ukf {
                q,
                r,
                p0,
                alpha,
                kappa,
                beta,
            } => {
                let u = UkfParams::<f64>::default();
                KfConfig {
                    ukf: UkfParams {
                        alpha: alpha.unwrap_or(u.alpha),
                        kappa: kappa.unwrap_or(u.kappa),
                        beta: beta.unwrap_or(u.beta),
                    },
                    ..base(q, r, p0)
                }
            }
            Self::Enkf { q, r, p0, ensemble_size } => KfConfig {
                ensemble_size: ensemble_size.unwrap_or(d.ensemble_size),
                ..base(q, r, p0)
            },
            Self::Mhe { .. } => d,
        }
    }
}

impl ConstantInputs {
    fn to_vector(&self, model: &ArzModel<f64>) -> Result<DVector<f64>, CliError> {
        let topo = model.topology();
        if self.on_ramps.len() != topo.n_on() || self.off_ramps.len() != topo.n_off() {
            return Err(config_err(format!(
                "inputs: {} on-ramp and {} off-ramp entries given, topology has {} and {}",
                self.on_ramps.len(),
                self.off_ramps.len(),
                topo.n_on(),
                topo.n_off()
            )));
        }
        let p = model.params();
        let demand_in = match self.demand_in {
            Demand::Flow(q) => q,
            Demand::Fraction { capacity_fraction } => capacity_fraction * p.capacity(p.v_free),
        };
        let inputs = Inputs {
            demand_in,
            w_in: self.w_in,
            rho_out: self.rho_out,
            on_ramps: self.on_ramps.iter().map(|r| (r.demand, r.w)).collect(),
            off_ramps: self.off_ramps.iter().map(|r| r.rho_out).collect(),
        };
        inputs.validate(p).map_err(|e| config_err(format!("inputs: {e}")))?;
        Ok(inputs.to_vector())
    }
}

/// Reads an input series: a header row and one row of `n_inputs` numbers
/// per step, in input-vector order.
fn read_series(path: &Path, n_inputs: usize) -> Result<Vec<DVector<f64>>, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        if rec.len() != n_inputs {
            return Err(config_err(format!(
                "{}: row {} has {} fields, expected {n_inputs}",
                path.display(),
                i + 2,
                rec.len()
            )));
        }
        let vals = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| config_err(format!("{}: row {}: {e}", path.display(), i + 2)))?;
        rows.push(DVector::from_vec(vals));
    }
    if rows.is_empty() {
        return Err(config_err(format!("{}: no input rows", path.display())));
    }
    Ok(rows)
}

impl SweepsSection {
    fn plan(&self, dt_s: f64) -> Result<SweepPlan<f64>, CliError> {
        let d = SweepPlan::<f64>::default();
        let periods = match &self.periods_s {
            None => d.periods,
            Some(v) => v.iter().map(|p| period_steps(*p, dt_s)).collect::<Result<_, _>>()?,
        };
        if let Some(starts) = &self.spacing_starts {
            for s in starts {
                check_unique(s, "sweeps.spacing_starts")?;
            }
        }
        if let Some(s) = &self.rotation_start {
            check_unique(s, "sweeps.rotation_start")?;
        }
        Ok(SweepPlan {
            sensor_counts: self.sensor_counts.clone().unwrap_or(d.sensor_counts),
            periods,
            rotation_start: self.rotation_start.clone().unwrap_or(d.rotation_start),
            spacing_starts: self.spacing_starts.clone().unwrap_or(d.spacing_starts),
            noise_stds: self.noise_stds.clone().unwrap_or(d.noise_stds),
        })
    }
}

//! Nonlinear discrete-time ARZ model of a highway with ramps.
//!
//! The Godunov update is
//!
//! ```text
//! rho_i+ = rho_i + (T/l) (q_in - q_out)
//! psi_i+ = (1 - 1/tau) psi_i + (T/l) (phi_in - phi_out) + (v_f/tau) rho_i
//! ```
//!
//! for every mainline and ramp cell, i.e. `x+ = A x + G f(x, u)` with `f` the
//! stacked flux differences.

mod flux;
mod params;
mod topology;

use nalgebra::DVector;
use thiserror::Error;

use crate::num::Real;
pub use flux::{flux_diverge, flux_merge, flux_one_to_one, DivergeFlux, MergeFlux, MinRecord};
pub use params::{ModelParams, RHO_FLOOR};
pub use topology::{Junction, OffRamp, OnRamp, SegmentKind, Topology};

use flux::{Cell, MinSink};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("parameter `{name}` must be positive and finite, got {value}")]
    NonPositiveParam { name: &'static str, value: f64 },
    #[error("CFL condition violated: v_f*T/l = {0} > 1")]
    Cfl(f64),
    #[error("{quantity} must be nonnegative, got {value}")]
    Domain { quantity: &'static str, value: f64 },
    #[error("invalid topology: {0}")]
    Topology(String),
    #[error("{what} has length {got}, expected {expected}")]
    Dimension {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("model blew up at state index {index} (value {value})")]
    Blowup { index: usize, value: f64 },
}

/// Boundary data in named form. `to_vector` gives the flat layout
/// `[D_in, w_in, rho_out, (D_on_j, w_on_j)..., rho_off_out_l...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Inputs<T> {
    pub demand_in: T,
    pub w_in: T,
    pub rho_out: T,
    /// `(demand, w)` upstream of each on-ramp.
    pub on_ramps: Vec<(T, T)>,
    /// Density downstream of each off-ramp.
    pub off_ramps: Vec<T>,
}

impl<T: Real> Inputs<T> {
    pub fn to_vector(&self) -> DVector<T> {
        let mut v = vec![self.demand_in, self.w_in, self.rho_out];
        for &(d, w) in &self.on_ramps {
            v.push(d);
            v.push(w);
        }
        v.extend(self.off_ramps.iter().copied());
        DVector::from_vec(v)
    }

    pub fn from_slice(topo: &Topology<T>, u: &[T]) -> Result<Self, ModelError> {
        if u.len() != topo.n_inputs() {
            return Err(ModelError::Dimension {
                what: "input vector",
                got: u.len(),
                expected: topo.n_inputs(),
            });
        }
        let n_on = topo.n_on();
        Ok(Self {
            demand_in: u[0],
            w_in: u[1],
            rho_out: u[2],
            on_ramps: (0..n_on).map(|j| (u[3 + 2 * j], u[4 + 2 * j])).collect(),
            off_ramps: u[3 + 2 * n_on..].to_vec(),
        })
    }

    /// Checks nonnegativity, `rho <= rho_m` and `w <= 2 v_f`.
    pub fn validate(&self, params: &ModelParams<T>) -> Result<(), ModelError> {
        let w_cap = params.v_free * T::lit(2.0);
        let check_rho = |name: &str, r: T| {
            if r < T::zero() || r > params.rho_max || !r.is_finite() {
                Err(ModelError::Input(format!("{name} = {} outside [0, rho_m]", r.as_f64())))
            } else {
                Ok(())
            }
        };
        let check_w = |name: &str, w: T| {
            if w < T::zero() || w > w_cap || !w.is_finite() {
                Err(ModelError::Input(format!("{name} = {} outside [0, 2 v_f]", w.as_f64())))
            } else {
                Ok(())
            }
        };
        if self.demand_in < T::zero() || !self.demand_in.is_finite() {
            return Err(ModelError::Input("upstream demand negative".into()));
        }
        check_w("w_in", self.w_in)?;
        check_rho("rho_out", self.rho_out)?;
        for (j, &(d, w)) in self.on_ramps.iter().enumerate() {
            if d < T::zero() || !d.is_finite() {
                return Err(ModelError::Input(format!("on-ramp {} demand negative", j + 1)));
            }
            check_w("on-ramp w", w)?;
        }
        for &r in &self.off_ramps {
            check_rho("off-ramp rho_out", r)?;
        }
        Ok(())
    }
}

/// In- and outgoing fluxes of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SegmentFlux<T> {
    pub q_in: T,
    pub phi_in: T,
    pub q_out: T,
    pub phi_out: T,
}

/// Fluxes of every segment in state order.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxSet<T> {
    pub segments: Vec<SegmentFlux<T>>,
}

/// Fluxes through the open boundaries of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryFluxes<T> {
    /// `(q_0, phi_0)` into mainline segment 1.
    pub inflow: (T, T),
    /// `(q_N, phi_N)` out of the last mainline segment.
    pub outflow: (T, T),
    /// Entry flux of each on-ramp.
    pub on_ramp_entry: Vec<(T, T)>,
    /// Exit flux of each off-ramp.
    pub off_ramp_exit: Vec<(T, T)>,
}

impl<T: Real> BoundaryFluxes<T> {
    /// Vehicles per hour entering minus leaving the network.
    pub fn net_inflow(&self) -> T {
        let mut net = self.inflow.0 - self.outflow.0;
        for e in &self.on_ramp_entry {
            net += e.0;
        }
        for e in &self.off_ramp_exit {
            net -= e.0;
        }
        net
    }
}

/// The ARZ state-space model of one highway.
#[derive(Debug, Clone, PartialEq)]
pub struct ArzModel<T> {
    params: ModelParams<T>,
    topo: Topology<T>,
}

impl<T: Real> ArzModel<T> {
    pub fn new(params: ModelParams<T>, topo: Topology<T>) -> Result<Self, ModelError> {
        params.validate()?;
        Ok(Self { params, topo })
    }

    /// Highway calibration on the nine-cell stretch with three ramps.
    pub fn highway() -> Self {
        Self {
            params: ModelParams::highway(),
            topo: Topology::highway(),
        }
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn topology(&self) -> &Topology<T> {
        &self.topo
    }

    pub fn n_states(&self) -> usize {
        self.topo.n_states()
    }

    pub fn n_inputs(&self) -> usize {
        self.topo.n_inputs()
    }

    pub fn n_segments(&self) -> usize {
        self.topo.n_segments()
    }

    fn check_dims(&self, x: &[T], u: &[T]) -> Result<(), ModelError> {
        if x.len() != self.n_states() {
            return Err(ModelError::Dimension {
                what: "state vector",
                got: x.len(),
                expected: self.n_states(),
            });
        }
        if u.len() != self.n_inputs() {
            return Err(ModelError::Dimension {
                what: "input vector",
                got: u.len(),
                expected: self.n_inputs(),
            });
        }
        Ok(())
    }

    /// Fluxes of every cell. `scales` multiplies demand and supply per
    /// segment (used for local capacity drops); `None` means all ones.
    pub fn fluxes(&self, x: &[T], u: &[T], scales: Option<&[T]>) -> FluxSet<T> {
        self.fluxes_recorded(x, u, scales, &mut ())
    }

    /// Outcome of every `min` in the flux evaluation, in a fixed order.
    pub fn min_records(&self, x: &[T], u: &[T]) -> Vec<MinRecord<T>> {
        let mut rec = Vec::new();
        self.fluxes_recorded(x, u, None, &mut rec);
        rec
    }

    pub(crate) fn fluxes_recorded<S: MinSink<T>>(
        &self,
        x: &[T],
        u: &[T],
        scales: Option<&[T]>,
        sink: &mut S,
    ) -> FluxSet<T> {
        let p = &self.params;
        let topo = &self.topo;
        let n = topo.n_mainline();
        let n_on = topo.n_on();
        let cell = |s: usize| {
            let scale = scales.map_or(T::one(), |sc| sc[s]);
            Cell::from_state(p, x[2 * s], x[2 * s + 1], scale)
        };
        let mut seg = vec![SegmentFlux::default(); topo.n_segments()];

        // upstream entry
        let (q0, phi0) = flux::entry(p, u[0], u[1], cell(0), sink);
        seg[0].q_in = q0;
        seg[0].phi_in = phi0;

        for i in 0..n.saturating_sub(1) {
            match topo.junction(i) {
                Junction::OneToOne => {
                    let (q, phi) = flux::one_to_one(p, cell(i), cell(i + 1), sink);
                    seg[i].q_out = q;
                    seg[i].phi_out = phi;
                    seg[i + 1].q_in = q;
                    seg[i + 1].phi_in = phi;
                }
                Junction::Merge { ramp } => {
                    let r = topo.on_ramp_segment(ramp);
                    let m = flux::merge(p, cell(i), cell(r), cell(i + 1), sink);
                    seg[i].q_out = m.q_main;
                    seg[i].phi_out = m.phi_main;
                    seg[r].q_out = m.q_ramp;
                    seg[r].phi_out = m.phi_ramp;
                    seg[i + 1].q_in = m.q_down;
                    seg[i + 1].phi_in = m.phi_down;
                }
                Junction::Diverge { ramp, alpha } => {
                    let r = topo.off_ramp_segment(ramp);
                    let d = flux::diverge(p, cell(i), cell(i + 1), cell(r), alpha, sink);
                    seg[i].q_out = d.q_up;
                    seg[i].phi_out = d.phi_up;
                    seg[i + 1].q_in = d.q_down;
                    seg[i + 1].phi_in = d.phi_down;
                    seg[r].q_in = d.q_off;
                    seg[r].phi_in = d.phi_off;
                }
            }
        }

        // downstream exit
        let (qn, phin) = flux::exit(p, cell(n - 1), u[2], sink);
        seg[n - 1].q_out = qn;
        seg[n - 1].phi_out = phin;

        for j in 0..n_on {
            let r = topo.on_ramp_segment(j);
            let (q, phi) = flux::entry(p, u[3 + 2 * j], u[4 + 2 * j], cell(r), sink);
            seg[r].q_in = q;
            seg[r].phi_in = phi;
        }
        for l in 0..topo.n_off() {
            let r = topo.off_ramp_segment(l);
            let (q, phi) = flux::exit(p, cell(r), u[3 + 2 * n_on + l], sink);
            seg[r].q_out = q;
            seg[r].phi_out = phi;
        }
        FluxSet { segments: seg }
    }

    pub fn boundary_fluxes(&self, x: &DVector<T>, u: &DVector<T>) -> BoundaryFluxes<T> {
        let fx = self.fluxes(x.as_slice(), u.as_slice(), None);
        self.boundary_of(&fx)
    }

    pub fn boundary_of(&self, fx: &FluxSet<T>) -> BoundaryFluxes<T> {
        let topo = &self.topo;
        let n = topo.n_mainline();
        let s = &fx.segments;
        BoundaryFluxes {
            inflow: (s[0].q_in, s[0].phi_in),
            outflow: (s[n - 1].q_out, s[n - 1].phi_out),
            on_ramp_entry: (0..topo.n_on())
                .map(|j| {
                    let r = topo.on_ramp_segment(j);
                    (s[r].q_in, s[r].phi_in)
                })
                .collect(),
            off_ramp_exit: (0..topo.n_off())
                .map(|l| {
                    let r = topo.off_ramp_segment(l);
                    (s[r].q_out, s[r].phi_out)
                })
                .collect(),
        }
    }

    /// `f(x, u)`: stacked `[q_in - q_out, phi_in - phi_out]` per segment.
    pub fn flux_difference(&self, x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
        self.flux_difference_scaled(x.as_slice(), u.as_slice(), None)
    }

    pub(crate) fn flux_difference_scaled(&self, x: &[T], u: &[T], scales: Option<&[T]>) -> DVector<T> {
        let fx = self.fluxes(x, u, scales);
        let mut f = DVector::zeros(self.n_states());
        for (s, sf) in fx.segments.iter().enumerate() {
            f[2 * s] = sf.q_in - sf.q_out;
            f[2 * s + 1] = sf.phi_in - sf.phi_out;
        }
        f
    }

    /// `A x + G f(x, u)` without any clamping.
    pub fn step_unclamped(&self, x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
        let f = self.flux_difference(x, u);
        self.apply_update(x.as_slice(), &f)
    }

    fn apply_update(&self, x: &[T], f: &DVector<T>) -> DVector<T> {
        let p = &self.params;
        let g = p.dt_over_len();
        let decay = p.relaxation();
        let source = p.v_free / p.tau;
        let mut out = DVector::zeros(x.len());
        for s in 0..x.len() / 2 {
            let rho = x[2 * s];
            let psi = x[2 * s + 1];
            out[2 * s] = rho + g * f[2 * s];
            out[2 * s + 1] = decay * psi + g * f[2 * s + 1] + source * rho;
        }
        out
    }

    /// One Godunov step, clamped into `[0, rho_m] x [0, rho_m v_f]`.
    pub fn step(&self, x: &DVector<T>, u: &DVector<T>) -> Result<DVector<T>, ModelError> {
        self.step_detailed(x, u, None).map(|s| s.state)
    }

    /// Step with optional per-segment capacity scales, reporting how many
    /// components had to be clamped.
    pub fn step_detailed(
        &self,
        x: &DVector<T>,
        u: &DVector<T>,
        scales: Option<&[T]>,
    ) -> Result<StepOutcome<T>, ModelError> {
        self.check_dims(x.as_slice(), u.as_slice())?;
        let fx = self.fluxes(x.as_slice(), u.as_slice(), scales);
        let mut f = DVector::zeros(self.n_states());
        for (s, sf) in fx.segments.iter().enumerate() {
            f[2 * s] = sf.q_in - sf.q_out;
            f[2 * s + 1] = sf.phi_in - sf.phi_out;
        }
        let mut next = self.apply_update(x.as_slice(), &f);
        if let Some((index, &value)) = next.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(ModelError::Blowup {
                index,
                value: value.as_f64(),
            });
        }
        let (lo, hi) = (T::zero(), [self.params.rho_max, self.params.psi_max()]);
        let mut clamped = 0;
        for (k, v) in next.iter_mut().enumerate() {
            let c = v.clamp(lo, hi[k % 2]);
            if c != *v {
                clamped += 1;
                *v = c;
            }
        }
        let boundary = self.boundary_of(&fx);
        Ok(StepOutcome {
            state: next,
            clamped,
            boundary,
        })
    }

    /// Full measurement vector: density and speed for every segment.
    pub fn measure_h(&self, x: &DVector<T>) -> DVector<T> {
        let mut h = DVector::zeros(x.len());
        for s in 0..x.len() / 2 {
            h[2 * s] = x[2 * s];
            h[2 * s + 1] = self.params.speed(x[2 * s], x[2 * s + 1]);
        }
        h
    }

    /// The constant matrix `A` (block diagonal, `[[1, 0], [v_f/tau, 1 - 1/tau]]`).
    pub fn a_matrix(&self) -> nalgebra::DMatrix<T> {
        let n = self.n_states();
        let mut a = nalgebra::DMatrix::zeros(n, n);
        for s in 0..n / 2 {
            a[(2 * s, 2 * s)] = T::one();
            a[(2 * s + 1, 2 * s)] = self.params.v_free / self.params.tau;
            a[(2 * s + 1, 2 * s + 1)] = self.params.relaxation();
        }
        a
    }

    /// Physical bounds `(x_min, x_max)`.
    pub fn bounds(&self) -> (DVector<T>, DVector<T>) {
        let n = self.n_states();
        let hi = DVector::from_fn(n, |k, _| {
            if k % 2 == 0 {
                self.params.rho_max
            } else {
                self.params.psi_max()
            }
        });
        (DVector::zeros(n), hi)
    }

    /// Per-row scale bringing relative flows to density magnitude: `1` on
    /// density rows, `v_f` on relative-flow rows.
    /// Clamps into the box and then moves each relative flow into the band
    /// `p(rho) <= psi / rho <= 2 v_f`: speed nonnegative and the driver
    /// characteristic within the range accepted for inputs. An empty segment
    /// gets zero relative flow.
    pub fn project_consistent(&self, x: &DVector<T>) -> DVector<T> {
        let p = &self.params;
        let mut out = x.clone();
        for s in 0..x.len() / 2 {
            let rho = x[2 * s].clamp(T::zero(), p.rho_max);
            let off = rho * p.p(rho);
            let lo = off.min(p.psi_max());
            let hi = (T::lit(2.0) * rho * p.v_free).min(p.psi_max());
            out[2 * s] = rho;
            out[2 * s + 1] = x[2 * s + 1].clamp(lo, hi);
        }
        out
    }

    pub fn state_scale(&self) -> DVector<T> {
        DVector::from_fn(self.n_states(), |k, _| {
            if k % 2 == 0 {
                T::one()
            } else {
                self.params.v_free
            }
        })
    }

    /// Uniform equilibrium state (`psi = rho v_f`) at density `rho`.
    pub fn uniform_equilibrium(&self, rho: T) -> DVector<T> {
        DVector::from_fn(self.n_states(), |k, _| {
            if k % 2 == 0 {
                rho
            } else {
                rho * self.params.v_free
            }
        })
    }
}

/// Result of [`ArzModel::step_detailed`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome<T> {
    pub state: DVector<T>,
    pub clamped: usize,
    pub boundary: BoundaryFluxes<T>,
}

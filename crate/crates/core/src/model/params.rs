use crate::model::ModelError;
use crate::num::Real;

/// Densities below this floor are treated as the floor wherever the model
/// divides by density (driver characteristic, measured speed).
pub const RHO_FLOOR: f64 = 1e-6;

/// Physical and numerical constants of the discrete ARZ model.
///
/// Units are kilometres and hours throughout: `v_free` in km/h, `rho_max` in
/// veh/km, `dt` in hours and `cell_len` in km. `tau` is the relaxation time
/// expressed in time steps, so the relative flow decays by `1 - 1/tau` per
/// step irrespective of `dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams<T> {
    pub v_free: T,
    pub rho_max: T,
    pub tau: T,
    pub gamma: T,
    pub dt: T,
    pub cell_len: T,
}

impl<T: Real> ModelParams<T> {
    pub fn new(
        v_free: T,
        rho_max: T,
        tau: T,
        gamma: T,
        dt: T,
        cell_len: T,
    ) -> Result<Self, ModelError> {
        let p = Self {
            v_free,
            rho_max,
            tau,
            gamma,
            dt,
            cell_len,
        };
        p.validate()?;
        Ok(p)
    }

    /// Highway calibration used throughout the experiments: 102 km/h,
    /// 345 veh/km, tau = 20, gamma = 1.75, 1 s steps, 100 m cells.
    pub fn highway() -> Self {
        Self {
            v_free: T::lit(102.0),
            rho_max: T::lit(345.0),
            tau: T::lit(20.0),
            gamma: T::lit(1.75),
            dt: T::lit(1.0 / 3600.0),
            cell_len: T::lit(0.1),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fields = [
            ("v_f", self.v_free),
            ("rho_m", self.rho_max),
            ("tau", self.tau),
            ("gamma", self.gamma),
            ("T", self.dt),
            ("l", self.cell_len),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > T::zero()) {
                return Err(ModelError::NonPositiveParam {
                    name,
                    value: value.as_f64(),
                });
            }
        }
        let cfl = self.cfl_number();
        if cfl > T::one() {
            return Err(ModelError::Cfl(cfl.as_f64()));
        }
        Ok(())
    }

    /// `v_f * T / l`; must not exceed one.
    pub fn cfl_number(&self) -> T {
        self.v_free * self.dt / self.cell_len
    }

    /// `T / l`, the factor in front of every flux difference.
    #[inline]
    pub fn dt_over_len(&self) -> T {
        self.dt / self.cell_len
    }

    /// Per-step decay of the relative flow, `1 - 1/tau`.
    #[inline]
    pub fn relaxation(&self) -> T {
        T::one() - T::one() / self.tau
    }

    /// Upper bound on relative flow, `rho_m * v_f`.
    #[inline]
    pub fn psi_max(&self) -> T {
        self.rho_max * self.v_free
    }

    #[inline]
    pub(crate) fn rho_floor() -> T {
        T::lit(RHO_FLOOR)
    }

    /// Pressure `p(rho) = v_f (rho / rho_m)^gamma`.
    pub fn pressure(&self, rho: T) -> Result<T, ModelError> {
        check_nonneg("density", rho)?;
        Ok(self.p(rho))
    }

    /// Equilibrium speed `V_e(rho) = v_f - p(rho)`.
    pub fn equilibrium_speed(&self, rho: T) -> Result<T, ModelError> {
        Ok(self.v_free - self.pressure(rho)?)
    }

    /// Density maximising the demand for driver characteristic `w`.
    pub fn sigma_crit(&self, w: T) -> Result<T, ModelError> {
        if !(w > T::zero()) {
            return Err(ModelError::Domain {
                quantity: "driver characteristic",
                value: w.as_f64(),
            });
        }
        Ok(self.sigma(w))
    }

    /// Demand of a cell holding density `rho` whose traffic has driver
    /// characteristic `w`. Increasing up to `sigma(w)`, flat beyond.
    pub fn demand(&self, rho: T, w: T) -> T {
        let rho = rho.max(T::zero());
        let w = w.max(T::zero());
        let sigma = self.sigma(w);
        if rho <= sigma {
            rho * (w - self.p(rho))
        } else {
            sigma * (w - self.p(sigma))
        }
    }

    /// Largest demand for driver characteristic `w`, reached at `sigma(w)`.
    pub fn capacity(&self, w: T) -> T {
        self.demand(self.sigma(w), w)
    }

    /// Supply of a receiving cell with density `rho` for incoming traffic of
    /// driver characteristic `w_up`. Flat up to `sigma(w_up)`, decreasing
    /// beyond. Negative values (incoming drivers slower than the receiver's
    /// pressure allows) are cut at zero.
    pub fn supply(&self, rho: T, w_up: T) -> T {
        let rho = rho.max(T::zero());
        let w = w_up.max(T::zero());
        let sigma = self.sigma(w);
        let s = if rho <= sigma {
            sigma * (w - self.p(sigma))
        } else {
            rho * (w - self.p(rho))
        };
        s.max(T::zero())
    }

    /// `p` without the domain check; negative densities read as zero.
    #[inline]
    pub(crate) fn p(&self, rho: T) -> T {
        let rho = rho.max(T::zero());
        self.v_free * (rho / self.rho_max).powf(self.gamma)
    }

    /// Derivative of the pressure, `gamma v_f rho^(gamma-1) / rho_m^gamma`.
    pub fn pressure_derivative(&self, rho: T) -> T {
        let rho = rho.max(T::zero());
        if rho == T::zero() {
            return T::zero();
        }
        self.gamma * self.p(rho) / rho
    }

    #[inline]
    pub(crate) fn sigma(&self, w: T) -> T {
        if w <= T::zero() {
            return T::zero();
        }
        let base = w / (self.v_free * (T::one() + self.gamma));
        self.rho_max * base.powf(T::one() / self.gamma)
    }

    /// Driver characteristic `psi / rho` with the density floor applied.
    #[inline]
    pub fn driver_characteristic(&self, rho: T, psi: T) -> T {
        psi.max(T::zero()) / rho.max(Self::rho_floor())
    }

    /// Speed `psi / rho - p(rho)` with the density floor applied.
    #[inline]
    pub fn speed(&self, rho: T, psi: T) -> T {
        let r = rho.max(Self::rho_floor());
        psi / r - self.p(r)
    }
}

fn check_nonneg<T: Real>(quantity: &'static str, v: T) -> Result<(), ModelError> {
    if v >= T::zero() {
        Ok(())
    } else {
        Err(ModelError::Domain {
            quantity,
            value: v.as_f64(),
        })
    }
}

//! The interface the estimators need from a process model.

use nalgebra::{DMatrix, DVector};

use crate::linearize::{self, LinearizedMeasurement, LinearizedModel};
use crate::model::{ArzModel, ModelError};
use crate::num::Real;
use crate::sensing::Selector;

pub trait StateSpaceModel<T: Real> {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    /// One step of the (possibly nonlinear) process model.
    fn propagate(&self, x: &DVector<T>, u: &DVector<T>) -> Result<DVector<T>, ModelError>;
    fn linearize_process(&self, x0: &DVector<T>, u0: &DVector<T>) -> LinearizedModel<T>;
    /// Full measurement vector (every state observable in principle).
    fn measure(&self, x: &DVector<T>) -> DVector<T>;
    fn measurement_jacobian(&self, x: &DVector<T>) -> DMatrix<T>;
    /// Componentwise `(lower, upper)` state bounds.
    fn bounds(&self) -> (DVector<T>, DVector<T>);
    /// Per-state scale; estimators work with `x / scale`.
    fn state_scale(&self) -> DVector<T>;

    fn linearize_measurement(&self, x0: &DVector<T>, selector: &Selector) -> LinearizedMeasurement<T> {
        let jac = self.measurement_jacobian(x0);
        let h0 = self.measure(x0);
        let (c_tilde, c2) = linearize::restrict_measurement(&h0, &jac, x0, selector);
        LinearizedMeasurement {
            c_tilde,
            c2,
            x0: x0.clone(),
            at_floor: false,
        }
    }

    fn project(&self, x: &DVector<T>) -> DVector<T> {
        let (lo, hi) = self.bounds();
        project_to_bounds(x, &lo, &hi)
    }
}

/// Componentwise clamp into `[lo, hi]`.
pub fn project_to_bounds<T: Real>(x: &DVector<T>, lo: &DVector<T>, hi: &DVector<T>) -> DVector<T> {
    DVector::from_fn(x.len(), |k, _| x[k].clamp(lo[k], hi[k]))
}

impl<T: Real> StateSpaceModel<T> for ArzModel<T> {
    fn state_dim(&self) -> usize {
        self.n_states()
    }

    fn input_dim(&self) -> usize {
        self.n_inputs()
    }

    fn propagate(&self, x: &DVector<T>, u: &DVector<T>) -> Result<DVector<T>, ModelError> {
        self.step(x, u)
    }

    fn linearize_process(&self, x0: &DVector<T>, u0: &DVector<T>) -> LinearizedModel<T> {
        linearize::linearize_model(self, x0, u0)
    }

    fn measure(&self, x: &DVector<T>) -> DVector<T> {
        self.measure_h(x)
    }

    fn measurement_jacobian(&self, x: &DVector<T>) -> DMatrix<T> {
        linearize::measurement_jacobian(self, x)
    }

    fn bounds(&self) -> (DVector<T>, DVector<T>) {
        ArzModel::bounds(self)
    }

    fn state_scale(&self) -> DVector<T> {
        ArzModel::state_scale(self)
    }

    fn linearize_measurement(&self, x0: &DVector<T>, selector: &Selector) -> LinearizedMeasurement<T> {
        linearize::linearize_measurement(self, x0, selector)
    }

    fn project(&self, x: &DVector<T>) -> DVector<T> {
        self.project_consistent(x)
    }
}

/// Affine model frozen at one linearization: `x+ = A x + B u + c1`,
/// `h(x) = C x + c2`. Serves as an exactly known truth generator.
#[derive(Debug, Clone)]
pub struct LinearTwin<T> {
    pub process: LinearizedModel<T>,
    pub c_full: DMatrix<T>,
    pub c2_full: DVector<T>,
    pub lower: DVector<T>,
    pub upper: DVector<T>,
    pub scale: DVector<T>,
}

impl<T: Real> LinearTwin<T> {
    /// Freezes the ARZ model at `(x0, u0)`, keeping its bounds and scaling.
    pub fn from_arz(model: &ArzModel<T>, x0: &DVector<T>, u0: &DVector<T>) -> Self {
        let process = linearize::linearize_model(model, x0, u0);
        let c_full = linearize::measurement_jacobian(model, x0);
        let c2_full = model.measure_h(x0) - &c_full * x0;
        let (lower, upper) = ArzModel::bounds(model);
        Self {
            process,
            c_full,
            c2_full,
            lower,
            upper,
            scale: ArzModel::state_scale(model),
        }
    }
}

impl<T: Real> StateSpaceModel<T> for LinearTwin<T> {
    fn state_dim(&self) -> usize {
        self.c_full.ncols()
    }

    fn input_dim(&self) -> usize {
        self.process.b.ncols()
    }

    fn propagate(&self, x: &DVector<T>, u: &DVector<T>) -> Result<DVector<T>, ModelError> {
        Ok(self.process.predict(x, u))
    }

    fn linearize_process(&self, x0: &DVector<T>, u0: &DVector<T>) -> LinearizedModel<T> {
        LinearizedModel {
            x0: x0.clone(),
            u0: u0.clone(),
            ..self.process.clone()
        }
    }

    fn measure(&self, x: &DVector<T>) -> DVector<T> {
        &self.c_full * x + &self.c2_full
    }

    fn measurement_jacobian(&self, _x: &DVector<T>) -> DMatrix<T> {
        self.c_full.clone()
    }

    fn bounds(&self) -> (DVector<T>, DVector<T>) {
        (self.lower.clone(), self.upper.clone())
    }

    fn state_scale(&self) -> DVector<T> {
        self.scale.clone()
    }
}

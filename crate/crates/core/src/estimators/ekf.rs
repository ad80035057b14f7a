use nalgebra::{DMatrix, DVector};

use super::{cholesky_with_jitter, symmetrize, Estimator, EstimatorError, EstimatorKind, KfConfig, Scaled, StepFlags, StepInput};
use crate::num::Real;
use crate::system::StateSpaceModel;

/// Extended Kalman filter: nonlinear mean prediction, linearized covariance
/// propagation, Joseph-form update.
pub struct Ekf<T: Real, M> {
    model: M,
    cfg: KfConfig<T>,
    sc: Scaled<T>,
    /// Scaled estimate.
    x: DVector<T>,
    p: DMatrix<T>,
}

impl<T: Real, M: StateSpaceModel<T>> Ekf<T, M> {
    pub fn new(model: M, cfg: KfConfig<T>, x0: &DVector<T>) -> Result<Self, EstimatorError> {
        cfg.validate()?;
        let n = model.state_dim();
        if x0.len() != n {
            return Err(EstimatorError::Dimension(format!("initial state has {} entries, expected {n}", x0.len())));
        }
        let sc = Scaled::of(&model);
        let x = sc.project_with(&model, &sc.to_scaled(x0));
        Ok(Self {
            p: DMatrix::identity(n, n) * cfg.p0,
            model,
            cfg,
            sc,
            x,
        })
    }

    /// Covariance of the scaled state.
    pub fn covariance(&self) -> &DMatrix<T> {
        &self.p
    }

    pub fn step_ekf(&mut self, input: StepInput<'_, T>) -> Result<(DVector<T>, StepFlags), EstimatorError> {
        let n = self.x.len();
        let mut flags = StepFlags::default();
        let x_phys = self.sc.to_physical(&self.x);

        let lin = self.model.linearize_process(&x_phys, input.u_prev);
        flags.branch_tie = lin.branch_tie;
        let f = self.sc.transform_a(&lin.a_tilde);
        let x_pred = self.model.propagate(&x_phys, input.u_prev)?;
        let mut p = &f * &self.p * f.transpose() + DMatrix::identity(n, n) * self.cfg.q;
        let mut xs = self.sc.to_scaled(&x_pred);

        if !input.selector.is_empty() {
            if input.y.len() != input.selector.n_rows() {
                return Err(EstimatorError::Dimension("measurement length differs from selector".into()));
            }
            let meas = self.model.linearize_measurement(&x_pred, input.selector);
            let h = self.sc.transform_c(&meas.c_tilde);
            let m = h.nrows();
            let r = DMatrix::identity(m, m) * self.cfg.r;
            let innov = input.y - input.selector.apply(&self.model.measure(&x_pred));
            let s = &h * &p * h.transpose() + &r;
            let (chol, jit) = cholesky_with_jitter(&s).ok_or(EstimatorError::NotPsd)?;
            flags.jitter |= jit;
            // K = P H' S^-1
            let ph_t = &p * h.transpose();
            let k = chol.solve(&ph_t.transpose()).transpose();
            xs += &k * innov;
            let ikh = DMatrix::identity(n, n) - &k * &h;
            p = &ikh * &p * ikh.transpose() + &k * r * k.transpose();
        }
        symmetrize(&mut p);
        self.p = p;
        self.x = self.sc.project_with(&self.model, &xs);
        Ok((self.sc.to_physical(&self.x), flags))
    }
}

impl<T: Real, M: StateSpaceModel<T>> Estimator<T> for Ekf<T, M> {
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::Ekf
    }

    fn step(&mut self, input: StepInput<'_, T>) -> Result<(DVector<T>, StepFlags), EstimatorError> {
        self.step_ekf(input)
    }

    fn estimate(&self) -> DVector<T> {
        self.sc.to_physical(&self.x)
    }
}

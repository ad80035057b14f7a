//! Kalman-type baselines and a common stepping interface shared with MHE.
//!
//! All filters work on `x / state_scale` so density and relative-flow
//! states have comparable magnitude; `Q = q I`, `R = r I`, `P0 = p0 I` are
//! interpreted in those coordinates. Every emitted estimate is projected
//! onto the model bounds.

mod ekf;
mod enkf;
mod ukf;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

use crate::mhe::{MheConfig, MheError, MheSession};
use crate::model::ModelError;
use crate::num::Real;
use crate::sensing::Selector;
use crate::system::StateSpaceModel;

pub use crate::system::project_to_bounds;
pub use ekf::Ekf;
pub use enkf::Enkf;
pub use ukf::{Ukf, UkfWeights};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("invalid estimator configuration: {0}")]
    Config(String),
    #[error("covariance is not positive semidefinite even after jitter")]
    NotPsd,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mhe(#[from] MheError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UkfParams<T> {
    pub alpha: T,
    pub kappa: T,
    pub beta: T,
}

impl<T: Real> Default for UkfParams<T> {
    fn default() -> Self {
        Self {
            alpha: T::lit(0.1),
            kappa: T::lit(-4.0),
            beta: T::lit(2.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KfConfig<T> {
    /// Process noise variance per scaled state.
    pub q: T,
    /// Measurement noise variance per measured quantity.
    pub r: T,
    /// Initial covariance per scaled state.
    pub p0: T,
    pub ukf: UkfParams<T>,
    pub ensemble_size: usize,
    pub seed: u64,
}

impl<T: Real> Default for KfConfig<T> {
    fn default() -> Self {
        Self {
            q: T::one(),
            r: T::one(),
            p0: T::lit(1e-3),
            ukf: UkfParams::default(),
            ensemble_size: 100,
            seed: 0,
        }
    }
}

impl<T: Real> KfConfig<T> {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        let fin = |v: T| v.is_finite();
        if !(fin(self.q) && self.q >= T::zero()) {
            return Err(EstimatorError::Config("q must be nonnegative".into()));
        }
        if !(fin(self.r) && self.r > T::zero()) {
            return Err(EstimatorError::Config("r must be positive".into()));
        }
        if !(fin(self.p0) && self.p0 > T::zero()) {
            return Err(EstimatorError::Config("p0 must be positive".into()));
        }
        if self.ensemble_size < 2 {
            return Err(EstimatorError::Config("ensemble size must be at least 2".into()));
        }
        let a = self.ukf.alpha;
        if !(a > T::zero() && a <= T::one()) {
            return Err(EstimatorError::Config("UKF alpha must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Data available when the estimate for step `k` is formed.
#[derive(Debug, Clone, Copy)]
pub struct StepInput<'a, T> {
    /// Input applied at `k - 1` (drives the transition into `k`).
    pub u_prev: &'a DVector<T>,
    /// Input applied at `k`.
    pub u_now: &'a DVector<T>,
    pub y: &'a DVector<T>,
    pub selector: &'a Selector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepFlags {
    /// Innovation or sigma-point covariance needed diagonal jitter.
    pub jitter: bool,
    /// Ensemble spread fell below `1e-12`.
    pub collapse: bool,
    pub branch_tie: bool,
    pub qp_not_converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Ekf,
    Ukf,
    Enkf,
    Mhe,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [Self::Ekf, Self::Ukf, Self::Enkf, Self::Mhe];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ekf => "ekf",
            Self::Ukf => "ukf",
            Self::Enkf => "enkf",
            Self::Mhe => "mhe",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s.to_ascii_lowercase())
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

pub trait Estimator<T: Real> {
    fn kind(&self) -> EstimatorKind;
    /// Consumes the data for the next step and returns the new estimate.
    fn step(&mut self, input: StepInput<'_, T>) -> Result<(DVector<T>, StepFlags), EstimatorError>;
    fn estimate(&self) -> DVector<T>;
}

impl<T: Real, M: StateSpaceModel<T>> Estimator<T> for MheSession<T, M> {
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::Mhe
    }

    fn step(&mut self, input: StepInput<'_, T>) -> Result<(DVector<T>, StepFlags), EstimatorError> {
        let out = MheSession::step(self, input.u_now, input.y, input.selector)?;
        let flags = StepFlags {
            branch_tie: out.branch_tie,
            qp_not_converged: !out.qp_converged,
            ..StepFlags::default()
        };
        Ok((out.estimate, flags))
    }

    fn estimate(&self) -> DVector<T> {
        self.window().last().cloned().expect("window never empty")
    }
}

/// Builds any of the four estimators behind the common interface.
pub fn build_estimator<'m, T: Real, M: StateSpaceModel<T> + Clone + 'm>(
    kind: EstimatorKind,
    model: &M,
    x0: &DVector<T>,
    u0: &DVector<T>,
    kf: &KfConfig<T>,
    mhe: &MheConfig<T>,
) -> Result<Box<dyn Estimator<T> + 'm>, EstimatorError> {
    Ok(match kind {
        EstimatorKind::Ekf => Box::new(Ekf::new(model.clone(), *kf, x0)?),
        EstimatorKind::Ukf => Box::new(Ukf::new(model.clone(), *kf, x0)?),
        EstimatorKind::Enkf => Box::new(Enkf::new(model.clone(), *kf, x0)?),
        EstimatorKind::Mhe => Box::new(MheSession::new(model.clone(), *mhe, x0, u0)?),
    })
}

pub(crate) fn symmetrize<T: Real>(p: &mut DMatrix<T>) {
    let half = T::lit(0.5);
    let n = p.nrows();
    for r in 0..n {
        for c in r + 1..n {
            let v = (p[(r, c)] + p[(c, r)]) * half;
            p[(r, c)] = v;
            p[(c, r)] = v;
        }
    }
}

/// Cholesky factor of a symmetric matrix, retrying once with `1e-9 I` added.
/// The flag reports whether the jitter was needed.
pub(crate) fn cholesky_with_jitter<T: Real>(m: &DMatrix<T>) -> Option<(Cholesky<T, Dyn>, bool)> {
    let mut m = m.clone();
    symmetrize(&mut m);
    if let Some(c) = Cholesky::new(m.clone()) {
        return Some((c, false));
    }
    let n = m.nrows();
    m += DMatrix::identity(n, n) * T::lit(1e-9);
    Cholesky::new(m).map(|c| (c, true))
}

/// Symmetric part with negative eigenvalues raised to zero; `None` when the
/// matrix already had none below `-tol`.
pub(crate) fn clip_to_psd<T: Real>(m: &DMatrix<T>, tol: T) -> Option<DMatrix<T>> {
    let mut s = m.clone();
    symmetrize(&mut s);
    let eig = s.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= -tol) {
        return None;
    }
    let d = eig.eigenvalues.map(|l| l.max(T::zero()));
    let mut out = &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose();
    symmetrize(&mut out);
    Some(out)
}

/// Smallest eigenvalue of the symmetric part.
pub fn min_eigenvalue<T: Real>(p: &DMatrix<T>) -> T {
    let mut s = p.clone();
    symmetrize(&mut s);
    s.symmetric_eigenvalues().min()
}

pub(crate) struct Scaled<T: Real> {
    pub scale: DVector<T>,
    pub lo: DVector<T>,
    pub hi: DVector<T>,
}

impl<T: Real> Scaled<T> {
    pub fn of<M: StateSpaceModel<T>>(model: &M) -> Self {
        let scale = model.state_scale();
        let (lo, hi) = model.bounds();
        Self {
            lo: lo.component_div(&scale),
            hi: hi.component_div(&scale),
            scale,
        }
    }

    pub fn to_scaled(&self, x: &DVector<T>) -> DVector<T> {
        x.component_div(&self.scale)
    }

    pub fn to_physical(&self, xs: &DVector<T>) -> DVector<T> {
        xs.component_mul(&self.scale)
    }

    pub fn project(&self, xs: &DVector<T>) -> DVector<T> {
        project_to_bounds(xs, &self.lo, &self.hi)
    }

    /// Applies the model's own projection to a scaled state.
    pub fn project_with<M: StateSpaceModel<T>>(&self, model: &M, xs: &DVector<T>) -> DVector<T> {
        let p = model.project(&self.to_physical(xs));
        self.project(&self.to_scaled(&p))
    }

    /// `S^-1 A S`.
    pub fn transform_a(&self, a: &DMatrix<T>) -> DMatrix<T> {
        let s = &self.scale;
        DMatrix::from_fn(a.nrows(), a.ncols(), |r, c| a[(r, c)] * s[c] / s[r])
    }

    /// `C S`.
    pub fn transform_c(&self, c: &DMatrix<T>) -> DMatrix<T> {
        let s = &self.scale;
        DMatrix::from_fn(c.nrows(), c.ncols(), |r, k| c[(r, k)] * s[k])
    }
}

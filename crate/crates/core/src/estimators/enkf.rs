use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{cholesky_with_jitter, Estimator, EstimatorError, EstimatorKind, KfConfig, Scaled, StepFlags, StepInput};
use crate::num::Real;
use crate::system::StateSpaceModel;

/// Stochastic ensemble Kalman filter with perturbed observations.
pub struct Enkf<T: Real, M> {
    model: M,
    cfg: KfConfig<T>,
    sc: Scaled<T>,
    /// Scaled members, one per column.
    members: DMatrix<T>,
    rng: ChaCha8Rng,
}

fn normal<T: Real>(rng: &mut ChaCha8Rng) -> T {
    let v: f64 = StandardNormal.sample(rng);
    T::lit(v)
}

impl<T: Real, M: StateSpaceModel<T>> Enkf<T, M> {
    /// Draws `ensemble_size` members around `x0` with covariance `p0 I`.
    pub fn new(model: M, cfg: KfConfig<T>, x0: &DVector<T>) -> Result<Self, EstimatorError> {
        cfg.validate()?;
        let n = model.state_dim();
        if x0.len() != n {
            return Err(EstimatorError::Dimension(format!("initial state has {} entries, expected {n}", x0.len())));
        }
        let sc = Scaled::of(&model);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let centre = sc.to_scaled(x0);
        let sd = cfg.p0.sqrt();
        let mut members = DMatrix::zeros(n, cfg.ensemble_size);
        for j in 0..cfg.ensemble_size {
            let draw = DVector::from_fn(n, |k, _| centre[k] + sd * normal::<T>(&mut rng));
            members.set_column(j, &sc.project_with(&model, &draw));
        }
        Ok(Self {
            model,
            cfg,
            sc,
            members,
            rng,
        })
    }

    /// Starts from explicit members given in physical units, one per column.
    pub fn from_members(model: M, cfg: KfConfig<T>, members: &DMatrix<T>) -> Result<Self, EstimatorError> {
        let cfg = KfConfig {
            ensemble_size: members.ncols(),
            ..cfg
        };
        cfg.validate()?;
        if members.nrows() != model.state_dim() {
            return Err(EstimatorError::Dimension("member length differs from state dimension".into()));
        }
        let sc = Scaled::of(&model);
        let mut scaled = members.clone();
        for mut col in scaled.column_iter_mut() {
            let s = sc.project_with(&model, &col.component_div(&sc.scale));
            col.copy_from(&s);
        }
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            model,
            cfg,
            sc,
            members: scaled,
        })
    }

    /// Members in physical units.
    pub fn members(&self) -> DMatrix<T> {
        let mut out = self.members.clone();
        for mut col in out.column_iter_mut() {
            let p = col.component_mul(&self.sc.scale);
            col.copy_from(&p);
        }
        out
    }

    fn mean(&self) -> DVector<T> {
        self.members.column_mean()
    }

    pub fn step_enkf(&mut self, input: StepInput<'_, T>) -> Result<(DVector<T>, StepFlags), EstimatorError> {
        let n = self.members.nrows();
        let m_count = self.members.ncols();
        let mut flags = StepFlags::default();
        let q_sd = self.cfg.q.sqrt();

        for j in 0..m_count {
            let phys = self.sc.to_physical(&self.members.column(j).into_owned());
            let next = self.sc.to_scaled(&self.model.propagate(&phys, input.u_prev)?);
            let noisy = if q_sd > T::zero() {
                DVector::from_fn(n, |k, _| next[k] + q_sd * normal::<T>(&mut self.rng))
            } else {
                next
            };
            self.members.set_column(j, &self.sc.project_with(&self.model, &noisy));
        }

        if !input.selector.is_empty() {
            if input.y.len() != input.selector.n_rows() {
                return Err(EstimatorError::Dimension("measurement length differs from selector".into()));
            }
            let p = input.selector.n_rows();
            let mut ys = DMatrix::zeros(p, m_count);
            for j in 0..m_count {
                let phys = self.sc.to_physical(&self.members.column(j).into_owned());
                ys.set_column(j, &input.selector.apply(&self.model.measure(&phys)));
            }
            let x_mean = self.mean();
            let y_mean = ys.column_mean();
            let mut ax = self.members.clone();
            let mut ay = ys.clone();
            for j in 0..m_count {
                let cx = ax.column(j) - &x_mean;
                ax.set_column(j, &cx);
                let cy = ay.column(j) - &y_mean;
                ay.set_column(j, &cy);
            }
            let denom = T::lit((m_count - 1) as f64);
            let pxy = &ax * ay.transpose() / denom;
            let pyy = &ay * ay.transpose() / denom + DMatrix::identity(p, p) * self.cfg.r;
            let (chol, jit) = cholesky_with_jitter(&pyy).ok_or(EstimatorError::NotPsd)?;
            flags.jitter |= jit;
            let k = chol.solve(&pxy.transpose()).transpose();
            let r_sd = self.cfg.r.sqrt();
            for j in 0..m_count {
                let perturbed = DVector::from_fn(p, |i, _| input.y[i] + r_sd * normal::<T>(&mut self.rng));
                let upd = self.members.column(j) + &k * (perturbed - ys.column(j));
                self.members.set_column(j, &self.sc.project_with(&self.model, &upd));
            }
        }

        let mean = self.mean();
        let mut spread = T::zero();
        for j in 0..m_count {
            spread = spread.max((self.members.column(j) - &mean).amax());
        }
        flags.collapse = spread < T::lit(1e-12);
        let est = self.sc.to_physical(&self.sc.project_with(&self.model, &mean));
        Ok((est, flags))
    }
}

impl<T: Real, M: StateSpaceModel<T>> Estimator<T> for Enkf<T, M> {
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::Enkf
    }

    fn step(&mut self, input: StepInput<'_, T>) -> Result<(DVector<T>, StepFlags), EstimatorError> {
        self.step_enkf(input)
    }

    fn estimate(&self) -> DVector<T> {
        self.sc.to_physical(&self.sc.project_with(&self.model, &self.mean()))
    }
}

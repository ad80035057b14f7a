use nalgebra::{DMatrix, DVector};

use super::{cholesky_with_jitter, clip_to_psd, symmetrize, Estimator, EstimatorError, EstimatorKind, KfConfig, Scaled, StepFlags, StepInput, UkfParams};
use crate::num::Real;
use crate::system::StateSpaceModel;

/// Scaled unscented transform weights for `2n + 1` sigma points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UkfWeights<T> {
    pub lambda: T,
    pub mean0: T,
    pub cov0: T,
    /// Weight of every non-central point (mean and covariance).
    pub other: T,
}

impl<T: Real> UkfWeights<T> {
    pub fn new(n: usize, p: &UkfParams<T>) -> Self {
        let n_t = T::lit(n as f64);
        let a2 = p.alpha * p.alpha;
        let lambda = a2 * (n_t + p.kappa) - n_t;
        let mean0 = lambda / (n_t + lambda);
        Self {
            lambda,
            mean0,
            cov0: mean0 + T::one() - a2 + p.beta,
            other: T::one() / (T::lit(2.0) * (n_t + lambda)),
        }
    }

    pub fn mean_sum(&self, n: usize) -> T {
        self.mean0 + self.other * T::lit((2 * n) as f64)
    }
}

/// Unscented Kalman filter with sigma points projected onto the bounds.
pub struct Ukf<T: Real, M> {
    model: M,
    cfg: KfConfig<T>,
    w: UkfWeights<T>,
    sc: Scaled<T>,
    x: DVector<T>,
    p: DMatrix<T>,
}

impl<T: Real, M: StateSpaceModel<T>> Ukf<T, M> {
    pub fn new(model: M, cfg: KfConfig<T>, x0: &DVector<T>) -> Result<Self, EstimatorError> {
        cfg.validate()?;
        let n = model.state_dim();
        if x0.len() != n {
            return Err(EstimatorError::Dimension(format!("initial state has {} entries, expected {n}", x0.len())));
        }
        let w = UkfWeights::new(n, &cfg.ukf);
        if !(T::lit(n as f64) + w.lambda > T::zero()) {
            return Err(EstimatorError::Config("n + lambda must be positive".into()));
        }
        let sc = Scaled::of(&model);
        let x = sc.project_with(&model, &sc.to_scaled(x0));
        Ok(Self {
            p: DMatrix::identity(n, n) * cfg.p0,
            model,
            cfg,
            w,
            sc,
            x,
        })
    }

    pub fn weights(&self) -> &UkfWeights<T> {
        &self.w
    }

    pub fn covariance(&self) -> &DMatrix<T> {
        &self.p
    }

    /// Projected sigma points around `(x, p)`; reports whether jitter was used.
    fn sigma_points(&self, x: &DVector<T>, p: &DMatrix<T>) -> Result<(Vec<DVector<T>>, bool), EstimatorError> {
        let n = x.len();
        let spread = T::lit(n as f64) + self.w.lambda;
        let (chol, jit) = cholesky_with_jitter(&(p * spread)).ok_or(EstimatorError::NotPsd)?;
        let l = chol.l();
        let mut pts = Vec::with_capacity(2 * n + 1);
        pts.push(self.sc.project_with(&self.model, x));
        for i in 0..n {
            pts.push(self.sc.project_with(&self.model, &(x + l.column(i))));
        }
        for i in 0..n {
            pts.push(self.sc.project_with(&self.model, &(x - l.column(i))));
        }
        Ok((pts, jit))
    }

    fn weight(&self, i: usize) -> (T, T) {
        if i == 0 {
            (self.w.mean0, self.w.cov0)
        } else {
            (self.w.other, self.w.other)
        }
    }

    pub fn step_ukf(&mut self, input: StepInput<'_, T>) -> Result<(DVector<T>, StepFlags), EstimatorError> {
        let n = self.x.len();
        let mut flags = StepFlags::default();

        let (pts, jit) = self.sigma_points(&self.x, &self.p)?;
        flags.jitter |= jit;
        let mut prop = Vec::with_capacity(pts.len());
        for pt in &pts {
            let next = self.model.propagate(&self.sc.to_physical(pt), input.u_prev)?;
            prop.push(self.sc.to_scaled(&next));
        }
        let mut x_pred = DVector::zeros(n);
        for (i, pt) in prop.iter().enumerate() {
            x_pred += pt * self.weight(i).0;
        }
        let mut spread = DMatrix::zeros(n, n);
        for (i, pt) in prop.iter().enumerate() {
            let d = pt - &x_pred;
            spread += &d * d.transpose() * self.weight(i).1;
        }
        // a negative central weight plus projection can leave the sum indefinite
        if let Some(fixed) = clip_to_psd(&spread, T::zero()) {
            spread = fixed;
            flags.jitter = true;
        }
        let mut p_pred = spread + DMatrix::identity(n, n) * self.cfg.q;
        symmetrize(&mut p_pred);

        let (mut x_new, mut p_new) = (x_pred.clone(), p_pred.clone());
        if !input.selector.is_empty() {
            if input.y.len() != input.selector.n_rows() {
                return Err(EstimatorError::Dimension("measurement length differs from selector".into()));
            }
            let (pts, jit) = self.sigma_points(&x_pred, &p_pred)?;
            flags.jitter |= jit;
            let ys: Vec<DVector<T>> = pts
                .iter()
                .map(|pt| input.selector.apply(&self.model.measure(&self.sc.to_physical(pt))))
                .collect();
            let m = input.selector.n_rows();
            let mut y_mean = DVector::zeros(m);
            for (i, y) in ys.iter().enumerate() {
                y_mean += y * self.weight(i).0;
            }
            let mut pyy = DMatrix::zeros(m, m);
            let mut pxy = DMatrix::zeros(n, m);
            for (i, (pt, y)) in pts.iter().zip(&ys).enumerate() {
                let wc = self.weight(i).1;
                let dy = y - &y_mean;
                let dx = pt - &x_pred;
                pyy += &dy * dy.transpose() * wc;
                pxy += &dx * dy.transpose() * wc;
            }
            if let Some(fixed) = clip_to_psd(&pyy, T::zero()) {
                pyy = fixed;
                flags.jitter = true;
            }
            pyy += DMatrix::identity(m, m) * self.cfg.r;
            let (chol, jit) = cholesky_with_jitter(&pyy).ok_or(EstimatorError::NotPsd)?;
            flags.jitter |= jit;
            let k = chol.solve(&pxy.transpose()).transpose();
            x_new = &x_pred + &k * (input.y - y_mean);
            p_new = &p_pred - &k * pyy * k.transpose();
            symmetrize(&mut p_new);
            if let Some(fixed) = clip_to_psd(&p_new, T::zero()) {
                p_new = fixed;
                flags.jitter = true;
            }
        }
        self.p = p_new;
        self.x = self.sc.project_with(&self.model, &x_new);
        Ok((self.sc.to_physical(&self.x), flags))
    }
}

impl<T: Real, M: StateSpaceModel<T>> Estimator<T> for Ukf<T, M> {
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::Ukf
    }

    fn step(&mut self, input: StepInput<'_, T>) -> Result<(DVector<T>, StepFlags), EstimatorError> {
        self.step_ukf(input)
    }

    fn estimate(&self) -> DVector<T> {
        self.sc.to_physical(&self.x)
    }
}

//! First-order Taylor expansion of the process and measurement models.
//!
//! Process: `x+ ~ A_t x + B u + c1` with `A_t = A + G df/dx`, `B = G df/du`
//! and `c1 = G (f(x0, u0) - df/dx x0 - df/du u0)`. Measurement:
//! `y ~ C_t x + c2` with `C_t = C dh/dx` and `c2 = C (h(x0) - dh/dx x0)`.

use nalgebra::{DMatrix, DVector};

use crate::model::{ArzModel, MinRecord};
use crate::num::Real;
use crate::sensing::Selector;

/// Branch points closer than this to switching are reported.
pub const TIE_TOLERANCE: f64 = 1e-6;

/// Finite-difference step for component value `v`.
#[inline]
pub fn fd_step<T: Real>(v: T) -> T {
    (T::lit(1e-4) * v.abs()).max(T::lit(1e-3))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedModel<T> {
    pub a_tilde: DMatrix<T>,
    pub b: DMatrix<T>,
    pub c1: DVector<T>,
    pub x0: DVector<T>,
    pub u0: DVector<T>,
    /// Some branch point of the flux evaluation switched inside the
    /// difference stencil or sat within [`TIE_TOLERANCE`] of a switch.
    pub branch_tie: bool,
}

impl<T: Real> LinearizedModel<T> {
    /// `A_t x + B u + c1`.
    pub fn predict(&self, x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
        &self.a_tilde * x + &self.b * u + &self.c1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedMeasurement<T> {
    pub c_tilde: DMatrix<T>,
    pub c2: DVector<T>,
    pub x0: DVector<T>,
    /// Some measured density sat at the regularization floor.
    pub at_floor: bool,
}

impl<T: Real> LinearizedMeasurement<T> {
    pub fn predict(&self, x: &DVector<T>) -> DVector<T> {
        &self.c_tilde * x + &self.c2
    }

    pub fn n_rows(&self) -> usize {
        self.c2.len()
    }
}

fn ties_changed<T: Real>(base: &[MinRecord<T>], other: &[MinRecord<T>]) -> bool {
    base.len() != other.len() || base.iter().zip(other).any(|(a, b)| a.argmin != b.argmin)
}

fn near_tie<T: Real>(recs: &[MinRecord<T>]) -> bool {
    recs.iter().any(|r| r.margin < T::lit(TIE_TOLERANCE))
}

/// Central-difference Jacobian of the flux difference with respect to the
/// state, plus a branch-tie flag.
pub fn jacobian_fx<T: Real>(model: &ArzModel<T>, x0: &DVector<T>, u0: &DVector<T>) -> (DMatrix<T>, bool) {
    let n = x0.len();
    let base = model.min_records(x0.as_slice(), u0.as_slice());
    let mut tie = near_tie(&base);
    let mut jac = DMatrix::zeros(n, n);
    let mut xp = x0.clone();
    for j in 0..n {
        let h = fd_step(x0[j]);
        xp[j] = x0[j] + h;
        let fp = model.flux_difference(&xp, u0);
        tie |= ties_changed(&base, &model.min_records(xp.as_slice(), u0.as_slice()));
        xp[j] = x0[j] - h;
        let fm = model.flux_difference(&xp, u0);
        tie |= ties_changed(&base, &model.min_records(xp.as_slice(), u0.as_slice()));
        xp[j] = x0[j];
        let two_h = h + h;
        jac.set_column(j, &((fp - fm) / two_h));
    }
    (jac, tie)
}

/// Central-difference Jacobian of the flux difference with respect to the
/// input, plus a branch-tie flag.
pub fn jacobian_fu<T: Real>(model: &ArzModel<T>, x0: &DVector<T>, u0: &DVector<T>) -> (DMatrix<T>, bool) {
    let m = u0.len();
    let base = model.min_records(x0.as_slice(), u0.as_slice());
    let mut tie = near_tie(&base);
    let mut jac = DMatrix::zeros(x0.len(), m);
    let mut up = u0.clone();
    for j in 0..m {
        let h = fd_step(u0[j]);
        up[j] = u0[j] + h;
        let fp = model.flux_difference(x0, &up);
        tie |= ties_changed(&base, &model.min_records(x0.as_slice(), up.as_slice()));
        up[j] = u0[j] - h;
        let fm = model.flux_difference(x0, &up);
        tie |= ties_changed(&base, &model.min_records(x0.as_slice(), up.as_slice()));
        up[j] = u0[j];
        let two_h = h + h;
        jac.set_column(j, &((fp - fm) / two_h));
    }
    (jac, tie)
}

/// Affine approximation of one model step around `(x0, u0)`.
pub fn linearize_model<T: Real>(model: &ArzModel<T>, x0: &DVector<T>, u0: &DVector<T>) -> LinearizedModel<T> {
    let (fx, tie_x) = jacobian_fx(model, x0, u0);
    let (fu, tie_u) = jacobian_fu(model, x0, u0);
    let g = model.params().dt_over_len();
    let f0 = model.flux_difference(x0, u0);
    let a_tilde = model.a_matrix() + &fx * g;
    let b = fu.clone() * g;
    let c1 = (f0 - &fx * x0 - &fu * u0) * g;
    LinearizedModel {
        a_tilde,
        b,
        c1,
        x0: x0.clone(),
        u0: u0.clone(),
        branch_tie: tie_x || tie_u,
    }
}

/// Analytic Jacobian of the full measurement vector. Densities below the
/// floor are replaced by the floor, as in the measurement itself.
pub fn measurement_jacobian<T: Real>(model: &ArzModel<T>, x0: &DVector<T>) -> DMatrix<T> {
    let p = model.params();
    let floor = T::lit(crate::model::RHO_FLOOR);
    let n = x0.len();
    let mut jac = DMatrix::zeros(n, n);
    for s in 0..n / 2 {
        let rho = x0[2 * s].max(floor);
        let psi = x0[2 * s + 1];
        jac[(2 * s, 2 * s)] = T::one();
        // speed = psi / rho - p(rho); constant in rho below the floor
        if x0[2 * s] > floor {
            jac[(2 * s + 1, 2 * s)] = -psi / (rho * rho) - p.pressure_derivative(rho);
        }
        jac[(2 * s + 1, 2 * s + 1)] = T::one() / rho;
    }
    jac
}

/// Restricts the full measurement linearization to the selected rows.
pub fn restrict_measurement<T: Real>(
    h0: &DVector<T>,
    jac: &DMatrix<T>,
    x0: &DVector<T>,
    selector: &Selector,
) -> (DMatrix<T>, DVector<T>) {
    let offset = h0 - jac * x0;
    let rows = selector.rows();
    let c = DMatrix::from_fn(rows.len(), x0.len(), |r, c| jac[(rows[r], c)]);
    let c2 = DVector::from_fn(rows.len(), |r, _| offset[rows[r]]);
    (c, c2)
}

pub fn linearize_measurement<T: Real>(
    model: &ArzModel<T>,
    x0: &DVector<T>,
    selector: &Selector,
) -> LinearizedMeasurement<T> {
    let jac = measurement_jacobian(model, x0);
    let h0 = model.measure_h(x0);
    let (c_tilde, c2) = restrict_measurement(&h0, &jac, x0, selector);
    let floor = T::lit(crate::model::RHO_FLOOR);
    let at_floor = selector
        .segments()
        .iter()
        .any(|&id| x0[2 * (id - 1)] <= floor);
    LinearizedMeasurement {
        c_tilde,
        c2,
        x0: x0.clone(),
        at_floor,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelParams, Topology};

    #[test]
    fn zero_region_gives_plain_a() {
        let m = ArzModel::<f64>::highway();
        let x = DVector::zeros(24);
        let u = DVector::zeros(7);
        let lin = linearize_model(&m, &x, &u);
        assert_eq!(lin.c1.amax(), 0.0);
        assert!((lin.a_tilde - m.a_matrix()).amax() < 1e-12);
    }

    #[test]
    fn single_segment_demand_derivative() {
        let m = ArzModel::<f64>::new(ModelParams::highway(), Topology::new(1, vec![], vec![]).unwrap()).unwrap();
        let x = DVector::from_vec(vec![30.0, 30.0 * 102.0]);
        // low inflow demand and an empty exit: both boundaries demand-limited
        let u = DVector::from_vec(vec![1000.0, 102.0, 0.0]);
        let (jx, _) = jacobian_fx(&m, &x, &u);
        // dD/drho at fixed psi: D = psi - rho p(rho)
        let p = m.params();
        let dd = -(p.pressure(30.0).unwrap() + 30.0 * p.pressure_derivative(30.0));
        assert!((jx[(0, 0)] + dd).abs() < 1e-5 * dd.abs());
        let (ju, _) = jacobian_fu(&m, &x, &u);
        assert!((ju[(0, 0)] - 1.0).abs() < 1e-6);
    }
}

//! Dense box-constrained convex QP: minimize `z' H z + q' z` subject to
//! `lo <= z <= hi`.
//!
//! Accelerated projected gradient with objective-based restart, plus a
//! periodic reduced Newton solve on the current free set that finishes the
//! job once the active set has settled.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::num::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem<T> {
    pub h: DMatrix<T>,
    pub q: DVector<T>,
    pub lo: DVector<T>,
    pub hi: DVector<T>,
}

impl<T: Real> QpProblem<T> {
    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn objective(&self, z: &DVector<T>) -> T {
        z.dot(&(&self.h * z)) + self.q.dot(z)
    }

    pub fn gradient(&self, z: &DVector<T>) -> DVector<T> {
        &self.h * z * T::lit(2.0) + &self.q
    }

    pub fn project(&self, z: &DVector<T>) -> DVector<T> {
        DVector::from_fn(z.len(), |k, _| z[k].clamp(self.lo[k], self.hi[k]))
    }

    /// Largest violation of the first-order optimality conditions.
    pub fn kkt_residual(&self, z: &DVector<T>) -> T {
        kkt_from_grad(z, &self.gradient(z), &self.lo, &self.hi)
    }
}

fn kkt_from_grad<T: Real>(z: &DVector<T>, g: &DVector<T>, lo: &DVector<T>, hi: &DVector<T>) -> T {
    let mut worst = T::zero();
    for k in 0..z.len() {
        let r = if lo[k] >= hi[k] {
            T::zero()
        } else if z[k] <= lo[k] {
            (-g[k]).max(T::zero())
        } else if z[k] >= hi[k] {
            g[k].max(T::zero())
        } else {
            g[k].abs()
        };
        worst = worst.max(r);
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings<T> {
    pub tol_kkt: T,
    pub max_iter: usize,
    /// Gradient iterations between reduced Newton attempts; 0 disables them.
    pub polish_every: usize,
}

impl<T: Real> Default for QpSettings<T> {
    fn default() -> Self {
        Self {
            tol_kkt: T::lit(1e-8),
            max_iter: 5000,
            polish_every: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution<T> {
    pub z: DVector<T>,
    pub objective: T,
    pub kkt_residual: T,
    pub iterations: usize,
    pub converged: bool,
    pub restarts: usize,
    /// The returned point came out of a reduced Newton solve.
    pub polished: bool,
}

/// `2 * lambda_max(H)` from power iteration, inflated by 5 %.
pub fn lipschitz_estimate<T: Real>(h: &DMatrix<T>) -> T {
    let n = h.nrows();
    if n == 0 {
        return T::one();
    }
    let mut v = DVector::from_fn(n, |k, _| T::one() + T::lit(k as f64 * 1e-3));
    v /= v.norm();
    let mut lambda = T::zero();
    for _ in 0..200 {
        let w = h * &v;
        let norm = w.norm();
        if norm <= T::zero() {
            return T::one();
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - lambda).abs() <= T::lit(1e-6) * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    // a Rayleigh quotient never overestimates; the margin covers the gap
    let bound = h.iter().map(|x| x.abs()).fold(T::zero(), |a, b| a.max(b));
    (T::lit(2.0) * lambda * T::lit(1.05)).max(bound * T::lit(1e-12)).max(T::EPS)
}

/// Minimizes over the free coordinates with the others held at their bound.
/// Returns `None` if the reduced Hessian is not numerically PD.
fn reduced_newton<T: Real>(p: &QpProblem<T>, z: &DVector<T>) -> Option<DVector<T>> {
    let n = p.dim();
    let g = p.gradient(z);
    let free: Vec<usize> = (0..n)
        .filter(|&k| {
            if p.lo[k] >= p.hi[k] {
                false
            } else if z[k] <= p.lo[k] {
                g[k] < T::zero()
            } else if z[k] >= p.hi[k] {
                g[k] > T::zero()
            } else {
                true
            }
        })
        .collect();
    let mut out = z.clone();
    if free.is_empty() {
        return Some(out);
    }
    let m = free.len();
    let hff = DMatrix::from_fn(m, m, |r, c| p.h[(free[r], free[c])]);
    // rhs = -(q_F / 2 + H_FB z_B)
    let mut zb = z.clone();
    for &k in &free {
        zb[k] = T::zero();
    }
    let hz_b = &p.h * &zb;
    let half = T::lit(0.5);
    let rhs = DVector::from_fn(m, |r, _| -(p.q[free[r]] * half + hz_b[free[r]]));
    let chol = Cholesky::new(hff.clone())?;
    let mut sol = chol.solve(&rhs);
    // one step of iterative refinement
    let resid = &rhs - &hff * &sol;
    sol += chol.solve(&resid);
    for (r, &k) in free.iter().enumerate() {
        out[k] = sol[r];
    }
    Some(out)
}

/// Solves the box QP, optionally warm-started.
pub fn solve_box_qp<T: Real>(p: &QpProblem<T>, settings: &QpSettings<T>, warm: Option<&DVector<T>>) -> QpSolution<T> {
    let n = p.dim();
    let mut z = match warm {
        Some(w) if w.len() == n => p.project(w),
        _ => p.project(&DVector::zeros(n)),
    };
    let mut f = p.objective(&z);
    let mut best = (z.clone(), f);
    let mut restarts = 0;

    let finish = |z: DVector<T>, iters: usize, restarts: usize, polished: bool| {
        let kkt = p.kkt_residual(&z);
        QpSolution {
            objective: p.objective(&z),
            converged: kkt < settings.tol_kkt,
            kkt_residual: kkt,
            z,
            iterations: iters,
            restarts,
            polished,
        }
    };

    if p.kkt_residual(&z) < settings.tol_kkt {
        return finish(z, 0, 0, false);
    }

    let lip = lipschitz_estimate(&p.h);
    let step = T::one() / lip;
    let mut y = z.clone();
    let mut t = T::one();

    for iter in 1..=settings.max_iter {
        let gy = p.gradient(&y);
        let mut z_new = p.project(&(&y - &gy * step));
        let mut f_new = p.objective(&z_new);
        if f_new > f {
            // restart from the last iterate with a plain projected step
            restarts += 1;
            t = T::one();
            let gz = p.gradient(&z);
            z_new = p.project(&(&z - gz * step));
            f_new = p.objective(&z_new);
            if f_new > f {
                // step size too large for the current estimate; stay put
                z_new = z.clone();
                f_new = f;
            }
        }
        let t_new = (T::one() + (T::one() + T::lit(4.0) * t * t).sqrt()) * T::lit(0.5);
        y = &z_new + (&z_new - &z) * ((t - T::one()) / t_new);
        t = t_new;
        z = z_new;
        f = f_new;
        if f < best.1 {
            best = (z.clone(), f);
        }

        if settings.polish_every > 0 && iter % settings.polish_every == 0 {
            // a few active-set rounds from the current iterate
            let mut cand = z.clone();
            for _ in 0..8 {
                let Some(next) = reduced_newton(p, &cand) else { break };
                let projected = p.project(&next);
                let inside = projected == next;
                cand = projected;
                if inside {
                    break;
                }
            }
            let f_c = p.objective(&cand);
            if p.kkt_residual(&cand) < settings.tol_kkt {
                return finish(cand, iter, restarts, true);
            }
            if f_c < f {
                z = cand.clone();
                y = cand;
                f = f_c;
                t = T::one();
                if f < best.1 {
                    best = (z.clone(), f);
                }
            }
        }

        if p.kkt_residual(&z) < settings.tol_kkt {
            return finish(z, iter, restarts, false);
        }
    }
    finish(best.0, settings.max_iter, restarts, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_problem(a: &[f64], hi: f64) -> QpProblem<f64> {
        let n = a.len();
        QpProblem {
            h: DMatrix::identity(n, n),
            q: DVector::from_column_slice(a) * -2.0,
            lo: DVector::zeros(n),
            hi: DVector::from_element(n, hi),
        }
    }

    #[test]
    fn identity_interior_and_clamped() {
        let p = unit_problem(&[0.3, 0.7, 0.5], 1.0);
        let s = solve_box_qp(&p, &QpSettings::default(), None);
        assert!(s.converged);
        assert!((s.z - DVector::from_vec(vec![0.3, 0.7, 0.5])).amax() < 1e-9);

        let p = unit_problem(&[3.0, 2.0], 1.0);
        let s = solve_box_qp(&p, &QpSettings::default(), None);
        assert!(s.converged);
        assert_eq!(s.z, DVector::from_element(2, 1.0));
    }

    #[test]
    fn gradient_only_path_converges() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let p = QpProblem {
            h,
            q: DVector::from_vec(vec![-1.0, -3.0]),
            lo: DVector::from_element(2, -10.0),
            hi: DVector::from_element(2, 10.0),
        };
        let settings = QpSettings {
            polish_every: 0,
            ..QpSettings::default()
        };
        let s = solve_box_qp(&p, &settings, None);
        assert!(s.converged, "kkt {}", s.kkt_residual);
        // unconstrained minimizer solves 2 H z = -q
        let exact = (p.h.clone() * 2.0).lu().solve(&(-&p.q)).unwrap();
        assert!((s.z - exact).amax() < 1e-8);
    }

    #[test]
    fn lipschitz_bounds_spectrum() {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0, 2.0]));
        let l = lipschitz_estimate(&h);
        assert!(l >= 8.0 && l <= 8.0 * 1.06);
    }
}

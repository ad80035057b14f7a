//! Linear moving horizon estimation.
//!
//! Each step linearizes the model around the mean of the previous window,
//! appends the result to a horizon buffer, assembles the window objective
//!
//! ```text
//! mu |x_0 - x_bar|^2 + w1 sum_i |y_i - C_i x_i - c2_i|^2
//!                    + w2 sum_i |x_{i+1} - A_i x_i - B_i u_i - c1_i|^2
//! ```
//!
//! as a box-constrained QP and reports the newest block of its minimizer.
//! Everything is carried out in scaled coordinates `x / state_scale`.

pub mod qp;

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::model::ModelError;
use crate::num::Real;
use crate::sensing::Selector;
use crate::system::StateSpaceModel;
pub use qp::{solve_box_qp, QpProblem, QpSettings, QpSolution};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MheError {
    #[error("invalid MHE configuration: {0}")]
    Config(String),
    #[error("horizon entry {entry}: block `{block}` is {got}, expected {expected}")]
    Assembly {
        entry: usize,
        block: &'static str,
        got: String,
        expected: String,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MheConfig<T> {
    /// Number of past steps in the window besides the current one.
    pub horizon: usize,
    pub mu: T,
    pub w1: T,
    pub w2: T,
    pub qp: QpSettings<T>,
}

impl<T: Real> Default for MheConfig<T> {
    fn default() -> Self {
        Self {
            horizon: 4,
            mu: T::one(),
            w1: T::one(),
            w2: T::one(),
            qp: QpSettings::default(),
        }
    }
}

impl<T: Real> MheConfig<T> {
    pub fn validate(&self) -> Result<(), MheError> {
        let ok = |v: T| v.is_finite() && v >= T::zero();
        if !(ok(self.mu) && ok(self.w1) && ok(self.w2)) {
            return Err(MheError::Config("weights must be finite and nonnegative".into()));
        }
        if !(self.mu + self.w2 > T::zero()) {
            return Err(MheError::Config("mu + w2 must be positive".into()));
        }
        if !(self.qp.tol_kkt > T::zero()) || self.qp.max_iter == 0 {
            return Err(MheError::Config("QP tolerance and iteration limit must be positive".into()));
        }
        Ok(())
    }
}

/// One time step of the horizon, in the coordinates the QP is built in.
/// The process blocks describe the transition from this step to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonEntry<T> {
    pub u: DVector<T>,
    pub y: DVector<T>,
    pub selector: Selector,
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub c1: DVector<T>,
    pub c: DMatrix<T>,
    pub c2: DVector<T>,
    pub branch_tie: bool,
}

fn dims<T>(m: &DMatrix<T>) -> String {
    format!("{}x{}", m.nrows(), m.ncols())
}

fn check_entry<T: Real>(i: usize, e: &HorizonEntry<T>, n: usize, last: bool) -> Result<(), MheError> {
    let bad = |block, got: String, expected: String| {
        Err(MheError::Assembly {
            entry: i,
            block,
            got,
            expected,
        })
    };
    let p = e.y.len();
    if e.c.nrows() != p || e.c.ncols() != n {
        return bad("C", dims(&e.c), format!("{p}x{n}"));
    }
    if e.c2.len() != p {
        return bad("c2", e.c2.len().to_string(), p.to_string());
    }
    if !last {
        if e.a.nrows() != n || e.a.ncols() != n {
            return bad("A", dims(&e.a), format!("{n}x{n}"));
        }
        if e.b.nrows() != n || e.b.ncols() != e.u.len() {
            return bad("B", dims(&e.b), format!("{n}x{}", e.u.len()));
        }
        if e.c1.len() != n {
            return bad("c1", e.c1.len().to_string(), n.to_string());
        }
    }
    Ok(())
}

/// Stacked process residual operator: block row `i` is `[.. -A_i  I ..]`,
/// right-hand side `B_i u_i + c1_i`.
pub fn process_blocks<T: Real>(entries: &[HorizonEntry<T>], n: usize) -> (DMatrix<T>, DVector<T>) {
    let l = entries.len();
    let rows = n * l.saturating_sub(1);
    let mut ha = DMatrix::zeros(rows, n * l);
    let mut rhs = DVector::zeros(rows);
    for (i, e) in entries.iter().take(l.saturating_sub(1)).enumerate() {
        ha.view_mut((i * n, i * n), (n, n)).copy_from(&(-&e.a));
        for k in 0..n {
            ha[(i * n + k, (i + 1) * n + k)] = T::one();
        }
        rhs.rows_mut(i * n, n).copy_from(&(&e.b * &e.u + &e.c1));
    }
    (ha, rhs)
}

/// Stacked measurement operator, block diagonal in `C_i`, right-hand side
/// `y_i - c2_i`.
pub fn measurement_blocks<T: Real>(entries: &[HorizonEntry<T>], n: usize) -> (DMatrix<T>, DVector<T>) {
    let rows: usize = entries.iter().map(|e| e.y.len()).sum();
    let mut hc = DMatrix::zeros(rows, n * entries.len());
    let mut rhs = DVector::zeros(rows);
    let mut r = 0;
    for (i, e) in entries.iter().enumerate() {
        let p = e.y.len();
        if p > 0 {
            hc.view_mut((r, i * n), (p, n)).copy_from(&e.c);
            rhs.rows_mut(r, p).copy_from(&(&e.y - &e.c2));
        }
        r += p;
    }
    (hc, rhs)
}

/// Builds `H`, `q` and the stacked bounds of the window problem. Constant
/// objective terms are left out (see [`objective_constant`]).
pub fn assemble_qp<T: Real>(
    entries: &[HorizonEntry<T>],
    x_bar: &DVector<T>,
    lo: &DVector<T>,
    hi: &DVector<T>,
    cfg: &MheConfig<T>,
) -> Result<QpProblem<T>, MheError> {
    let n = x_bar.len();
    let l = entries.len();
    if l == 0 {
        return Err(MheError::Config("empty horizon".into()));
    }
    for (i, e) in entries.iter().enumerate() {
        check_entry(i, e, n, i + 1 == l)?;
    }
    let nz = n * l;
    let two = T::lit(2.0);

    let mut h = DMatrix::zeros(nz, nz);
    let mut q = DVector::zeros(nz);
    for k in 0..n {
        h[(k, k)] = cfg.mu;
        q[k] = -two * cfg.mu * x_bar[k];
    }

    let (hc, rc) = measurement_blocks(entries, n);
    if hc.nrows() > 0 && cfg.w1 > T::zero() {
        let hct = hc.transpose();
        h += &hct * &hc * cfg.w1;
        q -= hct * rc * (two * cfg.w1);
    }
    let (ha, ra) = process_blocks(entries, n);
    if ha.nrows() > 0 && cfg.w2 > T::zero() {
        let hat = ha.transpose();
        h += &hat * &ha * cfg.w2;
        q -= hat * ra * (two * cfg.w2);
    }
    // remove rounding asymmetry
    let h = (&h + h.transpose()) * T::lit(0.5);

    let stack = |v: &DVector<T>| DVector::from_fn(nz, |k, _| v[k % n]);
    Ok(QpProblem {
        h,
        q,
        lo: stack(lo),
        hi: stack(hi),
    })
}

/// Terms of the window objective that do not depend on the decision
/// variables.
pub fn objective_constant<T: Real>(entries: &[HorizonEntry<T>], x_bar: &DVector<T>, cfg: &MheConfig<T>) -> T {
    let n = x_bar.len();
    let (_, rc) = measurement_blocks(entries, n);
    let (_, ra) = process_blocks(entries, n);
    cfg.mu * x_bar.norm_squared() + cfg.w1 * rc.norm_squared() + cfg.w2 * ra.norm_squared()
}

/// The window objective evaluated term by term for the stacked states `z`.
pub fn objective_direct<T: Real>(
    entries: &[HorizonEntry<T>],
    x_bar: &DVector<T>,
    cfg: &MheConfig<T>,
    z: &DVector<T>,
) -> T {
    let n = x_bar.len();
    let block = |i: usize| z.rows(i * n, n).into_owned();
    let mut j = cfg.mu * (block(0) - x_bar).norm_squared();
    for (i, e) in entries.iter().enumerate() {
        if !e.y.is_empty() {
            j += cfg.w1 * (&e.y - (&e.c * block(i) + &e.c2)).norm_squared();
        }
        if i + 1 < entries.len() {
            let pred = &e.a * block(i) + &e.b * &e.u + &e.c1;
            j += cfg.w2 * (block(i + 1) - pred).norm_squared();
        }
    }
    j
}

/// Mean of the previous window.
pub fn operating_point<T: Real>(window: &[DVector<T>]) -> DVector<T> {
    let mut sum = DVector::zeros(window[0].len());
    for w in window {
        sum += w;
    }
    sum / T::lit(window.len() as f64)
}

/// Prior for the oldest window state: one nonlinear model step from the
/// estimate just before the window.
pub fn predict_arrival<T: Real, M: StateSpaceModel<T>>(
    model: &M,
    x_prev: &DVector<T>,
    u_prev: &DVector<T>,
) -> Result<DVector<T>, ModelError> {
    model.propagate(x_prev, u_prev)
}

/// Per-step diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct MheStep<T> {
    pub estimate: DVector<T>,
    pub qp_converged: bool,
    pub qp_iterations: usize,
    pub kkt_residual: T,
    pub branch_tie: bool,
    pub window_len: usize,
}

/// Running MHE estimator.
#[derive(Debug, Clone)]
pub struct MheSession<T: Real, M> {
    model: M,
    cfg: MheConfig<T>,
    scale: DVector<T>,
    lo_s: DVector<T>,
    hi_s: DVector<T>,
    x_init: DVector<T>,
    entries: VecDeque<HorizonEntry<T>>,
    /// Previous window solution, scaled, oldest first.
    window: Vec<DVector<T>>,
    /// `(estimate, input)` for the most recent steps, physical units.
    past: VecDeque<(DVector<T>, DVector<T>)>,
    t: usize,
}

impl<T: Real, M: StateSpaceModel<T>> MheSession<T, M> {
    /// Starts at time 0 with the guess `x0` and the input `u0` applied at
    /// time 0. The time-0 entry carries no measurement.
    pub fn new(model: M, cfg: MheConfig<T>, x0: &DVector<T>, u0: &DVector<T>) -> Result<Self, MheError> {
        cfg.validate()?;
        let n = model.state_dim();
        if x0.len() != n {
            return Err(MheError::Model(ModelError::Dimension {
                what: "initial state",
                got: x0.len(),
                expected: n,
            }));
        }
        let scale = model.state_scale();
        let (lo, hi) = model.bounds();
        let lo_s = lo.component_div(&scale);
        let hi_s = hi.component_div(&scale);
        let x0 = model.project(x0);
        let mut s = Self {
            model,
            cfg,
            scale,
            lo_s,
            hi_s,
            x_init: x0.clone(),
            entries: VecDeque::new(),
            window: Vec::new(),
            past: VecDeque::new(),
            t: 0,
        };
        let entry = s.make_entry(&x0, u0, DVector::zeros(0), Selector::empty());
        s.entries.push_back(entry);
        s.window.push(x0.component_div(&s.scale));
        s.past.push_back((x0, u0.clone()));
        Ok(s)
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn config(&self) -> &MheConfig<T> {
        &self.cfg
    }

    /// Number of measurement steps processed so far.
    pub fn time(&self) -> usize {
        self.t
    }

    pub fn entries(&self) -> &VecDeque<HorizonEntry<T>> {
        &self.entries
    }

    /// Latest window solution in physical units, oldest first.
    pub fn window(&self) -> Vec<DVector<T>> {
        self.window.iter().map(|w| w.component_mul(&self.scale)).collect()
    }

    fn make_entry(&self, x_o: &DVector<T>, u: &DVector<T>, y: DVector<T>, selector: Selector) -> HorizonEntry<T> {
        let lin = self.model.linearize_process(x_o, u);
        let meas = self.model.linearize_measurement(x_o, &selector);
        let s = &self.scale;
        let n = s.len();
        // A_s = S^-1 A S, B_s = S^-1 B, c1_s = S^-1 c1, C_s = C S
        let a = DMatrix::from_fn(n, n, |r, c| lin.a_tilde[(r, c)] * s[c] / s[r]);
        let b = DMatrix::from_fn(n, lin.b.ncols(), |r, c| lin.b[(r, c)] / s[r]);
        let c1 = lin.c1.component_div(s);
        let cm = DMatrix::from_fn(meas.c_tilde.nrows(), n, |r, c| meas.c_tilde[(r, c)] * s[c]);
        HorizonEntry {
            u: u.clone(),
            y,
            selector,
            a,
            b,
            c1,
            c: cm,
            c2: meas.c2,
            branch_tie: lin.branch_tie,
        }
    }

    /// Processes the measurement `y` taken at the next time step with the
    /// given selector; `u` is the input applied at that step.
    pub fn step(&mut self, u: &DVector<T>, y: &DVector<T>, selector: &Selector) -> Result<MheStep<T>, MheError> {
        if y.len() != selector.n_rows() {
            return Err(MheError::Assembly {
                entry: self.entries.len(),
                block: "y",
                got: y.len().to_string(),
                expected: selector.n_rows().to_string(),
            });
        }
        self.t += 1;
        let horizon = self.cfg.horizon;

        let x_o = self.model.project(&operating_point(&self.window).component_mul(&self.scale));
        let entry = self.make_entry(&x_o, u, y.clone(), selector.clone());
        let tie = entry.branch_tie;
        self.entries.push_back(entry);
        while self.entries.len() > horizon + 1 {
            self.entries.pop_front();
        }

        let x_bar = if self.t <= horizon {
            self.x_init.clone()
        } else {
            let (x_prev, u_prev) = self.past.front().expect("history kept");
            predict_arrival(&self.model, x_prev, u_prev)?
        };
        let x_bar_s = x_bar.component_div(&self.scale);

        let entries: Vec<HorizonEntry<T>> = self.entries.iter().cloned().collect();
        let problem = assemble_qp(&entries, &x_bar_s, &self.lo_s, &self.hi_s, &self.cfg)?;

        // warm start: previous window shifted to the new time indices
        let n = self.scale.len();
        let l = entries.len();
        let mut warm = DVector::zeros(n * l);
        let shift = self.window.len() + 1 - l;
        for i in 0..l {
            let src = (i + shift).min(self.window.len() - 1);
            warm.rows_mut(i * n, n).copy_from(&self.window[src]);
        }
        let sol = solve_box_qp(&problem, &self.cfg.qp, Some(&warm));

        self.window = (0..l).map(|i| sol.z.rows(i * n, n).into_owned()).collect();
        let estimate = self.model.project(&self.window[l - 1].component_mul(&self.scale));

        self.past.push_back((estimate.clone(), u.clone()));
        while self.past.len() > horizon + 1 {
            self.past.pop_front();
        }

        Ok(MheStep {
            estimate,
            qp_converged: sol.converged,
            qp_iterations: sol.iterations,
            kkt_residual: sol.kkt_residual,
            branch_tie: tie,
            window_len: l,
        })
    }
}

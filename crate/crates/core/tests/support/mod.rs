//! Independent reference computations shared by the integration suites.

#![allow(dead_code)]

use arz_core::linearize::fd_step;
use arz_core::mhe::{HorizonEntry, MheConfig, QpProblem};
use arz_core::model::{ArzModel, Inputs};
use arz_core::sensing::Selector;
use arz_core::{LinearTwin, MheSession, StateSpaceModel};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Random state with `0 <= rho <= rho_m` and speed in `[0, v_f]`.
pub fn random_state<R: Rng>(model: &ArzModel<f64>, rng: &mut R, rho_hi: f64) -> DVector<f64> {
    let p = model.params();
    let n = model.n_segments();
    let mut x = DVector::zeros(2 * n);
    for s in 0..n {
        let rho = rng.random_range(0.5..rho_hi);
        let v = rng.random_range(0.0..1.0) * p.v_free;
        x[2 * s] = rho;
        x[2 * s + 1] = (rho * (v + p.pressure(rho).unwrap())).min(p.psi_max());
    }
    x
}

pub fn random_highway_inputs<R: Rng>(model: &ArzModel<f64>, rng: &mut R) -> DVector<f64> {
    let p = model.params();
    Inputs {
        demand_in: rng.random_range(500.0..8000.0),
        w_in: rng.random_range(0.5..1.0) * p.v_free,
        rho_out: rng.random_range(5.0..150.0),
        on_ramps: vec![(rng.random_range(100.0..1500.0), rng.random_range(0.5..1.0) * p.v_free)],
        off_ramps: vec![rng.random_range(5.0..150.0), rng.random_range(5.0..150.0)],
    }
    .to_vector()
}

/// Central difference of the flux difference along state component `j`.
fn central(model: &ArzModel<f64>, x: &DVector<f64>, u: &DVector<f64>, j: usize, h: f64) -> DVector<f64> {
    let mut xp = x.clone();
    xp[j] += h;
    let fp = model.flux_difference(&xp, u);
    xp[j] = x[j] - h;
    let fm = model.flux_difference(&xp, u);
    (fp - fm) / (2.0 * h)
}

/// No branch point of the flux switches anywhere in `x +- 4 h e_j`.
fn smooth_around(model: &ArzModel<f64>, x: &DVector<f64>, u: &DVector<f64>, j: usize, h: f64) -> bool {
    let base = model.min_records(x.as_slice(), u.as_slice());
    [-4.0, -2.0, -1.0, 1.0, 2.0, 4.0].iter().all(|&m| {
        let mut xp = x.clone();
        xp[j] += m * h;
        let recs = model.min_records(xp.as_slice(), u.as_slice());
        recs.len() == base.len() && recs.iter().zip(&base).all(|(a, b)| a.argmin == b.argmin)
    })
}

/// Richardson ratios `|D(h) - D(h/2)| / |D(2h) - D(h)|` of the central
/// difference for every state column whose stencil stays on one branch
/// and whose truncation error stands clear of rounding.
pub fn richardson_ratios(model: &ArzModel<f64>, x: &DVector<f64>, u: &DVector<f64>, h_mult: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for j in 0..x.len() {
        let h = fd_step(x[j]) * h_mult;
        if x[j] - 2.0 * h < 0.0 || !smooth_around(model, x, u, j, h) {
            continue;
        }
        let d2 = central(model, x, u, j, 2.0 * h);
        let d1 = central(model, x, u, j, h);
        let dh = central(model, x, u, j, 0.5 * h);
        let coarse = (&d2 - &d1).norm();
        let fine = (&d1 - &dh).norm();
        let f_scale = model.flux_difference(x, u).norm().max(1.0);
        if coarse < 1e-9 * f_scale / h {
            continue;
        }
        out.push(fine / coarse);
    }
    out
}

/// Enumerates every lower/upper/free assignment and keeps the feasible
/// stationary point of least objective.
pub fn brute_force_box_qp(p: &QpProblem<f64>) -> DVector<f64> {
    let n = p.dim();
    assert!(n <= 8, "enumeration is exponential");
    let mut best: Option<(f64, DVector<f64>)> = None;
    let total = 3usize.pow(n as u32);
    for code in 0..total {
        let mut z = DVector::zeros(n);
        let mut free = Vec::new();
        let mut c = code;
        for k in 0..n {
            match c % 3 {
                0 => z[k] = p.lo[k],
                1 => z[k] = p.hi[k],
                _ => free.push(k),
            }
            c /= 3;
        }
        if !free.is_empty() {
            // free entries are still zero, so g_f = q_f + 2 H_fb z_b
            let m = free.len();
            let hff = DMatrix::from_fn(m, m, |r, c| 2.0 * p.h[(free[r], free[c])]);
            let g = p.gradient(&z);
            let rhs = DVector::from_fn(m, |r, _| -g[free[r]]);
            let Some(zf) = hff.lu().solve(&rhs) else { continue };
            for (r, &k) in free.iter().enumerate() {
                z[k] = zf[r];
            }
        }
        if (0..n).any(|k| z[k] < p.lo[k] - 1e-12 || z[k] > p.hi[k] + 1e-12) {
            continue;
        }
        let f = p.objective(&z);
        if best.as_ref().is_none_or(|(b, _)| f < *b) {
            best = Some((f, z));
        }
    }
    best.expect("some vertex is feasible").1
}

/// Random convex box QP of dimension `n`.
pub fn random_qp<R: Rng>(rng: &mut R, n: usize) -> QpProblem<f64> {
    let m = DMatrix::from_fn(n + 2, n, |_, _| rng.random_range(-1.0..1.0));
    let h = m.transpose() * m + DMatrix::identity(n, n) * 1e-2;
    let q = DVector::from_fn(n, |_, _| rng.random_range(-4.0..4.0));
    let lo = DVector::from_fn(n, |_, _| rng.random_range(-1.0..0.0));
    let hi = DVector::from_fn(n, |k, _| lo[k] + rng.random_range(0.2..1.5));
    QpProblem { h, q, lo, hi }
}

/// Window of `len` entries built from the ARZ linearization at random states,
/// in scaled coordinates, with random selectors and measurements.
pub fn random_window<R: Rng>(model: &ArzModel<f64>, rng: &mut R, len: usize) -> (Vec<HorizonEntry<f64>>, DVector<f64>) {
    let scale = model.state_scale();
    let n = scale.len();
    let mut entries = Vec::with_capacity(len);
    for _ in 0..len {
        let x0 = random_state(model, rng, 200.0);
        let u = random_highway_inputs(model, rng);
        let ids: Vec<usize> = (1..=model.n_segments()).filter(|_| rng.random_bool(0.4)).collect();
        let sel = Selector::new(&ids, model.n_segments()).unwrap();
        let lin = model.linearize_process(&x0, &u);
        let meas = StateSpaceModel::linearize_measurement(model, &x0, &sel);
        let y = DVector::from_fn(sel.n_rows(), |_, _| rng.random_range(0.0..100.0));
        entries.push(HorizonEntry {
            a: DMatrix::from_fn(n, n, |r, c| lin.a_tilde[(r, c)] * scale[c] / scale[r]),
            b: DMatrix::from_fn(n, lin.b.ncols(), |r, c| lin.b[(r, c)] / scale[r]),
            c1: lin.c1.component_div(&scale),
            c: DMatrix::from_fn(meas.c_tilde.nrows(), n, |r, c| meas.c_tilde[(r, c)] * scale[c]),
            c2: meas.c2,
            u,
            y,
            selector: sel,
            branch_tie: lin.branch_tie,
        });
    }
    let x_bar = random_state(model, rng, 200.0).component_div(&scale);
    (entries, x_bar)
}

/// Runs MHE against the frozen linearization of the highway with noiseless
/// full-state measurements; returns the truth and the estimates for steps
/// `1..=steps`. The initial guess is off by `offset` veh/km in density.
pub fn linear_twin_run(
    cfg: MheConfig<f64>,
    steps: usize,
    offset: f64,
) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let model = ArzModel::<f64>::highway();
    let x_eq = model.uniform_equilibrium(40.0);
    let p = model.params();
    let u0 = Inputs {
        demand_in: 40.0 * p.equilibrium_speed(40.0).unwrap(),
        w_in: p.v_free,
        rho_out: 40.0,
        on_ramps: vec![(300.0, p.v_free)],
        off_ramps: vec![40.0, 40.0],
    }
    .to_vector();
    let twin = LinearTwin::from_arz(&model, &x_eq, &u0);
    let sel = Selector::all(model.n_segments());
    let mut guess = x_eq.clone();
    for s in 0..model.n_segments() {
        guess[2 * s] += offset;
    }
    let mut mhe = MheSession::new(twin.clone(), cfg, &guess, &u0).unwrap();
    let mut x = x_eq.clone();
    let mut truth = Vec::with_capacity(steps);
    let mut est = Vec::with_capacity(steps);
    // slowly varying demand keeps the trajectory moving
    let input = |k: usize| {
        let mut u = u0.clone();
        u[0] *= 1.0 + 0.1 * (k as f64 * 0.05).sin();
        u
    };
    for k in 1..=steps {
        x = twin.propagate(&x, &input(k - 1)).unwrap();
        let y = sel.apply(&twin.measure(&x));
        let out = mhe.step(&input(k), &y, &sel).unwrap();
        truth.push(x.clone());
        est.push(out.estimate);
    }
    (truth, est)
}

/// Density and speed RMSE by explicit loops over steps and segments.
pub fn two_loop_rmse(pressure: impl Fn(f64) -> f64, truth: &[DVector<f64>], est: &[DVector<f64>]) -> (f64, f64) {
    let speed = |rho: f64, psi: f64| {
        let r = rho.max(arz_core::model::RHO_FLOOR);
        psi / r - pressure(r)
    };
    let mut sr = 0.0;
    let mut sv = 0.0;
    let mut count = 0.0;
    for k in 0..truth.len() {
        for s in 0..truth[k].len() / 2 {
            let er = truth[k][2 * s] - est[k][2 * s];
            let ev = speed(truth[k][2 * s], truth[k][2 * s + 1]) - speed(est[k][2 * s], est[k][2 * s + 1]);
            sr += er * er;
            sv += ev * ev;
            count += 1.0;
        }
    }
    ((sr / count).sqrt(), (sv / count).sqrt())
}

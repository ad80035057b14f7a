mod support;

use arz_core::estimators::min_eigenvalue;
use arz_core::mhe::{assemble_qp, objective_constant, objective_direct, solve_box_qp, QpSettings};
use arz_core::sensing::Selector;
use arz_core::{ArzModel, LinearTwin, MheConfig, MheSession, StateSpaceModel};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_cfg<R: Rng>(rng: &mut R, horizon: usize) -> MheConfig<f64> {
    MheConfig {
        horizon,
        mu: rng.random_range(0.1..10.0),
        w1: rng.random_range(0.1..10.0),
        w2: rng.random_range(0.1..10.0),
        ..MheConfig::default()
    }
}

#[test]
fn quadratic_form_reproduces_window_objective() {
    let model = ArzModel::<f64>::highway();
    let (lo, hi) = model.bounds();
    let scale = model.state_scale();
    let (lo, hi) = (lo.component_div(&scale), hi.component_div(&scale));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for horizon in 1..=6 {
        for _ in 0..20 {
            let (entries, x_bar) = support::random_window(&model, &mut rng, horizon + 1);
            let cfg = random_cfg(&mut rng, horizon);
            let qp = assemble_qp(&entries, &x_bar, &lo, &hi, &cfg).unwrap();
            let c0 = objective_constant(&entries, &x_bar, &cfg);
            for _ in 0..3 {
                let z = DVector::from_fn(qp.dim(), |k, _| rng.random_range(lo[k % 24]..hi[k % 24]));
                let direct = objective_direct(&entries, &x_bar, &cfg, &z);
                let quad = qp.objective(&z) + c0;
                let err = (direct - quad).abs() / direct.abs().max(1.0);
                assert!(err < 1e-8, "horizon {horizon}: relative gap {err}");
            }
            assert!(min_eigenvalue(&qp.h) > 0.0, "Hessian not positive definite");
            let asym = (&qp.h - qp.h.transpose()).amax();
            assert!(asym == 0.0);
        }
    }
}

#[test]
fn solver_meets_optimality_on_window_problems() {
    let model = ArzModel::<f64>::highway();
    let (lo, hi) = model.bounds();
    let scale = model.state_scale();
    let (lo, hi) = (lo.component_div(&scale), hi.component_div(&scale));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut converged = 0;
    for horizon in 1..=6 {
        for _ in 0..5 {
            let (entries, x_bar) = support::random_window(&model, &mut rng, horizon + 1);
            let cfg = random_cfg(&mut rng, horizon);
            let qp = assemble_qp(&entries, &x_bar, &lo, &hi, &cfg).unwrap();
            let sol = solve_box_qp(&qp, &QpSettings::default(), None);
            if sol.converged {
                converged += 1;
                assert!(sol.kkt_residual < 1e-8, "kkt {}", sol.kkt_residual);
                assert!(qp.kkt_residual(&sol.z) < 1e-8);
            }
            for k in 0..qp.dim() {
                assert!(sol.z[k] >= qp.lo[k] && sol.z[k] <= qp.hi[k]);
            }
        }
    }
    assert!(converged >= 27, "{converged} of 30 converged");
}

#[test]
fn solver_matches_enumeration_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for n in 1..=6 {
        for _ in 0..25 {
            let qp = support::random_qp(&mut rng, n);
            let sol = solve_box_qp(&qp, &QpSettings::default(), None);
            assert!(sol.converged);
            let oracle = support::brute_force_box_qp(&qp);
            let err = (&sol.z - &oracle).amax();
            assert!(err < 1e-6, "n {n}: distance to oracle {err}");
        }
    }
}

#[test]
fn warm_start_reaches_same_minimizer() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let qp = support::random_qp(&mut rng, 6);
    let cold = solve_box_qp(&qp, &QpSettings::default(), None);
    let warm = solve_box_qp(&qp, &QpSettings::default(), Some(&qp.hi));
    assert!((cold.z - warm.z).amax() < 1e-7);
}

#[test]
fn exact_linear_model_is_recovered() {
    for horizon in [1, 4, 6] {
        let cfg = MheConfig {
            horizon,
            ..MheConfig::default()
        };
        let (truth, est) = support::linear_twin_run(cfg, 40, 0.0);
        for k in horizon..truth.len() {
            let err = (&est[k] - &truth[k]).amax();
            assert!(err < 1e-6, "horizon {horizon}, step {}: {err}", k + 1);
        }
    }
}

#[test]
fn wrong_initial_guess_is_forgotten() {
    let cfg = MheConfig::default();
    let (truth, est) = support::linear_twin_run(cfg, 60, 8.0);
    let first = (&est[0] - &truth[0]).amax();
    let last = (&est[59] - &truth[59]).amax();
    assert!(first > 1e-3);
    assert!(last < 1e-6, "error after 60 steps {last}");
}

#[test]
fn zero_horizon_follows_arrival_prior() {
    let model = ArzModel::<f64>::highway();
    let x0 = model.uniform_equilibrium(40.0);
    let u = DVector::from_vec(vec![3000.0, 102.0, 40.0, 300.0, 102.0, 40.0, 40.0]);
    let twin = LinearTwin::from_arz(&model, &x0, &u);
    let cfg = MheConfig {
        horizon: 0,
        w1: 0.0,
        ..MheConfig::default()
    };
    let guess = model.uniform_equilibrium(50.0);
    let mut mhe = MheSession::new(twin.clone(), cfg, &guess, &u).unwrap();
    let sel = Selector::all(12);
    let y = sel.apply(&twin.measure(&x0));
    let mut prev = guess.clone();
    for k in 1..=5 {
        let out = mhe.step(&u, &y, &sel).unwrap();
        assert_eq!(out.window_len, 1);
        let expected = twin.project(&twin.propagate(&prev, &u).unwrap());
        assert!((&out.estimate - &expected).amax() < 1e-6, "step {k}");
        prev = out.estimate;
    }
}

#[test]
fn window_grows_to_horizon_plus_one() {
    let model = ArzModel::<f64>::highway();
    let x0 = model.uniform_equilibrium(40.0);
    let u = DVector::from_vec(vec![3000.0, 102.0, 40.0, 300.0, 102.0, 40.0, 40.0]);
    let cfg = MheConfig {
        horizon: 3,
        ..MheConfig::default()
    };
    let mut mhe = MheSession::new(model.clone(), cfg, &x0, &u).unwrap();
    let sel = Selector::new(&[9, 10, 11, 12], 12).unwrap();
    let y = sel.apply(&model.measure_h(&x0));
    let lens: Vec<usize> = (0..6).map(|_| mhe.step(&u, &y, &sel).unwrap().window_len).collect();
    assert_eq!(lens, vec![2, 3, 4, 4, 4, 4]);
    assert_eq!(mhe.entries().len(), 4);
}

#[test]
fn mismatched_measurement_is_rejected() {
    let model = ArzModel::<f64>::highway();
    let x0 = model.uniform_equilibrium(40.0);
    let u = DVector::from_vec(vec![3000.0, 102.0, 40.0, 300.0, 102.0, 40.0, 40.0]);
    let mut mhe = MheSession::new(model, MheConfig::default(), &x0, &u).unwrap();
    let sel = Selector::new(&[1], 12).unwrap();
    assert!(mhe.step(&u, &DVector::zeros(3), &sel).is_err());
}

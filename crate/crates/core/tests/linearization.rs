mod support;

use arz_core::linearize::{linearize_measurement, linearize_model, measurement_jacobian};
use arz_core::scenario::{generate_truth, Scenario};
use arz_core::sensing::Selector;
use arz_core::ArzModel;
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

/// Operating points taken from the jammed highway run plus random states.
fn operating_points() -> Vec<(DVector<f64>, DVector<f64>)> {
    let sc = Scenario::<f64>::highway();
    let truth = generate_truth(&sc).unwrap();
    let mut pts: Vec<_> = [0, 50, 150, 250, 350, 499]
        .iter()
        .map(|&k| (truth.states[k].clone(), sc.inputs.at(k).clone()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        pts.push((
            support::random_state(&sc.model, &mut rng, 300.0),
            support::random_highway_inputs(&sc.model, &mut rng),
        ));
    }
    pts
}

#[test]
fn affine_model_is_exact_at_operating_point() {
    let m = ArzModel::<f64>::highway();
    for (x0, u0) in operating_points() {
        let lin = linearize_model(&m, &x0, &u0);
        let step = m.step_unclamped(&x0, &u0);
        let err = rel(&lin.predict(&x0, &u0), &step);
        assert!(err < 1e-9, "process residual {err}");

        let meas = linearize_measurement(&m, &x0, &Selector::all(12));
        let err = rel(&meas.predict(&x0), &m.measure_h(&x0));
        assert!(err < 1e-9, "measurement residual {err}");
    }
}

#[test]
fn restricted_measurement_offsets_match_rows() {
    let m = ArzModel::<f64>::highway();
    let (x0, _) = operating_points().swap_remove(3);
    let sel = Selector::new(&[2, 9, 12], 12).unwrap();
    let meas = linearize_measurement(&m, &x0, &sel);
    assert_eq!(meas.c_tilde.shape(), (6, 24));
    let err = rel(&meas.predict(&x0), &sel.apply(&m.measure_h(&x0)));
    assert!(err < 1e-9);
}

#[test]
fn finite_differences_converge_at_second_order() {
    let m = ArzModel::<f64>::highway();
    let mut ratios = Vec::new();
    for (x0, u0) in operating_points() {
        ratios.extend(support::richardson_ratios(&m, &x0, &u0, 1.0));
    }
    assert!(ratios.len() >= 30, "only {} usable columns", ratios.len());
    let bad: Vec<_> = ratios.iter().filter(|r| !(0.15..=0.45).contains(*r)).collect();
    assert!(bad.is_empty(), "{} of {} ratios outside range: {:?}", bad.len(), ratios.len(), &bad[..bad.len().min(10)]);
}

#[test]
fn analytic_measurement_jacobian_matches_differences() {
    let m = ArzModel::<f64>::highway();
    for (x0, _) in operating_points() {
        let jac = measurement_jacobian(&m, &x0);
        for j in 0..24 {
            let h = 1e-5 * x0[j].abs().max(1.0);
            let mut xp = x0.clone();
            xp[j] += h;
            let fp = m.measure_h(&xp);
            xp[j] = x0[j] - h;
            let fm = m.measure_h(&xp);
            let fd = (fp - fm) / (2.0 * h);
            let err = (jac.column(j) - &fd).amax() / fd.amax().max(1.0);
            assert!(err < 1e-6, "column {j}: {err}");
        }
    }
}

#[test]
fn tie_flag_raised_on_switching_point() {
    let m = ArzModel::<f64>::highway();
    let p = *m.params();
    // upstream demand equals downstream supply exactly at critical density
    let x = m.uniform_equilibrium(p.sigma_crit(p.v_free).unwrap());
    let u = DVector::from_vec(vec![p.capacity(p.v_free), p.v_free, 40.0, 500.0, p.v_free, 40.0, 40.0]);
    assert!(linearize_model(&m, &x, &u).branch_tie);
}

use arz_core::model::{flux_diverge, flux_merge, flux_one_to_one, ArzModel, Inputs, ModelParams, Topology};
use nalgebra::DVector;
use proptest::prelude::*;

fn hw() -> ModelParams<f64> {
    ModelParams::highway()
}

/// Segment state with speed in `[0, v_f]`.
fn consistent_cell(p: ModelParams<f64>) -> impl Strategy<Value = (f64, f64)> {
    (0.0..p.rho_max, 0.0..1.0f64).prop_map(move |(rho, frac)| {
        let w = p.pressure(rho).unwrap() + frac * p.v_free;
        (rho, (rho * w).min(p.psi_max()))
    })
}

fn highway_state() -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(consistent_cell(hw()), 12).prop_map(|cells| {
        DVector::from_iterator(24, cells.into_iter().flat_map(|(r, s)| [r, s]))
    })
}

fn highway_inputs() -> impl Strategy<Value = DVector<f64>> {
    let p = hw();
    (
        0.0..12000.0f64,
        0.2..1.0f64,
        0.0..p.rho_max,
        0.0..2000.0f64,
        0.2..1.0f64,
        0.0..p.rho_max,
        0.0..p.rho_max,
    )
        .prop_map(move |(d, wi, ro, dr, wr, o1, o2)| {
            Inputs {
                demand_in: d,
                w_in: wi * p.v_free,
                rho_out: ro,
                on_ramps: vec![(dr, wr * p.v_free)],
                off_ramps: vec![o1, o2],
            }
            .to_vector()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn vehicles_are_conserved(x in highway_state(), u in highway_inputs()) {
        let m = ArzModel::<f64>::highway();
        let p = *m.params();
        let out = m.step_detailed(&x, &u, None).unwrap();
        prop_assume!(out.clamped == 0);
        let before: f64 = (0..12).map(|s| x[2 * s]).sum();
        let after: f64 = (0..12).map(|s| out.state[2 * s]).sum();
        let resid = (p.cell_len * (after - before) - p.dt * out.boundary.net_inflow()).abs();
        prop_assert!(resid < 1e-9 * (p.cell_len * after).max(1.0), "residual {resid}");
    }

    #[test]
    fn densities_stay_nonnegative(x in highway_state(), u in highway_inputs()) {
        let m = ArzModel::<f64>::highway();
        let raw = m.step_unclamped(&x, &u);
        for s in 0..12 {
            prop_assert!(raw[2 * s] >= -1e-9, "segment {} density {}", s + 1, raw[2 * s]);
        }
        let y = m.step(&x, &u).unwrap();
        let (lo, hi) = m.bounds();
        for k in 0..24 {
            prop_assert!(y[k] >= lo[k] && y[k] <= hi[k]);
        }
    }

    #[test]
    fn merge_and_diverge_identities(
        a in consistent_cell(hw()),
        b in consistent_cell(hw()),
        c in consistent_cell(hw()),
        alpha in 0.0..1.0f64,
    ) {
        let p = hw();
        let m = flux_merge(&p, a, b, c);
        prop_assert!((m.q_down - (m.q_main + m.q_ramp)).abs() <= 1e-12 * m.q_down.abs().max(1.0));
        prop_assert!((m.phi_down - (m.phi_main + m.phi_ramp)).abs() <= 1e-12 * m.phi_down.abs().max(1.0));
        prop_assert!(m.q_main >= 0.0 && m.q_ramp >= 0.0);

        let d = flux_diverge(&p, a, b, c, alpha);
        prop_assert!((d.q_up - (d.q_down + d.q_off)).abs() <= 1e-12 * d.q_up.abs().max(1.0));
        prop_assert!((d.q_off - alpha * d.q_up).abs() <= 1e-12 * d.q_up.abs().max(1.0));
        prop_assert!((d.phi_up - (d.phi_down + d.phi_off)).abs() <= 1e-12 * d.phi_up.abs().max(1.0));
    }

    #[test]
    fn one_to_one_respects_demand_and_supply(a in consistent_cell(hw()), b in consistent_cell(hw())) {
        let p = hw();
        let (q, phi) = flux_one_to_one(&p, a, b);
        let w = p.driver_characteristic(a.0, a.1);
        prop_assert!(q >= 0.0);
        prop_assert!(q <= p.demand(a.0, w) + 1e-9);
        prop_assert!(q <= p.supply(b.0, w) + 1e-9);
        prop_assert!((phi - q * w).abs() <= 1e-9 * phi.abs().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn demand_and_supply_continuous_at_critical_density(
        v_f in 40.0..160.0f64,
        rho_m in 80.0..600.0f64,
        gamma in 1.05..4.0f64,
        w_frac in 0.05..2.0f64,
    ) {
        let p = ModelParams::new(v_f, rho_m, 20.0, gamma, 1.0 / 3600.0, v_f / 3600.0 * 1.25).unwrap();
        let w = w_frac * v_f;
        let sigma = p.sigma_crit(w).unwrap();
        let d = 1e-7 * sigma;
        let scale = p.demand(sigma, w).abs().max(1.0);
        prop_assert!((p.demand(sigma - d, w) - p.demand(sigma + d, w)).abs() < 1e-9 * scale);
        prop_assert!((p.supply(sigma - d, w) - p.supply(sigma + d, w)).abs() < 1e-9 * scale);
        prop_assert!((p.demand(sigma, w) - p.supply(sigma, w)).abs() < 1e-9 * scale);
    }
}

#[test]
fn uniform_equilibrium_is_fixed_point() {
    let p = hw();
    let m = ArzModel::new(p, Topology::new(6, vec![], vec![]).unwrap()).unwrap();
    for rho in [5.0, 30.0, 80.0, 150.0] {
        let x = m.uniform_equilibrium(rho);
        let u = Inputs {
            demand_in: rho * p.equilibrium_speed(rho).unwrap(),
            w_in: p.v_free,
            rho_out: rho,
            on_ramps: vec![],
            off_ramps: vec![],
        }
        .to_vector();
        let y = m.step(&x, &u).unwrap();
        let err = (&y - &x).amax() / x.amax();
        assert!(err < 1e-9, "rho {rho}: relative change {err}");
    }
}

#[test]
fn jammed_highway_run_conserves_vehicles() {
    use arz_core::scenario::{generate_truth, Scenario};
    let sc = Scenario::<f64>::highway();
    let truth = generate_truth(&sc).unwrap();
    assert_eq!(truth.clamped, 0);
    assert!(truth.conservation_residual < 1e-9, "{}", truth.conservation_residual);
}

#[test]
fn single_precision_step_tracks_double() {
    let m64 = ArzModel::<f64>::highway();
    let m32 = ArzModel::<f32>::highway();
    let x64 = m64.uniform_equilibrium(60.0);
    let x32 = m32.uniform_equilibrium(60.0);
    let u64v = DVector::from_vec(vec![6000.0, 102.0, 30.0, 800.0, 102.0, 10.0, 10.0]);
    let u32v = u64v.map(|v| v as f32);
    let y64 = m64.step(&x64, &u64v).unwrap();
    let y32 = m32.step(&x32, &u32v).unwrap();
    for k in 0..24 {
        assert!((y64[k] - y32[k] as f64).abs() <= 1e-4 * y64[k].abs().max(1.0));
    }
}

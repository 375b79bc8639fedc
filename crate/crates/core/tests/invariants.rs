use ecm_attack::{
    feedback_output_attack, simulate, synthesize_input_attack, synthetic_profile, AttackWeights, BatteryState,
    EcmParams, PlantConfig, ProfileKind, ReferenceShape, ReferenceTrajectory, TimeSeries,
};
use proptest::prelude::*;

fn coulomb_final(soc0: f64, current: &TimeSeries, q: f64) -> f64 {
    let sum: f64 = current.samples()[..current.len() - 1].iter().sum();
    soc0 - current.dt() / q * sum
}

fn assert_rel(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol * b.abs().max(f64::MIN_POSITIVE), "{a} vs {b}");
}

#[test]
fn attacked_runs_are_coulomb_exact() {
    let params = EcmParams::paper_cell();
    let u_nom = synthetic_profile(ProfileKind::PulseTrain, 10.0, 2.387, 1800.0, 1.0, 3).unwrap();
    let x0 = BatteryState::new(0.8, 0.0).unwrap();
    let reference = ReferenceTrajectory::over(&u_nom, 0.8, 0.2, ReferenceShape::LinearRamp).unwrap();
    let attack =
        synthesize_input_attack(&params, &AttackWeights::scenario_default(), &reference, &u_nom, x0, None).unwrap();
    let applied = u_nom.add(&attack.u_a).unwrap();
    assert_rel(attack.final_state().soc, coulomb_final(0.8, &applied, params.capacity_q), 1e-12);

    let plant = EcmParams::new(params.capacity_q, params.r0 * 1.2, params.r1, params.c1, params.ocv.clone()).unwrap();
    let result = feedback_output_attack(
        &params,
        &PlantConfig::new(plant, 0.0, 0).unwrap(),
        x0,
        &u_nom,
        &attack.u_a,
        -0.05,
    )
    .unwrap();
    assert_rel(result.final_soc_plant(), coulomb_final(0.8, &applied, params.capacity_q), 1e-12);
    assert_rel(result.final_soc_nominal(), coulomb_final(0.8, &u_nom, params.capacity_q), 1e-12);
}

#[test]
fn zero_weights_leave_everything_nominal() {
    let params = EcmParams::paper_cell();
    let u_nom = synthetic_profile(ProfileKind::SinMix, 8.0, 1.0, 900.0, 1.0, 9).unwrap();
    let x0 = BatteryState::new(0.6, 0.01).unwrap();
    let reference = ReferenceTrajectory::over(&u_nom, 0.6, 0.1, ReferenceShape::HoldTarget).unwrap();
    let w = AttackWeights::from_diagonals([0.0, 0.0], [0.0, 0.0], 1.0).unwrap();
    let attack = synthesize_input_attack(&params, &w, &reference, &u_nom, x0, None).unwrap();
    assert!(attack.u_a.samples().iter().all(|&u| u == 0.0 && u.is_sign_positive()));
    let nominal = simulate(&params, x0, &u_nom).unwrap();
    assert_eq!(attack.states, nominal.states);
    let result = feedback_output_attack(&params, &PlantConfig::perfect(&params), x0, &u_nom, &attack.u_a, 0.0).unwrap();
    assert_eq!(result.y_plant, result.y_nom);
    assert!(result.y_a.samples().iter().all(|&y| y == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn any_profile_is_coulomb_exact(
        samples in proptest::collection::vec(-20.0f64..20.0, 2..400),
        dt in 0.05f64..5.0,
        soc0 in 0.2f64..0.8,
    ) {
        let params = EcmParams::paper_cell();
        let current = TimeSeries::new(0.0, dt, samples).unwrap();
        let sim = simulate(&params, BatteryState::new(soc0, 0.0).unwrap(), &current).unwrap();
        let expect = coulomb_final(soc0, &current, params.capacity_q);
        prop_assert!((sim.final_state().soc - expect).abs() <= 1e-12 * expect.abs().max(1e-300));
    }

    #[test]
    fn perfect_model_masks_any_attack(seed in 0u64..1000, k_a in -0.9f64..0.9) {
        let params = EcmParams::paper_cell();
        let u_nom = synthetic_profile(ProfileKind::SinMix, 5.0, 1.0, 300.0, 1.0, seed).unwrap();
        let u_a = synthetic_profile(ProfileKind::PulseTrain, 3.0, 0.0, 300.0, 1.0, seed + 1).unwrap();
        let x0 = BatteryState::new(0.7, 0.0).unwrap();
        let r = feedback_output_attack(&params, &PlantConfig::perfect(&params), x0, &u_nom, &u_a, k_a).unwrap();
        let worst = r.y_measured.samples().iter().zip(r.y_nom.samples())
            .map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(worst <= 1e-9);
    }
}

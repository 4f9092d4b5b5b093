use gcf_core::diagnostics::{corrupt, ledger, run_checks, CheckContext};
use gcf_core::{CheckId, Obstacle, PenalizedFlow, PenaltyVariant, ScalarField, SphericalGrid, Trajectory};
use proptest::prelude::*;

fn contact_run() -> (Obstacle, Trajectory) {
    let g = SphericalGrid::circle(48).unwrap();
    let ob = Obstacle::homothetic(ScalarField::constant(g.clone(), 0.9), 5.0 / 9.0, 2.0).unwrap();
    let traj = PenalizedFlow::penalized(1.0, &ob, 0.05, PenaltyVariant::C11)
        .unwrap()
        .run(ScalarField::constant(g, 1.0), 1.0, 0.05)
        .unwrap();
    (ob, traj)
}

const CHECKS: [CheckId; 8] = [
    CheckId::PenaltyBounds,
    CheckId::GapPositive,
    CheckId::SpeedMonotone,
    CheckId::UNonincreasing,
    CheckId::GaussBounds,
    CheckId::SpeedBounds,
    CheckId::PrincipalBounds,
    CheckId::EulerFormula,
];

#[test]
fn checks_are_deterministic_and_pass_on_a_clean_run() {
    let (ob, traj) = contact_run();
    let l = ledger(traj.initial(), &ob, 1.0, 1.0).unwrap();
    let ctx = CheckContext { trajectory: &traj, obstacle: Some(&ob), ledger: Some(&l), residual_constant: None };
    let a = run_checks(&ctx, &CHECKS).unwrap();
    let b = run_checks(&ctx, &CHECKS).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    for r in &a {
        assert!(r.pass, "{r:?}");
    }
}

#[test]
fn corruptions_are_caught() {
    let (ob, traj) = contact_run();
    let l = ledger(traj.initial(), &ob, 1.0, 1.0).unwrap();
    let failing = |t: &Trajectory| -> Vec<String> {
        let ctx = CheckContext { trajectory: t, obstacle: Some(&ob), ledger: Some(&l), residual_constant: None };
        run_checks(&ctx, &CHECKS).unwrap().into_iter().filter(|r| !r.pass).map(|r| r.id).collect()
    };
    let mut t = traj.clone();
    corrupt::inject_penalty(&mut t, 2.0);
    assert!(failing(&t).contains(&"penalty_bounds".to_string()));
    let mut t = traj.clone();
    corrupt::reverse_time(&mut t);
    assert!(failing(&t).contains(&"u_nonincreasing".to_string()));
    let mut t = traj.clone();
    corrupt::flatten_last(&mut t, 10.0);
    assert!(!failing(&t).is_empty());
}

#[test]
fn missing_inputs_are_errors() {
    let (_, traj) = contact_run();
    let ctx = CheckContext { trajectory: &traj, obstacle: None, ledger: None, residual_constant: None };
    assert!(run_checks(&ctx, &[CheckId::GapPositive]).is_err());
    assert!(run_checks(&ctx, &[CheckId::EvolutionResidual]).is_err());
    assert!(run_checks(&ctx, &[CheckId::UNonincreasing]).unwrap()[0].pass);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ledger_constants_are_monotone_in_the_horizon(t1 in 0.05..5.0f64, dt in 0.0..5.0f64, alpha in 0.3..1.0f64) {
        let g = SphericalGrid::circle(32).unwrap();
        let ob = Obstacle::homothetic(ScalarField::constant(g.clone(), 0.8), 0.5, 1.0).unwrap();
        let u0 = ScalarField::constant(g, 1.0);
        let a = ledger(&u0, &ob, alpha, t1).unwrap();
        let b = ledger(&u0, &ob, alpha, t1 + dt).unwrap();
        // a longer horizon can only weaken the lower bound and strengthen χ
        prop_assert!(b.c_t <= a.c_t);
        prop_assert!(b.chi >= a.chi);
        prop_assert!(b.radius_bound() >= a.radius_bound());
        prop_assert_eq!(a.speed_bound, b.speed_bound);
        prop_assert_eq!(a.gauss_upper, b.gauss_upper);
    }
}

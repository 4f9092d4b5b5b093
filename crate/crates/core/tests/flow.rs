use gcf_core::diagnostics::{check_gauss_bounds, check_speed_bounds, check_u_nonincreasing, ledger};
use gcf_core::flow::sphere_radius;
use gcf_core::{Obstacle, PenalizedFlow, PenaltyVariant, ScalarField, SphericalGrid, Trajectory};
use proptest::prelude::*;

fn disc_contact(nodes: usize, delta: f64, t_end: f64) -> (Obstacle, Trajectory) {
    let g = SphericalGrid::circle(nodes).unwrap();
    let ob = Obstacle::homothetic(ScalarField::constant(g.clone(), 0.9), 5.0 / 9.0, 2.0).unwrap();
    let traj = PenalizedFlow::penalized(1.0, &ob, delta, PenaltyVariant::C11)
        .unwrap()
        .run(ScalarField::constant(g, 1.0), t_end, 0.05)
        .unwrap();
    (ob, traj)
}

fn spread(u: &ScalarField) -> f64 {
    u.max() - u.min()
}

#[test]
fn concentric_contact_stays_round_on_the_circle() {
    let (_, traj) = disc_contact(64, 0.05, 1.0);
    for s in &traj.snapshots {
        assert!(spread(&s.u) <= 1e-10, "t = {}: spread {}", s.t, spread(&s.u));
    }
}

#[test]
fn concentric_contact_stays_round_on_the_sphere() {
    let g = SphericalGrid::lat_lon(8, 16).unwrap();
    let ob = Obstacle::homothetic(ScalarField::constant(g.clone(), 0.8), 0.6, 1.0).unwrap();
    let traj = PenalizedFlow::penalized(0.5, &ob, 0.1, PenaltyVariant::Smooth)
        .unwrap()
        .run(ScalarField::constant(g, 1.0), 0.3, 0.05)
        .unwrap();
    for s in &traj.snapshots {
        assert!(spread(&s.u) <= 1e-10, "t = {}: spread {}", s.t, spread(&s.u));
    }
}

#[test]
fn penalty_is_silent_while_the_gap_exceeds_delta() {
    let delta = 0.05;
    let (_, traj) = disc_contact(32, delta, 2.0);
    let mut silent = 0;
    let mut active = 0;
    for r in traj.records.iter().skip(1) {
        if r.min_gap >= delta {
            assert_eq!(r.min_beta, 0.0, "t = {}", r.t);
            silent += 1;
        } else {
            active += 1;
        }
    }
    assert!(silent > 0 && active > 0, "{silent} silent, {active} active steps");
}

#[test]
fn a_priori_bounds_hold_along_a_contact_run() {
    let (ob, traj) = disc_contact(64, 0.025, 2.0);
    let l = ledger(traj.initial(), &ob, 1.0, 2.0).unwrap();
    let k = check_gauss_bounds(&traj, &l).unwrap();
    assert!(k.pass, "{k:?}");
    let s = check_speed_bounds(&traj, &ob, &l).unwrap();
    assert!(s.pass, "{s:?}");
    assert!(check_u_nonincreasing(&traj).pass);
    for r in &traj.records {
        assert!(r.min_beta >= -traj.penalty.unwrap().c0() * (1.0 + 1e-9));
        assert!(r.min_gap > 0.0);
    }
}

#[test]
fn final_state_rests_on_the_obstacle() {
    let (ob, traj) = disc_contact(32, 0.0125, 2.0);
    let (phi, _) = ob.evaluate(2.0).unwrap();
    let gap = traj.last().u.sup_distance(&phi).unwrap();
    assert!(gap < 0.0125, "gap {gap}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn free_circles_shrink_like_the_closed_form(r0 in 0.8..1.5f64, alpha in 0.4..1.0f64) {
        let g = SphericalGrid::circle(64).unwrap();
        let e = alpha + 1.0;
        let t_end = 0.5 * r0.powf(e) / e;
        let traj = PenalizedFlow::free(alpha).unwrap().run(ScalarField::constant(g, r0), t_end, t_end / 4.0).unwrap();
        for s in &traj.snapshots {
            let exact = sphere_radius(r0, 1, alpha, s.t);
            prop_assert!((s.u.values()[0] - exact).abs() < 2e-3, "t = {}: {} vs {exact}", s.t, s.u.values()[0]);
            prop_assert!(spread(&s.u) <= 1e-12);
        }
        prop_assert!(check_u_nonincreasing(&traj).pass);
    }

    #[test]
    fn perturbed_circles_never_grow(eps in 0.0..0.05f64, k in 2usize..4) {
        let g = SphericalGrid::circle(64).unwrap();
        let u0 = ScalarField::from_angles(g, |t, _| 1.0 + eps * (k as f64 * t).cos());
        let traj = PenalizedFlow::free(1.0).unwrap().run(u0, 0.2, 0.05).unwrap();
        prop_assert!(check_u_nonincreasing(&traj).pass);
    }
}

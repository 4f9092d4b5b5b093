use gcf_core::free_boundary::{
    coincidence_set, nondegeneracy_probe, rescale, speed_near_boundary, thickness, GraphPatch,
};
use proptest::prelude::*;

/// `φ_g = |x|²/2` with `v = (γ/2)(x₁ − c t)₊²`: a flat front moving at speed `c`.
fn moving_front(gamma: f64, c: f64, shift: f64, points: usize) -> GraphPatch {
    let times = vec![-0.5, -0.375, -0.25, -0.125, 0.0];
    GraphPatch::from_fns(
        2,
        1.0,
        points,
        times,
        move |x, t| shift + 0.5 * (x[0] * x[0] + x[1] * x[1]) - 0.5 * gamma * (x[0] - c * t).max(0.0).powi(2),
        move |x, _| shift + 0.5 * (x[0] * x[0] + x[1] * x[1]),
        0.5,
    )
    .unwrap()
}

fn quantize(x: f64) -> f64 {
    (x * 1048576.0).round() / 1048576.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn coincidence_and_margins_ignore_a_common_shift(gamma in 0.2..1.0f64, k in -64i32..64) {
        // dyadic samples keep φ_g − w exact under the shift
        let shift = k as f64 / 8.0;
        let build = |s: f64| {
            GraphPatch::from_fns(
                2,
                1.0,
                41,
                vec![-0.5, -0.25, 0.0],
                move |x, _| s + quantize(0.5 * (x[0] * x[0] + x[1] * x[1]) - 0.5 * gamma * x[0].max(0.0).powi(2)),
                move |x, _| s + quantize(0.5 * (x[0] * x[0] + x[1] * x[1])),
                0.5,
            )
            .unwrap()
        };
        let (a, b) = (build(0.0), build(shift));
        let (ra, rb) = (coincidence_set(&a, 1e-4).unwrap(), coincidence_set(&b, 1e-4).unwrap());
        prop_assert_eq!(&ra.mask, &rb.mask);
        prop_assert_eq!(&ra.boundary, &rb.boundary);
        let na = nondegeneracy_probe(&a, [0.0, 0.0], 0.0, &[0.2, 0.4]).unwrap();
        let nb = nondegeneracy_probe(&b, [0.0, 0.0], 0.0, &[0.2, 0.4]).unwrap();
        prop_assert_eq!(na.margins, nb.margins);
    }

    #[test]
    fn half_space_thickness_does_not_depend_on_the_radius(gamma in 0.2..1.0f64, r in 0.15..0.8f64) {
        let p = moving_front(gamma, 0.0, 0.0, 81);
        let rep = coincidence_set(&p, 1e-12).unwrap();
        let d = thickness(&p, &rep, [0.0, 0.0], 4, r).unwrap();
        // the lattice can lose at most one spacing on the curved side
        let h = p.spacing();
        prop_assert!(d >= 1.0 - h / r - 1e-9 && d <= 1.0 + 1e-9, "r = {r}: {d}");
    }

    #[test]
    fn speed_grows_away_from_a_moving_front(gamma in 0.3..1.0f64, c in 0.2..1.0f64) {
        let p = moving_front(gamma, c, 0.0, 61);
        let rep = coincidence_set(&p, 1e-6).unwrap();
        let s = speed_near_boundary(&p, &rep, &[6.0, 3.0, 1.0]);
        prop_assert!(s[0] > s[1] && s[1] > s[2], "{s:?}");
    }
}

#[test]
fn nested_rescalings_compose() {
    let p = GraphPatch::from_fns(
        2,
        1.0,
        81,
        vec![-0.5, -0.25, 0.0],
        |x, t| 0.5 * (x[0] * x[0] + x[1] * x[1]) - 0.2 * (x[0] * x[0] + 0.5 * x[1] * x[1]) + 0.1 * t,
        |x, _| 0.5 * (x[0] * x[0] + x[1] * x[1]),
        0.5,
    )
    .unwrap();
    let once = rescale(&p, [0.0, 0.0], 0.0, 0.25).unwrap();
    let twice = rescale(&rescale(&p, [0.0, 0.0], 0.0, 0.5).unwrap(), [0.0, 0.0], 0.0, 0.5).unwrap();
    assert_eq!(twice.rescalings().len(), 2);
    for c in (0..once.cell_count()).step_by(97) {
        let last = once.times().len() - 1;
        assert!((once.v(last)[c] - twice.v(twice.times().len() - 1)[c]).abs() < 1e-6);
    }
    assert_eq!(once.rescaled_threshold(1e-3), 1e-3 / 0.0625);
}

#[test]
fn nondegeneracy_fails_on_a_flattened_gap() {
    let p = moving_front(0.5, 0.0, 0.0, 81);
    let good = nondegeneracy_probe(&p, [0.0, 0.0], 0.0, &[0.2, 0.4]).unwrap();
    assert!(good.margins.iter().all(|m| *m > 0.0), "{:?}", good.margins);
    let capped = p.with_capped_gap(1e-4);
    let bad = nondegeneracy_probe(&capped, [0.0, 0.0], 0.0, &[0.2, 0.4]).unwrap();
    assert!(bad.margins.iter().any(|m| *m < 0.0), "{:?}", bad.margins);
}

#[test]
fn blowup_of_a_stationary_front_has_no_time_dependence() {
    let p = moving_front(0.5, 0.0, 0.0, 81);
    let twice = rescale(&rescale(&p, [0.0, 0.0], 0.0, 0.5).unwrap(), [0.0, 0.0], 0.0, 0.5).unwrap();
    let fit = gcf_core::free_boundary::fit_blowup(&twice, 1e-9).unwrap();
    assert!(fit.ratio <= 0.1, "{fit:?}");
    // the x₁x₁ entry dominates, matching the half-space profile
    assert!(fit.hessian[0].abs() > 10.0 * fit.hessian[2].abs(), "{fit:?}");
}

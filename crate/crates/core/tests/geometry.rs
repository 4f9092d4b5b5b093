use std::f64::consts::PI;
use std::sync::Arc;

use gcf_core::shapes::{ball, ellipsoid};
use gcf_core::sphere::{
    codazzi_residual, covariant_hessian, curvatures, curvatures_of, embed, second_fundamental_form, ScalarField,
    SphericalGrid,
};
use proptest::prelude::*;

/// Gauss curvature of an axis-aligned ellipsoid at the point with unit normal `z`:
/// with `N = |(x/a², y/b², z/c²)|` at the contact point, `K = 1/(Πaᵢ² N⁴)`.
/// The contact point is `x_i = a_i² z_i / u` with `u = (Σ a_i² z_i²)^{1/2}`.
fn ellipsoid_gauss(a: [f64; 3], z: [f64; 3], n: usize) -> f64 {
    let u = (0..=n).map(|i| a[i] * a[i] * z[i] * z[i]).sum::<f64>().sqrt();
    let x: Vec<f64> = (0..=n).map(|i| a[i] * a[i] * z[i] / u).collect();
    let grad = (0..=n).map(|i| (x[i] / (a[i] * a[i])).powi(2)).sum::<f64>().sqrt();
    let prod: f64 = (0..=n).map(|i| a[i] * a[i]).product();
    1.0 / (prod * grad.powi(n as i32 + 2))
}

/// Curvature of the ellipse `(a cos s, b sin s)` at the point whose outward
/// normal has angle `θ`, by the parametric formula.
fn ellipse_curvature_parametric(a: f64, b: f64, theta: f64) -> f64 {
    // the normal of (a cos s, b sin s) is parallel to (b cos s, a sin s)
    let s = (b * theta.sin()).atan2(a * theta.cos());
    let (xp, yp) = (-a * s.sin(), b * s.cos());
    let (xpp, ypp) = (-a * s.cos(), -b * s.sin());
    (xp * ypp - yp * xpp).abs() / (xp * xp + yp * yp).powf(1.5)
}

fn max_gauss_error(grid: &Arc<SphericalGrid>, a: [f64; 3]) -> f64 {
    let u = ellipsoid(grid.clone(), a, [0.0; 3]);
    let c = curvatures_of(&u).unwrap();
    (0..grid.node_count())
        .map(|k| (c.gauss.values()[k] - ellipsoid_gauss(a, grid.direction(k), grid.dim())).abs())
        .fold(0.0, f64::max)
}

#[test]
fn ellipse_tip_curvature() {
    let g = SphericalGrid::circle(512).unwrap();
    let u = ellipsoid(g.clone(), [2.0, 1.0, 0.0], [0.0; 3]);
    let c = curvatures_of(&u).unwrap();
    assert!((ellipse_curvature_parametric(2.0, 1.0, 0.0) - 2.0).abs() < 1e-12);
    assert!((c.gauss.values()[0] - 2.0).abs() < 2e-3, "{}", c.gauss.values()[0]);
    for k in (0..512).step_by(37) {
        let (t, _) = g.angles(k);
        let exact = ellipse_curvature_parametric(2.0, 1.0, t);
        assert!((c.gauss.values()[k] - exact).abs() < 2e-3 * exact.max(1.0));
        assert!((exact - ellipsoid_gauss([2.0, 1.0, 0.0], g.direction(k), 1)).abs() < 1e-12);
    }
}

#[test]
fn ellipse_second_form_positive_and_embedding_on_curve() {
    let g = SphericalGrid::circle(256).unwrap();
    let u = ellipsoid(g.clone(), [2.0, 1.0, 0.0], [0.0; 3]);
    let h = second_fundamental_form(&u, &g).unwrap();
    assert!(h.components().iter().all(|c| c[0] > 0.0));
    let pts = embed(&u, &g).unwrap();
    let worst = pts.iter().map(|p| (p[0] * p[0] / 4.0 + p[1] * p[1] - 1.0).abs()).fold(0.0, f64::max);
    assert!(worst < 2e-3, "{worst}");
    let g2 = SphericalGrid::circle(512).unwrap();
    let pts2 = embed(&ellipsoid(g2.clone(), [2.0, 1.0, 0.0], [0.0; 3]), &g2).unwrap();
    let worst2 = pts2.iter().map(|p| (p[0] * p[0] / 4.0 + p[1] * p[1] - 1.0).abs()).fold(0.0, f64::max);
    assert!(worst / worst2 > 3.0, "{worst} {worst2}");
}

#[test]
fn second_harmonic_on_circle() {
    for n in [128, 256] {
        let g = SphericalGrid::circle(n).unwrap();
        let u = ScalarField::from_angles(g.clone(), |t, _| 1.0 + 0.1 * (2.0 * t).cos());
        let h = second_fundamental_form(&u, &g).unwrap();
        let hh = 2.0 * PI / n as f64;
        for k in 0..n {
            let (t, _) = g.angles(k);
            let exact = 1.0 - 0.3 * (2.0 * t).cos();
            assert!((h.at(k)[0] - exact).abs() < 0.5 * hh * hh);
        }
    }
}

#[test]
fn linear_function_hessian_on_sphere() {
    let g = SphericalGrid::lat_lon(32, 64).unwrap();
    for a in [[0.0, 0.0, 1.0], [0.3, -0.4, 0.2]] {
        let u = ScalarField::from_direction(g.clone(), |z| a[0] * z[0] + a[1] * z[1] + a[2] * z[2]);
        let hess = covariant_hessian(&u, &g).unwrap();
        for k in 0..g.node_count() {
            let m = g.metric(k);
            for (h, mc) in hess.at(k).iter().zip(m) {
                assert!((h + u.values()[k] * mc).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn gauss_curvature_convergence_order_n2() {
    let a = [1.2, 1.0, 0.8];
    let coarse = max_gauss_error(&SphericalGrid::lat_lon(16, 32).unwrap(), a);
    let fine = max_gauss_error(&SphericalGrid::lat_lon(32, 64).unwrap(), a);
    let order = (coarse / fine).log2();
    assert!(order >= 1.8, "order {order} ({coarse} -> {fine})");
}

#[test]
fn gauss_curvature_convergence_order_n1() {
    let a = [1.5, 1.0, 0.0];
    let coarse = max_gauss_error(&SphericalGrid::circle(64).unwrap(), a);
    let fine = max_gauss_error(&SphericalGrid::circle(128).unwrap(), a);
    assert!((coarse / fine).log2() >= 1.8);
}

#[test]
fn codazzi_converges_at_second_order() {
    let f = |t: f64, p: f64| 1.0 + 0.05 * t.cos() * t.sin() * p.cos();
    let r1 = codazzi_residual(
        &ScalarField::from_angles(SphericalGrid::lat_lon(16, 32).unwrap(), f),
        &SphericalGrid::lat_lon(16, 32).unwrap(),
    )
    .unwrap();
    let g2 = SphericalGrid::lat_lon(32, 64).unwrap();
    let r2 = codazzi_residual(&ScalarField::from_angles(g2.clone(), f), &g2).unwrap();
    let ratio = r1 / r2;
    assert!((ratio - 4.0).abs() <= 1.2, "ratio {ratio} ({r1} -> {r2})");
}

#[test]
fn grid_refinement_keeps_sphere_exact() {
    for g in [SphericalGrid::lat_lon(4, 8).unwrap(), SphericalGrid::lat_lon(33, 66).unwrap()] {
        let b = curvatures_of(&ScalarField::constant(g.clone(), 0.3)).unwrap();
        for k in 0..g.node_count() {
            assert!((b.gauss.values()[k] * 0.09 - 1.0).abs() < 1e-10);
            for l in b.principal(k) {
                assert!((l * 0.3 - 1.0).abs() < 1e-10);
            }
        }
    }
}

fn smooth_field(grid: Arc<SphericalGrid>, c: [f64; 4]) -> ScalarField {
    ScalarField::from_angles(grid, move |t, p| {
        1.0 + c[0] * (2.0 * t).cos()
            + c[1] * t.sin() * t.sin() * (2.0 * p).cos()
            + c[2] * t.sin() * p.sin()
            + c[3] * t.cos()
    })
}

fn coeffs() -> impl Strategy<Value = [f64; 4]> {
    (-0.05..0.05f64, -0.05..0.05f64, -0.3..0.3f64, -0.3..0.3f64).prop_map(|(a, b, c, d)| [a, b, c, d])
}

fn shift() -> impl Strategy<Value = [f64; 3]> {
    (-0.5..0.5f64, -0.5..0.5f64, -0.5..0.5f64).prop_map(|(a, b, c)| [a, b, c])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn translation_moves_embedding_rigidly(c in coeffs(), a in shift(), two_d in any::<bool>()) {
        let g = if two_d { SphericalGrid::lat_lon(12, 24).unwrap() } else { SphericalGrid::circle(64).unwrap() };
        let a = if two_d { a } else { [a[0], a[1], 0.0] };
        let u = smooth_field(g.clone(), c);
        let shifted = u.zip_map(&ScalarField::from_direction(g.clone(), |z| a[0]*z[0] + a[1]*z[1] + a[2]*z[2]), |x, y| x + y).unwrap();
        let p = embed(&u, &g).unwrap();
        let q = embed(&shifted, &g).unwrap();
        for k in 0..g.node_count() {
            for i in 0..3 {
                prop_assert!((q[k][i] - p[k][i] - a[i]).abs() <= 1e-10);
            }
        }
        let k0 = curvatures_of(&u).unwrap();
        let k1 = curvatures_of(&shifted).unwrap();
        for k in 0..g.node_count() {
            let rel = (k1.gauss.values()[k] - k0.gauss.values()[k]).abs() / k0.gauss.values()[k];
            prop_assert!(rel <= 1e-8, "relative K change {rel}");
        }
    }

    #[test]
    fn scaling_covariance(c in coeffs(), s in 0.2..5.0f64, two_d in any::<bool>()) {
        let g = if two_d { SphericalGrid::lat_lon(12, 24).unwrap() } else { SphericalGrid::circle(64).unwrap() };
        let n = g.dim() as i32;
        let u = smooth_field(g.clone(), c);
        let a = curvatures_of(&u).unwrap();
        let b = curvatures_of(&u.map(|v| s * v)).unwrap();
        for k in 0..g.node_count() {
            let rel = (b.gauss.values()[k] * s.powi(n) / a.gauss.values()[k] - 1.0).abs();
            prop_assert!(rel <= 1e-12);
            for (x, y) in a.principal(k).iter().zip(b.principal(k)) {
                prop_assert!((y * s / x - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn product_and_sum_identities(c in coeffs(), two_d in any::<bool>()) {
        let g = if two_d { SphericalGrid::lat_lon(12, 24).unwrap() } else { SphericalGrid::circle(64).unwrap() };
        let u = smooth_field(g.clone(), c);
        let h = second_fundamental_form(&u, &g).unwrap();
        let b = curvatures(&h, &g).unwrap();
        for k in 0..g.node_count() {
            let l = b.principal(k);
            let prod: f64 = l.iter().product();
            let sum: f64 = l.iter().sum();
            prop_assert!((b.gauss.values()[k] - prod).abs() <= 1e-10 * b.gauss.values()[k].abs());
            prop_assert_eq!(b.mean.values()[k], sum);
            prop_assert!(l.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(l[0] > 0.0);
        }
    }
}

#[test]
fn translated_ball_curvature() {
    let g = SphericalGrid::lat_lon(16, 32).unwrap();
    let c = curvatures_of(&ball(g.clone(), 0.5, [0.1, 0.2, -0.1])).unwrap();
    for k in 0..g.node_count() {
        assert!((c.gauss.values()[k] - 4.0).abs() < 1e-8);
    }
}

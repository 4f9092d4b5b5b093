//! Support functions of standard convex bodies.

use std::sync::Arc;

use crate::sphere::{ScalarField, SphericalGrid};

/// Ball of radius `radius` centred at `center`: `u(z) = r + ⟨c, z⟩`.
pub fn ball(grid: Arc<SphericalGrid>, radius: f64, center: [f64; 3]) -> ScalarField {
    ScalarField::from_direction(grid, |z| radius + dot(center, z))
}

/// Axis-aligned ellipsoid (ellipse for n = 1; only the first two semi-axes are
/// read) centred at `center`: `u(z) = (Σ aᵢ² zᵢ²)^{1/2} + ⟨c, z⟩`.
pub fn ellipsoid(grid: Arc<SphericalGrid>, semi_axes: [f64; 3], center: [f64; 3]) -> ScalarField {
    ScalarField::from_direction(grid, |z| {
        let q: f64 = (0..3).map(|i| semi_axes[i] * semi_axes[i] * z[i] * z[i]).sum();
        q.sqrt() + dot(center, z)
    })
}

#[inline]
pub fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

//! Finite-difference calculus on the unit circle and the unit 2-sphere.
//!
//! Convex bodies are handled through their support functions `u: Sⁿ → ℝ`.
//! The second fundamental form in Gauss-map coordinates is
//! `h_ij = ∇̄_i∇̄_j u + u ḡ_ij`; its ḡ-eigenvalues are the curvature radii.
//!
//! Grids:
//! * `n = 1`: `N` uniform nodes `θ_k = 2πk/N`.
//! * `n = 2`: latitude–longitude grid with colatitudes `θ_i = (i+½)π/N_θ`
//!   (no node on a pole) and azimuths `ψ_j = 2πj/N_ψ`. Colatitude stencils
//!   reaching past a pole read the antipodal node of the adjacent ring
//!   (`(θ, ψ) ≡ (−θ, ψ+π)`), so `N_ψ` must be even.
//!
//! All difference quotients are three-point centered stencils whose
//! denominators use `sin h` and `2(1 − cos h)` instead of `h` and `h²`.
//! They remain second order and are exact on `{1, cos, sin}`; on the sphere
//! this makes the Hessian of every restricted linear function `⟨a, z⟩`
//! exact, so translating a body moves its discrete embedding rigidly.

use std::f64::consts::PI;
use std::io::{self, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("unsupported dimension n = {0} (only n = 1 and n = 2 are implemented)")]
    UnsupportedDimension(usize),
    #[error("resolution too small: {0}")]
    ResolutionTooSmall(String),
    #[error("field does not live on the requested grid")]
    GridMismatch,
    #[error("second fundamental form is not positive definite at node {node}")]
    NotConvex { node: usize },
    #[error("expected {expected} node values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite value at node {node}")]
    NonFinite { node: usize },
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// Node counts of a spherical grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Resolution {
    Circle { nodes: usize },
    LatLon { n_theta: usize, n_psi: usize },
}

#[derive(Debug, Clone)]
pub struct SphericalGrid {
    resolution: Resolution,
    rings: usize,
    n_az: usize,
    /// Spacing of the first coordinate (angle for n = 1, colatitude for n = 2).
    h_theta: f64,
    h_psi: f64,
    theta: Vec<f64>,
    psi: Vec<f64>,
    sin_theta: Vec<f64>,
    cos_theta: Vec<f64>,
    d1_theta: f64,
    d2_theta: f64,
    d1_psi: f64,
    d2_psi: f64,
    /// Stencil neighbours per node (n = 2): N, S, E, W, SE, SW, NE, NW.
    stencil: Vec<[u32; 8]>,
}

impl PartialEq for SphericalGrid {
    fn eq(&self, other: &Self) -> bool {
        self.resolution == other.resolution
    }
}

fn d1_coeff(h: f64) -> f64 {
    0.5 / h.sin()
}

fn d2_coeff(h: f64) -> f64 {
    let s = (0.5 * h).sin();
    0.25 / (s * s)
}

impl SphericalGrid {
    /// Builds a grid for `Sⁿ` from per-coordinate node counts
    /// (`[N]` for n = 1, `[N_θ, N_ψ]` for n = 2).
    pub fn new(dim: usize, counts: &[usize]) -> Result<Arc<Self>> {
        match dim {
            1 => {
                let nodes =
                    *counts.first().ok_or_else(|| GeometryError::ResolutionTooSmall("missing node count".into()))?;
                Self::circle(nodes)
            }
            2 => {
                if counts.len() < 2 {
                    return Err(GeometryError::ResolutionTooSmall("n = 2 needs [n_theta, n_psi]".into()));
                }
                Self::lat_lon(counts[0], counts[1])
            }
            other => Err(GeometryError::UnsupportedDimension(other)),
        }
    }

    pub fn circle(nodes: usize) -> Result<Arc<Self>> {
        if nodes < 8 {
            return Err(GeometryError::ResolutionTooSmall(format!("circle grid needs at least 8 nodes, got {nodes}")));
        }
        let h = 2.0 * PI / nodes as f64;
        let theta: Vec<f64> = (0..nodes).map(|k| k as f64 * h).collect();
        Ok(Arc::new(Self {
            resolution: Resolution::Circle { nodes },
            rings: 1,
            n_az: nodes,
            h_theta: h,
            h_psi: 0.0,
            sin_theta: theta.iter().map(|t| t.sin()).collect(),
            cos_theta: theta.iter().map(|t| t.cos()).collect(),
            theta,
            psi: Vec::new(),
            d1_theta: d1_coeff(h),
            d2_theta: d2_coeff(h),
            d1_psi: 0.0,
            d2_psi: 0.0,
            stencil: Vec::new(),
        }))
    }

    pub fn lat_lon(n_theta: usize, n_psi: usize) -> Result<Arc<Self>> {
        // A full meridian circle through both poles carries 2 N_θ nodes.
        if n_theta < 4 || n_psi < 8 {
            return Err(GeometryError::ResolutionTooSmall(format!(
                "lat-lon grid needs n_theta >= 4 and n_psi >= 8, got {n_theta}x{n_psi}"
            )));
        }
        if !n_psi.is_multiple_of(2) {
            return Err(GeometryError::ResolutionTooSmall(format!(
                "n_psi must be even for the antipodal pole rule, got {n_psi}"
            )));
        }
        let h_theta = PI / n_theta as f64;
        let h_psi = 2.0 * PI / n_psi as f64;
        let theta: Vec<f64> = (0..n_theta).map(|i| (i as f64 + 0.5) * h_theta).collect();
        let psi: Vec<f64> = (0..n_psi).map(|j| j as f64 * h_psi).collect();
        let mut grid = Self {
            resolution: Resolution::LatLon { n_theta, n_psi },
            rings: n_theta,
            n_az: n_psi,
            h_theta,
            h_psi,
            sin_theta: theta.iter().map(|t| t.sin()).collect(),
            cos_theta: theta.iter().map(|t| t.cos()).collect(),
            theta,
            psi,
            d1_theta: d1_coeff(h_theta),
            d2_theta: d2_coeff(h_theta),
            d1_psi: d1_coeff(h_psi),
            d2_psi: d2_coeff(h_psi),
            stencil: Vec::new(),
        };
        let stencil = (0..grid.node_count())
            .map(|node| {
                let i = (node / n_psi) as isize;
                let j = (node % n_psi) as isize;
                let at = |di: isize, dj: isize| grid.ghost_index(i + di, j + dj).0 as u32;
                [at(-1, 0), at(1, 0), at(0, 1), at(0, -1), at(1, 1), at(1, -1), at(-1, 1), at(-1, -1)]
            })
            .collect();
        grid.stencil = stencil;
        Ok(Arc::new(grid))
    }

    pub fn dim(&self) -> usize {
        match self.resolution {
            Resolution::Circle { .. } => 1,
            Resolution::LatLon { .. } => 2,
        }
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn node_count(&self) -> usize {
        self.rings * self.n_az
    }

    /// `(h_θ, h_ψ)`; `h_ψ` is zero for the circle.
    pub fn spacings(&self) -> (f64, f64) {
        (self.h_theta, self.h_psi)
    }

    /// Number of colatitude rings (1 for the circle) and azimuthal nodes per ring.
    pub fn shape(&self) -> (usize, usize) {
        (self.rings, self.n_az)
    }

    /// `(θ, ψ)` of a node; for n = 1 the angle is returned as `θ` and `ψ = 0`.
    pub fn angles(&self, node: usize) -> (f64, f64) {
        if self.dim() == 1 {
            (self.theta[node], 0.0)
        } else {
            let (i, j) = (node / self.n_az, node % self.n_az);
            (self.theta[i], self.psi[j])
        }
    }

    /// Unit direction of a node, embedded in ℝ³ (third component zero for n = 1).
    pub fn direction(&self, node: usize) -> [f64; 3] {
        if self.dim() == 1 {
            [self.cos_theta[node], self.sin_theta[node], 0.0]
        } else {
            let (i, j) = (node / self.n_az, node % self.n_az);
            let (s, c) = (self.sin_theta[i], self.cos_theta[i]);
            let (sp, cp) = self.psi[j].sin_cos();
            [s * cp, s * sp, c]
        }
    }

    /// Metric components `(ḡ_θθ, ḡ_θψ, ḡ_ψψ)`; the circle reports `(1, 0, 0)`.
    pub fn metric(&self, node: usize) -> [f64; 3] {
        if self.dim() == 1 {
            [1.0, 0.0, 0.0]
        } else {
            let s = self.sin_theta[node / self.n_az];
            [1.0, 0.0, s * s]
        }
    }

    pub fn metric_det(&self, node: usize) -> f64 {
        let g = self.metric(node);
        if self.dim() == 1 {
            g[0]
        } else {
            g[0] * g[2] - g[1] * g[1]
        }
    }

    /// `sin θ` of the ring containing `node` (1 for the circle).
    pub fn sin_colatitude(&self, node: usize) -> f64 {
        if self.dim() == 1 {
            1.0
        } else {
            self.sin_theta[node / self.n_az]
        }
    }

    /// Smallest geodesic mesh spacing at a node: `h` on the circle,
    /// `min(h_θ, h_ψ sin θ)` on the sphere.
    pub fn min_spacing(&self, node: usize) -> f64 {
        if self.dim() == 1 {
            self.h_theta
        } else {
            self.h_theta.min(self.h_psi * self.sin_colatitude(node))
        }
    }

    /// Largest geodesic spacing over the grid.
    pub fn max_spacing(&self) -> f64 {
        if self.dim() == 1 {
            self.h_theta
        } else {
            self.h_theta.max(self.h_psi)
        }
    }

    /// Flat index of `(ring, az)` where `ring` may step one past either pole.
    /// Returns the index and whether the antipodal rule was applied.
    #[inline]
    fn ghost_index(&self, ring: isize, az: isize) -> (usize, bool) {
        let n_az = self.n_az as isize;
        let rings = self.rings as isize;
        let (r, a, flipped) = if ring < 0 {
            (-1 - ring, az + n_az / 2, true)
        } else if ring >= rings {
            (2 * rings - 1 - ring, az + n_az / 2, true)
        } else {
            (ring, az, false)
        };
        let a = a.rem_euclid(n_az);
        ((r * n_az + a) as usize, flipped)
    }

    #[inline]
    pub(crate) fn derivatives(&self, values: &[f64], node: usize) -> Derivatives {
        if self.dim() == 1 {
            let n = self.n_az;
            let up = values[(node + 1) % n];
            let dn = values[(node + n - 1) % n];
            let c = values[node];
            Derivatives {
                t: (up - dn) * self.d1_theta,
                tt: (up - 2.0 * c + dn) * self.d2_theta,
                p: 0.0,
                pp: 0.0,
                tp: 0.0,
            }
        } else {
            let nb = &self.stencil[node];
            let v = |k: usize| values[nb[k] as usize];
            let c = values[node];
            let (n, s, e, w) = (v(0), v(1), v(2), v(3));
            Derivatives {
                t: (s - n) * self.d1_theta,
                tt: (s - 2.0 * c + n) * self.d2_theta,
                p: (e - w) * self.d1_psi,
                pp: (e - 2.0 * c + w) * self.d2_psi,
                tp: (v(4) - v(5) - v(6) + v(7)) * self.d1_theta * self.d1_psi,
            }
        }
    }

    /// Five-point (fourth-order) partial derivatives on the sphere grid.
    pub(crate) fn derivatives_fourth_order(&self, values: &[f64], node: usize) -> Derivatives {
        const D1: [f64; 5] = [1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0];
        const D2: [f64; 5] = [-1.0 / 12.0, 16.0 / 12.0, -30.0 / 12.0, 16.0 / 12.0, -1.0 / 12.0];
        let i = (node / self.n_az) as isize;
        let j = (node % self.n_az) as isize;
        let v = |di: isize, dj: isize| values[self.ghost_index(i + di, j + dj).0];
        let (ht, hp) = (self.h_theta, self.h_psi);
        let mut d = Derivatives { t: 0.0, tt: 0.0, p: 0.0, pp: 0.0, tp: 0.0 };
        for a in 0..5 {
            let o = a as isize - 2;
            d.t += D1[a] * v(o, 0) / ht;
            d.tt += D2[a] * v(o, 0) / (ht * ht);
            d.p += D1[a] * v(0, o) / hp;
            d.pp += D2[a] * v(0, o) / (hp * hp);
            for b in 0..5 {
                d.tp += D1[a] * D1[b] * v(o, b as isize - 2) / (ht * hp);
            }
        }
        d
    }

    /// Covariant Hessian `(∇̄²u)_θθ, _θψ, _ψψ` at a node.
    #[inline]
    pub(crate) fn hessian_at(&self, values: &[f64], node: usize) -> [f64; 3] {
        let d = self.derivatives(values, node);
        if self.dim() == 1 {
            [d.tt, 0.0, 0.0]
        } else {
            let ring = node / self.n_az;
            let (s, c) = (self.sin_theta[ring], self.cos_theta[ring]);
            [d.tt, d.tp - (c / s) * d.p, d.pp + s * c * d.t]
        }
    }

    /// `h = ∇̄²u + u ḡ` at a node.
    #[inline]
    pub(crate) fn second_form_at(&self, values: &[f64], node: usize) -> [f64; 3] {
        let mut h = self.hessian_at(values, node);
        let g = self.metric(node);
        let u = values[node];
        h[0] += u * g[0];
        h[1] += u * g[1];
        h[2] += u * g[2];
        h
    }

    /// Gradient in the orthonormal frame `(e_θ, e_ψ)`.
    #[inline]
    pub(crate) fn gradient_at(&self, values: &[f64], node: usize) -> [f64; 2] {
        let d = self.derivatives(values, node);
        if self.dim() == 1 {
            [d.t, 0.0]
        } else {
            [d.t, d.p / self.sin_colatitude(node)]
        }
    }

    /// Orthonormal tangent frame `(e_θ, e_ψ)` at a node, in ℝ³.
    pub fn tangent_frame(&self, node: usize) -> [[f64; 3]; 2] {
        if self.dim() == 1 {
            let (s, c) = (self.sin_theta[node], self.cos_theta[node]);
            [[-s, c, 0.0], [0.0; 3]]
        } else {
            let (i, j) = (node / self.n_az, node % self.n_az);
            let (s, c) = (self.sin_theta[i], self.cos_theta[i]);
            let (sp, cp) = self.psi[j].sin_cos();
            [[c * cp, c * sp, -s], [-sp, cp, 0.0]]
        }
    }

    /// Value of a node-indexed array at fractional grid coordinates using
    /// periodic/antipodal Catmull–Rom interpolation. `fi` indexes rings
    /// (ignored for n = 1), `fj` azimuth (or the angle index for n = 1).
    pub fn interpolate(&self, values: &[f64], fi: f64, fj: f64) -> f64 {
        if self.dim() == 1 {
            let n = self.n_az as isize;
            let j0 = fj.floor();
            let t = fj - j0;
            let j0 = j0 as isize;
            let w = catmull_rom_weights(t);
            (0..4).map(|k| w[k] * values[(j0 - 1 + k as isize).rem_euclid(n) as usize]).sum()
        } else {
            let i0f = fi.floor();
            let j0f = fj.floor();
            let (ti, tj) = (fi - i0f, fj - j0f);
            let (i0, j0) = (i0f as isize, j0f as isize);
            let wi = catmull_rom_weights(ti);
            let wj = catmull_rom_weights(tj);
            let mut acc = 0.0;
            for (a, wa) in wi.iter().enumerate() {
                let ring = i0 - 1 + a as isize;
                for (b, wb) in wj.iter().enumerate() {
                    let (idx, _) = self.ghost_index(ring, j0 - 1 + b as isize);
                    acc += wa * wb * values[idx];
                }
            }
            acc
        }
    }

    /// Fractional grid coordinates `(fi, fj)` of a direction given by angles.
    pub fn fractional_coords(&self, theta: f64, psi: f64) -> (f64, f64) {
        if self.dim() == 1 {
            (0.0, theta.rem_euclid(2.0 * PI) / self.h_theta)
        } else {
            (theta / self.h_theta - 0.5, psi.rem_euclid(2.0 * PI) / self.h_psi)
        }
    }
}

fn catmull_rom_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [0.5 * (-t3 + 2.0 * t2 - t), 0.5 * (3.0 * t3 - 5.0 * t2 + 2.0), 0.5 * (-3.0 * t3 + 4.0 * t2 + t), 0.5 * (t3 - t2)]
}

/// Partial derivatives of a nodal field in grid coordinates.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Derivatives {
    pub t: f64,
    pub tt: f64,
    pub p: f64,
    pub pp: f64,
    pub tp: f64,
}

/// One real value per node of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Arc<SphericalGrid>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Arc<SphericalGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(GeometryError::LengthMismatch { expected: grid.node_count(), got: values.len() });
        }
        if let Some(node) = values.iter().position(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite { node });
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Arc<SphericalGrid>, value: f64) -> Self {
        let values = vec![value; grid.node_count()];
        Self { grid, values }
    }

    /// Samples a function of the unit direction `z ∈ ℝ³` (third component zero for n = 1).
    pub fn from_direction(grid: Arc<SphericalGrid>, f: impl Fn([f64; 3]) -> f64) -> Self {
        let values = (0..grid.node_count()).map(|k| f(grid.direction(k))).collect();
        Self { grid, values }
    }

    /// Samples a function of the node angles `(θ, ψ)`.
    pub fn from_angles(grid: Arc<SphericalGrid>, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..grid.node_count())
            .map(|k| {
                let (t, p) = grid.angles(k);
                f(t, p)
            })
            .collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<SphericalGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Node-wise combination of two fields on the same grid.
    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if *self.grid != *other.grid {
            return Err(GeometryError::GridMismatch);
        }
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { grid: self.grid.clone(), values })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// `max |self − other|`.
    pub fn sup_distance(&self, other: &ScalarField) -> Result<f64> {
        Ok(self.zip_map(other, |a, b| (a - b).abs())?.max())
    }
}

/// Symmetric tensor per node, components `(θθ, θψ, ψψ)` in the coordinate frame.
/// For n = 1 only the first component is meaningful.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTensorField {
    grid: Arc<SphericalGrid>,
    comps: Vec<[f64; 3]>,
}

impl SymTensorField {
    pub fn grid(&self) -> &Arc<SphericalGrid> {
        &self.grid
    }

    pub fn components(&self) -> &[[f64; 3]] {
        &self.comps
    }

    pub fn at(&self, node: usize) -> [f64; 3] {
        self.comps[node]
    }
}

/// Gauss, principal and mean curvatures of a strictly convex body.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureBundle {
    pub gauss: ScalarField,
    /// Principal curvatures sorted ascending; only the first `n` entries are used.
    principal: Vec<[f64; 2]>,
    pub mean: ScalarField,
}

impl CurvatureBundle {
    pub fn principal(&self, node: usize) -> &[f64] {
        let n = self.gauss.grid().dim();
        &self.principal[node][..n]
    }

    pub fn lambda_min(&self, node: usize) -> f64 {
        self.principal[node][0]
    }

    pub fn lambda_max(&self, node: usize) -> f64 {
        let n = self.gauss.grid().dim();
        self.principal[node][n - 1]
    }

    pub fn min_lambda(&self) -> f64 {
        (0..self.principal.len()).map(|k| self.lambda_min(k)).fold(f64::INFINITY, f64::min)
    }

    pub fn max_lambda(&self) -> f64 {
        (0..self.principal.len()).map(|k| self.lambda_max(k)).fold(f64::NEG_INFINITY, f64::max)
    }
}

fn check_grid(u: &ScalarField, grid: &SphericalGrid) -> Result<()> {
    if **u.grid() != *grid {
        Err(GeometryError::GridMismatch)
    } else {
        Ok(())
    }
}

/// Covariant Hessian `∇̄²u` by centered differences with Christoffel terms.
pub fn covariant_hessian(u: &ScalarField, grid: &SphericalGrid) -> Result<SymTensorField> {
    check_grid(u, grid)?;
    let comps = (0..grid.node_count()).map(|k| grid.hessian_at(u.values(), k)).collect();
    Ok(SymTensorField { grid: u.grid().clone(), comps })
}

/// Second fundamental form `h_ij = ∇̄_i∇̄_j u + u ḡ_ij`.
pub fn second_fundamental_form(u: &ScalarField, grid: &SphericalGrid) -> Result<SymTensorField> {
    check_grid(u, grid)?;
    let comps = (0..grid.node_count()).map(|k| grid.second_form_at(u.values(), k)).collect();
    Ok(SymTensorField { grid: u.grid().clone(), comps })
}

/// Curvature radii (ḡ-eigenvalues of `h`) at one node, ascending, with `det h / det ḡ`.
#[inline]
pub(crate) fn radii_at(grid: &SphericalGrid, h: [f64; 3], node: usize) -> Option<([f64; 2], f64)> {
    if grid.dim() == 1 {
        let r = h[0];
        (r > 0.0 && r.is_finite()).then_some(([r, r], r))
    } else {
        let s = grid.sin_colatitude(node);
        // Orthonormal-frame matrix [[a, b], [b, d]].
        let a = h[0];
        let b = h[1] / s;
        let d = h[2] / (s * s);
        let det = a * d - b * b;
        let half_tr = 0.5 * (a + d);
        if !(det > 0.0 && half_tr > 0.0 && det.is_finite()) {
            return None;
        }
        let disc = (0.25 * (a - d) * (a - d) + b * b).sqrt();
        let r_max = half_tr + disc;
        let r_min = det / r_max;
        Some(([r_min, r_max], det))
    }
}

/// `K = det ḡ / det h`, principal curvatures `λ_i` (reciprocal ḡ-eigenvalues of `h`)
/// and `H = Σ λ_i`. Fails with `NotConvex` at the first node where `h` is not
/// positive definite.
pub fn curvatures(h: &SymTensorField, grid: &SphericalGrid) -> Result<CurvatureBundle> {
    if **h.grid() != *grid {
        return Err(GeometryError::GridMismatch);
    }
    let n = grid.node_count();
    let mut gauss = Vec::with_capacity(n);
    let mut mean = Vec::with_capacity(n);
    let mut principal = Vec::with_capacity(n);
    for node in 0..n {
        let hk = h.comps[node];
        let (radii, _) = radii_at(grid, hk, node).ok_or(GeometryError::NotConvex { node })?;
        let det_h = if grid.dim() == 1 { hk[0] } else { hk[0] * hk[2] - hk[1] * hk[1] };
        gauss.push(grid.metric_det(node) / det_h);
        if grid.dim() == 1 {
            let l = 1.0 / radii[0];
            principal.push([l, l]);
            mean.push(l);
        } else {
            let l = [1.0 / radii[1], 1.0 / radii[0]];
            principal.push(l);
            mean.push(l[0] + l[1]);
        }
    }
    let grid = h.grid().clone();
    Ok(CurvatureBundle {
        gauss: ScalarField { grid: grid.clone(), values: gauss },
        principal,
        mean: ScalarField { grid, values: mean },
    })
}

/// Convenience: curvatures of the body with support function `u`.
pub fn curvatures_of(u: &ScalarField) -> Result<CurvatureBundle> {
    let grid = u.grid().clone();
    curvatures(&second_fundamental_form(u, &grid)?, &grid)
}

/// Points `X(z) = ∇̄u(z) + u(z) z` of the hypersurface, one per node.
pub fn embed(u: &ScalarField, grid: &SphericalGrid) -> Result<Vec<[f64; 3]>> {
    check_grid(u, grid)?;
    Ok((0..grid.node_count())
        .map(|k| {
            let z = grid.direction(k);
            let g = grid.gradient_at(u.values(), k);
            let [e1, e2] = grid.tangent_frame(k);
            let uk = u.values()[k];
            std::array::from_fn(|c| g[0] * e1[c] + g[1] * e2[c] + uk * z[c])
        })
        .collect())
}

/// Norm of the spherical gradient `|∇̄u|` per node.
pub fn gradient_norm(u: &ScalarField, grid: &SphericalGrid) -> Result<ScalarField> {
    check_grid(u, grid)?;
    let values = (0..grid.node_count())
        .map(|k| {
            let g = grid.gradient_at(u.values(), k);
            (g[0] * g[0] + g[1] * g[1]).sqrt()
        })
        .collect();
    Ok(ScalarField { grid: u.grid().clone(), values })
}

/// Max-norm of `∇̄_k h_ij − ∇̄_i h_kj` over nodes and index triples, measured
/// in the orthonormal frame `(e_θ, e_ψ)`. Returns 0 for n = 1, where the tensor
/// has a single component.
///
/// Uses `∇̄_k h_ij = ∇̄_k(∇̄²u)_ij + ∂_k u ḡ_ij`. The Hessian is formed with
/// five-point stencils and carried as an ambient 3×3 tensor, whose Cartesian
/// components are smooth through the poles; its tangential derivatives are
/// then taken with the three-point stencils. The residual converges at
/// second order on every ring, including the two next to the poles.
pub fn codazzi_residual(u: &ScalarField, grid: &SphericalGrid) -> Result<f64> {
    check_grid(u, grid)?;
    if grid.dim() == 1 {
        return Ok(0.0);
    }
    let n = grid.node_count();
    let mut ambient = Vec::with_capacity(n);
    let mut grad = Vec::with_capacity(n);
    for node in 0..n {
        let d = grid.derivatives_fourth_order(u.values(), node);
        let ring = node / grid.n_az;
        let (s, c) = (grid.sin_theta[ring], grid.cos_theta[ring]);
        let a = d.tt;
        let b = (d.tp - (c / s) * d.p) / s;
        let dd = (d.pp + s * c * d.t) / (s * s);
        let [et, ep] = grid.tangent_frame(node);
        let m: [[f64; 3]; 3] = std::array::from_fn(|r| {
            std::array::from_fn(|q| a * et[r] * et[q] + b * (et[r] * ep[q] + ep[r] * et[q]) + dd * ep[r] * ep[q])
        });
        ambient.push(m);
        grad.push([d.t, d.p / s]);
    }
    let quad = |m: &[[f64; 3]; 3], x: &[f64; 3], y: &[f64; 3]| -> f64 {
        (0..3).map(|r| (0..3).map(|q| x[r] * m[r][q] * y[q]).sum::<f64>()).sum()
    };
    let mut worst = 0.0_f64;
    for node in 0..n {
        let i = (node / grid.n_az) as isize;
        let j = (node % grid.n_az) as isize;
        let s = grid.sin_theta[i as usize];
        let at = |di: isize, dj: isize| &ambient[grid.ghost_index(i + di, j + dj).0];
        let diff = |p: &[[f64; 3]; 3], q: &[[f64; 3]; 3], scale: f64| -> [[f64; 3]; 3] {
            std::array::from_fn(|r| std::array::from_fn(|c| (p[r][c] - q[r][c]) * scale))
        };
        let d_theta = diff(at(1, 0), at(-1, 0), grid.d1_theta);
        let d_psi = diff(at(0, 1), at(0, -1), grid.d1_psi / s);
        let [et, ep] = grid.tangent_frame(node);
        let [gt, gp] = grad[node];
        // (k, i, j) = (θ, ψ, θ) and (θ, ψ, ψ)
        let r1 = quad(&d_theta, &ep, &et) - quad(&d_psi, &et, &et) - gp;
        let r2 = quad(&d_theta, &ep, &ep) - quad(&d_psi, &et, &ep) + gt;
        worst = worst.max(r1.abs()).max(r2.abs());
    }
    Ok(worst)
}

/// Writes the point-cloud CSV `node_index,theta[,psi],x,y[,z]`.
pub fn write_point_cloud_csv<W: Write>(mut out: W, grid: &SphericalGrid, points: &[[f64; 3]]) -> io::Result<()> {
    if grid.dim() == 1 {
        writeln!(out, "node_index,theta,x,y")?;
        for (k, p) in points.iter().enumerate() {
            let (t, _) = grid.angles(k);
            writeln!(out, "{k},{},{},{}", fmt_f64(t), fmt_f64(p[0]), fmt_f64(p[1]))?;
        }
    } else {
        writeln!(out, "node_index,theta,psi,x,y,z")?;
        for (k, p) in points.iter().enumerate() {
            let (t, ps) = grid.angles(k);
            writeln!(out, "{k},{},{},{},{},{}", fmt_f64(t), fmt_f64(ps), fmt_f64(p[0]), fmt_f64(p[1]), fmt_f64(p[2]))?;
        }
    }
    Ok(())
}

/// 17 significant digits, stable across platforms.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".to_string()
    } else if v > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

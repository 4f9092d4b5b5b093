//! Local analysis of the contact region in graph coordinates.
//!
//! Near a direction `z_c` both the solution surface and the obstacle are
//! graphs over the plane orthogonal to `z_c`, seen from outside: heights are
//! measured along `−z_c`, so both graphs are convex, `w` (solution) lies
//! below `φ_g` (obstacle) and `v = φ_g − w ≥ 0` vanishes on the coincidence
//! set `Λ`. The free boundary `Γ` separates `Λ` from `Ω = {v > tol}`.
//!
//! Patches carry a uniform grid over `[−r, r]^n` and one slice per
//! trajectory snapshot in the requested time window.

use std::f64::consts::PI;
use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

use crate::flow::{centered_derivative, Trajectory};
use crate::obstacle::{Obstacle, ObstacleError};
use crate::shapes::dot;
use crate::sphere::{embed, fmt_f64, GeometryError, ScalarField, SphericalGrid};

const INVERSION_MAX_ITERS: usize = 60;
const GOLDEN: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FreeBoundaryError {
    #[error("surface is not a graph over the patch at t = {t} (x = {x:?})")]
    NotGraphable { t: f64, x: [f64; 2] },
    #[error("patch needs at least 2 snapshots in the time window, found {0}")]
    InsufficientSnapshots(usize),
    #[error("empty point set")]
    EmptySet,
    #[error("probe leaves the patch: {0}")]
    OutOfPatch(String),
    #[error("no dominant direction in the blowup profile")]
    DegenerateProfile,
    #[error("free boundary is not a graph in slice {slice}")]
    NotGraphLike { slice: usize },
    #[error("free boundary is empty")]
    EmptyBoundary,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Obstacle(#[from] ObstacleError),
}

pub type Result<T> = std::result::Result<T, FreeBoundaryError>;

/// Position of the graph frame in ℝ³.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PatchFrame {
    /// Outer normal `z_c` at the patch centre.
    pub center: [f64; 3],
    /// Orthonormal basis of the tangent plane (the second is unused for n = 1).
    pub tangents: [[f64; 3]; 2],
    /// Obstacle point with normal `z_c` at the first slice.
    pub origin: [f64; 3],
}

/// One parabolic rescaling `v_r(y, s) = (v(x₀ + ry, t₀ + r²s) − v(x₀, t₀))/r²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rescaling {
    pub x0: [f64; 2],
    pub t0: f64,
    pub r: f64,
    /// `v(x₀, t₀)` of the source.
    pub v0: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphPatch {
    dim: usize,
    half_width: f64,
    points: usize,
    spacing: f64,
    times: Vec<f64>,
    w: Vec<Vec<f64>>,
    phi: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    alpha: f64,
    ellipticity: f64,
    forcing_lower: f64,
    /// Top time of `Q_1`: the last slice, or `s = 0` after rescaling.
    anchor_time: f64,
    frame: Option<PatchFrame>,
    rescalings: Vec<Rescaling>,
}

impl GraphPatch {
    /// Patch from sampled graphs; `w[k][cell]` and `phi[k][cell]` per slice.
    /// Cells are numbered `i + points·j` with `x = (−r + i h, −r + j h)`.
    pub fn from_samples(
        dim: usize,
        half_width: f64,
        points: usize,
        times: Vec<f64>,
        w: Vec<Vec<f64>>,
        phi: Vec<Vec<f64>>,
        alpha: f64,
    ) -> Result<Self> {
        if !(dim == 1 || dim == 2) {
            return Err(FreeBoundaryError::InvalidParameter(format!("patch dimension {dim}")));
        }
        if points < 5 || !(half_width > 0.0 && half_width.is_finite()) {
            return Err(FreeBoundaryError::InvalidParameter(format!(
                "need >= 5 points per axis and half width > 0, got {points} and {half_width}"
            )));
        }
        if times.len() < 2 {
            return Err(FreeBoundaryError::InsufficientSnapshots(times.len()));
        }
        if times.windows(2).any(|p| p[1] <= p[0]) {
            return Err(FreeBoundaryError::InvalidParameter("slice times must increase".into()));
        }
        let cells = if dim == 1 { points } else { points * points };
        if w.len() != times.len() || phi.len() != times.len() || w.iter().chain(&phi).any(|s| s.len() != cells) {
            return Err(FreeBoundaryError::InvalidParameter("sample arrays do not match the grid".into()));
        }
        let v = w.iter().zip(&phi).map(|(a, b)| b.iter().zip(a).map(|(p, q)| p - q).collect()).collect();
        let anchor_time = *times.last().expect("checked length");
        let mut patch = Self {
            dim,
            half_width,
            points,
            spacing: 2.0 * half_width / (points - 1) as f64,
            times,
            w,
            phi,
            v,
            alpha,
            ellipticity: f64::NAN,
            forcing_lower: f64::NAN,
            anchor_time,
            frame: None,
            rescalings: Vec::new(),
        };
        let (theta, c) = patch.measure_constants();
        patch.ellipticity = theta;
        patch.forcing_lower = c;
        Ok(patch)
    }

    /// Patch from closed-form graphs `w(x, t)` and `φ_g(x, t)`.
    pub fn from_fns(
        dim: usize,
        half_width: f64,
        points: usize,
        times: Vec<f64>,
        w: impl Fn([f64; 2], f64) -> f64,
        phi: impl Fn([f64; 2], f64) -> f64,
        alpha: f64,
    ) -> Result<Self> {
        let cells = if dim == 1 { points } else { points * points };
        let h = 2.0 * half_width / (points.max(2) - 1) as f64;
        let pos = |c: usize| {
            let (i, j) = (c % points, c / points);
            [-half_width + i as f64 * h, if dim == 1 { 0.0 } else { -half_width + j as f64 * h }]
        };
        let ws = times.iter().map(|&t| (0..cells).map(|c| w(pos(c), t)).collect()).collect();
        let ps = times.iter().map(|&t| (0..cells).map(|c| phi(pos(c), t)).collect()).collect();
        Self::from_samples(dim, half_width, points, times, ws, ps, alpha)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn cell_count(&self) -> usize {
        if self.dim == 1 {
            self.points
        } else {
            self.points * self.points
        }
    }

    pub fn w(&self, slice: usize) -> &[f64] {
        &self.w[slice]
    }

    pub fn phi(&self, slice: usize) -> &[f64] {
        &self.phi[slice]
    }

    pub fn v(&self, slice: usize) -> &[f64] {
        &self.v[slice]
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `θ` with `θ^{−1}|ξ|² ≤ F^{ij}ξ_iξ_j ≤ θ|ξ|²` over the interior cells;
    /// infinite if `D²w` is not positive definite somewhere.
    pub fn ellipticity(&self) -> f64 {
        self.ellipticity
    }

    /// Lower bound `c` of the forcing `f(Dv, x, t)` over the interior cells.
    pub fn forcing_lower(&self) -> f64 {
        self.forcing_lower
    }

    pub fn anchor_time(&self) -> f64 {
        self.anchor_time
    }

    pub fn frame(&self) -> Option<&PatchFrame> {
        self.frame.as_ref()
    }

    pub fn rescalings(&self) -> &[Rescaling] {
        &self.rescalings
    }

    /// Copy with `v` capped at `cap` (the solution graph raised towards the
    /// obstacle), which removes the quadratic growth away from `Γ`.
    pub fn with_capped_gap(&self, cap: f64) -> Self {
        let w: Vec<Vec<f64>> =
            self.phi.iter().zip(&self.v).map(|(p, v)| p.iter().zip(v).map(|(a, b)| a - b.min(cap)).collect()).collect();
        let v = self.v.iter().map(|s| s.iter().map(|x| x.min(cap)).collect()).collect();
        Self { w, v, ..self.clone() }
    }

    /// A coincidence threshold of the unscaled patch expressed in the units
    /// of this one.
    pub fn rescaled_threshold(&self, tol_c: f64) -> f64 {
        self.rescalings.iter().fold(tol_c, |tol, s| (tol - s.v0) / (s.r * s.r))
    }

    /// The convexity structure behind the probes needs `α ≤ 1/n`.
    pub fn in_hypothesis(&self) -> bool {
        self.alpha <= 1.0 / self.dim as f64 + 1e-12
    }

    pub fn position(&self, cell: usize) -> [f64; 2] {
        let (i, j) = (cell % self.points, cell / self.points);
        let y = if self.dim == 1 { 0.0 } else { -self.half_width + j as f64 * self.spacing };
        [-self.half_width + i as f64 * self.spacing, y]
    }

    fn cell(&self, i: usize, j: usize) -> usize {
        i + self.points * j
    }

    fn is_interior(&self, cell: usize) -> bool {
        let (i, j) = (cell % self.points, cell / self.points);
        let inner = |k: usize| k > 0 && k + 1 < self.points;
        inner(i) && (self.dim == 1 || inner(j))
    }

    /// Spatial face neighbours.
    fn neighbors(&self, cell: usize) -> impl Iterator<Item = usize> + '_ {
        let (i, j) = (cell % self.points, cell / self.points);
        let m = self.points;
        let cand: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
        cand.into_iter().filter_map(move |(di, dj)| {
            if self.dim == 1 && dj != 0 {
                return None;
            }
            let (a, b) = (i as isize + di, j as isize + dj);
            (a >= 0 && b >= 0 && (a as usize) < m && (b as usize) < m).then(|| self.cell(a as usize, b as usize))
        })
    }

    /// Gradient by centered differences (one-sided on the box edges).
    fn gradient(&self, f: &[f64], cell: usize) -> [f64; 2] {
        let (i, j) = (cell % self.points, cell / self.points);
        let m = self.points;
        let h = self.spacing;
        let d = |lo: usize, hi: usize, span: f64| (f[hi] - f[lo]) / (span * h);
        let along = |k: usize, at: &dyn Fn(usize) -> usize| {
            if k == 0 {
                d(at(0), at(1), 1.0)
            } else if k + 1 == m {
                d(at(m - 2), at(m - 1), 1.0)
            } else {
                d(at(k - 1), at(k + 1), 2.0)
            }
        };
        let gx = along(i, &|a| self.cell(a, j));
        let gy = if self.dim == 1 { 0.0 } else { along(j, &|b| self.cell(i, b)) };
        [gx, gy]
    }

    /// Hessian `[f_11, f_12, f_22]` at an interior cell.
    fn hessian(&self, f: &[f64], cell: usize) -> [f64; 3] {
        let (i, j) = (cell % self.points, cell / self.points);
        let h2 = self.spacing * self.spacing;
        let c = f[cell];
        let fxx = (f[self.cell(i + 1, j)] - 2.0 * c + f[self.cell(i - 1, j)]) / h2;
        if self.dim == 1 {
            return [fxx, 0.0, 0.0];
        }
        let fyy = (f[self.cell(i, j + 1)] - 2.0 * c + f[self.cell(i, j - 1)]) / h2;
        let fxy = (f[self.cell(i + 1, j + 1)] - f[self.cell(i + 1, j - 1)] - f[self.cell(i - 1, j + 1)]
            + f[self.cell(i - 1, j - 1)])
            / (4.0 * h2);
        [fxx, fxy, fyy]
    }

    /// Time derivative of `field` at a slice and cell.
    fn time_derivative(&self, field: &[Vec<f64>], slice: usize, cell: usize) -> f64 {
        let t = &self.times;
        let k = slice;
        if k == 0 {
            (field[1][cell] - field[0][cell]) / (t[1] - t[0])
        } else if k + 1 == t.len() {
            (field[k][cell] - field[k - 1][cell]) / (t[k] - t[k - 1])
        } else {
            centered_derivative([t[k - 1], t[k], t[k + 1]], [field[k - 1][cell], field[k][cell], field[k + 1][cell]])
        }
    }

    pub fn dt_v(&self, slice: usize, cell: usize) -> f64 {
        self.time_derivative(&self.v, slice, cell)
    }

    fn measure_constants(&self) -> (f64, f64) {
        let n = self.dim as f64;
        let a = self.alpha;
        let e = ((n + 2.0) * a - 1.0) / 2.0;
        let mut theta = 0.0_f64;
        let mut c = f64::INFINITY;
        for k in 0..self.times.len() {
            for cell in (0..self.cell_count()).filter(|&c| self.is_interior(c)) {
                let dw = self.gradient(&self.w[k], cell);
                let q = (1.0 + dw[0] * dw[0] + dw[1] * dw[1]).powf(e);
                let hw = self.hessian(&self.w[k], cell);
                let hp = self.hessian(&self.phi[k], cell);
                let (det_w, eig_w) = sym_eigen(hw, self.dim);
                let (det_p, _) = sym_eigen(hp, self.dim);
                // F^{ij} has eigenvalues α det^α / (q·μ) for eigenvalues μ of D²w
                if eig_w[0] > 0.0 {
                    let s = a * det_w.powf(a) / q;
                    let lam = [s / eig_w[1], s / eig_w[0]];
                    theta = theta.max(lam[1]).max(1.0 / lam[0]);
                } else {
                    theta = f64::INFINITY;
                }
                let f = -self.time_derivative(&self.phi, k, cell) + det_p.max(0.0).powf(a) / q;
                c = c.min(f);
            }
        }
        (theta, c)
    }

    /// Catmull–Rom value of slice `k` of `field` at `x`, with quadratic
    /// extrapolation past the box edges.
    fn sample_slice(&self, field: &[f64], x: [f64; 2]) -> f64 {
        let m = self.points;
        let h = self.spacing;
        let frac = |c: f64| ((c + self.half_width) / h).clamp(0.0, (m - 1) as f64);
        let idx = |fi: f64| {
            let i0 = (fi.floor() as usize).min(m - 2);
            (i0, fi - i0 as f64)
        };
        let fetch_line = |get: &dyn Fn(usize) -> f64, k: isize| -> f64 {
            if k < 0 {
                3.0 * get(0) - 3.0 * get(1) + get(2)
            } else if k as usize >= m {
                3.0 * get(m - 1) - 3.0 * get(m - 2) + get(m - 3)
            } else {
                get(k as usize)
            }
        };
        let (i0, ti) = idx(frac(x[0]));
        let wi = catmull_rom(ti);
        let along_x = |j: usize| -> f64 {
            let get = |i: usize| field[self.cell(i, j)];
            (0..4).map(|a| wi[a] * fetch_line(&get, i0 as isize - 1 + a as isize)).sum()
        };
        if self.dim == 1 {
            return along_x(0);
        }
        let (j0, tj) = idx(frac(x[1]));
        let wj = catmull_rom(tj);
        (0..4).map(|b| wj[b] * fetch_line(&|j| along_x(j), j0 as isize - 1 + b as isize)).sum()
    }

    /// `v` at `(x, t)` with cubic interpolation in space and linear in time.
    pub fn sample_v(&self, x: [f64; 2], t: f64) -> Result<f64> {
        let k = self.bracket(t)?;
        if k + 1 == self.times.len() || self.times[k] == t {
            return Ok(self.sample_slice(&self.v[k], x));
        }
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let s = (t - t0) / (t1 - t0);
        Ok((1.0 - s) * self.sample_slice(&self.v[k], x) + s * self.sample_slice(&self.v[k + 1], x))
    }

    /// Index of the last slice with time ≤ `t`.
    fn bracket(&self, t: f64) -> Result<usize> {
        let tol = 1e-12 * self.times.last().unwrap().abs().max(1.0);
        let (first, last) = (self.times[0], *self.times.last().unwrap());
        if t < first - tol || t > last + tol {
            return Err(FreeBoundaryError::OutOfPatch(format!("time {t} outside [{first}, {last}]")));
        }
        Ok(self.times.iter().rposition(|&s| s <= t + tol).unwrap_or(0))
    }

    fn inside(&self, x: [f64; 2], r: f64) -> bool {
        let tol = 1e-12 * self.half_width;
        let ok = |c: f64| c.abs() + r <= self.half_width + tol;
        ok(x[0]) && (self.dim == 1 || ok(x[1]))
    }

    /// CSV `i,j,t_index,w,phi,v`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "i,j,t_index,w,phi,v")?;
        for k in 0..self.times.len() {
            for cell in 0..self.cell_count() {
                writeln!(
                    out,
                    "{},{},{k},{},{},{}",
                    cell % self.points,
                    cell / self.points,
                    fmt_f64(self.w[k][cell]),
                    fmt_f64(self.phi[k][cell]),
                    fmt_f64(self.v[k][cell])
                )?;
            }
        }
        Ok(())
    }
}

fn catmull_rom(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [0.5 * (-t3 + 2.0 * t2 - t), 0.5 * (3.0 * t3 - 5.0 * t2 + 2.0), 0.5 * (-3.0 * t3 + 4.0 * t2 + t), 0.5 * (t3 - t2)]
}

/// Determinant and ascending eigenvalues of `[a, b; b, d]` (or `[a]` for n = 1).
fn sym_eigen(m: [f64; 3], dim: usize) -> (f64, [f64; 2]) {
    if dim == 1 {
        return (m[0], [m[0], m[0]]);
    }
    let half_tr = 0.5 * (m[0] + m[2]);
    let disc = (0.25 * (m[0] - m[2]).powi(2) + m[1] * m[1]).sqrt();
    (m[0] * m[2] - m[1] * m[1], [half_tr - disc, half_tr + disc])
}

/// Embedded point cloud of one surface with interpolation by direction.
struct SurfaceSampler<'a> {
    grid: &'a SphericalGrid,
    coords: [Vec<f64>; 3],
}

impl<'a> SurfaceSampler<'a> {
    fn new(u: &'a ScalarField) -> Result<Self> {
        let grid = u.grid().as_ref();
        let pts = embed(u, grid)?;
        let coords = std::array::from_fn(|c| pts.iter().map(|p| p[c]).collect());
        Ok(Self { grid, coords })
    }

    fn point(&self, z: [f64; 3]) -> [f64; 3] {
        let (fi, fj) = if self.grid.dim() == 1 {
            self.grid.fractional_coords(z[1].atan2(z[0]), 0.0)
        } else {
            self.grid.fractional_coords(z[2].clamp(-1.0, 1.0).acos(), z[1].atan2(z[0]))
        };
        std::array::from_fn(|c| self.grid.interpolate(&self.coords[c], fi, fj))
    }
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn tangent_basis(z: [f64; 3], dim: usize) -> [[f64; 3]; 2] {
    if dim == 1 {
        return [[-z[1], z[0], 0.0], [0.0; 3]];
    }
    let axis = (0..3).min_by(|&a, &b| z[a].abs().total_cmp(&z[b].abs())).expect("three axes");
    let mut a = [0.0; 3];
    a[axis] = 1.0;
    let p = dot(a, z);
    let e1 = normalize([a[0] - p * z[0], a[1] - p * z[1], a[2] - p * z[2]]);
    [e1, cross(z, e1)]
}

/// Inverts `ζ ↦ tangential coordinates of X(z(ζ))`; returns the graph height
/// `⟨X − origin, −z_c⟩` and the converged `ζ`.
fn invert_graph(
    surf: &SurfaceSampler<'_>,
    frame: &PatchFrame,
    dim: usize,
    x: [f64; 2],
    guess: [f64; 2],
) -> Option<(f64, [f64; 2])> {
    let [e1, e2] = frame.tangents;
    let z_c = frame.center;
    let dir = |zeta: [f64; 2]| normalize(std::array::from_fn(|c| z_c[c] + zeta[0] * e1[c] + zeta[1] * e2[c]));
    let coords = |zeta: [f64; 2]| {
        let p = surf.point(dir(zeta));
        let d = [p[0] - frame.origin[0], p[1] - frame.origin[1], p[2] - frame.origin[2]];
        ([dot(d, e1), if dim == 1 { 0.0 } else { dot(d, e2) }], -dot(d, z_c))
    };
    let scale = 1.0 + x[0].abs() + x[1].abs();
    let mut zeta = guess;
    for _ in 0..INVERSION_MAX_ITERS {
        let (p, height) = coords(zeta);
        let r = [p[0] - x[0], p[1] - x[1]];
        if r[0].abs().max(r[1].abs()) <= 1e-12 * scale {
            return (zeta[0].abs() < 1e6 && zeta[1].abs() < 1e6).then_some((height, zeta));
        }
        let eps = 1e-6;
        let col = |k: usize| {
            let mut a = zeta;
            let mut b = zeta;
            a[k] += eps;
            b[k] -= eps;
            let (pa, _) = coords(a);
            let (pb, _) = coords(b);
            [(pa[0] - pb[0]) / (2.0 * eps), (pa[1] - pb[1]) / (2.0 * eps)]
        };
        let j0 = col(0);
        let step = if dim == 1 {
            if !(j0[0] > 0.0) {
                return None;
            }
            [r[0] / j0[0], 0.0]
        } else {
            let j1 = col(1);
            let det = j0[0] * j1[1] - j1[0] * j0[1];
            if !(det > 0.0) {
                return None;
            }
            [(j1[1] * r[0] - j1[0] * r[1]) / det, (j0[0] * r[1] - j0[1] * r[0]) / det]
        };
        zeta = [zeta[0] - step[0], zeta[1] - step[1]];
        if !(zeta[0].is_finite() && zeta[1].is_finite()) {
            return None;
        }
    }
    None
}

/// Graph patch of the solution and obstacle around direction `center` over
/// `[−half_width, half_width]^n`, one slice per snapshot in `window`.
pub fn extract_patch(
    traj: &Trajectory,
    obstacle: &Obstacle,
    center: [f64; 3],
    half_width: f64,
    points: usize,
    window: (f64, f64),
) -> Result<GraphPatch> {
    let grid = traj.grid().clone();
    let dim = grid.dim();
    let z_c = if dim == 1 { normalize([center[0], center[1], 0.0]) } else { normalize(center) };
    if !z_c.iter().all(|c| c.is_finite()) {
        return Err(FreeBoundaryError::InvalidParameter("zero centre direction".into()));
    }
    let tol = 1e-12 * window.1.abs().max(1.0);
    let snaps: Vec<_> = traj.snapshots.iter().filter(|s| s.t >= window.0 - tol && s.t <= window.1 + tol).collect();
    if snaps.len() < 2 {
        return Err(FreeBoundaryError::InsufficientSnapshots(snaps.len()));
    }
    let tangents = tangent_basis(z_c, dim);
    let (phi_first, _) = obstacle.evaluate_on(&grid, snaps[0].t)?;
    let origin = SurfaceSampler::new(&phi_first)?.point(z_c);
    let frame = PatchFrame { center: z_c, tangents, origin };
    let cells = if dim == 1 { points } else { points * points };
    let h = 2.0 * half_width / (points.max(2) - 1) as f64;
    let pos = |c: usize| {
        let (i, j) = (c % points, c / points);
        [-half_width + i as f64 * h, if dim == 1 { 0.0 } else { -half_width + j as f64 * h }]
    };
    let graph = |u: &ScalarField, t: f64| -> Result<Vec<f64>> {
        let surf = SurfaceSampler::new(u)?;
        let mut out = vec![0.0; cells];
        let mut row_start = [0.0; 2];
        let mut guess = [0.0; 2];
        for c in 0..cells {
            if c % points == 0 {
                guess = row_start;
            }
            let x = pos(c);
            let (height, zeta) =
                invert_graph(&surf, &frame, dim, x, guess).ok_or(FreeBoundaryError::NotGraphable { t, x })?;
            out[c] = height;
            guess = zeta;
            if c % points == 0 {
                row_start = zeta;
            }
        }
        Ok(out)
    };
    let mut times = Vec::with_capacity(snaps.len());
    let mut ws = Vec::with_capacity(snaps.len());
    let mut ps = Vec::with_capacity(snaps.len());
    for s in snaps {
        let (phi, _) = obstacle.evaluate_on(&grid, s.t)?;
        ws.push(graph(&s.u, s.t)?);
        ps.push(graph(&phi, s.t)?);
        times.push(s.t);
    }
    let mut patch = GraphPatch::from_samples(dim, half_width, points, times, ws, ps, traj.meta.alpha)?;
    patch.frame = Some(frame);
    Ok(patch)
}

/// Up to `count` boundary points `(slice, cell)` whose cylinders
/// `Q_r`, `r ≤ r_max`, lie inside the patch, evenly spread over the
/// candidates in slice-major order.
pub fn boundary_probes(
    patch: &GraphPatch,
    report: &FreeBoundaryReport,
    r_max: f64,
    count: usize,
) -> Vec<(usize, usize)> {
    let t_min = patch.times[0] + r_max * r_max * (1.0 - 1e-12);
    let candidates: Vec<(usize, usize)> = (0..patch.times.len())
        .filter(|&k| patch.times[k] >= t_min)
        .flat_map(|k| report.slice_boundary(patch, k).into_iter().map(move |c| (k, c)))
        .filter(|&(_, c)| patch.inside(patch.position(c), r_max))
        .collect();
    if candidates.len() <= count {
        return candidates;
    }
    (0..count).map(|i| candidates[(2 * i + 1) * candidates.len() / (2 * count)]).collect()
}

/// Coincidence set, free boundary and derived probe results of one patch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FreeBoundaryReport {
    pub tol_c: f64,
    /// `Λ` per slice and cell.
    #[serde(serialize_with = "ser_mask")]
    pub mask: Vec<Vec<bool>>,
    /// `Γ` as `(slice, cell)`: contact cells with a space-time face neighbour in `Ω`.
    pub boundary: Vec<(usize, usize)>,
    /// `MD(Λ^t)` per slice; `None` for empty slices.
    pub minimal_diameters: Vec<Option<f64>>,
    pub thickness: Vec<ThicknessSample>,
    pub nondegeneracy: Vec<NondegeneracyResult>,
    pub monotonicity: Option<MonotonicityReport>,
    pub lipschitz: Vec<f64>,
    pub in_hypothesis: bool,
}

fn ser_mask<S: serde::Serializer>(mask: &[Vec<bool>], s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<String> = mask.iter().map(|row| row.iter().map(|&b| if b { '1' } else { '0' }).collect()).collect();
    rows.serialize(s)
}

impl FreeBoundaryReport {
    /// Spatial boundary cells of one slice: contact cells with a face neighbour in `Ω`.
    pub fn slice_boundary(&self, patch: &GraphPatch, slice: usize) -> Vec<usize> {
        let m = &self.mask[slice];
        (0..m.len()).filter(|&c| m[c] && patch.neighbors(c).any(|d| !m[d])).collect()
    }

    /// Cells whose contact status is lost between consecutive slices, as
    /// `(slice, cell)` with `slice` the later one.
    pub fn recessions(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for k in 1..self.mask.len() {
            for c in 0..self.mask[k].len() {
                if self.mask[k - 1][c] && !self.mask[k][c] {
                    out.push((k, c));
                }
            }
        }
        out
    }

    pub fn contact_counts(&self) -> Vec<usize> {
        self.mask.iter().map(|m| m.iter().filter(|&&b| b).count()).collect()
    }
}

/// `Λ = {v ≤ tol_c}` and `Γ` from face-neighbour changes in space-time.
pub fn coincidence_set(patch: &GraphPatch, tol_c: f64) -> Result<FreeBoundaryReport> {
    if !(tol_c > 0.0) {
        return Err(FreeBoundaryError::InvalidParameter(format!("tol_c must be > 0, got {tol_c}")));
    }
    let mask: Vec<Vec<bool>> = patch.v.iter().map(|s| s.iter().map(|&x| x <= tol_c).collect()).collect();
    let slices = mask.len();
    let mut boundary = Vec::new();
    for k in 0..slices {
        for c in 0..patch.cell_count() {
            if !mask[k][c] {
                continue;
            }
            let spatial = patch.neighbors(c).any(|d| !mask[k][d]);
            let temporal = (k > 0 && !mask[k - 1][c]) || (k + 1 < slices && !mask[k + 1][c]);
            if spatial || temporal {
                boundary.push((k, c));
            }
        }
    }
    let minimal_diameters = mask
        .iter()
        .map(|m| {
            let pts: Vec<[f64; 2]> = (0..m.len()).filter(|&c| m[c]).map(|c| patch.position(c)).collect();
            minimal_diameter(&pts, patch.dim).ok()
        })
        .collect();
    Ok(FreeBoundaryReport {
        tol_c,
        mask,
        boundary,
        minimal_diameters,
        thickness: Vec::new(),
        nondegeneracy: Vec::new(),
        monotonicity: None,
        lipschitz: Vec::new(),
        in_hypothesis: patch.in_hypothesis(),
    })
}

/// Least width of a point set between parallel hyperplanes. For planar sets
/// the width is scanned at 1° steps and refined by golden-section search.
pub fn minimal_diameter(points: &[[f64; 2]], dim: usize) -> Result<f64> {
    if points.is_empty() {
        return Err(FreeBoundaryError::EmptySet);
    }
    let width = |a: f64| {
        let (s, c) = a.sin_cos();
        let (lo, hi) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            let d = c * p[0] + s * p[1];
            (lo.min(d), hi.max(d))
        });
        hi - lo
    };
    if dim == 1 {
        return Ok(width(0.0));
    }
    let step = PI / 180.0;
    let best = (0..180).map(|k| k as f64 * step).min_by(|a, b| width(*a).total_cmp(&width(*b)));
    let best = best.expect("non-empty scan");
    let (mut a, mut b) = (best - step, best + step);
    for _ in 0..60 {
        let x1 = b - GOLDEN * (b - a);
        let x2 = a + GOLDEN * (b - a);
        if width(x1) <= width(x2) {
            b = x2;
        } else {
            a = x1;
        }
    }
    Ok(width(0.5 * (a + b)).min(width(best)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThicknessSample {
    pub x0: [f64; 2],
    pub t0: f64,
    pub r: f64,
    pub value: f64,
}

/// `inf_{|t−t₀| ≤ r²} MD(Λ^t ∩ B_r(x₀))/r` over the slices in range.
pub fn thickness(patch: &GraphPatch, report: &FreeBoundaryReport, x0: [f64; 2], slice: usize, r: f64) -> Result<f64> {
    if !(r > 0.0) || slice >= patch.times.len() {
        return Err(FreeBoundaryError::InvalidParameter(format!("radius {r}, slice {slice}")));
    }
    if !patch.inside(x0, r) {
        return Err(FreeBoundaryError::OutOfPatch(format!("ball of radius {r} at {x0:?}")));
    }
    let t0 = patch.times[slice];
    let mut best = f64::INFINITY;
    for (k, &t) in patch.times.iter().enumerate() {
        if (t - t0).abs() > r * r * (1.0 + 1e-12) {
            continue;
        }
        let pts: Vec<[f64; 2]> = (0..patch.cell_count())
            .filter(|&c| report.mask[k][c])
            .map(|c| patch.position(c))
            .filter(|p| (p[0] - x0[0]).hypot(p[1] - x0[1]) <= r * (1.0 + 1e-12))
            .collect();
        let md = minimal_diameter(&pts, patch.dim).unwrap_or(0.0);
        best = best.min(md / r);
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NondegeneracyResult {
    pub x0: [f64; 2],
    pub t0: f64,
    pub radii: Vec<f64>,
    /// `sup_{∂_pQ_r} v − v(X₀) − c r²/(2nθ+1)` per radius.
    pub margins: Vec<f64>,
}

/// Quadratic growth of `v` away from `X₀ = (x₀, t₀)` on the parabolic
/// boundaries of `Q_r(X₀) = B_r(x₀) × (t₀ − r², t₀)`.
pub fn nondegeneracy_probe(patch: &GraphPatch, x0: [f64; 2], t0: f64, radii: &[f64]) -> Result<NondegeneracyResult> {
    let n = patch.dim as f64;
    let slope = patch.forcing_lower / (2.0 * n * patch.ellipticity + 1.0);
    let v0 = patch.sample_v(x0, t0)?;
    let mut margins = Vec::with_capacity(radii.len());
    for &r in radii {
        if !(r > 0.0) {
            return Err(FreeBoundaryError::InvalidParameter(format!("radius {r}")));
        }
        if !patch.inside(x0, r) {
            return Err(FreeBoundaryError::OutOfPatch(format!("ball of radius {r} at {x0:?}")));
        }
        let bottom = t0 - r * r;
        patch.bracket(bottom)?;
        let circle: Vec<[f64; 2]> = if patch.dim == 1 {
            vec![[x0[0] - r, 0.0], [x0[0] + r, 0.0]]
        } else {
            (0..64)
                .map(|k| {
                    let a = 2.0 * PI * k as f64 / 64.0;
                    [x0[0] + r * a.cos(), x0[1] + r * a.sin()]
                })
                .collect()
        };
        let mut times: Vec<f64> = patch.times.iter().copied().filter(|&t| t > bottom && t <= t0).collect();
        times.push(bottom);
        times.push(t0);
        let mut sup = f64::NEG_INFINITY;
        for &t in &times {
            for &p in &circle {
                sup = sup.max(patch.sample_v(p, t)?);
            }
        }
        for c in 0..patch.cell_count() {
            let p = patch.position(c);
            if (p[0] - x0[0]).hypot(p[1] - x0[1]) <= r {
                sup = sup.max(patch.sample_v(p, bottom)?);
            }
        }
        margins.push(sup - v0 - slope * r * r);
    }
    Ok(NondegeneracyResult { x0, t0, radii: radii.to_vec(), margins })
}

/// Parabolic rescaling at `(x₀, t₀)` by `r`. The result keeps the grid size
/// and box of the source, its time axis is `s = (t − t₀)/r²`, and it inherits
/// the ellipticity and forcing constants of the source, which the scaling
/// leaves unchanged.
pub fn rescale(patch: &GraphPatch, x0: [f64; 2], t0: f64, r: f64) -> Result<GraphPatch> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(FreeBoundaryError::InvalidParameter(format!("scale {r}")));
    }
    if !patch.inside(x0, r * patch.half_width) {
        return Err(FreeBoundaryError::OutOfPatch(format!(
            "rescaled box of half width {} at {x0:?}",
            r * patch.half_width
        )));
    }
    let k0 = patch.bracket(t0)?;
    let at_t0 = |field: &[Vec<f64>]| -> f64 {
        let sample = |k: usize| patch.sample_slice(&field[k], x0);
        if k0 + 1 == patch.times.len() || patch.times[k0] == t0 {
            sample(k0)
        } else {
            let s = (t0 - patch.times[k0]) / (patch.times[k0 + 1] - patch.times[k0]);
            (1.0 - s) * sample(k0) + s * sample(k0 + 1)
        }
    };
    let (w0, p0) = (at_t0(&patch.w), at_t0(&patch.phi));
    let r2 = r * r;
    let map = |field: &[Vec<f64>], base: f64| -> Vec<Vec<f64>> {
        field
            .iter()
            .map(|slice| {
                (0..patch.cell_count())
                    .map(|c| {
                        let y = patch.position(c);
                        let x = [x0[0] + r * y[0], if patch.dim == 1 { 0.0 } else { x0[1] + r * y[1] }];
                        (patch.sample_slice(slice, x) - base) / r2
                    })
                    .collect()
            })
            .collect()
    };
    let w = map(&patch.w, w0);
    let phi = map(&patch.phi, p0);
    let v = w
        .iter()
        .zip(&phi)
        .map(|(a, b): (&Vec<f64>, &Vec<f64>)| b.iter().zip(a).map(|(p, q)| p - q).collect())
        .collect();
    let mut rescalings = patch.rescalings.clone();
    rescalings.push(Rescaling { x0, t0, r, v0: p0 - w0 });
    Ok(GraphPatch {
        times: patch.times.iter().map(|t| (t - t0) / r2).collect(),
        w,
        phi,
        v,
        anchor_time: 0.0,
        frame: patch.frame,
        rescalings,
        ..*patch_shape(patch)
    })
}

/// A copy of the scalar layout of `patch` with empty data.
fn patch_shape(patch: &GraphPatch) -> Box<GraphPatch> {
    Box::new(GraphPatch {
        dim: patch.dim,
        half_width: patch.half_width,
        points: patch.points,
        spacing: patch.spacing,
        times: Vec::new(),
        w: Vec::new(),
        phi: Vec::new(),
        v: Vec::new(),
        alpha: patch.alpha,
        ellipticity: patch.ellipticity,
        forcing_lower: patch.forcing_lower,
        anchor_time: patch.anchor_time,
        frame: patch.frame,
        rescalings: Vec::new(),
    })
}

/// Cells of `Q_ρ` at the anchor time: `|x| ≤ ρ·r_patch` and
/// `t ∈ [anchor − (ρ r_patch)², anchor]`.
fn cylinder(patch: &GraphPatch, rho: f64) -> Vec<(usize, usize)> {
    let rad = rho * patch.half_width;
    let t_lo = patch.anchor_time - rad * rad;
    let tol = 1e-12 * patch.anchor_time.abs().max(1.0);
    let mut out = Vec::new();
    for (k, &t) in patch.times.iter().enumerate() {
        if t < t_lo - tol || t > patch.anchor_time + tol {
            continue;
        }
        for c in 0..patch.cell_count() {
            let p = patch.position(c);
            if p[0].hypot(p[1]) <= rad + 1e-12 && patch.is_interior(c) {
                out.push((k, c));
            }
        }
    }
    out
}

/// Preferred direction `e₁`: dominant eigenvector of `D²v` averaged over the
/// non-contact cells touching `Γ`, oriented towards increasing `v`.
pub fn preferred_direction(patch: &GraphPatch, report: &FreeBoundaryReport) -> Result<[f64; 2]> {
    let mut hess = [0.0; 3];
    let mut grad = [0.0; 2];
    let mut count = 0usize;
    for k in 0..patch.times.len() {
        let m = &report.mask[k];
        for c in 0..patch.cell_count() {
            if m[c] || !patch.is_interior(c) || !patch.neighbors(c).any(|d| m[d]) {
                continue;
            }
            let h = patch.hessian(&patch.v[k], c);
            let g = patch.gradient(&patch.v[k], c);
            for i in 0..3 {
                hess[i] += h[i];
            }
            grad[0] += g[0];
            grad[1] += g[1];
            count += 1;
        }
    }
    if count == 0 {
        return Err(FreeBoundaryError::DegenerateProfile);
    }
    let mut e = if patch.dim == 1 {
        [1.0, 0.0]
    } else {
        let (_, eig) = sym_eigen(hess, 2);
        let lam = eig[1];
        if !(lam.abs() > 1e-14 * count as f64) {
            return Err(FreeBoundaryError::DegenerateProfile);
        }
        // (H − λI)e = 0
        let (a, b, d) = (hess[0] - lam, hess[1], hess[2] - lam);
        let cand = if a.abs() + b.abs() >= b.abs() + d.abs() { [-b, a] } else { [-d, b] };
        let n = cand[0].hypot(cand[1]);
        if !(n > 0.0) {
            [1.0, 0.0]
        } else {
            [cand[0] / n, cand[1] / n]
        }
    };
    let along = e[0] * grad[0] + e[1] * grad[1];
    if along < 0.0 {
        e = [-e[0], -e[1]];
    } else if along == 0.0 && patch.dim == 1 {
        return Err(FreeBoundaryError::DegenerateProfile);
    }
    Ok(e)
}

/// Space-time directions `(e_x, e_t)` with `e · (e₁, 0) = κ`.
pub fn direction_fan(e1: [f64; 2], dim: usize, kappa: f64, count: usize) -> Vec<([f64; 2], f64)> {
    let s = (1.0 - kappa * kappa).max(0.0).sqrt();
    let e2 = [-e1[1], e1[0]];
    (0..count)
        .map(|k| {
            if dim == 1 {
                // the two cone edges and the directions between them
                let a = (kappa.acos()) * (2.0 * k as f64 / (count.max(2) - 1) as f64 - 1.0);
                ([a.cos() * e1[0], 0.0], a.sin())
            } else {
                let a = 2.0 * PI * k as f64 / count as f64;
                let (sa, ca) = a.sin_cos();
                ([kappa * e1[0] + s * ca * e2[0], kappa * e1[1] + s * ca * e2[1]], s * sa)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirectionMargin {
    pub kappa: f64,
    pub spatial: [f64; 2],
    pub temporal: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub e1: [f64; 2],
    pub margins: Vec<DirectionMargin>,
    pub min_margin: f64,
    /// Directions whose margin is below `−tol`.
    pub failing: Vec<usize>,
    pub in_hypothesis: bool,
}

/// `min_{Q_{1/2}} (C_κ ∂_e v − v)` for 16 directions per `κ`, with
/// `C_κ = c_kappa` or `2/κ`.
pub fn monotonicity_probe(
    patch: &GraphPatch,
    report: &FreeBoundaryReport,
    kappas: &[f64],
    c_kappa: Option<f64>,
    direction: Option<[f64; 2]>,
    tol: f64,
) -> Result<MonotonicityReport> {
    let e1 = match direction {
        Some(e) => e,
        None => preferred_direction(patch, report)?,
    };
    let cells = cylinder(patch, 0.5);
    let mut margins = Vec::new();
    for &kappa in kappas {
        if !(kappa > 0.0 && kappa < 1.0) {
            return Err(FreeBoundaryError::InvalidParameter(format!("kappa must lie in (0, 1), got {kappa}")));
        }
        let ck = c_kappa.unwrap_or(2.0 / kappa);
        for (spatial, temporal) in direction_fan(e1, patch.dim, kappa, 16) {
            let margin = cells
                .iter()
                .map(|&(k, c)| {
                    let g = patch.gradient(&patch.v[k], c);
                    let de = spatial[0] * g[0] + spatial[1] * g[1] + temporal * patch.dt_v(k, c);
                    ck * de - patch.v[k][c]
                })
                .fold(f64::INFINITY, f64::min);
            margins.push(DirectionMargin { kappa, spatial, temporal, margin });
        }
    }
    let min_margin = margins.iter().map(|m| m.margin).fold(f64::INFINITY, f64::min);
    let failing = margins.iter().enumerate().filter(|(_, m)| !(m.margin >= -tol)).map(|(i, _)| i).collect();
    Ok(MonotonicityReport { e1, margins, min_margin, failing, in_hypothesis: patch.in_hypothesis() })
}

/// Largest slope of `Γ` as a graph over the line orthogonal to `e₁`, per
/// slice, maximised over the slices of `Q_1`. Slopes are least-squares fits over windows of
/// half the boundary length, which averages out the cell staircase. For
/// n = 1 the boundary is a point per slice and the slope is 0.
pub fn boundary_slope(patch: &GraphPatch, report: &FreeBoundaryReport, direction: Option<[f64; 2]>) -> Result<f64> {
    if patch.dim == 1 {
        return if report.boundary.is_empty() { Err(FreeBoundaryError::EmptyBoundary) } else { Ok(0.0) };
    }
    let e1 = match direction {
        Some(e) => e,
        None => preferred_direction(patch, report)?,
    };
    let e2 = [-e1[1], e1[0]];
    let h = patch.spacing;
    let mut best: Option<f64> = None;
    let top = patch.anchor_time;
    let tol = 1e-12 * top.abs().max(1.0);
    for k in 0..patch.times.len() {
        let t = patch.times[k];
        if t > top + tol || t < top - patch.half_width.powi(2) - tol {
            continue;
        }
        let cells = report.slice_boundary(patch, k);
        if cells.is_empty() {
            continue;
        }
        let mut bins: std::collections::BTreeMap<i64, Vec<f64>> = Default::default();
        for c in cells {
            let p = patch.position(c);
            let q = p[0] * e2[0] + p[1] * e2[1];
            let s = p[0] * e1[0] + p[1] * e1[1];
            bins.entry((q / h).round() as i64).or_default().push(s);
        }
        let mut profile = Vec::with_capacity(bins.len());
        for (q, mut ss) in bins {
            ss.sort_by(f64::total_cmp);
            if ss.windows(2).any(|p| p[1] - p[0] > 3.0 * h) {
                return Err(FreeBoundaryError::NotGraphLike { slice: k });
            }
            profile.push((q as f64 * h, ss.iter().sum::<f64>() / ss.len() as f64));
        }
        let width = (profile.len() / 2).max(3);
        if profile.len() < width {
            continue;
        }
        for win in profile.windows(width) {
            let slope = least_squares_slope(win).abs();
            best = Some(best.map_or(slope, |b: f64| b.max(slope)));
        }
    }
    best.ok_or(FreeBoundaryError::EmptyBoundary)
}

fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mq = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ms = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = pts.iter().map(|p| (p.0 - mq) * (p.1 - ms)).sum();
    let var: f64 = pts.iter().map(|p| (p.0 - mq).powi(2)).sum();
    cov / var
}

/// [`boundary_slope`] per zoom level; a decreasing sequence indicates a
/// `C¹` free boundary.
pub fn lipschitz_estimate(
    levels: &[(&GraphPatch, &FreeBoundaryReport)],
    direction: Option<[f64; 2]>,
) -> Result<Vec<f64>> {
    levels.iter().map(|(p, r)| boundary_slope(p, r, direction)).collect()
}

/// `max |∂_tv|` over cells within `d·h` of `Γ` (same slice), per `d`.
pub fn speed_near_boundary(patch: &GraphPatch, report: &FreeBoundaryReport, distances: &[f64]) -> Vec<f64> {
    let h = patch.spacing;
    let mut out = vec![0.0_f64; distances.len()];
    for k in 0..patch.times.len() {
        let gamma: Vec<[f64; 2]> = report.slice_boundary(patch, k).into_iter().map(|c| patch.position(c)).collect();
        if gamma.is_empty() {
            continue;
        }
        for c in 0..patch.cell_count() {
            let p = patch.position(c);
            let dist = gamma.iter().map(|g| (p[0] - g[0]).hypot(p[1] - g[1])).fold(f64::INFINITY, f64::min);
            let speed = patch.dt_v(k, c).abs();
            for (o, &d) in out.iter_mut().zip(distances) {
                if dist <= d * h * (1.0 + 1e-12) {
                    *o = o.max(speed);
                }
            }
        }
    }
    out
}

/// Quadratic fit `v ≈ a + b·y + ½yᵀAy + τ s` over the non-contact cells of
/// `B_1` on every slice up to the anchor time. After deep zooms `Q_1` itself
/// may hold a single slice, which leaves `τ` undetermined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlowupFit {
    pub hessian: [f64; 3],
    pub time_derivative: f64,
    /// `|τ| / ‖A‖_F`.
    pub ratio: f64,
    pub samples: usize,
}

pub fn fit_blowup(patch: &GraphPatch, tol_c: f64) -> Result<BlowupFit> {
    let tol_t = 1e-12 * patch.anchor_time.abs().max(1.0);
    let slices = (0..patch.times.len()).filter(|&k| patch.times[k] <= patch.anchor_time + tol_t);
    let rows: Vec<(Vec<f64>, f64)> = slices
        .flat_map(|k| (0..patch.cell_count()).map(move |c| (k, c)))
        .filter(|&(k, c)| {
            let y = patch.position(c);
            y[0].hypot(y[1]) <= patch.half_width + 1e-12 && patch.is_interior(c) && patch.v[k][c] > tol_c
        })
        .map(|(k, c)| {
            let [y1, y2] = patch.position(c);
            let s = patch.times[k];
            let basis = if patch.dim == 1 {
                vec![1.0, y1, 0.5 * y1 * y1, s]
            } else {
                vec![1.0, y1, y2, 0.5 * y1 * y1, y1 * y2, 0.5 * y2 * y2, s]
            };
            (basis, patch.v[k][c])
        })
        .collect();
    let p = if patch.dim == 1 { 4 } else { 7 };
    if rows.len() < 2 * p {
        return Err(FreeBoundaryError::DegenerateProfile);
    }
    let mut a = vec![vec![0.0; p + 1]; p];
    for (b, y) in &rows {
        for i in 0..p {
            for j in 0..p {
                a[i][j] += b[i] * b[j];
            }
            a[i][p] += b[i] * y;
        }
    }
    let x = solve_dense(a).ok_or(FreeBoundaryError::DegenerateProfile)?;
    let (hessian, tau) = if patch.dim == 1 { ([x[2], 0.0, 0.0], x[3]) } else { ([x[3], x[4], x[5]], x[6]) };
    let norm = (hessian[0].powi(2) + 2.0 * hessian[1].powi(2) + hessian[2].powi(2)).sqrt();
    Ok(BlowupFit { hessian, time_derivative: tau, ratio: tau.abs() / norm, samples: rows.len() })
}

/// Gaussian elimination with partial pivoting on an augmented matrix.
fn solve_dense(mut a: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let n = a.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..=n {
                a[row][k] -= f * a[col][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (a[row][n] - s) / a[row][row];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half_space_patch(gamma: f64) -> GraphPatch {
        // φ_g = |x|²/2, w = φ_g − (γ/2)(x₁)₊²
        GraphPatch::from_fns(
            2,
            1.0,
            81,
            vec![-0.5, -0.25, 0.0],
            move |x, _| 0.5 * (x[0] * x[0] + x[1] * x[1]) - 0.5 * gamma * x[0].max(0.0).powi(2),
            |x, _| 0.5 * (x[0] * x[0] + x[1] * x[1]),
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn minimal_diameter_reference_shapes() {
        let mut disc = Vec::new();
        let mut square = Vec::new();
        let mut segment = Vec::new();
        let n = 201;
        for i in 0..n {
            for j in 0..n {
                let p = [-1.0 + 2.0 * i as f64 / (n - 1) as f64, -1.0 + 2.0 * j as f64 / (n - 1) as f64];
                if p[0].hypot(p[1]) <= 1.0 {
                    disc.push(p);
                }
                square.push([0.5 * p[0] + 0.2 * p[1], -0.2 * p[0] + 0.5 * p[1]].map(|c| c / 0.29f64.sqrt() * 0.5));
            }
            segment.push([2.0 * i as f64 / (n - 1) as f64, 0.0]);
        }
        assert!((minimal_diameter(&disc, 2).unwrap() - 2.0).abs() < 0.02);
        // rotated unit square
        assert!((minimal_diameter(&square, 2).unwrap() - 1.0).abs() < 0.01);
        assert!(minimal_diameter(&segment, 2).unwrap() <= 2.0 * 0.01);
        assert_eq!(minimal_diameter(&[[0.3, 0.0], [1.0, 0.0]], 1).unwrap(), 0.7);
        assert_eq!(minimal_diameter(&[], 2), Err(FreeBoundaryError::EmptySet));
    }

    #[test]
    fn degenerate_patches() {
        let p = GraphPatch::from_fns(2, 1.0, 21, vec![0.0, 1.0], |x, _| x[0] * x[0], |x, _| x[0] * x[0], 0.5).unwrap();
        let r = coincidence_set(&p, 1e-9).unwrap();
        assert!(r.mask.iter().all(|m| m.iter().all(|&b| b)));
        assert!(r.boundary.is_empty());
        assert!(matches!(boundary_slope(&p, &r, Some([1.0, 0.0])), Err(FreeBoundaryError::EmptyBoundary)));
        let q = GraphPatch::from_fns(2, 1.0, 21, vec![0.0, 1.0], |_, _| 0.0, |_, _| 1.0, 0.5).unwrap();
        let r = coincidence_set(&q, 1e-9).unwrap();
        assert!(r.mask.iter().all(|m| m.iter().all(|&b| !b)));
    }

    #[test]
    fn synthetic_boundary_converges_to_the_kink() {
        let p =
            GraphPatch::from_fns(2, 1.0, 201, vec![0.0, 1.0], |_, _| 0.0, |x, _| x[0].max(0.0).powi(2), 0.5).unwrap();
        for tol in [1e-2, 1e-4] {
            let r = coincidence_set(&p, tol).unwrap();
            let xs: Vec<f64> = r.slice_boundary(&p, 0).into_iter().map(|c| p.position(c)[0]).collect();
            for x in xs {
                assert!((x - tol.sqrt()).abs() <= p.spacing() + 1e-12, "{x} vs {}", tol.sqrt());
            }
        }
    }

    #[test]
    fn half_space_thickness_is_scale_free() {
        let p = half_space_patch(0.5);
        let r = coincidence_set(&p, 1e-12).unwrap();
        for rad in [0.2, 0.4, 0.8] {
            let d = thickness(&p, &r, [0.0, 0.0], 2, rad).unwrap();
            assert!((d - 1.0).abs() < 0.05, "r = {rad}: {d}");
        }
        assert!(matches!(thickness(&p, &r, [0.5, 0.0], 2, 0.8), Err(FreeBoundaryError::OutOfPatch(_))));
    }

    #[test]
    fn nondegeneracy_on_quadratic_model() {
        let gamma = 0.5;
        let p = half_space_patch(gamma);
        // w = |x|²/2 − (γ/2)x₁² on x₁ > 0: F^{ij} eigenvalues from D²w = diag(1−γ, 1)
        assert!(p.ellipticity().is_finite() && p.forcing_lower() > 0.0);
        let res = nondegeneracy_probe(&p, [0.0, 0.0], 0.0, &[0.1, 0.2, 0.4]).unwrap();
        for (r, m) in res.radii.iter().zip(&res.margins) {
            let expect = 0.5 * gamma * r * r - p.forcing_lower() * r * r / (4.0 * p.ellipticity() + 1.0);
            assert!((m - expect).abs() < 1e-9, "{m} vs {expect}");
            assert!(*m >= 0.0);
        }
        // capping v destroys the quadratic growth
        let capped = GraphPatch::from_samples(
            2,
            1.0,
            81,
            p.times().to_vec(),
            (0..3).map(|k| p.phi(k).iter().zip(p.v(k)).map(|(a, b)| a - b.min(1e-4)).collect()).collect(),
            (0..3).map(|k| p.phi(k).to_vec()).collect(),
            0.5,
        )
        .unwrap();
        let res = nondegeneracy_probe(&capped, [0.0, 0.0], 0.0, &[0.4]).unwrap();
        assert!(res.margins[0] < 0.0);
    }

    #[test]
    fn margins_unchanged_by_common_shift() {
        // dyadic samples keep both shifts exact, so the comparison is bitwise
        let p = half_space_patch(0.5);
        let q = |f: &[f64], s: f64| f.iter().map(|x| (x * 1048576.0).round() / 1048576.0 + s).collect::<Vec<_>>();
        let build = |s: f64| {
            GraphPatch::from_samples(
                2,
                1.0,
                81,
                p.times().to_vec(),
                (0..3).map(|k| q(p.w(k), s)).collect(),
                (0..3).map(|k| q(p.phi(k), s)).collect(),
                0.5,
            )
            .unwrap()
        };
        let a = nondegeneracy_probe(&build(0.0), [0.1, 0.0], 0.0, &[0.1, 0.2]).unwrap();
        let b = nondegeneracy_probe(&build(3.25), [0.1, 0.0], 0.0, &[0.1, 0.2]).unwrap();
        assert_eq!(a.margins, b.margins);
    }

    #[test]
    fn profile_is_fixed_by_rescaling() {
        let p = half_space_patch(0.5);
        let q = rescale(&p, [0.0, 0.0], 0.0, 0.5).unwrap();
        for k in 0..3 {
            for c in 0..q.cell_count() {
                let y = q.position(c);
                let exact = 0.25 * y[0].max(0.0).powi(2);
                assert!((q.v(k)[c] - exact).abs() < 2e-3, "{} vs {exact}", q.v(k)[c]);
            }
        }
        assert_eq!(q.rescalings().len(), 1);
        assert_eq!(q.times(), &[-2.0, -1.0, 0.0]);
    }

    #[test]
    fn rescalings_compose() {
        let f = |x: [f64; 2], t: f64| {
            0.3 + 0.2 * x[0] - 0.1 * x[1] + 0.7 * x[0] * x[0] + 0.2 * x[0] * x[1] + 0.4 * x[1] * x[1] + 0.5 * t
        };
        let times: Vec<f64> = (0..5).map(|k| -1.0 + 0.25 * k as f64).collect();
        let p = GraphPatch::from_fns(2, 1.0, 41, times, |_, _| 0.0, f, 0.5).unwrap();
        let once = rescale(&p, [0.1, -0.2], -0.5, 0.3).unwrap();
        let twice = rescale(&rescale(&p, [0.1, -0.2], -0.5, 0.6).unwrap(), [0.0, 0.0], 0.0, 0.5).unwrap();
        for k in 0..5 {
            for c in 0..once.cell_count() {
                assert!((once.v(k)[c] - twice.v(k)[c]).abs() < 1e-6);
            }
        }
        // Taylor limit: v_r → ½yᵀD²v y + s ∂_tv + r⁻¹ Dv·y; subtract the gradient part
        let small = rescale(&p, [0.0, 0.0], 0.0, 1e-2).unwrap();
        let c = small.cell_count() - 1;
        let [y1, y2] = small.position(c);
        let s = small.times()[4];
        let expect = (0.2 * y1 - 0.1 * y2) / 1e-2 + 0.7 * y1 * y1 + 0.2 * y1 * y2 + 0.4 * y2 * y2 + 0.5 * s;
        assert!((small.v(4)[c] - expect).abs() < 1e-6 * expect.abs().max(1.0));
    }

    #[test]
    fn monotonicity_on_profile() {
        let p = half_space_patch(0.5);
        let r = coincidence_set(&p, 1e-12).unwrap();
        assert_eq!(preferred_direction(&p, &r).unwrap(), [1.0, 0.0]);
        let m = monotonicity_probe(&p, &r, &[0.25, 0.5, 0.75], None, None, 1e-9).unwrap();
        assert_eq!(m.margins.len(), 48);
        assert!(m.failing.is_empty(), "{:?}", m.min_margin);
        assert!(m.in_hypothesis);
        // e = e₁ with C_κ = 1/2 is the sharp case on |x₁| ≤ 1
        let sharp = monotonicity_probe(&p, &r, &[0.999_999], Some(0.5), Some([1.0, 0.0]), 1e-9).unwrap();
        assert!(sharp.min_margin >= -1e-3);
    }

    #[test]
    fn slope_of_a_tilted_line() {
        let p = GraphPatch::from_fns(
            2,
            1.0,
            101,
            vec![0.0, 1.0],
            |_, _| 0.0,
            |x, _| (x[0] - 0.2 * x[1]).max(0.0).powi(2),
            0.5,
        )
        .unwrap();
        let r = coincidence_set(&p, 1e-10).unwrap();
        let l = lipschitz_estimate(&[(&p, &r)], Some([1.0, 0.0])).unwrap();
        assert!((l[0] - 0.2).abs() < 0.02, "{l:?}");
    }

    #[test]
    fn two_sided_boundary_is_not_a_graph() {
        let p = GraphPatch::from_fns(2, 1.0, 41, vec![0.0, 1.0], |_, _| 0.0, |x, _| (x[0].abs() - 0.5).max(0.0), 0.5)
            .unwrap();
        let r = coincidence_set(&p, 1e-10).unwrap();
        assert!(matches!(boundary_slope(&p, &r, Some([1.0, 0.0])), Err(FreeBoundaryError::NotGraphLike { .. })));
    }

    #[test]
    fn blowup_fit_recovers_stationary_profile() {
        let p = half_space_patch(0.5);
        let q = rescale(&p, [0.0, 0.0], 0.0, 0.5).unwrap();
        let fit = fit_blowup(&q, 1e-9).unwrap();
        assert!(fit.ratio < 0.1);
        assert!((fit.hessian[0] - 0.5).abs() < 0.05, "{:?}", fit.hessian);
    }
}

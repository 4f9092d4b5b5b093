//! Quantitative checks over trajectories: a priori bounds on the penalty,
//! speed, Gauss and principal curvatures, the Euler inequality and the
//! residual of the evolution equation of `u`.
//!
//! Every check returns a [`CheckReport`] whose `margin` is the worst slack
//! with its tolerance already folded in, so `pass ⇔ margin ≥ 0`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::flow::{centered_derivative, pow_alpha, FlowError, Trajectory};
use crate::obstacle::{Obstacle, ObstacleError, ObstacleKind};
use crate::sphere::{curvatures_of, second_fundamental_form, CurvatureBundle, GeometryError, ScalarField};

/// Slack allowed on `−C₀ ≤ β_δ ≤ 0`.
pub const PENALTY_TOL: f64 = 1e-9;
/// Per-step monotonicity tolerance is `MONOTONE_TOL · dt`.
pub const MONOTONE_TOL: f64 = 1e-8;
/// Relative discretization allowance for the Gauss curvature bounds.
pub const GAUSS_TOL: f64 = 0.05;
/// Relative allowance on the interior-maximum curvature alternative.
pub const INTERIOR_MAX_TOL: f64 = 0.05;
/// Relative allowance on the principal-curvature monitor bound.
pub const MONITOR_TOL: f64 = 0.05;
/// Relative grid tolerance of the Euler inequality.
pub const EULER_TOL: f64 = 1e-8;
/// Headroom applied to the calibrated residual constant.
pub const RESIDUAL_HEADROOM: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagnosticsError {
    #[error("obstacle limit must be positive for the bounds ledger (min phi_inf = {0})")]
    DegenerateObstacle(f64),
    #[error("invalid time horizon {0}")]
    InvalidHorizon(f64),
    #[error("trajectory has no penalty attached")]
    MissingPenalty,
    #[error("not enough data: {0}")]
    InsufficientData(String),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Obstacle(#[from] ObstacleError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, DiagnosticsError>;

fn ser_float<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(&crate::sphere::fmt_f64(*v))
    }
}

fn ser_opt_float<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) => ser_float(x, s),
        None => s.serialize_none(),
    }
}

fn ser_float_map<S: Serializer>(m: &BTreeMap<String, f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeMap;
    let mut map = s.serialize_map(Some(m.len()))?;
    for (k, v) in m {
        if v.is_finite() {
            map.serialize_entry(k, v)?;
        } else {
            map.serialize_entry(k, &crate::sphere::fmt_f64(*v))?;
        }
    }
    map.end()
}

/// Explicit constants of the a priori estimates for one problem instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundsLedger {
    pub dimension: usize,
    pub alpha: f64,
    pub horizon: f64,
    /// `min_{[0,T]} min_z (−∂_tφ)^{1/α}`, lower bound of `K`.
    pub c_t: f64,
    /// `½ min φ_∞`.
    pub rho0: f64,
    /// `(1/ρ₀)·max{(max K₀)^α, ((nα+1)/(nαρ₀))^{nα}}`.
    pub c1: f64,
    /// Speed bound `C = C₁ max u₀`.
    pub speed_bound: f64,
    /// `C₀ = (max K_{Φ_∞})^α`.
    pub c0: f64,
    /// `(C + C₀)^{1/α}`, upper bound of `K`.
    pub gauss_upper: f64,
    /// `1/(α c_T^α)`.
    pub chi: f64,
    /// `min_{z,t} μ_i`: smallest obstacle principal curvature over all times.
    pub mu_min: f64,
    /// `max_{z,t} μ_i`.
    pub mu_max: f64,
    /// `max (u₀ − φ_∞)`, bounds `u − φ` for all times.
    pub max_gap: f64,
}

impl BoundsLedger {
    /// Bound on `1/λ_min` at an interior maximum of the monitor:
    /// `max{1/μ_min + max(u−φ), ((n + 1/α)μ_max)^{n−1}/c_T}`.
    pub fn radius_bound(&self) -> f64 {
        let n = self.dimension as i32;
        let a = 1.0 / self.mu_min + self.max_gap;
        let b = ((self.dimension as f64 + 1.0 / self.alpha) * self.mu_max).powi(n - 1) / self.c_t;
        a.max(b)
    }

    /// `(nα+1)/(αρ₀)`, the mean-curvature cap at an interior maximum of `w`.
    pub fn mean_curvature_cap(&self) -> f64 {
        (self.dimension as f64 * self.alpha + 1.0) / (self.alpha * self.rho0)
    }

    pub fn constants(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([
            ("c_T".to_string(), self.c_t),
            ("rho0".to_string(), self.rho0),
            ("C1".to_string(), self.c1),
            ("C".to_string(), self.speed_bound),
            ("C0".to_string(), self.c0),
            ("K_upper".to_string(), self.gauss_upper),
            ("chi".to_string(), self.chi),
        ])
    }
}

/// Principal-curvature extremes of the obstacle over all times. Homothetic
/// families rescale curvatures by `1/A(t)`; interpolating families are
/// bracketed by their endpoints when [`Obstacle::validate`] accepts the
/// curvature monotonicity.
fn obstacle_curvature_range(obstacle: &Obstacle) -> Result<(f64, f64)> {
    let c_init = curvatures_of(obstacle.initial())?;
    let c_lim = curvatures_of(obstacle.limit())?;
    Ok(match obstacle.kind() {
        ObstacleKind::Homothetic { a_inf, .. } => (c_init.min_lambda(), c_init.max_lambda() / a_inf),
        ObstacleKind::Interpolating => {
            (c_init.min_lambda().min(c_lim.min_lambda()), c_init.max_lambda().max(c_lim.max_lambda()))
        }
    })
}

/// Builds the ledger for `u₀`, the obstacle and horizon `T`.
pub fn ledger(u0: &ScalarField, obstacle: &Obstacle, alpha: f64, horizon: f64) -> Result<BoundsLedger> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(DiagnosticsError::InvalidHorizon(horizon));
    }
    let min_inf = obstacle.limit().min();
    if !(min_inf > 0.0) {
        return Err(DiagnosticsError::DegenerateObstacle(min_inf));
    }
    let n = u0.grid().dim() as f64;
    // −∂_tφ decays in t for both families; sample anyway so the minimum does
    // not rely on that.
    let samples = 256;
    let min_speed =
        (0..=samples).map(|k| obstacle.min_speed(horizon * k as f64 / samples as f64)).fold(f64::INFINITY, f64::min);
    let c_t = min_speed.max(0.0).powf(1.0 / alpha);
    let rho0 = 0.5 * min_inf;
    let k0 = curvatures_of(u0)?.gauss.max();
    let na = n * alpha;
    let c1 = pow_alpha(k0, alpha).max(((na + 1.0) / (na * rho0)).powf(na)) / rho0;
    let speed_bound = c1 * u0.max();
    let c0 = obstacle.c0(alpha)?;
    let (mu_min, mu_max) = obstacle_curvature_range(obstacle)?;
    Ok(BoundsLedger {
        dimension: u0.grid().dim(),
        alpha,
        horizon,
        c_t,
        rho0,
        c1,
        speed_bound,
        c0,
        gauss_upper: (speed_bound + c0).powf(1.0 / alpha),
        chi: 1.0 / (alpha * pow_alpha(c_t, alpha)),
        mu_min,
        mu_max,
        max_gap: u0.zip_map(obstacle.limit(), |a, b| a - b)?.max(),
    })
}

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub id: String,
    pub pass: bool,
    /// Worst slack, tolerance included; negative iff the check failed.
    #[serde(serialize_with = "ser_float")]
    pub margin: f64,
    pub node: Option<usize>,
    #[serde(serialize_with = "ser_opt_float")]
    pub time: Option<f64>,
    #[serde(serialize_with = "ser_float_map")]
    pub constants: BTreeMap<String, f64>,
}

impl CheckReport {
    /// Report of a scalar criterion: passes iff `margin ≥ 0` (`> 0` when `strict`).
    pub fn from_margin(id: &str, margin: f64, strict: bool, time: Option<f64>, named: &[(&str, f64)]) -> Self {
        Self {
            id: id.to_string(),
            pass: if strict { margin > 0.0 } else { margin >= 0.0 },
            margin,
            node: None,
            time,
            constants: constants(named),
        }
    }
}

/// Running minimum of a margin with its location.
#[derive(Debug, Clone, Copy)]
struct Worst {
    margin: f64,
    node: Option<usize>,
    time: Option<f64>,
}

impl Worst {
    fn new() -> Self {
        Self { margin: f64::INFINITY, node: None, time: None }
    }

    fn update(&mut self, margin: f64, node: Option<usize>, time: f64) {
        // NaN margins count as failures
        if margin < self.margin || margin.is_nan() && !self.margin.is_nan() {
            *self = Self { margin, node, time: Some(time) };
        }
    }

    fn merge(self, other: Worst) -> Worst {
        let mut out = self;
        if let Some(t) = other.time {
            out.update(other.margin, other.node, t);
        }
        out
    }

    fn report(self, id: &str, constants: BTreeMap<String, f64>) -> CheckReport {
        CheckReport {
            id: id.to_string(),
            pass: self.margin >= 0.0,
            margin: self.margin,
            node: self.node,
            time: self.time,
            constants,
        }
    }
}

fn constants(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// `β_δ(u − φ)` per node of a snapshot.
fn penalty_values(traj: &Trajectory, obstacle: &Obstacle, u: &ScalarField, t: f64) -> Result<Vec<f64>> {
    let (phi, _) = obstacle.evaluate_on(u.grid(), t)?;
    Ok(match &traj.penalty {
        Some(p) => u.values().iter().zip(phi.values()).map(|(a, b)| p.value(a - b)).collect(),
        None => vec![0.0; u.len()],
    })
}

/// `−C₀ − tol ≤ β_δ ≤ 0` over every step record and snapshot node.
pub fn check_penalty_bounds(traj: &Trajectory, obstacle: &Obstacle, c0: f64) -> Result<CheckReport> {
    let mut worst = Worst::new();
    for r in &traj.records {
        let m = (r.min_beta + c0).min(-r.max_beta) + PENALTY_TOL;
        worst.update(m, None, r.t);
    }
    for snap in &traj.snapshots {
        for (node, b) in penalty_values(traj, obstacle, &snap.u, snap.t)?.into_iter().enumerate() {
            worst.update((b + c0).min(-b) + PENALTY_TOL, Some(node), snap.t);
        }
    }
    Ok(worst.report("penalty_bounds", constants(&[("C0", c0), ("tol", PENALTY_TOL)])))
}

/// `min (u − φ) > 0` over every step record and snapshot node.
pub fn check_gap_positive(traj: &Trajectory, obstacle: &Obstacle) -> Result<CheckReport> {
    let mut worst = Worst::new();
    for r in &traj.records {
        worst.update(r.min_gap, None, r.t);
    }
    for snap in &traj.snapshots {
        let (phi, _) = obstacle.evaluate_on(snap.u.grid(), snap.t)?;
        for (node, (a, b)) in snap.u.values().iter().zip(phi.values()).enumerate() {
            worst.update(a - b, Some(node), snap.t);
        }
    }
    let mut rep = worst.report("gap_positive", BTreeMap::new());
    rep.pass = rep.margin > 0.0;
    Ok(rep)
}

/// Forward differences of `u − φ` never exceed `MONOTONE_TOL · dt`, per
/// step record and between consecutive snapshots.
pub fn check_speed_monotone(traj: &Trajectory, obstacle: &Obstacle) -> Result<CheckReport> {
    let mut worst = Worst::new();
    for r in traj.records.iter().filter(|r| r.dt > 0.0 && r.max_gap_increase.is_finite()) {
        worst.update(MONOTONE_TOL * r.dt - r.max_gap_increase, None, r.t);
    }
    let mut prev: Option<(f64, Vec<f64>)> = None;
    for snap in &traj.snapshots {
        let (phi, _) = obstacle.evaluate_on(snap.u.grid(), snap.t)?;
        let gap: Vec<f64> = snap.u.values().iter().zip(phi.values()).map(|(a, b)| a - b).collect();
        if let Some((t0, g0)) = &prev {
            let dt = snap.t - t0;
            for node in 0..gap.len() {
                worst.update(MONOTONE_TOL * dt - (gap[node] - g0[node]), Some(node), snap.t);
            }
        }
        prev = Some((snap.t, gap));
    }
    Ok(worst.report("speed_monotone", constants(&[("tol_per_dt", MONOTONE_TOL)])))
}

/// `u` is non-increasing in time at every node.
pub fn check_u_nonincreasing(traj: &Trajectory) -> CheckReport {
    let mut worst = Worst::new();
    for r in traj.records.iter().filter(|r| r.dt > 0.0) {
        worst.update(MONOTONE_TOL * r.dt - r.max_u_increase, None, r.t);
    }
    for pair in traj.snapshots.windows(2) {
        let dt = pair[1].t - pair[0].t;
        for (node, (a, b)) in pair[0].u.values().iter().zip(pair[1].u.values()).enumerate() {
            worst.update(MONOTONE_TOL * dt - (b - a), Some(node), pair[1].t);
        }
    }
    worst.report("u_nonincreasing", constants(&[("tol_per_dt", MONOTONE_TOL)]))
}

fn snapshot_curvatures(traj: &Trajectory) -> Result<Vec<CurvatureBundle>> {
    traj.snapshots.par_iter().map(|s| curvatures_of(&s.u).map_err(DiagnosticsError::from)).collect()
}

/// `(1 − tol)c_T ≤ K ≤ (1 + tol)(C + C₀)^{1/α}`.
pub fn check_gauss_bounds(traj: &Trajectory, ledger: &BoundsLedger) -> Result<CheckReport> {
    let lower = ledger.c_t * (1.0 - GAUSS_TOL);
    let upper = ledger.gauss_upper * (1.0 + GAUSS_TOL);
    // relative slack so that both sides compare on the same scale
    let slack = |k: f64| ((k - lower) / lower.max(f64::MIN_POSITIVE)).min((upper - k) / upper);
    let mut worst = Worst::new();
    for r in &traj.records {
        worst.update(slack(r.min_k).min(slack(r.max_k)), None, r.t);
    }
    for (snap, curv) in traj.snapshots.iter().zip(snapshot_curvatures(traj)?) {
        for (node, &k) in curv.gauss.values().iter().enumerate() {
            worst.update(slack(k), Some(node), snap.t);
        }
    }
    Ok(worst.report("gauss_bounds", constants(&[("K_lower", lower), ("K_upper", upper), ("tol", GAUSS_TOL)])))
}

/// `−∂_tu ≤ C` and `K^α ≤ C + C₀`, plus the interior-maximum alternative for
/// `w = (K^α + β_δ)/(u − ρ₀)`: wherever `w` attains a new space-time maximum
/// after `t = 0`, either `−w − φ_t/(u − ρ₀) ≥ 0` there or
/// `H ≤ (1 + tol)(nα+1)/(αρ₀)`.
pub fn check_speed_bounds(traj: &Trajectory, obstacle: &Obstacle, ledger: &BoundsLedger) -> Result<CheckReport> {
    let alpha = ledger.alpha;
    let c = ledger.speed_bound;
    let c_k = c + ledger.c0;
    let mut bounds = Worst::new();
    for r in &traj.records {
        bounds.update((c - r.max_speed).min(c_k - pow_alpha(r.max_k, alpha)), None, r.t);
    }
    let curv = snapshot_curvatures(traj)?;
    let cap = ledger.mean_curvature_cap() * (1.0 + INTERIOR_MAX_TOL);
    let mut interior = Worst::new();
    let mut running = f64::NEG_INFINITY;
    let mut probed = 0usize;
    for (m, (snap, cb)) in traj.snapshots.iter().zip(&curv).enumerate() {
        let beta = penalty_values(traj, obstacle, &snap.u, snap.t)?;
        let u = snap.u.values();
        let (arg, w_max) = (0..u.len())
            .map(|k| (k, (pow_alpha(cb.gauss.values()[k], alpha) + beta[k]) / (u[k] - ledger.rho0)))
            .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
        if m > 0 && w_max > running {
            let (_, dphi) = obstacle.evaluate_on(snap.u.grid(), snap.t)?;
            let other = -w_max - dphi.values()[arg] / (u[arg] - ledger.rho0);
            if other < 0.0 {
                probed += 1;
                interior.update(cap - cb.mean.values()[arg], Some(arg), snap.t);
            }
        }
        running = running.max(w_max);
    }
    let worst = bounds.merge(interior);
    Ok(worst.report(
        "speed_bounds",
        constants(&[("C", c), ("C_plus_C0", c_k), ("H_cap", cap), ("interior_maxima_probed", probed as f64)]),
    ))
}

/// Monitors `W̃ = λ_min^{−1} e^{−χβ_δ}`: the pointwise identity
/// `1/λ_min ≤ W̃` and `max W̃ ≤ (1 + tol)·max{max W̃(0), R e^{χC₀}}` with
/// `R` from [`BoundsLedger::radius_bound`].
pub fn check_principal_bounds(traj: &Trajectory, obstacle: &Obstacle, ledger: &BoundsLedger) -> Result<CheckReport> {
    let chi = ledger.chi;
    let curv = snapshot_curvatures(traj)?;
    let mut monitor = Vec::with_capacity(traj.snapshots.len());
    let mut identity = Worst::new();
    for (snap, cb) in traj.snapshots.iter().zip(&curv) {
        let beta = penalty_values(traj, obstacle, &snap.u, snap.t)?;
        let w: Vec<f64> = (0..beta.len()).map(|k| (-chi * beta[k]).exp() / cb.lambda_min(k)).collect();
        for (k, wk) in w.iter().enumerate() {
            let r = 1.0 / cb.lambda_min(k);
            identity.update((wk - r) / r + 1e-12, Some(k), snap.t);
        }
        monitor.push(w);
    }
    let initial = monitor[0].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bound = initial.max(ledger.radius_bound() * (chi * ledger.c0).exp()) * (1.0 + MONITOR_TOL);
    let mut growth = Worst::new();
    for (snap, w) in traj.snapshots.iter().zip(&monitor) {
        for (k, &wk) in w.iter().enumerate() {
            growth.update((bound - wk) / bound, Some(k), snap.t);
        }
    }
    Ok(identity.merge(growth).report(
        "principal_bounds",
        constants(&[("chi", chi), ("initial_max", initial), ("radius_bound", ledger.radius_bound()), ("bound", bound)]),
    ))
}

/// `h_ii/ḡ_ii ≤ (1 + tol)/λ_min` at every node of every snapshot.
pub fn check_euler_formula(traj: &Trajectory) -> Result<CheckReport> {
    let mut worst = Worst::new();
    for snap in &traj.snapshots {
        let w = euler_margins(&snap.u)?;
        for (k, m) in w.into_iter().enumerate() {
            worst.update(m, Some(k), snap.t);
        }
    }
    Ok(worst.report("euler_formula", constants(&[("tol", EULER_TOL)])))
}

/// Per-node relative slack of the Euler inequality for one state.
pub fn euler_margins(u: &ScalarField) -> Result<Vec<f64>> {
    let grid = u.grid();
    let h = second_fundamental_form(u, grid)?;
    let curv = curvatures_of(u)?;
    Ok((0..grid.node_count())
        .map(|k| {
            let r = 1.0 / curv.lambda_min(k);
            let hk = h.at(k);
            let g = grid.metric(k);
            let ratio = if grid.dim() == 1 { hk[0] } else { (hk[0] / g[0]).max(hk[2] / g[2]) };
            (r * (1.0 + EULER_TOL) - ratio) / r
        })
        .collect())
}

/// Residual of the evolution of `u` on one window of three consecutive states:
/// `r = ∂_tu − 𝓛u − (αK^αHu − (nα+1)K^α − β_δ)` with `𝓛u = αK^α b^{ij}∇̄_i∇̄_ju`,
/// evaluated at the middle state. Returns `(max |r|, node, dt + h²)`.
pub fn window_residual(traj: &Trajectory, obstacle: Option<&Obstacle>, window: usize) -> Result<(f64, usize, f64)> {
    let win =
        traj.windows.get(window).ok_or_else(|| DiagnosticsError::InsufficientData(format!("no window {window}")))?;
    let alpha = traj.meta.alpha;
    let mid = &win.u[1];
    let grid = mid.grid();
    let n = grid.dim() as f64;
    let h = second_fundamental_form(mid, grid)?;
    let curv = curvatures_of(mid)?;
    let beta = match obstacle {
        Some(ob) => penalty_values(traj, ob, mid, win.t[1])?,
        None => vec![0.0; mid.len()],
    };
    let (mut worst, mut at) = (0.0_f64, 0usize);
    for k in 0..grid.node_count() {
        let hk = h.at(k);
        let g = grid.metric(k);
        let u = mid.values()[k];
        let hess = [hk[0] - u * g[0], hk[1] - u * g[1], hk[2] - u * g[2]];
        let trace = if grid.dim() == 1 {
            hess[0] / hk[0]
        } else {
            let det = hk[0] * hk[2] - hk[1] * hk[1];
            (hk[2] * hess[0] - 2.0 * hk[1] * hess[1] + hk[0] * hess[2]) / det
        };
        let ka = pow_alpha(curv.gauss.values()[k], alpha);
        let lu = alpha * ka * trace;
        let ut = centered_derivative(win.t, [win.u[0].values()[k], u, win.u[2].values()[k]]);
        let rhs = alpha * ka * curv.mean.values()[k] * u - (n * alpha + 1.0) * ka - beta[k];
        let r = (ut - lu - rhs).abs();
        if r > worst || r.is_nan() {
            worst = r;
            at = k;
        }
    }
    let dt = (win.t[2] - win.t[1]).max(win.t[1] - win.t[0]);
    let (ht, hp) = grid.spacings();
    let hmax = ht.max(hp);
    Ok((worst, at, dt + hmax * hmax))
}

/// Largest `‖r‖_∞/(dt + h²)` over the windows of a run.
pub fn residual_ratio(traj: &Trajectory, obstacle: Option<&Obstacle>) -> Result<f64> {
    if traj.windows.is_empty() {
        return Err(DiagnosticsError::InsufficientData("trajectory has no state windows".into()));
    }
    (0..traj.windows.len()).try_fold(0.0_f64, |acc, w| {
        let (r, _, scale) = window_residual(traj, obstacle, w)?;
        Ok(acc.max(r / scale))
    })
}

/// Residual constant `C_res` from reference runs (typically exact spheres at
/// two resolutions), with headroom.
pub fn calibrate_residual_constant(references: &[&Trajectory]) -> Result<f64> {
    let fitted = references
        .iter()
        .map(|t| residual_ratio(t, None))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0_f64, f64::max);
    Ok(RESIDUAL_HEADROOM * fitted)
}

/// `‖r‖_∞ ≤ C_res(dt + h²)` on every window.
pub fn check_evolution_residual(traj: &Trajectory, obstacle: Option<&Obstacle>, c_res: f64) -> Result<CheckReport> {
    if traj.windows.is_empty() {
        return Err(DiagnosticsError::InsufficientData("trajectory has no state windows".into()));
    }
    let mut worst = Worst::new();
    let mut largest = 0.0_f64;
    for w in 0..traj.windows.len() {
        let (r, node, scale) = window_residual(traj, obstacle, w)?;
        largest = largest.max(r);
        worst.update(c_res * scale - r, Some(node), traj.windows[w].t[1]);
    }
    Ok(worst.report("evolution_residual", constants(&[("C_res", c_res), ("max_residual", largest)])))
}

/// `|u(·, t_end) − R(t_end)| ≤ tol` against the shrinking sphere of radius `r0`.
pub fn check_sphere_radius(traj: &Trajectory, r0: f64, tol: f64) -> CheckReport {
    let last = traj.last();
    let exact = crate::flow::sphere_radius(r0, traj.grid().dim(), traj.meta.alpha, last.t);
    let (node, err) = last.u.values().iter().map(|v| (v - exact).abs()).enumerate().fold((0, 0.0_f64), |a, b| {
        if b.1 > a.1 || b.1.is_nan() {
            b
        } else {
            a
        }
    });
    let mut worst = Worst::new();
    worst.update(tol - err, Some(node), last.t);
    worst.report("sphere_radius", constants(&[("exact_radius", exact), ("max_error", err), ("tol", tol)]))
}

/// Checks selectable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckId {
    PenaltyBounds,
    GapPositive,
    SpeedMonotone,
    UNonincreasing,
    GaussBounds,
    SpeedBounds,
    PrincipalBounds,
    EulerFormula,
    EvolutionResidual,
}

impl CheckId {
    pub const ALL: [CheckId; 9] = [
        CheckId::PenaltyBounds,
        CheckId::GapPositive,
        CheckId::SpeedMonotone,
        CheckId::UNonincreasing,
        CheckId::GaussBounds,
        CheckId::SpeedBounds,
        CheckId::PrincipalBounds,
        CheckId::EulerFormula,
        CheckId::EvolutionResidual,
    ];

    /// Checks that read the obstacle and the bounds ledger.
    pub fn needs_obstacle(self) -> bool {
        !matches!(self, CheckId::UNonincreasing | CheckId::EulerFormula | CheckId::EvolutionResidual)
    }
}

/// Inputs shared by a batch of checks.
#[derive(Debug, Clone, Copy)]
pub struct CheckContext<'a> {
    pub trajectory: &'a Trajectory,
    pub obstacle: Option<&'a Obstacle>,
    pub ledger: Option<&'a BoundsLedger>,
    pub residual_constant: Option<f64>,
}

/// Runs `ids` in parallel; reports come back in the order of `ids`.
pub fn run_checks(ctx: &CheckContext<'_>, ids: &[CheckId]) -> Result<Vec<CheckReport>> {
    ids.par_iter().map(|&id| run_check(ctx, id)).collect()
}

fn run_check(ctx: &CheckContext<'_>, id: CheckId) -> Result<CheckReport> {
    let traj = ctx.trajectory;
    let need_ob =
        || ctx.obstacle.ok_or_else(|| DiagnosticsError::InsufficientData(format!("{id:?} needs an obstacle")));
    let need_ledger =
        || ctx.ledger.ok_or_else(|| DiagnosticsError::InsufficientData(format!("{id:?} needs a bounds ledger")));
    match id {
        CheckId::PenaltyBounds => {
            let c0 = traj.penalty.ok_or(DiagnosticsError::MissingPenalty)?.c0();
            check_penalty_bounds(traj, need_ob()?, c0)
        }
        CheckId::GapPositive => check_gap_positive(traj, need_ob()?),
        CheckId::SpeedMonotone => check_speed_monotone(traj, need_ob()?),
        CheckId::UNonincreasing => Ok(check_u_nonincreasing(traj)),
        CheckId::GaussBounds => check_gauss_bounds(traj, need_ledger()?),
        CheckId::SpeedBounds => check_speed_bounds(traj, need_ob()?, need_ledger()?),
        CheckId::PrincipalBounds => check_principal_bounds(traj, need_ob()?, need_ledger()?),
        CheckId::EulerFormula => check_euler_formula(traj),
        CheckId::EvolutionResidual => {
            let c = ctx
                .residual_constant
                .ok_or_else(|| DiagnosticsError::InsufficientData("no residual constant".into()))?;
            check_evolution_residual(traj, ctx.obstacle.filter(|_| traj.penalty.is_some()), c)
        }
    }
}

/// Deliberate corruptions of a trajectory, each of which some check must reject.
pub mod corrupt {
    use super::*;

    /// Sets `min β_δ` of every record after the first to `factor · (−C₀)`.
    pub fn inject_penalty(traj: &mut Trajectory, factor: f64) {
        let c0 = traj.penalty.map(|p| p.c0()).unwrap_or(1.0);
        for r in traj.records.iter_mut().skip(1) {
            r.min_beta = -factor * c0;
        }
    }

    /// Reverses the sequence of snapshot states while keeping their times, and
    /// clears the step records, so `u` grows in time.
    pub fn reverse_time(traj: &mut Trajectory) {
        let states: Vec<ScalarField> = traj.snapshots.iter().rev().map(|s| s.u.clone()).collect();
        for (s, u) in traj.snapshots.iter_mut().zip(states) {
            s.u = u;
        }
        traj.records.truncate(1);
        for s in &mut traj.snapshots {
            s.record = 0;
        }
    }

    /// Replaces the last snapshot by a dilation with factor `scale`, which
    /// divides `K` by `scale^n`: a nearly flat body for large `scale`.
    pub fn flatten_last(traj: &mut Trajectory, scale: f64) {
        if let Some(last) = traj.snapshots.last_mut() {
            last.u = last.u.map(|v| scale * v);
        }
        for r in &mut traj.records {
            r.min_k = f64::INFINITY;
        }
        traj.records.truncate(1);
    }

    /// Adds a smooth bump of height `amplitude` to the middle state of every window.
    pub fn perturb_windows(traj: &mut Trajectory, amplitude: f64) {
        for w in &mut traj.windows {
            let bump = ScalarField::from_angles(w.u[1].grid().clone(), |t, p| amplitude * (1.0 + t.cos() * p.cos()));
            w.u[1] = w.u[1].zip_map(&bump, |a, b| a + b).expect("same grid");
        }
    }

    /// Caps `u` from above at `cap` in every snapshot after the first.
    pub fn cap_snapshots(traj: &mut Trajectory, cap: f64) {
        for s in traj.snapshots.iter_mut().skip(1) {
            s.u = s.u.map(|v| v.min(cap));
        }
    }
}

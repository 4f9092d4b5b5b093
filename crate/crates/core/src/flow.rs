//! Time integration of the penalized flow `−∂_t u = K^α + β_δ(u − φ)`.
//!
//! Each step freezes `K^α` at the current state and treats the penalty
//! implicitly, node by node:
//!
//! ```text
//! u_next + dt·β_δ(u_next − φ(t+dt)) = u − dt·K^α(u)
//! ```
//!
//! The left-hand side is increasing and concave in `u_next`, so Newton started
//! at the right-hand side climbs monotonically to the root.

use std::collections::VecDeque;
use std::io::{self, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::obstacle::{Obstacle, ObstacleError};
use crate::penalty::{PenaltyError, PenaltyFunction, PenaltyVariant};
use crate::sphere::{
    curvatures_of, embed, fmt_f64, write_point_cloud_csv, CurvatureBundle, GeometryError, Resolution, ScalarField,
    SphericalGrid,
};

/// Fraction of the explicit diffusion limit actually used.
pub const STABILITY_SAFETY: f64 = 0.5;
/// `dt ≤ PENALTY_DT_FACTOR · δ / C₀` while a penalty is attached.
pub const PENALTY_DT_FACTOR: f64 = 0.125;
const NEWTON_MAX_ITERS: usize = 100;
const MAX_DT_HALVINGS: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Obstacle(#[from] ObstacleError),
    #[error(transparent)]
    Penalty(#[from] PenaltyError),
    #[error("state is not convex at node {node}")]
    NotConvex { node: usize },
    #[error("implicit penalty solve did not converge at node {node} (t = {t})")]
    ScalarSolveFailed { node: usize, t: f64 },
    #[error("step from t = {t} with dt = {dt} lost convexity at node {node}; reduce dt")]
    NotConvexAfterStep { node: usize, t: f64, dt: f64 },
    #[error("time step collapsed to {dt} at t = {t}")]
    StepTooSmall { t: f64, dt: f64 },
    #[error("obstacle rejected: {0}")]
    ObstacleInvalid(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, FlowError>;

fn convexity(e: GeometryError) -> FlowError {
    match e {
        GeometryError::NotConvex { node } => FlowError::NotConvex { node },
        other => other.into(),
    }
}

#[inline]
pub fn pow_alpha(x: f64, alpha: f64) -> f64 {
    if alpha == 1.0 {
        x
    } else {
        x.powf(alpha)
    }
}

/// Solution state at one time.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub t: f64,
    pub u: ScalarField,
    pub alpha: f64,
    pub delta: Option<f64>,
    pub curvature: CurvatureBundle,
    /// `(φ, ∂_tφ)` at `t` when an obstacle is attached.
    pub obstacle: Option<(ScalarField, ScalarField)>,
}

impl FlowState {
    /// `K^α` per node.
    pub fn gauss_power(&self) -> Vec<f64> {
        self.curvature.gauss.values().iter().map(|&k| pow_alpha(k, self.alpha)).collect()
    }
}

/// Explicit stability limit: half the largest stable step of the frozen
/// diffusion `αK^α b^{ij}∇̄_i∇̄_j`, whose largest coefficient is `αK^α λ_max`.
pub fn stable_dt(state: &FlowState) -> f64 {
    let grid = state.u.grid();
    let two_n = 2.0 * grid.dim() as f64;
    let k = state.curvature.gauss.values();
    (0..grid.node_count())
        .map(|node| {
            let h = grid.min_spacing(node);
            let coeff = state.alpha * pow_alpha(k[node], state.alpha) * state.curvature.lambda_max(node);
            h * h / (two_n * coeff)
        })
        .fold(f64::INFINITY, f64::min)
        * STABILITY_SAFETY
}

/// [`stable_dt`] for a bare support function.
pub fn stable_dt_of(u: &ScalarField, alpha: f64) -> Result<f64> {
    let curvature = curvatures_of(u).map_err(convexity)?;
    Ok(stable_dt(&FlowState { t: 0.0, u: u.clone(), alpha, delta: None, curvature, obstacle: None }))
}

/// Solves `x + dt·β_δ(x − φ) = rhs` for `x`. Returns the root and the number
/// of Newton updates taken, or `None` if the tolerance was not reached.
pub fn solve_penalized_node(rhs: f64, phi: f64, dt: f64, penalty: &PenaltyFunction) -> Option<(f64, usize)> {
    if rhs - phi >= penalty.delta() {
        return Some((rhs, 0));
    }
    let tol = 1e-12 * penalty.c0().max(1.0);
    let residual = |x: f64| {
        let (b, db) = penalty.eval(x - phi);
        (x + dt * b - rhs, 1.0 + dt * db)
    };
    let mut lo = rhs;
    let mut hi = rhs - dt * penalty.value(rhs - phi);
    let mut x = rhs;
    for iter in 0..NEWTON_MAX_ITERS {
        let (g, dg) = residual(x);
        if g.abs() <= tol {
            return Some((x, iter));
        }
        if g < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= 4.0 * f64::EPSILON * x.abs().max(1.0) {
            return Some((x, iter));
        }
        let newton = x - g / dg;
        x = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
    }
    None
}

/// One penalized flow problem: exponent, optional obstacle and penalty.
/// An obstacle without a penalty is only monitored.
#[derive(Debug, Clone)]
pub struct PenalizedFlow<'a> {
    alpha: f64,
    obstacle: Option<&'a Obstacle>,
    penalty: Option<PenaltyFunction>,
}

impl<'a> PenalizedFlow<'a> {
    pub fn new(alpha: f64, obstacle: Option<&'a Obstacle>, penalty: Option<PenaltyFunction>) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(FlowError::InvalidParameter(format!("alpha must be > 0, got {alpha}")));
        }
        if penalty.is_some() && obstacle.is_none() {
            return Err(FlowError::InvalidParameter("a penalty needs an obstacle".into()));
        }
        Ok(Self { alpha, obstacle, penalty })
    }

    /// Flow without obstacle.
    pub fn free(alpha: f64) -> Result<Self> {
        Self::new(alpha, None, None)
    }

    /// Flow with the standard penalty `C₀β(x/δ)`, `C₀ = (max K_{Φ_∞})^α`.
    pub fn penalized(alpha: f64, obstacle: &'a Obstacle, delta: f64, variant: PenaltyVariant) -> Result<Self> {
        let c0 = obstacle.c0(alpha)?;
        let penalty = PenaltyFunction::new(delta, c0, variant)?;
        Self::new(alpha, Some(obstacle), Some(penalty))
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn penalty(&self) -> Option<&PenaltyFunction> {
        self.penalty.as_ref()
    }

    pub fn obstacle(&self) -> Option<&'a Obstacle> {
        self.obstacle
    }

    pub fn state(&self, u: ScalarField, t: f64) -> Result<FlowState> {
        let curvature = curvatures_of(&u).map_err(convexity)?;
        let obstacle = match self.obstacle {
            Some(ob) => Some(ob.evaluate_on(u.grid(), t)?),
            None => None,
        };
        Ok(FlowState { t, u, alpha: self.alpha, delta: self.penalty.map(|p| p.delta()), curvature, obstacle })
    }

    /// Advances `state` by `dt`.
    pub fn step(&self, state: &FlowState, dt: f64) -> Result<FlowState> {
        if !(dt >= 0.0 && dt.is_finite()) {
            return Err(FlowError::InvalidParameter(format!("dt must be finite and >= 0, got {dt}")));
        }
        if dt == 0.0 {
            return Ok(state.clone());
        }
        let t_next = state.t + dt;
        let u = state.u.values();
        let k = state.curvature.gauss.values();
        let alpha = self.alpha;
        let rhs: Vec<f64> = (0..u.len()).map(|i| u[i] - dt * pow_alpha(k[i], alpha)).collect();
        let grid = state.u.grid().clone();
        let (values, obstacle) = match self.obstacle {
            Some(ob) => {
                let (phi, dphi) = ob.evaluate_on(&grid, t_next)?;
                let values = match &self.penalty {
                    Some(p) => {
                        let solved: Vec<Option<f64>> = rhs
                            .par_iter()
                            .zip(phi.values().par_iter())
                            .map(|(&r, &f)| solve_penalized_node(r, f, dt, p).map(|s| s.0))
                            .collect();
                        let mut out = Vec::with_capacity(solved.len());
                        for (node, s) in solved.into_iter().enumerate() {
                            out.push(s.ok_or(FlowError::ScalarSolveFailed { node, t: state.t })?);
                        }
                        out
                    }
                    None => rhs,
                };
                (values, Some((phi, dphi)))
            }
            None => (rhs, None),
        };
        let u_next = ScalarField::new(grid, values)?;
        let curvature = curvatures_of(&u_next).map_err(|e| match e {
            GeometryError::NotConvex { node } => FlowError::NotConvexAfterStep { node, t: state.t, dt },
            other => other.into(),
        })?;
        Ok(FlowState { t: t_next, u: u_next, alpha, delta: state.delta, curvature, obstacle })
    }

    fn beta_at(&self, state: &FlowState, node: usize) -> f64 {
        match (&self.penalty, &state.obstacle) {
            (Some(p), Some((phi, _))) => p.value(state.u.values()[node] - phi.values()[node]),
            _ => 0.0,
        }
    }

    fn record(&self, prev: Option<&FlowState>, state: &FlowState, dt: f64) -> StepRecord {
        let n = state.u.len();
        let u = state.u.values();
        let mut rec = StepRecord {
            t: state.t,
            dt,
            min_k: state.curvature.gauss.min(),
            max_k: state.curvature.gauss.max(),
            min_gap: f64::INFINITY,
            min_beta: 0.0,
            max_beta: 0.0,
            min_lambda: state.curvature.min_lambda(),
            max_lambda: state.curvature.max_lambda(),
            max_speed: f64::NEG_INFINITY,
            max_gap_increase: f64::NEG_INFINITY,
            max_u_increase: f64::NEG_INFINITY,
        };
        let mut min_beta = f64::INFINITY;
        let mut max_beta = f64::NEG_INFINITY;
        for node in 0..n {
            let beta = self.beta_at(state, node);
            min_beta = min_beta.min(beta);
            max_beta = max_beta.max(beta);
            let gap = state.obstacle.as_ref().map(|(phi, _)| u[node] - phi.values()[node]);
            if let Some(g) = gap {
                rec.min_gap = rec.min_gap.min(g);
            }
            match prev {
                Some(p) if dt > 0.0 => {
                    let du = u[node] - p.u.values()[node];
                    rec.max_speed = rec.max_speed.max(-du / dt);
                    rec.max_u_increase = rec.max_u_increase.max(du);
                    if let (Some(g), Some((phi_prev, _))) = (gap, &p.obstacle) {
                        let g_prev = p.u.values()[node] - phi_prev.values()[node];
                        rec.max_gap_increase = rec.max_gap_increase.max(g - g_prev);
                    }
                }
                _ => {
                    let speed = pow_alpha(state.curvature.gauss.values()[node], self.alpha) + beta;
                    rec.max_speed = rec.max_speed.max(speed);
                }
            }
        }
        rec.min_beta = min_beta;
        rec.max_beta = max_beta;
        rec
    }

    /// Advances with retries at halved `dt` when convexity is lost.
    fn guarded_step(&self, state: &FlowState, mut dt: f64) -> Result<(FlowState, f64)> {
        let mut attempts = 0;
        loop {
            match self.step(state, dt) {
                Err(FlowError::NotConvexAfterStep { .. }) if attempts < MAX_DT_HALVINGS => {
                    dt *= 0.5;
                    attempts += 1;
                }
                other => return other.map(|s| (s, dt)),
            }
        }
    }

    /// Integrates from `u0` at `t = 0` to `t_end`, with snapshots every
    /// `cadence` (the last interval may be shorter) and at `t = 0`.
    pub fn run(&self, u0: ScalarField, t_end: f64, cadence: f64) -> Result<Trajectory> {
        if !(t_end >= 0.0 && t_end.is_finite()) {
            return Err(FlowError::InvalidParameter(format!("t_end must be finite and >= 0, got {t_end}")));
        }
        if !(cadence > 0.0 && cadence.is_finite()) {
            return Err(FlowError::InvalidParameter(format!("cadence must be > 0, got {cadence}")));
        }
        if let (Some(p), Some(ob)) = (&self.penalty, self.obstacle) {
            let gap = u0.zip_map(ob.initial(), |a, b| a - b)?.min();
            // allow for rounding in the difference, e.g. 1 − 0.9 < 0.1
            if p.delta() > gap + 1e-12 * u0.max_abs().max(1.0) {
                return Err(FlowError::ObstacleInvalid(format!(
                    "delta = {} exceeds the initial gap min(u0 - phi0) = {gap}",
                    p.delta()
                )));
            }
        }
        let grid = u0.grid().clone();
        let dt_cap = self.penalty.map(|p| PENALTY_DT_FACTOR * p.delta() / p.c0()).unwrap_or(f64::INFINITY);
        let mut state = self.state(u0, 0.0)?;
        let mut traj = Trajectory {
            meta: RunMetadata {
                alpha: self.alpha,
                delta: self.penalty.map(|p| p.delta()),
                c0: self.penalty.map(|p| p.c0()),
                penalty_variant: self.penalty.map(|p| p.variant()),
                dimension: grid.dim(),
                resolution: grid.resolution(),
                obstacle: self.obstacle.map(|o| o.label().to_string()),
                dt_policy: format!("min({STABILITY_SAFETY}*explicit limit, {PENALTY_DT_FACTOR}*delta/C0, next output)"),
                t_end,
                cadence,
            },
            snapshots: Vec::new(),
            records: vec![self.record(None, &state, 0.0)],
            windows: Vec::new(),
            penalty: self.penalty,
        };
        traj.snapshots.push(Snapshot { t: 0.0, u: state.u.clone(), record: 0 });

        let mut history: VecDeque<(f64, ScalarField)> = VecDeque::with_capacity(2);
        for target in output_times(t_end, cadence) {
            while state.t < target {
                let remaining = target - state.t;
                let mut dt = stable_dt(&state).min(dt_cap);
                // absorb a rounding sliver instead of leaving it for a degenerate step
                let snaps = dt * (1.0 + 1e-9) >= remaining;
                if snaps {
                    dt = remaining;
                }
                if !(dt > 1e-14 * state.t.max(1.0)) {
                    return Err(FlowError::StepTooSmall { t: state.t, dt });
                }
                let (mut next, used) = self.guarded_step(&state, dt)?;
                if snaps && used == dt {
                    next.t = target;
                }
                traj.records.push(self.record(Some(&state), &next, used));
                if history.len() == 2 {
                    history.pop_front();
                }
                let prev = std::mem::replace(&mut state, next);
                history.push_back((prev.t, prev.u));
            }
            traj.snapshots.push(Snapshot { t: state.t, u: state.u.clone(), record: traj.records.len() - 1 });
            if history.len() == 2 {
                traj.windows.push(StateWindow {
                    t: [history[0].0, history[1].0, state.t],
                    u: [history[0].1.clone(), history[1].1.clone(), state.u.clone()],
                });
            }
        }
        Ok(traj)
    }
}

/// Output times `cadence, 2·cadence, …` strictly below `t_end`, then `t_end`.
pub fn output_times(t_end: f64, cadence: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut k = 1usize;
    loop {
        let t = k as f64 * cadence;
        if t >= t_end * (1.0 - 1e-12) {
            break;
        }
        out.push(t);
        k += 1;
    }
    if t_end > 0.0 {
        out.push(t_end);
    }
    out
}

/// Diagnostics of one accepted step (or of the initial state, with `dt = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: f64,
    pub dt: f64,
    pub min_k: f64,
    pub max_k: f64,
    /// `min (u − φ)`; `+∞` without obstacle.
    pub min_gap: f64,
    pub min_beta: f64,
    pub max_beta: f64,
    pub min_lambda: f64,
    pub max_lambda: f64,
    /// `max −∂_t u` (for the initial record: `max (K^α + β_δ)`).
    pub max_speed: f64,
    /// Largest nodal increase of `u − φ` over the step.
    pub max_gap_increase: f64,
    /// Largest nodal increase of `u` over the step.
    pub max_u_increase: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub u: ScalarField,
    /// Index of the step record at this time.
    pub record: usize,
}

/// Three consecutive solver states ending at an output time.
#[derive(Debug, Clone, PartialEq)]
pub struct StateWindow {
    pub t: [f64; 3],
    pub u: [ScalarField; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetadata {
    pub alpha: f64,
    pub delta: Option<f64>,
    pub c0: Option<f64>,
    pub penalty_variant: Option<PenaltyVariant>,
    pub dimension: usize,
    pub resolution: Resolution,
    pub obstacle: Option<String>,
    pub dt_policy: String,
    pub t_end: f64,
    pub cadence: f64,
}

/// Recorded run. Fields are public so that callers can build synthetic or
/// corrupted trajectories for the diagnostic checks.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub meta: RunMetadata,
    pub snapshots: Vec<Snapshot>,
    pub records: Vec<StepRecord>,
    pub windows: Vec<StateWindow>,
    pub penalty: Option<PenaltyFunction>,
}

/// Per-output aggregate of the step records since the previous output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OutputRow {
    pub t: f64,
    pub min_k: f64,
    pub max_k: f64,
    pub min_gap: f64,
    pub min_beta: f64,
    pub min_lambda: f64,
    pub max_lambda: f64,
    pub max_speed: f64,
}

impl Trajectory {
    pub fn grid(&self) -> &Arc<SphericalGrid> {
        self.snapshots[0].u.grid()
    }

    pub fn initial(&self) -> &ScalarField {
        &self.snapshots[0].u
    }

    pub fn last(&self) -> &Snapshot {
        self.snapshots.last().expect("trajectory has an initial snapshot")
    }

    pub fn output_rows(&self) -> Vec<OutputRow> {
        let mut rows = Vec::with_capacity(self.snapshots.len());
        let mut start = 0;
        for snap in &self.snapshots {
            let end = snap.record.min(self.records.len() - 1);
            let span = &self.records[start.min(end)..=end];
            let fold_min = |f: fn(&StepRecord) -> f64| span.iter().map(f).fold(f64::INFINITY, f64::min);
            let fold_max = |f: fn(&StepRecord) -> f64| span.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
            rows.push(OutputRow {
                t: snap.t,
                min_k: fold_min(|r| r.min_k),
                max_k: fold_max(|r| r.max_k),
                min_gap: fold_min(|r| r.min_gap),
                min_beta: fold_min(|r| r.min_beta),
                min_lambda: fold_min(|r| r.min_lambda),
                max_lambda: fold_max(|r| r.max_lambda),
                max_speed: fold_max(|r| r.max_speed),
            });
            start = end + 1;
        }
        rows
    }

    /// `t,min_K,max_K,min_gap,min_beta,min_lambda,max_lambda,max_speed`, one row per output.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t,min_K,max_K,min_gap,min_beta,min_lambda,max_lambda,max_speed")?;
        for r in self.output_rows() {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                fmt_f64(r.t),
                fmt_f64(r.min_k),
                fmt_f64(r.max_k),
                fmt_f64(r.min_gap),
                fmt_f64(r.min_beta),
                fmt_f64(r.min_lambda),
                fmt_f64(r.max_lambda),
                fmt_f64(r.max_speed)
            )?;
        }
        Ok(())
    }

    /// Writes `snap_<index>.csv` point clouds into `dir`.
    pub fn write_snapshots(&self, dir: &Path) -> io::Result<()> {
        for (i, snap) in self.snapshots.iter().enumerate() {
            let grid = snap.u.grid();
            let pts = embed(&snap.u, grid).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            let file = std::fs::File::create(dir.join(format!("snap_{i}.csv")))?;
            write_point_cloud_csv(io::BufWriter::new(file), grid, &pts)?;
        }
        Ok(())
    }
}

/// Derivative at the middle of three samples with arbitrary spacing.
#[inline]
pub fn centered_derivative(t: [f64; 3], u: [f64; 3]) -> f64 {
    let d1 = t[1] - t[0];
    let d2 = t[2] - t[1];
    -d2 / (d1 * (d1 + d2)) * u[0] + (d2 - d1) / (d1 * d2) * u[1] + d1 / (d2 * (d1 + d2)) * u[2]
}

/// `max |min{∂_t u + K^α, u − φ}|` over interior snapshots, with `∂_t u` by
/// centered differences of neighbouring snapshots.
pub fn complementarity_residual(traj: &Trajectory, obstacle: &Obstacle) -> Result<f64> {
    let alpha = traj.meta.alpha;
    let mut worst = 0.0_f64;
    for m in 1..traj.snapshots.len().saturating_sub(1) {
        let (a, b, c) = (&traj.snapshots[m - 1], &traj.snapshots[m], &traj.snapshots[m + 1]);
        if !(b.t > a.t && c.t > b.t) {
            continue;
        }
        let curv = curvatures_of(&b.u).map_err(convexity)?;
        let (phi, _) = obstacle.evaluate_on(b.u.grid(), b.t)?;
        for node in 0..b.u.len() {
            let ut = centered_derivative([a.t, b.t, c.t], [a.u.values()[node], b.u.values()[node], c.u.values()[node]]);
            let ka = pow_alpha(curv.gauss.values()[node], alpha);
            let r = (ut + ka).min(b.u.values()[node] - phi.values()[node]);
            worst = worst.max(r.abs());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationResult {
    pub deltas: Vec<f64>,
    pub trajectories: Vec<Trajectory>,
    /// `max` over matched output times of `‖u^{δ_k} − u^{δ_{k+1}}‖_∞`.
    pub distances: Vec<f64>,
    /// [`complementarity_residual`] of each run.
    pub residuals: Vec<f64>,
}

impl ContinuationResult {
    pub fn finals(&self) -> Vec<&ScalarField> {
        self.trajectories.iter().map(|t| &t.last().u).collect()
    }
}

/// Independent penalized runs for a strictly decreasing δ schedule.
pub fn continuation(
    u0: &ScalarField,
    obstacle: &Obstacle,
    alpha: f64,
    schedule: &[f64],
    variant: PenaltyVariant,
    t_end: f64,
    cadence: f64,
) -> Result<ContinuationResult> {
    if schedule.is_empty() {
        return Err(FlowError::InvalidParameter("empty delta schedule".into()));
    }
    if schedule.windows(2).any(|w| w[1] >= w[0]) {
        return Err(FlowError::InvalidParameter("delta schedule must be strictly decreasing".into()));
    }
    let runs: Vec<Result<Trajectory>> = schedule
        .par_iter()
        .map(|&delta| PenalizedFlow::penalized(alpha, obstacle, delta, variant)?.run(u0.clone(), t_end, cadence))
        .collect();
    let trajectories = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let mut distances = Vec::with_capacity(schedule.len().saturating_sub(1));
    for pair in trajectories.windows(2) {
        let mut d = 0.0_f64;
        for (a, b) in pair[0].snapshots.iter().zip(&pair[1].snapshots) {
            debug_assert_eq!(a.t, b.t);
            d = d.max(a.u.sup_distance(&b.u)?);
        }
        distances.push(d);
    }
    let residuals = trajectories.iter().map(|t| complementarity_residual(t, obstacle)).collect::<Result<Vec<_>>>()?;
    Ok(ContinuationResult { deltas: schedule.to_vec(), trajectories, distances, residuals })
}

/// Detected and certified coincidence times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoincidenceReport {
    /// First output time with `‖u − φ‖_∞ ≤ tol`.
    pub detected: Option<f64>,
    /// `(‖u₀‖_∞ + ρ)^{nα+1}/(nα+1)`.
    pub certified_bound: f64,
    /// Enclosing-radius bound of the initial obstacle.
    pub rho: f64,
}

pub fn detect_coincidence_time(traj: &Trajectory, obstacle: &Obstacle, tol: f64) -> Result<CoincidenceReport> {
    let mut detected = None;
    for snap in &traj.snapshots {
        let (phi, _) = obstacle.evaluate_on(snap.u.grid(), snap.t)?;
        if snap.u.sup_distance(&phi)? <= tol {
            detected = Some(snap.t);
            break;
        }
    }
    let rho = obstacle.enclosing_radius()?;
    let e = traj.grid().dim() as f64 * traj.meta.alpha + 1.0;
    Ok(CoincidenceReport { detected, certified_bound: (traj.initial().max_abs() + rho).powf(e) / e, rho })
}

/// Radius of the shrinking sphere `R(t) = (R₀^{nα+1} − (nα+1)t)^{1/(nα+1)}`.
pub fn sphere_radius(r0: f64, n: usize, alpha: f64, t: f64) -> f64 {
    let e = n as f64 * alpha + 1.0;
    (r0.powf(e) - e * t).powf(1.0 / e)
}

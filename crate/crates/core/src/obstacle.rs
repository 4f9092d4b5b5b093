//! Time-dependent shrinking obstacles given by support functions `φ(z, t)`.
//!
//! Two closed-form families:
//! * interpolating: `φ = e^{−t}φ₀ + (1 − e^{−t})φ_∞`;
//! * homothetic: `φ = A(t)φ₀` with `A(t) = a_∞ + (1 − a_∞)e^{−ct}`.
//!
//! Both have exact time derivatives, so nothing here interpolates in time.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sphere::{curvatures_of, gradient_norm, GeometryError, ScalarField, SphericalGrid};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObstacleError {
    #[error("phi_0 must exceed phi_inf at every node (violated at node {node})")]
    OrderingViolated { node: usize },
    #[error("support function must be positive (violated at node {node})")]
    NotPositive { node: usize },
    #[error("invalid time profile: {0}")]
    InvalidProfile(String),
    #[error("obstacle evaluated at negative time {0}")]
    NegativeTime(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ObstacleKind {
    Interpolating,
    Homothetic { a_inf: f64, rate: f64 },
}

#[derive(Debug, Clone)]
pub struct Obstacle {
    kind: ObstacleKind,
    phi0: ScalarField,
    phi_inf: ScalarField,
    label: String,
}

fn first_non_positive(f: &ScalarField) -> Option<usize> {
    f.values().iter().position(|&v| v <= 0.0)
}

impl Obstacle {
    pub fn interpolating(phi0: ScalarField, phi_inf: ScalarField) -> Result<Self, ObstacleError> {
        if **phi0.grid() != **phi_inf.grid() {
            return Err(GeometryError::GridMismatch.into());
        }
        if let Some(node) = first_non_positive(&phi_inf) {
            return Err(ObstacleError::NotPositive { node });
        }
        if let Some(node) = phi0.values().iter().zip(phi_inf.values()).position(|(a, b)| a <= b) {
            return Err(ObstacleError::OrderingViolated { node });
        }
        Ok(Self { kind: ObstacleKind::Interpolating, phi0, phi_inf, label: "interpolating".into() })
    }

    pub fn homothetic(phi0: ScalarField, a_inf: f64, rate: f64) -> Result<Self, ObstacleError> {
        if !(a_inf > 0.0 && a_inf < 1.0) {
            return Err(ObstacleError::InvalidProfile(format!("a_inf must lie in (0,1), got {a_inf}")));
        }
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(ObstacleError::InvalidProfile(format!("rate must be > 0, got {rate}")));
        }
        if let Some(node) = first_non_positive(&phi0) {
            return Err(ObstacleError::NotPositive { node });
        }
        let phi_inf = phi0.map(|v| a_inf * v);
        Ok(Self {
            kind: ObstacleKind::Homothetic { a_inf, rate },
            phi0,
            phi_inf,
            label: format!("homothetic(a_inf={a_inf},rate={rate})"),
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn kind(&self) -> ObstacleKind {
        self.kind
    }

    pub fn grid(&self) -> &Arc<SphericalGrid> {
        self.phi0.grid()
    }

    pub fn initial(&self) -> &ScalarField {
        &self.phi0
    }

    pub fn limit(&self) -> &ScalarField {
        &self.phi_inf
    }

    /// Weights `(a, a', b, b')` with `φ = aφ₀ + bφ_∞`.
    #[inline]
    fn weights(&self, t: f64) -> (f64, f64, f64, f64) {
        match self.kind {
            ObstacleKind::Interpolating => {
                let e = (-t).exp();
                (e, -e, 1.0 - e, e)
            }
            ObstacleKind::Homothetic { a_inf, rate } => {
                let e = (-rate * t).exp();
                (a_inf + (1.0 - a_inf) * e, -rate * (1.0 - a_inf) * e, 0.0, 0.0)
            }
        }
    }

    /// Writes `φ(·, t)` and `∂_tφ(·, t)` into the given buffers.
    pub fn evaluate_into(&self, t: f64, phi: &mut [f64], dphi: &mut [f64]) -> Result<(), ObstacleError> {
        if !(t >= 0.0) {
            return Err(ObstacleError::NegativeTime(t));
        }
        let (a, da, b, db) = self.weights(t);
        let p0 = self.phi0.values();
        match self.kind {
            ObstacleKind::Interpolating => {
                let pi = self.phi_inf.values();
                for k in 0..p0.len() {
                    phi[k] = a * p0[k] + b * pi[k];
                    dphi[k] = da * p0[k] + db * pi[k];
                }
            }
            ObstacleKind::Homothetic { .. } => {
                for k in 0..p0.len() {
                    phi[k] = a * p0[k];
                    dphi[k] = da * p0[k];
                }
            }
        }
        Ok(())
    }

    /// `(φ(·, t), ∂_tφ(·, t))`.
    pub fn evaluate(&self, t: f64) -> Result<(ScalarField, ScalarField), ObstacleError> {
        let n = self.phi0.len();
        let (mut phi, mut dphi) = (vec![0.0; n], vec![0.0; n]);
        self.evaluate_into(t, &mut phi, &mut dphi)?;
        let g = self.grid().clone();
        Ok((ScalarField::new(g.clone(), phi)?, ScalarField::new(g, dphi)?))
    }

    /// Same as [`Obstacle::evaluate`] but checks the grid the caller works on.
    pub fn evaluate_on(&self, grid: &SphericalGrid, t: f64) -> Result<(ScalarField, ScalarField), ObstacleError> {
        if **self.grid() != *grid {
            return Err(GeometryError::GridMismatch.into());
        }
        self.evaluate(t)
    }

    /// `min_z −∂_tφ(z, t)` in closed form.
    pub fn min_speed(&self, t: f64) -> f64 {
        match self.kind {
            ObstacleKind::Interpolating => {
                let gap = self.phi0.zip_map(&self.phi_inf, |a, b| a - b).expect("same grid");
                (-t).exp() * gap.min()
            }
            ObstacleKind::Homothetic { .. } => -self.weights(t).1 * self.phi0.min(),
        }
    }

    /// `max_z −∂_tφ(z, t)` in closed form.
    pub fn max_speed(&self, t: f64) -> f64 {
        match self.kind {
            ObstacleKind::Interpolating => {
                let gap = self.phi0.zip_map(&self.phi_inf, |a, b| a - b).expect("same grid");
                (-t).exp() * gap.max()
            }
            ObstacleKind::Homothetic { .. } => -self.weights(t).1 * self.phi0.max(),
        }
    }

    /// `C₀ = (max K_{Φ_∞})^α`, the supremum of `K_Φ^α` over all times for
    /// obstacles whose principal curvatures do not decrease.
    pub fn c0(&self, alpha: f64) -> Result<f64, ObstacleError> {
        let curv = curvatures_of(&self.phi_inf)?;
        Ok(curv.gauss.max().powf(alpha))
    }

    /// Enclosing-ball radius bound `max φ₀ + max |∇̄φ₀|` for the initial obstacle.
    pub fn enclosing_radius(&self) -> Result<f64, ObstacleError> {
        let grad = gradient_norm(&self.phi0, self.grid())?;
        Ok(self.phi0.max() + grad.max())
    }

    /// Checks the shrinking-obstacle conditions, supersolution property and
    /// compatibility with `u₀` on the given sample times.
    pub fn validate(
        &self,
        u0: &ScalarField,
        alpha: f64,
        times: &[f64],
    ) -> Result<ObstacleValidationReport, ObstacleError> {
        if **u0.grid() != **self.grid() {
            return Err(GeometryError::GridMismatch.into());
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(ObstacleError::InvalidParameter(format!("alpha must be > 0, got {alpha}")));
        }
        if times.is_empty()
            || times[0] != 0.0
            || times.iter().any(|t| !t.is_finite())
            || times.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(ObstacleError::InvalidParameter(
                "time samples must be finite, strictly increasing and start at 0".into(),
            ));
        }
        let n = u0.len();
        let mut speed_negative = f64::INFINITY;
        let mut speed_nonincreasing = f64::INFINITY;
        let mut curvature_monotone = f64::INFINITY;
        let mut supersolution = f64::INFINITY;
        let mut max_obstacle_curvature = 0.0_f64;
        let mut prev_speed: Option<Vec<f64>> = None;
        let mut prev_mu: Option<Vec<[f64; 2]>> = None;
        let mut compat_obstacle = f64::NEG_INFINITY;
        let mut max_initial_speed = 0.0;
        for &t in times {
            let (phi, dphi) = self.evaluate(t)?;
            let speed: Vec<f64> = dphi.values().iter().map(|d| -d).collect();
            speed_negative = speed_negative.min(speed.iter().copied().fold(f64::INFINITY, f64::min));
            let principal: Option<Vec<[f64; 2]>> = match curvatures_of(&phi) {
                Ok(c) => {
                    for k in 0..n {
                        let ka = c.gauss.values()[k].powf(alpha);
                        supersolution = supersolution.min(ka + dphi.values()[k]);
                        max_obstacle_curvature = max_obstacle_curvature.max(c.max_lambda());
                    }
                    if t == 0.0 {
                        max_initial_speed = speed.iter().copied().fold(0.0, f64::max);
                        compat_obstacle = c.gauss.min().powf(alpha) - max_initial_speed;
                    }
                    Some((0..n).map(|k| [c.lambda_min(k), c.lambda_max(k)]).collect())
                }
                Err(_) => {
                    supersolution = f64::NEG_INFINITY;
                    None
                }
            };
            if let Some(ps) = &prev_speed {
                for k in 0..n {
                    speed_nonincreasing = speed_nonincreasing.min(ps[k] - speed[k]);
                }
            }
            match principal {
                Some(mu) => {
                    if let Some(pm) = &prev_mu {
                        for k in 0..n {
                            for i in 0..2 {
                                curvature_monotone = curvature_monotone.min(mu[k][i] - pm[k][i]);
                            }
                        }
                    }
                    prev_mu = Some(mu);
                }
                None => {
                    curvature_monotone = f64::NEG_INFINITY;
                    prev_mu = None;
                }
            }
            prev_speed = Some(speed);
        }
        let compat_initial = match curvatures_of(u0) {
            Ok(c) => c.gauss.min().powf(alpha) - max_initial_speed,
            Err(_) => f64::NEG_INFINITY,
        };
        let enclosure = u0.zip_map(&self.phi0, |u, p| u - p).expect("same grid").min();
        let final_interior = self.phi_inf.min();
        let c0 = self.c0(alpha).unwrap_or(f64::INFINITY);

        let margins = [
            ("speed_negative", speed_negative),
            ("speed_nonincreasing", speed_nonincreasing),
            ("final_interior", final_interior),
            ("curvature_monotone", curvature_monotone),
            ("supersolution", supersolution),
            ("compat_initial", compat_initial),
            ("compat_obstacle", compat_obstacle),
            ("enclosure", enclosure),
        ];
        let failures: Vec<String> =
            margins.iter().filter(|(_, m)| !(*m > 0.0)).map(|(name, _)| name.to_string()).collect();
        Ok(ObstacleValidationReport {
            pass: failures.is_empty() && c0.is_finite(),
            speed_negative,
            speed_nonincreasing,
            final_interior,
            curvature_monotone,
            curvature_bound: max_obstacle_curvature,
            supersolution,
            compat_initial,
            compat_obstacle,
            enclosure,
            c0,
            failures,
        })
    }
}

/// Worst-case margins of the obstacle admissibility conditions. A condition
/// holds iff its margin is strictly positive. A single time sample leaves the
/// two monotonicity margins at `+∞`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObstacleValidationReport {
    pub pass: bool,
    /// `min −∂_tφ`.
    pub speed_negative: f64,
    /// `min (−∂_tφ(t_k) + ∂_tφ(t_{k+1}))` over consecutive samples.
    pub speed_nonincreasing: f64,
    /// `min φ_∞`.
    pub final_interior: f64,
    /// `min (μ_i(t_{k+1}) − μ_i(t_k))` over consecutive samples.
    pub curvature_monotone: f64,
    /// Largest obstacle principal curvature seen on the samples.
    pub curvature_bound: f64,
    /// `min (K_Φ^α + ∂_tφ)`.
    pub supersolution: f64,
    /// `min K₀^α − max(−∂_tφ₀)`.
    pub compat_initial: f64,
    /// `min K_{Φ₀}^α − max(−∂_tφ₀)`.
    pub compat_obstacle: f64,
    /// `min (u₀ − φ₀)`.
    pub enclosure: f64,
    pub c0: f64,
    pub failures: Vec<String>,
}

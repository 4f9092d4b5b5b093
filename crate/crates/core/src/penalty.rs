//! Penalty profile `β_δ(x) = C₀·β(x/δ)` for the penalized flow.
//!
//! `β` is non-decreasing and concave, vanishes on `[1, ∞)`, equals `−1` at 0
//! and is affine with slope 2 on `(−∞, 0)`. Two bridges over `[0, 1)`:
//! * [`PenaltyVariant::C11`]: `−(1−x)²`, C^{1,1} at the origin;
//! * [`PenaltyVariant::Smooth`]: `−2(1−x)³ + (1−x)⁴`, C² everywhere.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PenaltyError {
    #[error("invalid penalty parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyVariant {
    #[default]
    C11,
    Smooth,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyFunction {
    delta: f64,
    c0: f64,
    variant: PenaltyVariant,
}

impl PenaltyFunction {
    pub fn new(delta: f64, c0: f64, variant: PenaltyVariant) -> Result<Self, PenaltyError> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(PenaltyError::InvalidParameter(format!("delta must be > 0, got {delta}")));
        }
        if !(c0 > 0.0 && c0.is_finite()) {
            return Err(PenaltyError::InvalidParameter(format!("C0 must be > 0, got {c0}")));
        }
        Ok(Self { delta, c0, variant })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn variant(&self) -> PenaltyVariant {
        self.variant
    }

    /// `(β_δ(x), β_δ'(x))`.
    #[inline]
    pub fn eval(&self, x: f64) -> (f64, f64) {
        let (b, db) = base_profile(self.variant, x / self.delta);
        (self.c0 * b, self.c0 * db / self.delta)
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        self.eval(x).0
    }

    /// Largest slope, attained on `(−∞, 0]`.
    pub fn max_slope(&self) -> f64 {
        2.0 * self.c0 / self.delta
    }
}

#[inline]
fn base_profile(variant: PenaltyVariant, x: f64) -> (f64, f64) {
    if x >= 1.0 {
        return (0.0, 0.0);
    }
    if x < 0.0 {
        return (-1.0 + 2.0 * x, 2.0);
    }
    let y = 1.0 - x;
    match variant {
        PenaltyVariant::C11 => (-y * y, 2.0 * y),
        PenaltyVariant::Smooth => {
            let y2 = y * y;
            (y2 * y * (y - 2.0), y2 * (6.0 - 4.0 * y))
        }
    }
}

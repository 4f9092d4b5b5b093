//! Numerical α-Gauss curvature flow of convex hypersurfaces with a shrinking
//! obstacle, in support-function form on the circle and the 2-sphere.
//!
//! Modules, bottom-up:
//! * [`sphere`]: grids, covariant derivatives, curvatures, embedding;
//! * [`penalty`] and [`obstacle`]: the penalty profile and shrinking obstacles;
//! * [`flow`]: the penalized solver, δ-continuation, coincidence detection;
//! * [`diagnostics`]: quantitative checks over trajectories;
//! * [`free_boundary`]: local graph analysis near the contact region.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod diagnostics;
pub mod flow;
pub mod free_boundary;
pub mod obstacle;
pub mod penalty;
pub mod shapes;
pub mod sphere;

pub use diagnostics::{BoundsLedger, CheckId, CheckReport, DiagnosticsError};
pub use flow::{
    continuation, detect_coincidence_time, stable_dt, ContinuationResult, FlowError, FlowState, PenalizedFlow,
    StepRecord, Trajectory,
};
pub use free_boundary::{FreeBoundaryError, FreeBoundaryReport, GraphPatch};
pub use obstacle::{Obstacle, ObstacleError, ObstacleKind, ObstacleValidationReport};
pub use penalty::{PenaltyFunction, PenaltyVariant};
pub use sphere::{CurvatureBundle, GeometryError, Resolution, ScalarField, SphericalGrid, SymTensorField};

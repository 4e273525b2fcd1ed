//! Numerical laboratory for optimal transport toward stochastic targets on
//! the flat torus: exact and entropic transport between grid measures, the
//! closed-form deterministic value for power costs, samplable target
//! processes, the explicit admissible controls used in controllability
//! bounds, and Monte Carlo estimation of the stochastic value.

// Negated comparisons deliberately reject NaN alongside out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod controllers;
pub mod error;
pub mod measure;
pub mod quad;
pub mod rng;
pub mod simulate;
pub mod targets;
pub mod timegrid;
pub mod transport;
pub mod value_det;

pub use error::{Error, Result};
pub use measure::{displacement_interpolate, periodic_distance, Coords, GridMeasure, TorusDisplacement, TorusGrid};
pub use transport::{exact_ot, sinkhorn, wasserstein, Coupling, SinkhornOptions, SpeedDistribution, TransportPlan};
pub use value_det::{Horizon, PowerCost};
pub use controllers::{ControlPolicy, ControlledTrajectory};
pub use simulate::{estimate_value, SimConfig, SimReport};
pub use targets::{JumpOperator, RateSpec, TargetPath, TargetProcess};

//! Structure-preserving sampled-data integration of implicit
//! port-Hamiltonian systems with holonomic constraints.
//!
//! A step splits the unconstrained vector field into simple flows, wraps
//! the resulting map between two symplectic momentum projections that
//! restore `g = 0` and `G ∇_p H = 0`, and holds the control input fixed
//! over each sampling interval.

// `!(x > 0.0)` is used deliberately so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod control;
pub mod diagnostics;
pub mod error;
pub mod flows;
pub mod linalg;
pub mod par;
pub mod pendulum;
pub mod projection;
pub mod state;
pub mod stepper;
pub mod system;

pub use control::{damping_source, sequence_source, ControlSource, DampingGain, ZeroControl};
pub use error::{Error, Result};
pub use flows::{MethodRef, UnconstrainedMethod};
pub use linalg::{Matrix, Vector};
pub use pendulum::{DoublePendulum, PendulumParams};
pub use projection::NewtonConfig;
pub use state::State;
pub use stepper::{simulate, IntegratorConfig, StepResult, Trajectory};
pub use system::ImplicitPhSystem;

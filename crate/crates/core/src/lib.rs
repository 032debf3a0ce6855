//! Whole-body torque control of a floating-base biped.

pub mod config;
pub mod control_laws;
pub mod dynamics;
pub mod episode;
pub mod gait;
pub mod lie;
pub mod min_jerk;
pub mod model;
pub mod qp_controller;
pub mod qp_solver;
pub mod scalar;
pub mod simulator;
pub mod task_stack;
pub mod verify;

pub use scalar::Real;

// The rest of the crate runs in f64; these fix the generic layers to match.
pub type Rotation = lie::Rotation<f64>;
pub type Pose = lie::Pose<f64>;
pub type Twist = lie::Twist<f64>;
pub type GainsLinear = control_laws::GainsLinear<f64>;
pub type GainsAngular = control_laws::GainsAngular<f64>;
pub type PoseReference = control_laws::PoseReference<f64>;
pub type MinJerkSegment<const N: usize> = min_jerk::MinJerkSegment<f64, N>;
pub type RotationSegment = min_jerk::RotationSegment<f64>;

//! Deterministic multi-quadrotor simulation combining potential-flow obstacle
//! avoidance with virtual-rigid-body (VRB) formation control.
//!
//! The crate is organised bottom-up:
//!
//! - [`flowfield`]: doublet and Rankine-body velocity fields around moving obstacles.
//! - [`formation`]: Baumgarte-stabilised distance-constraint forces.
//! - [`assignment`]: optimal agent-to-slot allocation and slot tracking.
//! - [`vehicle`]: quaternion quadrotor dynamics, command mapping, PID and rotor allocation.
//! - [`sensing`]: range gating, measurement noise and constant-velocity Kalman tracks.
//! - [`engine`]: scenario configuration, the synthesised control loop and run outputs.
//!
//! Data-parallel loops (per-agent work inside a tick, field sampling, seed
//! batches) go through [`exec`], which uses rayon when the `parallel` feature is
//! enabled and falls back to plain iteration otherwise.

// `!(x >= 0.0)` style checks are deliberate: they reject NaN along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assignment;
pub mod engine;
pub mod exec;
pub mod flowfield;
pub mod formation;
pub mod sensing;
pub mod vehicle;

pub use exec::Execution;

/// Inertial-frame 3-vector used throughout the crate.
pub type Vec3 = nalgebra::Vector3<f64>;
/// 3×3 matrix used for rotations.
pub type Mat3 = nalgebra::Matrix3<f64>;

//! Deterministic planar block-manipulation world.
//!
//! Supplies multi-view pixel observations, analytic teacher features
//! (per-view depth and geometric feature grids), scripted expert
//! demonstrations with Clean/Rand episode initialization, and the
//! bit-exact demonstration container.
//!
//! Everything here is a pure function of (state, seed) in f64, so episodes
//! can be generated in parallel workers and replayed bit-identically.

pub mod demo;
pub mod expert;
pub mod render;
pub mod state;
pub mod step;
pub mod tasks;
pub mod teachers;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown task id: {0}")]
    UnknownTask(String),
    #[error("unknown init mode: {0}")]
    UnknownMode(String),
    #[error("expert failed: {0}")]
    ExpertFailure(String),
    #[error("demo container error: {0}")]
    Container(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Workspace is the unit square in xy.
pub const WORKSPACE: f64 = 1.0;
/// Gripper height range.
pub const Z_MAX: f64 = 0.25;
/// Render grid side (G); image tokens are G*G per view.
pub const GRID: usize = 16;
/// Render channels per view.
pub const CHANNELS: usize = 3;
/// Camera views: head, left wrist, right wrist.
pub const VIEWS: usize = 3;
/// Depth teacher tokens per view (matches the template bank size).
pub const DEPTH_TOKENS: usize = 256;
/// Width of one depth token: depth value + 2-D positional encoding.
pub const D_DEPTH: usize = 8;
/// Channels of the geometric feature grid.
pub const D_3D: usize = 16;
/// Robot state vector width: (x, y, z, yaw, aperture, held).
pub const STATE_DIM: usize = 6;
/// Action vector width: (dx, dy, dz, dyaw, aperture target).
pub const ACTION_DIM: usize = 5;

/// Per-step translation bound (meters).
pub const MAX_STEP_XY: f64 = 0.05;
pub const MAX_STEP_Z: f64 = 0.05;
/// Per-step rotation bound (radians).
pub const MAX_STEP_YAW: f64 = 0.3;

/// Grasp engages when the closed gripper center is within this xy radius
/// of an object center.
pub const GRASP_RADIUS: f64 = 0.06;
/// Gripper body disc radius (rendering, occlusion, wiping footprint).
pub const GRIPPER_RADIUS: f64 = 0.055;
/// Aperture at or below this counts as closed.
pub const APERTURE_CLOSED: f64 = 0.35;
/// Aperture at or above this counts as open (release).
pub const APERTURE_OPEN: f64 = 0.65;
/// Closed gripper at or below this height wipes the surface under it.
pub const WIPE_Z: f64 = 0.03;

/// Head camera height above the table.
pub const HEAD_CAM_Z: f64 = 1.0;
/// Wrist camera height.
pub const WRIST_CAM_Z: f64 = 0.5;
/// Wrist crop window half-size (meters).
pub const WRIST_HALF: f64 = 0.15;
/// Wrist camera lateral offset from the gripper, in the gripper frame.
pub const WRIST_OFFSET: f64 = 0.06;

/// Block half extent (square footprint).
pub const BLOCK_HALF: f64 = 0.055;
/// Block height.
pub const BLOCK_H: f64 = 0.06;

pub use demo::{DemoChunk, DemoEpisode, read_demo_file, write_demo_file};
pub use expert::{scripted_expert, ExpertOutcome};
pub use render::{render, Observation};
pub use state::{ActionCommand, GripperState, InitMode, ObjectState, TaskId, TaskSpec, WorldState};
pub use step::step;
pub use tasks::{reset, success};
pub use teachers::{depth_teacher, fm3d_teacher, teacher_bundle, TeacherBundle};

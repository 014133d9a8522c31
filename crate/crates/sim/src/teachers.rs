//! Analytic teacher features: exact per-view depth (ray cast against the
//! known block geometry) and a per-view geometric feature grid. Both are
//! deterministic functions of the world state; no learning anywhere.
//!
//! Depth sees the scene geometry only (table + blocks). The geometric
//! grid additionally encodes the gripper body, surface dirt, and goal
//! markings, so every action changes it somewhere - the scene the policy
//! must track is genuinely action-evolving.

use crate::render::{view_point, wrist_center};
use crate::state::WorldState;
use crate::{
    D_3D, D_DEPTH, DEPTH_TOKENS, GRID, GRIPPER_RADIUS, HEAD_CAM_Z, VIEWS, WORKSPACE, WRIST_CAM_Z,
    WRIST_HALF, Z_MAX,
};

/// Per-view teacher features for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherBundle {
    /// Environment step index the bundle was computed at.
    pub frame: u64,
    /// Per view: DEPTH_TOKENS x D_DEPTH, flattened row-major.
    pub depth: Vec<Vec<f64>>,
    /// Per view: GRID*GRID x D_3D, flattened row-major.
    pub geom: Vec<Vec<f64>>,
}

impl TeacherBundle {
    pub fn is_finite(&self) -> bool {
        self.depth.iter().chain(self.geom.iter()).all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Top surface height of the scene geometry at an xy point (objects only;
/// the table is at 0). Out-of-workspace points are table height.
pub fn top_height(state: &WorldState, px: f64, py: f64) -> f64 {
    let mut top = 0.0_f64;
    for o in &state.objects {
        if o.contains_xy(px, py) {
            top = top.max(o.top());
        }
    }
    top
}

fn camera_height(view: usize) -> f64 {
    if view == 0 {
        HEAD_CAM_Z
    } else {
        WRIST_CAM_Z
    }
}

/// Analytic depth features for one view: DEPTH_TOKENS tokens, each
/// [depth, u, v, sin(pi u), cos(pi u), sin(pi v), cos(pi v)] of width
/// D_DEPTH, where (u, v) are the token's normalized grid coordinates.
/// Depth is the vertical camera-to-surface distance at the pixel center,
/// ray-cast against blocks and table only.
pub fn depth_teacher(state: &WorldState, view: usize) -> Vec<f64> {
    assert!(view < VIEWS, "view {view} out of range");
    let cam_z = camera_height(view);
    let mut out = Vec::with_capacity(DEPTH_TOKENS * D_DEPTH);
    debug_assert_eq!(DEPTH_TOKENS, GRID * GRID);
    for row in 0..GRID {
        for col in 0..GRID {
            let depth = match view_point(state, view, row, col) {
                Some((px, py)) => cam_z - top_height(state, px, py),
                // outside the workspace the ray hits the (infinite) table plane
                None => cam_z,
            };
            let u = (col as f64 + 0.5) / GRID as f64;
            let v = (row as f64 + 0.5) / GRID as f64;
            out.extend_from_slice(&[
                depth,
                u,
                v,
                libm::sin(core::f64::consts::PI * u),
                libm::cos(core::f64::consts::PI * u),
                libm::sin(core::f64::consts::PI * v),
                libm::cos(core::f64::consts::PI * v),
                1.0,
            ]);
        }
    }
    out
}

/// Identity embedding of an object id: a fixed unit vector, no learning.
pub fn identity_embedding(id: usize) -> [f64; D_3D - 5] {
    let mut e = [0.0; D_3D - 5];
    let mut norm = 0.0;
    for (j, slot) in e.iter_mut().enumerate() {
        let v = libm::sin(((id + 1) * (j + 1)) as f64 * 0.618033988749895 * core::f64::consts::PI);
        *slot = v;
        norm += v * v;
    }
    let norm = libm::sqrt(norm);
    for slot in e.iter_mut() {
        *slot /= norm;
    }
    e
}

/// Geometric feature grid for one view: GRID*GRID cells x D_3D channels.
/// Channels: [object occupancy, top height / Z_MAX, boundary sdf (clipped,
/// normalized), dirt level, gripper occupancy, identity embedding of the
/// nearest object (zeros when no object is near)].
pub fn fm3d_view(state: &WorldState, view: usize) -> Vec<f64> {
    const SDF_CLIP: f64 = 0.2;
    let mut out = Vec::with_capacity(GRID * GRID * D_3D);
    for row in 0..GRID {
        for col in 0..GRID {
            let Some((px, py)) = view_point(state, view, row, col) else {
                out.extend_from_slice(&[0.0; D_3D]);
                continue;
            };
            let occ = if state.objects.iter().any(|o| o.contains_xy(px, py)) { 1.0 } else { 0.0 };
            let height = top_height(state, px, py) / Z_MAX;
            let mut sdf = SDF_CLIP;
            let mut nearest: Option<usize> = None;
            for (i, o) in state.objects.iter().enumerate() {
                let d = o.boundary_distance(px, py);
                if d < sdf {
                    sdf = d;
                    nearest = Some(i);
                }
            }
            let sdf = sdf.clamp(-SDF_CLIP, SDF_CLIP) / SDF_CLIP;
            let cell = WORKSPACE / GRID as f64;
            let dc = (px / cell) as usize;
            let dr = (py / cell) as usize;
            let dirt = if dr < GRID && dc < GRID { state.dirt[dr * GRID + dc] } else { 0.0 };
            let g = &state.gripper;
            let gd = libm::sqrt((px - g.x) * (px - g.x) + (py - g.y) * (py - g.y));
            let grip = if gd <= GRIPPER_RADIUS { 1.0 } else { 0.0 };
            out.extend_from_slice(&[occ, height, sdf, dirt, grip]);
            match nearest {
                Some(i) => out.extend_from_slice(&identity_embedding(i)),
                None => out.extend_from_slice(&[0.0; D_3D - 5]),
            }
        }
    }
    out
}

/// All views of the geometric teacher.
pub fn fm3d_teacher(state: &WorldState) -> Vec<Vec<f64>> {
    (0..VIEWS).map(|v| fm3d_view(state, v)).collect()
}

/// Full bundle (depth + geometry, every view) at a frame index.
pub fn teacher_bundle(state: &WorldState, frame: u64) -> TeacherBundle {
    TeacherBundle {
        frame,
        depth: (0..VIEWS).map(|v| depth_teacher(state, v)).collect(),
        geom: fm3d_teacher(state),
    }
}

/// Average-pool a GRID x GRID teacher grid down to (GRID/factor)^2 cells,
/// keeping the channel width. This is the target layout for decoder
/// query grids coarser than the raw teacher grid.
pub fn pool_grid(grid: &[f64], channels: usize, factor: usize) -> Vec<f64> {
    let side = GRID / factor;
    let mut out = vec![0.0; side * side * channels];
    for row in 0..GRID {
        for col in 0..GRID {
            let pr = row / factor;
            let pc = col / factor;
            for ch in 0..channels {
                out[(pr * side + pc) * channels + ch] += grid[(row * GRID + col) * channels + ch];
            }
        }
    }
    let scale = 1.0 / (factor * factor) as f64;
    for v in out.iter_mut() {
        *v *= scale;
    }
    out
}

/// The wrist window center, exposed for oracle tests.
pub fn wrist_window(state: &WorldState, view: usize) -> (f64, f64, f64) {
    let (cx, cy) = wrist_center(state, view);
    (cx, cy, WRIST_HALF)
}

//! Multi-view rendering to G x G x C pixel grids, values in [0, 1].
//!
//! View 0 (head) is a top-down orthographic projection of the whole
//! workspace. Views 1/2 (left/right wrist) are finer gripper-centered
//! crops offset laterally in the gripper frame. Channels:
//!   0 - object body with per-object identity shading
//!   1 - top-surface height map, gripper body drawn as a 1.0 marker
//!   2 - ground markings: goal region and surface dirt
//! The gripper is drawn last and occludes the scene under its disc, so
//! ground state beneath the tool is not observable in pixels.
//! Pixels are point-sampled at cell centers; points outside the
//! workspace render as zeros.

use crate::state::WorldState;
use crate::tasks::PUSH_TOL;
use crate::{CHANNELS, GRID, GRIPPER_RADIUS, VIEWS, WIPE_Z, WORKSPACE, WRIST_HALF, WRIST_OFFSET, Z_MAX};

/// Multi-view observation: VIEWS grids of GRID*GRID*CHANNELS (row-major,
/// channel-last) plus the robot state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub views: Vec<Vec<f64>>,
    pub robot_state: Vec<f64>,
}

impl Observation {
    pub fn pixel(&self, view: usize, row: usize, col: usize, ch: usize) -> f64 {
        self.views[view][(row * GRID + col) * CHANNELS + ch]
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(VIEWS * GRID * GRID * CHANNELS);
        for v in &self.views {
            out.extend_from_slice(v);
        }
        out
    }
}

/// World-space sample point of a view pixel center, or None when the
/// pixel looks outside the workspace.
pub fn view_point(state: &WorldState, view: usize, row: usize, col: usize) -> Option<(f64, f64)> {
    let u = (col as f64 + 0.5) / GRID as f64;
    let v = (row as f64 + 0.5) / GRID as f64;
    let (px, py) = match view {
        0 => (u * WORKSPACE, v * WORKSPACE),
        1 | 2 => {
            let (cx, cy) = wrist_center(state, view);
            (cx - WRIST_HALF + u * 2.0 * WRIST_HALF, cy - WRIST_HALF + v * 2.0 * WRIST_HALF)
        }
        _ => unreachable!("view index"),
    };
    if (0.0..=WORKSPACE).contains(&px) && (0.0..=WORKSPACE).contains(&py) {
        Some((px, py))
    } else {
        None
    }
}

/// Wrist camera center: gripper position offset laterally in the gripper
/// frame (left = +offset, right = -offset).
pub fn wrist_center(state: &WorldState, view: usize) -> (f64, f64) {
    let g = &state.gripper;
    let sign = if view == 1 { 1.0 } else { -1.0 };
    let (s, c) = (libm::sin(g.yaw), libm::cos(g.yaw));
    (g.x - s * sign * WRIST_OFFSET, g.y + c * sign * WRIST_OFFSET)
}

/// Render all three views. Deterministic function of the state.
pub fn render(state: &WorldState) -> Observation {
    let views = (0..VIEWS).map(|v| render_view(state, v)).collect();
    Observation { views, robot_state: state.robot_state() }
}

fn render_view(state: &WorldState, view: usize) -> Vec<f64> {
    let mut img = vec![0.0; GRID * GRID * CHANNELS];
    let cell = WORKSPACE / GRID as f64;
    for row in 0..GRID {
        for col in 0..GRID {
            let base = (row * GRID + col) * CHANNELS;
            let Some((px, py)) = view_point(state, view, row, col) else { continue };

            // ground channel: goal disc and dirt cells
            let mut ground = 0.0_f64;
            if let Some((gx, gy)) = state.goal {
                let d = libm::sqrt((px - gx) * (px - gx) + (py - gy) * (py - gy));
                if d <= PUSH_TOL {
                    ground = 0.5;
                }
            }
            let dc = (px / cell) as usize;
            let dr = (py / cell) as usize;
            if dr < GRID && dc < GRID {
                ground = ground.max(state.dirt[dr * GRID + dc]);
            }

            // topmost object at this point
            let mut obj_shade = 0.0;
            let mut top = f64::NEG_INFINITY;
            for (i, o) in state.objects.iter().enumerate() {
                if o.contains_xy(px, py) && o.top() > top {
                    top = o.top();
                    obj_shade = identity_shade(i);
                }
            }
            let height = if top.is_finite() { top / Z_MAX } else { 0.0 };

            img[base] = obj_shade;
            img[base + 1] = height;
            img[base + 2] = ground;

            // gripper body occludes everything beneath it
            let g = &state.gripper;
            let gd = libm::sqrt((px - g.x) * (px - g.x) + (py - g.y) * (py - g.y));
            if gd <= GRIPPER_RADIUS {
                img[base] = 0.0;
                img[base + 1] = 1.0;
                img[base + 2] = 0.0;
            }
        }
    }
    img
}

/// Per-object shade in (0, 1]; ids stay distinguishable in pixels.
pub fn identity_shade(id: usize) -> f64 {
    const SHADES: [f64; 4] = [0.55, 0.85, 0.7, 1.0];
    SHADES[id % SHADES.len()]
}

/// Convenience for tests: does the gripper disc cover a grid cell center?
pub fn gripper_covers_cell(state: &WorldState, row: usize, col: usize) -> bool {
    let cell = WORKSPACE / GRID as f64;
    let cx = (col as f64 + 0.5) * cell;
    let cy = (row as f64 + 0.5) * cell;
    let g = &state.gripper;
    libm::sqrt((cx - g.x) * (cx - g.x) + (cy - g.y) * (cy - g.y)) <= GRIPPER_RADIUS
}

/// Closed and low enough to be wiping.
pub fn gripper_is_tool(state: &WorldState) -> bool {
    state.aperture <= crate::APERTURE_CLOSED && state.gripper.z <= WIPE_Z
}

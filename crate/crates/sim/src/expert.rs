//! Scripted waypoint experts. Proportional control with fixed unit gain:
//! each step moves the clipped remaining distance toward the active
//! waypoint, so trajectories are straight legs between waypoints.

use crate::state::{ActionCommand, TaskId, TaskSpec, WorldState};
use crate::step::step;
use crate::tasks::success;
use crate::{APERTURE_CLOSED, APERTURE_OPEN, GRID, WORKSPACE};

/// Travel height between waypoints.
const Z_TRAVEL: f64 = 0.14;
/// Height for grasping a table-level block.
const Z_GRASP: f64 = 0.03;
/// Height for dragging a grasped block along the table.
const Z_DRAG: f64 = 0.02;
/// Wiping height (must satisfy the WIPE_Z threshold).
const Z_WIPE: f64 = 0.02;
/// Waypoint arrival tolerance.
const TOL: f64 = 0.012;

#[derive(Debug)]
pub struct ExpertOutcome {
    pub actions: Vec<ActionCommand>,
    pub success: bool,
    pub final_state: WorldState,
}

/// Run the deterministic expert from a state. Returns the executed
/// action sequence; `success` is false when the horizon ran out.
pub fn scripted_expert(start: &WorldState, spec: &TaskSpec) -> ExpertOutcome {
    let mut state = start.clone();
    let mut actions = Vec::new();
    for _ in 0..spec.horizon {
        if success(&state, spec.task) {
            break;
        }
        let a = expert_action(&state, spec.task);
        state = step(&state, &a);
        actions.push(a);
    }
    let ok = success(&state, spec.task);
    ExpertOutcome { actions, success: ok, final_state: state }
}

/// One expert control decision, a pure function of the current state.
pub fn expert_action(state: &WorldState, task: TaskId) -> ActionCommand {
    match task {
        TaskId::PushToGoal => push_action(state),
        TaskId::StackTwo => stack_action(state),
        TaskId::WipeCells => wipe_action(state),
    }
}

fn goto(state: &WorldState, tx: f64, ty: f64, tz: f64, aperture: f64) -> ActionCommand {
    let g = &state.gripper;
    ActionCommand::clipped(tx - g.x, ty - g.y, tz - g.z, 0.0, aperture)
}

fn at(state: &WorldState, tx: f64, ty: f64, tz: f64) -> bool {
    let g = &state.gripper;
    let dxy = libm::sqrt((g.x - tx) * (g.x - tx) + (g.y - ty) * (g.y - ty));
    dxy <= TOL && (g.z - tz).abs() <= TOL
}

/// Drag the block to the goal: approach above, descend, close, drag at
/// table height, release.
fn push_action(state: &WorldState) -> ActionCommand {
    let (gx, gy) = state.goal.expect("push task has a goal");
    let o = &state.objects[0];
    if state.held == Some(0) {
        if at(state, gx, gy, Z_DRAG) {
            return ActionCommand::hold(1.0); // release
        }
        return goto(state, gx, gy, Z_DRAG, 0.1);
    }
    // not holding: approach and grasp
    if at(state, o.x, o.y, Z_GRASP) {
        return ActionCommand::hold(0.1); // close
    }
    let g = &state.gripper;
    let dxy = libm::sqrt((g.x - o.x) * (g.x - o.x) + (g.y - o.y) * (g.y - o.y));
    if dxy > TOL {
        // travel at safe height to above the block
        return goto(state, o.x, o.y, Z_TRAVEL.max(g.z), 1.0);
    }
    goto(state, o.x, o.y, Z_GRASP, 1.0)
}

/// Pick block 0, carry it above block 1, lower, release.
fn stack_action(state: &WorldState) -> ActionCommand {
    let top = &state.objects[0];
    let bottom = &state.objects[1];
    if state.held == Some(0) {
        let place_z = bottom.top() + 0.02;
        let g = &state.gripper;
        let dxy = libm::sqrt((g.x - bottom.x) * (g.x - bottom.x) + (g.y - bottom.y) * (g.y - bottom.y));
        if dxy > TOL {
            // carry at travel height
            return goto(state, bottom.x, bottom.y, Z_TRAVEL, 0.1);
        }
        if (g.z - place_z).abs() > TOL {
            return goto(state, bottom.x, bottom.y, place_z, 0.1);
        }
        return ActionCommand::hold(1.0); // release
    }
    if at(state, top.x, top.y, Z_GRASP) {
        return ActionCommand::hold(0.1); // close
    }
    let g = &state.gripper;
    let dxy = libm::sqrt((g.x - top.x) * (g.x - top.x) + (g.y - top.y) * (g.y - top.y));
    if dxy > TOL {
        return goto(state, top.x, top.y, Z_TRAVEL.max(g.z), 1.0);
    }
    goto(state, top.x, top.y, Z_GRASP, 1.0)
}

/// Close the tool, descend to the surface, visit every dirty cell in
/// row-major order.
fn wipe_action(state: &WorldState) -> ActionCommand {
    let dirty = state.dirty_cells();
    let Some(&(row, col)) = dirty.first() else {
        return ActionCommand::hold(state.aperture);
    };
    let cell = WORKSPACE / GRID as f64;
    let tx = (col as f64 + 0.5) * cell;
    let ty = (row as f64 + 0.5) * cell;
    goto(state, tx, ty, Z_WIPE, 0.1)
}

/// Is the current command a grasp/release transition? Used by tests.
pub fn is_gripper_event(prev: &WorldState, next: &WorldState) -> bool {
    prev.held != next.held
        || (prev.aperture <= APERTURE_CLOSED) != (next.aperture <= APERTURE_CLOSED)
        || (prev.aperture >= APERTURE_OPEN) != (next.aperture >= APERTURE_OPEN)
}

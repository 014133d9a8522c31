//! Task layouts: Clean/Rand initialization and the success predicates.

use sceneflow_util::{derive_seed, DetRng};

use crate::state::{GripperState, InitMode, ObjectState, TaskId, TaskSpec, WorldState};
use crate::{BLOCK_H, BLOCK_HALF, GRID};

/// Goal center for the placement task (fixed workspace furniture).
pub const PUSH_GOAL: (f64, f64) = (0.75, 0.5);
/// Success tolerance: object-to-goal center distance.
pub const PUSH_TOL: f64 = 0.06;
/// Success tolerance: stacked block centering over the support.
pub const STACK_TOL: f64 = 0.04;

fn block(x: f64, y: f64, yaw: f64) -> ObjectState {
    ObjectState { x, y, yaw, z: 0.0, half: BLOCK_HALF, height: BLOCK_H }
}

/// Build the initial state for a task. Clean yields the canonical layout;
/// Rand samples poses from the seed's stream, inside the safe region.
/// Same spec (task, mode, seed) always yields the identical state.
pub fn reset(spec: &TaskSpec) -> WorldState {
    let mut rng = DetRng::new(derive_seed(spec.seed, "reset"));
    let mut s = WorldState::empty();
    match spec.task {
        TaskId::PushToGoal => {
            s.goal = Some(PUSH_GOAL);
            match spec.mode {
                InitMode::Clean => {
                    s.objects.push(block(0.35, 0.5, 0.0));
                    s.gripper = GripperState { x: 0.2, y: 0.3, z: 0.12, yaw: 0.0 };
                }
                InitMode::Rand => {
                    let bx = rng.uniform_in(0.2, 0.55);
                    let by = rng.uniform_in(0.25, 0.75);
                    let yaw = rng.uniform_in(-0.7, 0.7);
                    s.objects.push(block(bx, by, yaw));
                    s.gripper = GripperState {
                        x: rng.uniform_in(0.15, 0.85),
                        y: rng.uniform_in(0.15, 0.85),
                        z: rng.uniform_in(0.08, 0.2),
                        yaw: 0.0,
                    };
                }
            }
        }
        TaskId::StackTwo => {
            match spec.mode {
                InitMode::Clean => {
                    s.objects.push(block(0.3, 0.35, 0.0));
                    s.objects.push(block(0.65, 0.6, 0.0));
                    s.gripper = GripperState { x: 0.5, y: 0.2, z: 0.12, yaw: 0.0 };
                }
                InitMode::Rand => {
                    // two well-separated blocks inside the reachable region
                    let (ax, ay) = sample_xy(&mut rng);
                    let (bx, by) = loop {
                        let (bx, by) = sample_xy(&mut rng);
                        let d = libm::sqrt((bx - ax) * (bx - ax) + (by - ay) * (by - ay));
                        if d >= 0.22 {
                            break (bx, by);
                        }
                    };
                    s.objects.push(block(ax, ay, rng.uniform_in(-0.7, 0.7)));
                    s.objects.push(block(bx, by, rng.uniform_in(-0.7, 0.7)));
                    s.gripper = GripperState {
                        x: rng.uniform_in(0.15, 0.85),
                        y: rng.uniform_in(0.15, 0.85),
                        z: rng.uniform_in(0.08, 0.2),
                        yaw: 0.0,
                    };
                }
            }
        }
        TaskId::WipeCells => {
            match spec.mode {
                InitMode::Clean => {
                    for &col in &[5usize, 8, 11] {
                        s.dirt[8 * GRID + col] = 1.0;
                    }
                    s.gripper = GripperState { x: 0.2, y: 0.53125, z: 0.12, yaw: 0.0 };
                }
                InitMode::Rand => {
                    let n_cells = 2 + rng.below(3); // 2..=4 dirty cells
                    let mut placed = 0;
                    while placed < n_cells {
                        let row = 5 + rng.below(6); // rows 5..=10
                        let col = 4 + rng.below(8); // cols 4..=11
                        if s.dirt[row * GRID + col] == 0.0 {
                            s.dirt[row * GRID + col] = 1.0;
                            placed += 1;
                        }
                    }
                    s.gripper = GripperState {
                        x: rng.uniform_in(0.15, 0.85),
                        y: rng.uniform_in(0.15, 0.85),
                        z: rng.uniform_in(0.08, 0.2),
                        yaw: 0.0,
                    };
                }
            }
        }
    }
    s.assert_valid();
    s
}

fn sample_xy(rng: &mut DetRng) -> (f64, f64) {
    (rng.uniform_in(0.2, 0.8), rng.uniform_in(0.2, 0.8))
}

/// Pure geometric success predicate.
///
/// - push-to-goal: the block rests within PUSH_TOL of the goal, not held.
/// - stack-two: block 0 rests on block 1 (bottom at the support top),
///   centered within STACK_TOL, not held.
/// - wipe-cells: every dirt cell cleared.
pub fn success(state: &WorldState, task: TaskId) -> bool {
    match task {
        TaskId::PushToGoal => {
            let Some((gx, gy)) = state.goal else { return false };
            let o = &state.objects[0];
            let d = libm::sqrt((o.x - gx) * (o.x - gx) + (o.y - gy) * (o.y - gy));
            state.held != Some(0) && d <= PUSH_TOL && o.z == 0.0
        }
        TaskId::StackTwo => {
            let top = &state.objects[0];
            let bottom = &state.objects[1];
            let d = libm::sqrt((top.x - bottom.x) * (top.x - bottom.x)
                + (top.y - bottom.y) * (top.y - bottom.y));
            state.held != Some(0)
                && d <= STACK_TOL
                && (top.z - bottom.top()).abs() <= 1e-9
        }
        TaskId::WipeCells => state.dirt.iter().all(|&d| d == 0.0),
    }
}

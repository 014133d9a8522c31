//! Kinematic world update. No contact dynamics: the gripper moves freely,
//! a held object tracks it, grasp/release are aperture-threshold events,
//! released objects settle onto the tallest support strictly below them,
//! and a closed low gripper wipes the surface dirt beneath its disc.

use crate::state::{clamp_xy, wrap_angle, ActionCommand, WorldState};
use crate::{APERTURE_CLOSED, APERTURE_OPEN, GRASP_RADIUS, GRID, GRIPPER_RADIUS, WIPE_Z, Z_MAX};

/// Apply one command. Deterministic; inputs are clipped, so there is no
/// error path.
pub fn step(state: &WorldState, action: &ActionCommand) -> WorldState {
    let mut s = state.clone();
    let a = ActionCommand::clipped(action.dx, action.dy, action.dz, action.dyaw, action.aperture);

    // Gripper pose update.
    s.gripper.x = clamp_xy(s.gripper.x + a.dx);
    s.gripper.y = clamp_xy(s.gripper.y + a.dy);
    s.gripper.z = (s.gripper.z + a.dz).clamp(0.0, Z_MAX);
    s.gripper.yaw = wrap_angle(s.gripper.yaw + a.dyaw);

    // A held object rides the gripper.
    if let Some(h) = s.held {
        let obj = &mut s.objects[h];
        obj.x = s.gripper.x;
        obj.y = s.gripper.y;
        obj.z = s.gripper.z;
        obj.yaw = wrap_angle(obj.yaw + a.dyaw);
    }

    s.aperture = a.aperture;

    // Grasp: closing near an object whose body spans the gripper height.
    if s.held.is_none() && s.aperture <= APERTURE_CLOSED {
        let gx = s.gripper.x;
        let gy = s.gripper.y;
        let gz = s.gripper.z;
        let mut best: Option<(usize, f64)> = None;
        for (i, o) in s.objects.iter().enumerate() {
            let d = libm::sqrt((o.x - gx) * (o.x - gx) + (o.y - gy) * (o.y - gy));
            if d <= GRASP_RADIUS && gz >= o.z - 0.02 && gz <= o.top() + 0.02 {
                if best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((i, d));
                }
            }
        }
        if let Some((i, _)) = best {
            s.held = Some(i);
            let obj = &mut s.objects[i];
            obj.x = gx;
            obj.y = gy;
            obj.z = gz;
        }
    }

    // Release: opening drops the object at the current xy.
    if s.held.is_some() && s.aperture >= APERTURE_OPEN {
        s.held = None;
    }

    // Wiping: a closed gripper at surface height clears dirt under its disc.
    if s.aperture <= APERTURE_CLOSED && s.gripper.z <= WIPE_Z {
        let cell = 1.0 / GRID as f64;
        for row in 0..GRID {
            for col in 0..GRID {
                if s.dirt[row * GRID + col] > 0.0 {
                    let cx = (col as f64 + 0.5) * cell;
                    let cy = (row as f64 + 0.5) * cell;
                    let d = libm::sqrt(
                        (cx - s.gripper.x) * (cx - s.gripper.x)
                            + (cy - s.gripper.y) * (cy - s.gripper.y),
                    );
                    if d <= GRIPPER_RADIUS {
                        s.dirt[row * GRID + col] = 0.0;
                    }
                }
            }
        }
    }

    settle(&mut s);
    s.assert_valid();
    s
}

/// Drop every free object onto the tallest support strictly below it
/// (table at 0). Support = another free object whose footprint contains
/// this object's center and whose top does not exceed the object's
/// current bottom. Iterates to a fixpoint; index order keeps it
/// deterministic.
pub fn settle(s: &mut WorldState) {
    let n = s.objects.len();
    for _ in 0..n.max(1) {
        let mut changed = false;
        for i in 0..n {
            if s.held == Some(i) {
                continue;
            }
            let (cx, cy, cz) = (s.objects[i].x, s.objects[i].y, s.objects[i].z);
            let mut rest = 0.0_f64;
            for j in 0..n {
                if j == i || s.held == Some(j) {
                    continue;
                }
                let o = &s.objects[j];
                if o.contains_xy(cx, cy) && o.top() <= cz + 1e-9 {
                    rest = rest.max(o.top());
                }
            }
            if rest < cz - 1e-12 {
                s.objects[i].z = rest;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::{GripperState, ObjectState};
    use crate::{BLOCK_H, BLOCK_HALF};

    fn block(x: f64, y: f64) -> ObjectState {
        ObjectState { x, y, yaw: 0.0, z: 0.0, half: BLOCK_HALF, height: BLOCK_H }
    }

    fn base_state() -> WorldState {
        let mut s = WorldState::empty();
        s.gripper = GripperState { x: 0.2, y: 0.2, z: 0.1, yaw: 0.0 };
        s.objects.push(block(0.5, 0.5));
        s
    }

    #[test]
    fn identity_action_is_identity() {
        let s = base_state();
        let s2 = step(&s, &ActionCommand::hold(s.aperture));
        assert_eq!(s, s2);
    }

    #[test]
    fn negated_delta_returns_gripper() {
        let s = base_state();
        let fwd = ActionCommand::clipped(0.03, -0.02, 0.01, 0.1, 1.0);
        let back = ActionCommand::clipped(-0.03, 0.02, -0.01, -0.1, 1.0);
        let s1 = step(&s, &fwd);
        let s2 = step(&s1, &back);
        assert!((s2.gripper.x - s.gripper.x).abs() < 1e-12);
        assert!((s2.gripper.y - s.gripper.y).abs() < 1e-12);
        assert!((s2.gripper.z - s.gripper.z).abs() < 1e-12);
        assert!((s2.gripper.yaw - s.gripper.yaw).abs() < 1e-12);
    }

    #[test]
    fn grasp_then_move_tracks_object() {
        let mut s = base_state();
        s.gripper = GripperState { x: 0.5, y: 0.5, z: 0.03, yaw: 0.0 };
        let s1 = step(&s, &ActionCommand::clipped(0.0, 0.0, 0.0, 0.0, 0.1));
        assert_eq!(s1.held, Some(0));
        let s2 = step(&s1, &ActionCommand::clipped(0.04, 0.02, 0.03, 0.0, 0.1));
        assert!((s2.objects[0].x - s2.gripper.x).abs() < 1e-12);
        assert!((s2.objects[0].y - s2.gripper.y).abs() < 1e-12);
        assert!((s2.objects[0].z - s2.gripper.z).abs() < 1e-12);
    }

    #[test]
    fn release_settles_onto_support() {
        let mut s = base_state();
        s.objects.push(block(0.7, 0.7));
        // hold object 0 above object 1, then open
        s.held = Some(0);
        s.objects[0].x = 0.7;
        s.objects[0].y = 0.7;
        s.objects[0].z = 0.15;
        s.gripper = GripperState { x: 0.7, y: 0.7, z: 0.15, yaw: 0.0 };
        s.aperture = 0.1;
        let s1 = step(&s, &ActionCommand::clipped(0.0, 0.0, 0.0, 0.0, 1.0));
        assert_eq!(s1.held, None);
        assert!((s1.objects[0].z - BLOCK_H).abs() < 1e-12, "z = {}", s1.objects[0].z);
    }

    #[test]
    fn release_away_from_support_drops_to_table() {
        let mut s = base_state();
        s.held = Some(0);
        s.objects[0].z = 0.2;
        s.gripper = GripperState { x: 0.3, y: 0.3, z: 0.2, yaw: 0.0 };
        s.objects[0].x = 0.3;
        s.objects[0].y = 0.3;
        s.aperture = 0.1;
        let s1 = step(&s, &ActionCommand::clipped(0.0, 0.0, 0.0, 0.0, 1.0));
        assert_eq!(s1.objects[0].z, 0.0);
    }

    #[test]
    fn wipe_clears_dirt_under_disc() {
        let mut s = WorldState::empty();
        let cell = 1.0 / GRID as f64;
        s.dirt[8 * GRID + 8] = 1.0;
        s.gripper = GripperState {
            x: (8.0 + 0.5) * cell,
            y: (8.0 + 0.5) * cell,
            z: 0.02,
            yaw: 0.0,
        };
        let s1 = step(&s, &ActionCommand::clipped(0.0, 0.0, 0.0, 0.0, 0.1));
        assert_eq!(s1.dirt[8 * GRID + 8], 0.0);
        // open gripper does not wipe
        let mut s2 = s.clone();
        s2.dirt[8 * GRID + 8] = 1.0;
        let s3 = step(&s2, &ActionCommand::clipped(0.0, 0.0, 0.0, 0.0, 1.0));
        assert_eq!(s3.dirt[8 * GRID + 8], 1.0);
    }

    #[test]
    fn workspace_bounds_hold() {
        let mut s = base_state();
        s.gripper = GripperState { x: 0.99, y: 0.01, z: 0.24, yaw: 0.0 };
        let s1 = step(&s, &ActionCommand::clipped(0.05, -0.05, 0.05, 0.0, 1.0));
        assert!(s1.gripper.x <= 1.0 && s1.gripper.y >= 0.0 && s1.gripper.z <= Z_MAX);
    }
}

//! World state, task specification, and the action command type.

use crate::{SimError, ACTION_DIM, GRID, MAX_STEP_XY, MAX_STEP_YAW, MAX_STEP_Z, WORKSPACE, Z_MAX};

/// A rigid block with a square footprint. `z` is the elevation of the
/// block bottom (0 = resting on the table); it tracks the gripper while
/// held and settles onto supports on release.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectState {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub z: f64,
    pub half: f64,
    pub height: f64,
}

impl ObjectState {
    pub fn top(&self) -> f64 {
        self.z + self.height
    }

    /// Point-in-rotated-square test on the xy footprint.
    pub fn contains_xy(&self, px: f64, py: f64) -> bool {
        let (s, c) = (libm::sin(-self.yaw), libm::cos(-self.yaw));
        let dx = px - self.x;
        let dy = py - self.y;
        let u = c * dx - s * dy;
        let v = s * dx + c * dy;
        u.abs() <= self.half && v.abs() <= self.half
    }

    /// Signed xy distance to the footprint boundary (negative inside).
    pub fn boundary_distance(&self, px: f64, py: f64) -> f64 {
        let (s, c) = (libm::sin(-self.yaw), libm::cos(-self.yaw));
        let dx = px - self.x;
        let dy = py - self.y;
        let u = (c * dx - s * dy).abs() - self.half;
        let v = (s * dx + c * dy).abs() - self.half;
        if u <= 0.0 && v <= 0.0 {
            u.max(v)
        } else {
            let uu = u.max(0.0);
            let vv = v.max(0.0);
            libm::sqrt(uu * uu + vv * vv)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GripperState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

/// Full simulator state. Coordinates are meters/radians, finite, and
/// inside the workspace box; at most one object is held.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub objects: Vec<ObjectState>,
    pub gripper: GripperState,
    /// Gripper aperture in [0, 1]; 0 closed, 1 open.
    pub aperture: f64,
    pub held: Option<usize>,
    /// Goal marker for placement tasks (rendered on the ground channel).
    pub goal: Option<(f64, f64)>,
    /// Surface dirt levels on the render grid, row-major GRID*GRID.
    pub dirt: Vec<f64>,
}

impl WorldState {
    pub fn empty() -> Self {
        Self {
            objects: Vec::new(),
            gripper: GripperState { x: 0.5, y: 0.5, z: Z_MAX, yaw: 0.0 },
            aperture: 1.0,
            held: None,
            goal: None,
            dirt: vec![0.0; GRID * GRID],
        }
    }

    /// Robot proprioceptive vector r_t: (x, y, z, yaw, aperture, held).
    pub fn robot_state(&self) -> Vec<f64> {
        vec![
            self.gripper.x,
            self.gripper.y,
            self.gripper.z,
            self.gripper.yaw,
            self.aperture,
            if self.held.is_some() { 1.0 } else { 0.0 },
        ]
    }

    pub fn dirt_at(&self, row: usize, col: usize) -> f64 {
        self.dirt[row * GRID + col]
    }

    pub fn dirty_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for row in 0..GRID {
            for col in 0..GRID {
                if self.dirt[row * GRID + col] > 0.0 {
                    out.push((row, col));
                }
            }
        }
        out
    }

    pub fn assert_valid(&self) {
        debug_assert!(self.objects.iter().all(|o| {
            o.x.is_finite() && o.y.is_finite() && o.yaw.is_finite() && o.z.is_finite()
        }));
        debug_assert!((0.0..=1.0).contains(&self.aperture));
        debug_assert!(self.held.map_or(true, |h| h < self.objects.len()));
    }

    /// Flat f64 encoding for hashing and container IO. Layout:
    /// [n_obj, (x,y,yaw,z,half,height)*, gx,gy,gz,gyaw, aperture, held,
    ///  has_goal, goal_x, goal_y, dirt[256]].
    pub fn encode(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(16 + 6 * self.objects.len() + self.dirt.len());
        out.push(self.objects.len() as f64);
        for o in &self.objects {
            out.extend_from_slice(&[o.x, o.y, o.yaw, o.z, o.half, o.height]);
        }
        let g = &self.gripper;
        out.extend_from_slice(&[g.x, g.y, g.z, g.yaw, self.aperture]);
        out.push(self.held.map_or(-1.0, |h| h as f64));
        match self.goal {
            Some((gx, gy)) => out.extend_from_slice(&[1.0, gx, gy]),
            None => out.extend_from_slice(&[0.0, 0.0, 0.0]),
        }
        out.extend_from_slice(&self.dirt);
        out
    }

    pub fn decode(data: &[f64]) -> Result<Self, SimError> {
        let err = || SimError::Container("truncated world state".into());
        let mut it = data.iter().copied();
        let mut next = || it.next().ok_or_else(err);
        let n_obj = next()? as usize;
        let mut objects = Vec::with_capacity(n_obj);
        for _ in 0..n_obj {
            objects.push(ObjectState {
                x: next()?,
                y: next()?,
                yaw: next()?,
                z: next()?,
                half: next()?,
                height: next()?,
            });
        }
        let gripper = GripperState { x: next()?, y: next()?, z: next()?, yaw: next()? };
        let aperture = next()?;
        let held_raw = next()?;
        let held = if held_raw < 0.0 { None } else { Some(held_raw as usize) };
        let has_goal = next()? > 0.5;
        let gx = next()?;
        let gy = next()?;
        let goal = has_goal.then_some((gx, gy));
        let dirt: Vec<f64> = it.collect();
        if dirt.len() != GRID * GRID {
            return Err(SimError::Container(format!("dirt grid len {}", dirt.len())));
        }
        Ok(Self { objects, gripper, aperture, held, goal, dirt })
    }
}

/// One control command: bounded pose delta plus an absolute aperture
/// target. Construction clips everything to the documented bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionCommand {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub dyaw: f64,
    pub aperture: f64,
}

impl ActionCommand {
    pub fn clipped(dx: f64, dy: f64, dz: f64, dyaw: f64, aperture: f64) -> Self {
        Self {
            dx: dx.clamp(-MAX_STEP_XY, MAX_STEP_XY),
            dy: dy.clamp(-MAX_STEP_XY, MAX_STEP_XY),
            dz: dz.clamp(-MAX_STEP_Z, MAX_STEP_Z),
            dyaw: dyaw.clamp(-MAX_STEP_YAW, MAX_STEP_YAW),
            aperture: aperture.clamp(0.0, 1.0),
        }
    }

    /// Hold position, keep the given aperture.
    pub fn hold(aperture: f64) -> Self {
        Self::clipped(0.0, 0.0, 0.0, 0.0, aperture)
    }

    pub fn to_vec(&self) -> [f64; ACTION_DIM] {
        [self.dx, self.dy, self.dz, self.dyaw, self.aperture]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::clipped(v[0], v[1], v[2], v[3], v[4])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskId {
    PushToGoal,
    StackTwo,
    WipeCells,
}

impl TaskId {
    pub const ALL: [TaskId; 3] = [TaskId::PushToGoal, TaskId::StackTwo, TaskId::WipeCells];

    pub fn name(&self) -> &'static str {
        match self {
            TaskId::PushToGoal => "push-to-goal",
            TaskId::StackTwo => "stack-two",
            TaskId::WipeCells => "wipe-cells",
        }
    }

    pub fn parse(s: &str) -> Result<Self, SimError> {
        match s {
            "push-to-goal" => Ok(TaskId::PushToGoal),
            "stack-two" => Ok(TaskId::StackTwo),
            "wipe-cells" => Ok(TaskId::WipeCells),
            other => Err(SimError::UnknownTask(other.into())),
        }
    }

    pub fn index(&self) -> usize {
        match self {
            TaskId::PushToGoal => 0,
            TaskId::StackTwo => 1,
            TaskId::WipeCells => 2,
        }
    }

    pub fn from_index(i: usize) -> Result<Self, SimError> {
        Self::ALL.get(i).copied().ok_or_else(|| SimError::UnknownTask(format!("index {i}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InitMode {
    /// Canonical fixed layout.
    Clean,
    /// Seeded layout perturbation within the workspace.
    Rand,
}

impl InitMode {
    pub fn name(&self) -> &'static str {
        match self {
            InitMode::Clean => "clean",
            InitMode::Rand => "rand",
        }
    }

    pub fn parse(s: &str) -> Result<Self, SimError> {
        match s {
            "clean" | "Clean" => Ok(InitMode::Clean),
            "rand" | "Rand" => Ok(InitMode::Rand),
            other => Err(SimError::UnknownMode(other.into())),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TaskSpec {
    pub task: TaskId,
    pub mode: InitMode,
    pub seed: u64,
    /// Maximum environment steps for an episode.
    pub horizon: usize,
}

impl TaskSpec {
    pub fn new(task: TaskId, mode: InitMode, seed: u64) -> Self {
        Self { task, mode, seed, horizon: 160 }
    }
}

/// Workspace clamp for xy coordinates.
pub fn clamp_xy(v: f64) -> f64 {
    v.clamp(0.0, WORKSPACE)
}

/// Wrap an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut a = a;
    while a > core::f64::consts::PI {
        a -= 2.0 * core::f64::consts::PI;
    }
    while a <= -core::f64::consts::PI {
        a += 2.0 * core::f64::consts::PI;
    }
    a
}

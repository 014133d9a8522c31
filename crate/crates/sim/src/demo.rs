//! Demonstration generation and the bit-exact demo container.
//!
//! One file holds the episodes of one (task, mode) generation run. Each
//! episode record carries its effective seed (resets that the expert
//! cannot solve are rejected and reseeded at generation time), the
//! per-chunk observations and actions as flat fp32 arrays, and teacher
//! bundles for the chunk-start frame and every key frame.
//!
//! Frame convention: within a chunk starting at environment step t0,
//! "offset k" means the state after executing chunk actions 0..=k, i.e.
//! frame t0 + k + 1. The final offset k_K = H lands on the next chunk's
//! start state.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sceneflow_util::bytes as b;
use sceneflow_util::derive_seed_indexed;

use crate::expert::scripted_expert;
use crate::render::render;
use crate::state::{ActionCommand, InitMode, TaskId, TaskSpec, WorldState};
use crate::step::step;
use crate::tasks::reset;
use crate::teachers::{teacher_bundle, TeacherBundle};
use crate::{SimError, ACTION_DIM, CHANNELS, D_3D, D_DEPTH, DEPTH_TOKENS, GRID, STATE_DIM, VIEWS};

const MAGIC: &[u8; 8] = b"SFDEMO01";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct DemoChunk {
    /// Environment step index of the chunk start.
    pub start_step: u64,
    /// r_t at the chunk start.
    pub robot_state: Vec<f32>,
    /// Flattened multi-view observation at the chunk start.
    pub observation: Vec<f32>,
    /// (H+1) * ACTION_DIM executed actions.
    pub actions: Vec<f32>,
    /// Teacher bundle at the chunk-start frame.
    pub bundle_now: TeacherBundle,
    /// Teacher bundles at frames t0 + k_i + 1, one per key-frame offset.
    pub bundles_future: Vec<TeacherBundle>,
}

#[derive(Debug, Clone)]
pub struct DemoEpisode {
    pub task: TaskId,
    pub mode: InitMode,
    /// Seed that reproduces the initial state through `reset`.
    pub effective_seed: u64,
    /// Executed environment steps before padding.
    pub env_steps: u32,
    pub expert_success: bool,
    pub chunks: Vec<DemoChunk>,
}

/// Generate one accepted demonstration. Resets whose expert run fails
/// are rejected and the seed re-derived, so every stored episode is a
/// successful demonstration; rejection is deterministic in (seed).
pub fn generate_episode(
    task: TaskId,
    mode: InitMode,
    seed: u64,
    chunk_len: usize,
    schedule: &[usize],
) -> Result<DemoEpisode, SimError> {
    assert!(!schedule.is_empty());
    assert_eq!(*schedule.last().unwrap(), chunk_len - 1, "last offset must hit the chunk end");
    for attempt in 0..64 {
        let eff = derive_seed_indexed(seed, "episode", attempt);
        let spec = TaskSpec::new(task, mode, eff);
        let start = reset(&spec);
        let out = scripted_expert(&start, &spec);
        if !out.success {
            continue;
        }
        return Ok(build_episode(task, mode, eff, &start, &out.actions, chunk_len, schedule));
    }
    Err(SimError::ExpertFailure(format!(
        "no solvable reset for {} {} seed {seed} after 64 attempts",
        task.name(),
        mode.name()
    )))
}

fn build_episode(
    task: TaskId,
    mode: InitMode,
    effective_seed: u64,
    start: &WorldState,
    actions: &[ActionCommand],
    chunk_len: usize,
    schedule: &[usize],
) -> DemoEpisode {
    // pad to a whole number of chunks with hold actions
    let mut padded: Vec<ActionCommand> = actions.to_vec();
    let n_chunks = padded.len().div_ceil(chunk_len).max(1);
    let hold_ap = padded.last().map_or(1.0, |a| a.aperture);
    while padded.len() < n_chunks * chunk_len {
        padded.push(ActionCommand::hold(hold_ap));
    }

    // roll the full padded trajectory once, keeping every state
    let mut states = Vec::with_capacity(padded.len() + 1);
    states.push(start.clone());
    for a in &padded {
        let next = step(states.last().unwrap(), a);
        states.push(next);
    }

    let mut chunks = Vec::with_capacity(n_chunks);
    for c in 0..n_chunks {
        let t0 = c * chunk_len;
        let s0 = &states[t0];
        let obs = render(s0);
        let chunk_actions: Vec<f32> = padded[t0..t0 + chunk_len]
            .iter()
            .flat_map(|a| a.to_vec().into_iter().map(|x| x as f32))
            .collect();
        let bundles_future = schedule
            .iter()
            .map(|&k| teacher_bundle(&states[t0 + k + 1], (t0 + k + 1) as u64))
            .collect();
        chunks.push(DemoChunk {
            start_step: t0 as u64,
            robot_state: s0.robot_state().iter().map(|&x| x as f32).collect(),
            observation: obs.flat().iter().map(|&x| x as f32).collect(),
            actions: chunk_actions,
            bundle_now: teacher_bundle(s0, t0 as u64),
            bundles_future,
        });
    }

    DemoEpisode {
        task,
        mode,
        effective_seed,
        env_steps: actions.len() as u32,
        expert_success: true,
        chunks,
    }
}

/// Header shape table; readers validate against the build constants.
fn write_shapes<W: Write>(w: &mut W) -> std::io::Result<()> {
    for v in [GRID, CHANNELS, VIEWS, DEPTH_TOKENS, D_DEPTH, D_3D, ACTION_DIM, STATE_DIM] {
        b::write_u32(w, v as u32)?;
    }
    Ok(())
}

fn check_shapes<R: Read>(r: &mut R) -> Result<(), SimError> {
    let expect = [GRID, CHANNELS, VIEWS, DEPTH_TOKENS, D_DEPTH, D_3D, ACTION_DIM, STATE_DIM];
    for (i, e) in expect.iter().enumerate() {
        let got = b::read_u32(r)? as usize;
        if got != *e {
            return Err(SimError::Container(format!("shape field {i}: file {got} != build {e}")));
        }
    }
    Ok(())
}

pub fn write_demo_file(
    path: &Path,
    chunk_len: usize,
    schedule: &[usize],
    episodes: &[DemoEpisode],
) -> Result<(), SimError> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    b::write_magic(&mut w, MAGIC, VERSION)?;
    write_shapes(&mut w)?;
    b::write_u32(&mut w, chunk_len as u32)?;
    b::write_u32(&mut w, schedule.len() as u32)?;
    for &k in schedule {
        b::write_u32(&mut w, k as u32)?;
    }
    b::write_u32(&mut w, episodes.len() as u32)?;
    for ep in episodes {
        b::write_u8(&mut w, ep.task.index() as u8)?;
        b::write_u8(&mut w, match ep.mode { InitMode::Clean => 0, InitMode::Rand => 1 })?;
        b::write_u64(&mut w, ep.effective_seed)?;
        b::write_u32(&mut w, ep.env_steps)?;
        b::write_u8(&mut w, ep.expert_success as u8)?;
        b::write_u32(&mut w, ep.chunks.len() as u32)?;
        for ch in &ep.chunks {
            b::write_u64(&mut w, ch.start_step)?;
            b::write_f32_slice(&mut w, &ch.robot_state)?;
            b::write_f32_slice(&mut w, &ch.observation)?;
            b::write_f32_slice(&mut w, &ch.actions)?;
            write_bundle(&mut w, &ch.bundle_now)?;
            b::write_u32(&mut w, ch.bundles_future.len() as u32)?;
            for bu in &ch.bundles_future {
                write_bundle(&mut w, bu)?;
            }
        }
    }
    Ok(())
}

/// Returns (chunk_len, schedule, episodes).
pub fn read_demo_file(path: &Path) -> Result<(usize, Vec<usize>, Vec<DemoEpisode>), SimError> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let version = b::read_magic(&mut r, MAGIC)?;
    if version != VERSION {
        return Err(SimError::Container(format!("unsupported demo version {version}")));
    }
    check_shapes(&mut r)?;
    let chunk_len = b::read_u32(&mut r)? as usize;
    let sched_len = b::read_u32(&mut r)? as usize;
    let mut schedule = Vec::with_capacity(sched_len);
    for _ in 0..sched_len {
        schedule.push(b::read_u32(&mut r)? as usize);
    }
    let n_eps = b::read_u32(&mut r)? as usize;
    let mut episodes = Vec::with_capacity(n_eps);
    for _ in 0..n_eps {
        let task = TaskId::from_index(b::read_u8(&mut r)? as usize)?;
        let mode = if b::read_u8(&mut r)? == 0 { InitMode::Clean } else { InitMode::Rand };
        let effective_seed = b::read_u64(&mut r)?;
        let env_steps = b::read_u32(&mut r)?;
        let expert_success = b::read_u8(&mut r)? == 1;
        let n_chunks = b::read_u32(&mut r)? as usize;
        let mut chunks = Vec::with_capacity(n_chunks);
        for _ in 0..n_chunks {
            let start_step = b::read_u64(&mut r)?;
            let robot_state = b::read_f32_slice(&mut r)?;
            let observation = b::read_f32_slice(&mut r)?;
            let actions = b::read_f32_slice(&mut r)?;
            let bundle_now = read_bundle(&mut r)?;
            let n_fut = b::read_u32(&mut r)? as usize;
            let mut bundles_future = Vec::with_capacity(n_fut);
            for _ in 0..n_fut {
                bundles_future.push(read_bundle(&mut r)?);
            }
            chunks.push(DemoChunk {
                start_step,
                robot_state,
                observation,
                actions,
                bundle_now,
                bundles_future,
            });
        }
        episodes.push(DemoEpisode {
            task,
            mode,
            effective_seed,
            env_steps,
            expert_success,
            chunks,
        });
    }
    Ok((chunk_len, schedule, episodes))
}

fn write_bundle<W: Write>(w: &mut W, bu: &TeacherBundle) -> std::io::Result<()> {
    b::write_u64(w, bu.frame)?;
    for v in &bu.depth {
        let f32s: Vec<f32> = v.iter().map(|&x| x as f32).collect();
        b::write_f32_slice(w, &f32s)?;
    }
    for v in &bu.geom {
        let f32s: Vec<f32> = v.iter().map(|&x| x as f32).collect();
        b::write_f32_slice(w, &f32s)?;
    }
    Ok(())
}

fn read_bundle<R: Read>(r: &mut R) -> Result<TeacherBundle, SimError> {
    let frame = b::read_u64(r)?;
    let mut depth = Vec::with_capacity(VIEWS);
    for _ in 0..VIEWS {
        let f32s = b::read_f32_slice(r)?;
        if f32s.len() != DEPTH_TOKENS * D_DEPTH {
            return Err(SimError::Container("depth slice size".into()));
        }
        depth.push(f32s.iter().map(|&x| x as f64).collect());
    }
    let mut geom = Vec::with_capacity(VIEWS);
    for _ in 0..VIEWS {
        let f32s = b::read_f32_slice(r)?;
        if f32s.len() != GRID * GRID * D_3D {
            return Err(SimError::Container("geom slice size".into()));
        }
        geom.push(f32s.iter().map(|&x| x as f64).collect());
    }
    Ok(TeacherBundle { frame, depth, geom })
}

//! Closed-loop rollout: one prefix encode and one joint denoising pass
//! per chunk, execute the chunk, optionally write the denoised scene
//! end-point back as the next prior, re-observe. Fully deterministic
//! per (checkpoint, seed).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sceneflow_policy::{PolicyModel, PriorSource, SlotBank};
use sceneflow_sim::{
    render, reset, step, success, ActionCommand, InitMode, TaskId, TaskSpec, ACTION_DIM,
};
use sceneflow_util::bytes as b;
use sceneflow_util::hash::digest_f64s;
use sceneflow_util::{derive_seed_indexed, DetRng};

use crate::CliError;

#[derive(Debug, Clone)]
pub struct ChunkRecord {
    pub obs_digest: u64,
    pub prior_source: PriorSource,
    /// Executed commands (already clipped), ACTION_DIM each.
    pub actions: Vec<[f64; ACTION_DIM]>,
    /// Digest of the prior carried out of this chunk (0 when not carrying).
    pub carried_prior_digest: u64,
}

#[derive(Debug, Clone)]
pub struct EpisodeTrace {
    pub task: TaskId,
    pub mode: InitMode,
    pub seed: u64,
    pub carry: bool,
    pub chunks: Vec<ChunkRecord>,
    /// End-effector position after every executed step.
    pub path: Vec<(f64, f64, f64)>,
    pub success: bool,
    pub steps_used: usize,
}

/// Run one episode under the policy (Euler steps from the model config).
pub fn rollout(
    model: &PolicyModel,
    task: TaskId,
    mode: InitMode,
    seed: u64,
    carry: bool,
    horizon: usize,
) -> Result<EpisodeTrace, CliError> {
    let spec = TaskSpec { task, mode, seed, horizon };
    let mut state = reset(&spec);
    let mut bank = SlotBank::fresh();
    let mut trace = EpisodeTrace {
        task,
        mode,
        seed,
        carry,
        chunks: Vec::new(),
        path: Vec::new(),
        success: false,
        steps_used: 0,
    };
    let chunk_len = model.cfg.chunk_len;
    let max_chunks = horizon.div_ceil(chunk_len);
    'chunks: for chunk_idx in 0..max_chunks {
        let obs = render(&state);
        let mut rng = DetRng::new(derive_seed_indexed(seed, "rollout.noise", chunk_idx as u64));
        let prior_source = bank.source;
        let (a_norm, scene) = model
            .sample_chunk(&obs, task.index(), &bank, model.cfg.euler_steps, &mut rng)
            .map_err(|e| CliError::Numeric(format!("chunk {chunk_idx}: {e}")))?;
        let a_raw = model.denormalize_actions(&a_norm);
        let mut record = ChunkRecord {
            obs_digest: digest_f64s(&obs.flat()),
            prior_source,
            actions: Vec::with_capacity(chunk_len),
            carried_prior_digest: 0,
        };
        let mut done = false;
        for row in a_raw.data().chunks(ACTION_DIM) {
            let cmd = ActionCommand::from_slice(row);
            state = step(&state, &cmd);
            record.actions.push(cmd.to_vec());
            trace.path.push((state.gripper.x, state.gripper.y, state.gripper.z));
            trace.steps_used += 1;
            if success(&state, task) {
                done = true;
                break;
            }
            if trace.steps_used >= horizon {
                break;
            }
        }
        if carry && !done {
            bank.carry_prior(&scene, model.cfg.key_frames(), model.cfg.slots)
                .map_err(|e| CliError::Numeric(e.to_string()))?;
            record.carried_prior_digest =
                bank.prior.as_ref().map_or(0, |p| digest_f64s(p.data()));
        }
        trace.chunks.push(record);
        if done {
            trace.success = true;
            break 'chunks;
        }
        if trace.steps_used >= horizon {
            break 'chunks;
        }
    }
    debug_assert_eq!(trace.path.len(), trace.steps_used);
    Ok(trace)
}

/// Re-execute a trace's recorded actions through the simulator and
/// report whether the recorded success flag is reproduced.
pub fn replay_matches(trace: &EpisodeTrace, horizon: usize) -> bool {
    let spec = TaskSpec { task: trace.task, mode: trace.mode, seed: trace.seed, horizon };
    let mut state = reset(&spec);
    let mut ok = false;
    for ch in &trace.chunks {
        for a in &ch.actions {
            let cmd = ActionCommand::from_slice(a);
            state = step(&state, &cmd);
            if success(&state, trace.task) {
                ok = true;
                break;
            }
        }
        if ok {
            break;
        }
    }
    ok == trace.success
}

/// Mean squared second difference of the end-effector path; the
/// straight-line and stationary cases are exactly zero.
pub fn smoothness(trace: &EpisodeTrace) -> Result<f64, CliError> {
    let p = &trace.path;
    if p.len() < 3 {
        return Err(CliError::Usage(format!("path too short for smoothness: {}", p.len())));
    }
    let mut acc = 0.0;
    for w in p.windows(3) {
        let dx = w[2].0 - 2.0 * w[1].0 + w[0].0;
        let dy = w[2].1 - 2.0 * w[1].1 + w[0].1;
        let dz = w[2].2 - 2.0 * w[1].2 + w[0].2;
        acc += dx * dx + dy * dy + dz * dz;
    }
    Ok(acc / (p.len() - 2) as f64)
}

// ---- trace container ----------------------------------------------------

const MAGIC: &[u8; 8] = b"SFTRACE1";
const VERSION: u32 = 1;

pub fn write_traces(path: &Path, variant: &str, traces: &[EpisodeTrace]) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    b::write_magic(&mut w, MAGIC, VERSION)?;
    b::write_str(&mut w, variant)?;
    b::write_u32(&mut w, traces.len() as u32)?;
    for t in traces {
        b::write_u8(&mut w, t.task.index() as u8)?;
        b::write_u8(&mut w, match t.mode { InitMode::Clean => 0, InitMode::Rand => 1 })?;
        b::write_u64(&mut w, t.seed)?;
        b::write_u8(&mut w, t.carry as u8)?;
        b::write_u8(&mut w, t.success as u8)?;
        b::write_u64(&mut w, t.steps_used as u64)?;
        b::write_u32(&mut w, t.chunks.len() as u32)?;
        for ch in &t.chunks {
            b::write_u64(&mut w, ch.obs_digest)?;
            b::write_u8(&mut w, match ch.prior_source { PriorSource::LearnedEmbedding => 0, PriorSource::Carried => 1 })?;
            b::write_u64(&mut w, ch.carried_prior_digest)?;
            b::write_u32(&mut w, ch.actions.len() as u32)?;
            for a in &ch.actions {
                for v in a {
                    b::write_f64(&mut w, *v)?;
                }
            }
        }
        let flat: Vec<f64> = t.path.iter().flat_map(|p| [p.0, p.1, p.2]).collect();
        b::write_f64_slice(&mut w, &flat)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_traces(path: &Path) -> Result<(String, Vec<EpisodeTrace>), CliError> {
    let mut r = BufReader::new(File::open(path)?);
    let version = b::read_magic(&mut r, MAGIC)?;
    if version != VERSION {
        return Err(CliError::Usage(format!("unsupported trace version {version}")));
    }
    let variant = b::read_str(&mut r)?;
    let n = b::read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let task = TaskId::from_index(read_u8_as_usize(&mut r)?)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        let mode = if b::read_u8(&mut r)? == 0 { InitMode::Clean } else { InitMode::Rand };
        let seed = b::read_u64(&mut r)?;
        let carry = b::read_u8(&mut r)? == 1;
        let success = b::read_u8(&mut r)? == 1;
        let steps_used = b::read_u64(&mut r)? as usize;
        let n_chunks = b::read_u32(&mut r)? as usize;
        let mut chunks = Vec::with_capacity(n_chunks);
        for _ in 0..n_chunks {
            let obs_digest = b::read_u64(&mut r)?;
            let prior_source = if b::read_u8(&mut r)? == 0 {
                PriorSource::LearnedEmbedding
            } else {
                PriorSource::Carried
            };
            let carried_prior_digest = b::read_u64(&mut r)?;
            let n_actions = b::read_u32(&mut r)? as usize;
            let mut actions = Vec::with_capacity(n_actions);
            for _ in 0..n_actions {
                let mut a = [0.0; ACTION_DIM];
                for v in a.iter_mut() {
                    *v = b::read_f64(&mut r)?;
                }
                actions.push(a);
            }
            chunks.push(ChunkRecord { obs_digest, prior_source, actions, carried_prior_digest });
        }
        let flat = b::read_f64_slice(&mut r)?;
        let path = flat.chunks(3).map(|c| (c[0], c[1], c[2])).collect();
        out.push(EpisodeTrace { task, mode, seed, carry, chunks, path, success, steps_used });
    }
    Ok((variant, out))
}

fn read_u8_as_usize<R: Read>(r: &mut R) -> Result<usize, CliError> {
    Ok(b::read_u8(r)? as usize)
}

//! Demonstration corpus loaded into memory for training: per-chunk
//! observations, actions, teacher targets (geometry pre-pooled to the
//! decoder grid), and the consecutive-chunk pairing used by the carried
//! prior-carry mode.

use std::path::Path;

use sceneflow_nn::Tensor;
use sceneflow_policy::{ModelConfig, PolicyModel};
use sceneflow_sim::{read_demo_file, Observation, TaskId, ACTION_DIM, CHANNELS, GRID, VIEWS};

use crate::TrainError;

pub struct CorpusChunk {
    pub task: TaskId,
    pub obs: Observation,
    pub robot_state: Vec<f64>,
    /// Raw (unnormalized) action chunk, chunk_len x ACTION_DIM.
    pub actions_raw: Tensor,
    /// Per-view depth targets at the chunk-start frame.
    pub depth_now: Vec<Vec<f64>>,
    /// Pooled geometry target at the chunk-start frame.
    pub pooled_now: Tensor,
    /// Pooled geometry targets at the key frames.
    pub pooled_future: Vec<Tensor>,
    /// Raw per-view geometry grids at the key frames (kept for tests).
    pub geom_future: Vec<Vec<Vec<f64>>>,
}

pub struct Corpus {
    pub chunk_len: usize,
    pub schedule: Vec<usize>,
    pub chunks: Vec<CorpusChunk>,
    /// Consecutive in-episode chunk index pairs (c, c+1).
    pub pairs: Vec<(usize, usize)>,
}

impl Corpus {
    /// Load demo files; validates chunk geometry against the model config.
    pub fn load(paths: &[impl AsRef<Path>], model: &PolicyModel) -> Result<Self, TrainError> {
        let cfg = &model.cfg;
        let decoder = model
            .training
            .as_ref()
            .map(|t| &t.decoder)
            .ok_or_else(|| TrainError::Config("training modules required to build a corpus".into()))?;
        let mut chunks = Vec::new();
        let mut pairs = Vec::new();
        let mut chunk_len = None;
        let mut schedule: Option<Vec<usize>> = None;
        for path in paths {
            let (cl, sched, episodes) = read_demo_file(path.as_ref())?;
            if *chunk_len.get_or_insert(cl) != cl {
                return Err(TrainError::Config("mixed chunk lengths across demo files".into()));
            }
            if *schedule.get_or_insert(sched.clone()) != sched {
                return Err(TrainError::Config("mixed schedules across demo files".into()));
            }
            validate_geometry(cfg, cl, &sched)?;
            for ep in episodes {
                let base = chunks.len();
                for (ci, ch) in ep.chunks.iter().enumerate() {
                    let obs = decode_observation(&ch.observation, &ch.robot_state);
                    let actions_raw = Tensor::from_rows(
                        cl,
                        ACTION_DIM,
                        ch.actions.iter().map(|&x| x as f64).collect(),
                    )
                    .map_err(|e| TrainError::Config(e.to_string()))?;
                    let pooled_future =
                        ch.bundles_future.iter().map(|b| decoder.pool_teacher(&b.geom)).collect();
                    let geom_future = ch.bundles_future.iter().map(|b| b.geom.clone()).collect();
                    chunks.push(CorpusChunk {
                        task: ep.task,
                        obs,
                        robot_state: ch.robot_state.iter().map(|&x| x as f64).collect(),
                        actions_raw,
                        depth_now: ch.bundle_now.depth.clone(),
                        pooled_now: decoder.pool_teacher(&ch.bundle_now.geom),
                        pooled_future,
                        geom_future,
                    });
                    if ci + 1 < ep.chunks.len() {
                        pairs.push((base + ci, base + ci + 1));
                    }
                }
            }
        }
        if chunks.is_empty() {
            return Err(TrainError::Config("empty demo corpus".into()));
        }
        Ok(Self {
            chunk_len: chunk_len.unwrap(),
            schedule: schedule.unwrap(),
            chunks,
            pairs,
        })
    }

    /// Per-dimension action mean/std over the corpus (std floored away
    /// from zero so constant dimensions stay well behaved).
    pub fn action_stats(&self) -> (Vec<f64>, Vec<f64>) {
        let mut mean = vec![0.0; ACTION_DIM];
        let mut count = 0usize;
        for ch in &self.chunks {
            for row in ch.actions_raw.data().chunks(ACTION_DIM) {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
                count += 1;
            }
        }
        for m in mean.iter_mut() {
            *m /= count as f64;
        }
        let mut var = vec![0.0; ACTION_DIM];
        for ch in &self.chunks {
            for row in ch.actions_raw.data().chunks(ACTION_DIM) {
                for (j, v) in row.iter().enumerate() {
                    var[j] += (v - mean[j]) * (v - mean[j]);
                }
            }
        }
        let std = var
            .iter()
            .map(|v| libm::sqrt(v / count as f64).max(1e-3))
            .collect();
        (mean, std)
    }
}

fn validate_geometry(cfg: &ModelConfig, chunk_len: usize, schedule: &[usize]) -> Result<(), TrainError> {
    if chunk_len != cfg.chunk_len {
        return Err(TrainError::Config(format!(
            "demo chunk length {chunk_len} != model {}",
            cfg.chunk_len
        )));
    }
    if schedule != cfg.schedule {
        return Err(TrainError::Config(format!(
            "demo schedule {schedule:?} != model {:?}",
            cfg.schedule
        )));
    }
    Ok(())
}

fn decode_observation(flat: &[f32], robot_state: &[f32]) -> Observation {
    let per_view = GRID * GRID * CHANNELS;
    let views = (0..VIEWS)
        .map(|v| flat[v * per_view..(v + 1) * per_view].iter().map(|&x| x as f64).collect())
        .collect();
    Observation { views, robot_state: robot_state.iter().map(|&x| x as f64).collect() }
}

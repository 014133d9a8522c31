//! Seeded evaluation over paired seed banks. Every variant sees the same
//! per-episode initial states; episodes run in parallel and aggregate in
//! fixed episode order.

use rayon::prelude::*;

use sceneflow_policy::PolicyModel;
use sceneflow_sim::{InitMode, TaskId};
use sceneflow_util::derive_seed_indexed;

use crate::rollout::{rollout, smoothness, EpisodeTrace};
use crate::CliError;

#[derive(Debug, Clone)]
pub struct EvalCell {
    pub variant: String,
    pub task: TaskId,
    pub mode: InitMode,
    /// Percentage in [0, 100].
    pub success_rate: f64,
    pub smoothness_mean: f64,
    pub episode_len_mean: f64,
    pub episodes: usize,
    pub seed_bank: u64,
}

#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub cells: Vec<EvalCell>,
}

/// The shared per-episode seed: a pure function of (bank, task, mode,
/// index), so different variants evaluated on the same bank see
/// identical initial states episode by episode.
pub fn episode_seed(bank: u64, task: TaskId, mode: InitMode, index: usize) -> u64 {
    let label = format!("eval.{}.{}", task.name(), mode.name());
    derive_seed_indexed(bank, &label, index as u64)
}

/// Evaluate one (task, mode) cell; returns the cell plus every trace.
pub fn evaluate_cell(
    model: &PolicyModel,
    variant: &str,
    task: TaskId,
    mode: InitMode,
    episodes: usize,
    carry: bool,
    horizon: usize,
    seed_bank: u64,
) -> Result<(EvalCell, Vec<EpisodeTrace>), CliError> {
    assert!(episodes >= 1);
    let traces: Vec<Result<EpisodeTrace, CliError>> = (0..episodes)
        .into_par_iter()
        .map(|i| {
            let seed = episode_seed(seed_bank, task, mode, i);
            rollout(model, task, mode, seed, carry, horizon)
        })
        .collect();
    let mut ok = 0usize;
    let mut sm_sum = 0.0;
    let mut len_sum = 0.0;
    let mut all = Vec::with_capacity(episodes);
    for t in traces {
        let t = t?;
        if t.success {
            ok += 1;
        }
        sm_sum += smoothness(&t)?;
        len_sum += t.steps_used as f64;
        all.push(t);
    }
    let cell = EvalCell {
        variant: variant.to_string(),
        task,
        mode,
        success_rate: 100.0 * ok as f64 / episodes as f64,
        smoothness_mean: sm_sum / episodes as f64,
        episode_len_mean: len_sum / episodes as f64,
        episodes,
        seed_bank,
    };
    Ok((cell, all))
}

/// Evaluate a grid of (task, mode) cells.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    model: &PolicyModel,
    variant: &str,
    tasks: &[TaskId],
    modes: &[InitMode],
    episodes: usize,
    carry: bool,
    horizon: usize,
    seed_bank: u64,
) -> Result<(EvalReport, Vec<EpisodeTrace>), CliError> {
    let mut report = EvalReport::default();
    let mut traces = Vec::new();
    for &task in tasks {
        for &mode in modes {
            let (cell, ts) =
                evaluate_cell(model, variant, task, mode, episodes, carry, horizon, seed_bank)?;
            report.cells.push(cell);
            traces.extend(ts);
        }
    }
    Ok((report, traces))
}

impl EvalReport {
    /// Mean success over tasks for a mode (the ladder comparison metric).
    pub fn mean_success(&self, variant: &str, mode: InitMode) -> f64 {
        let rows: Vec<&EvalCell> = self
            .cells
            .iter()
            .filter(|c| c.variant == variant && c.mode == mode)
            .collect();
        if rows.is_empty() {
            return f64::NAN;
        }
        rows.iter().map(|c| c.success_rate).sum::<f64>() / rows.len() as f64
    }

    pub fn merge(&mut self, other: EvalReport) {
        self.cells.extend(other.cells);
    }
}

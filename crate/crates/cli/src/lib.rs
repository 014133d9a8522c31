//! Harness library: rollout, evaluation, reports, and the ablation
//! orchestration behind the `sceneflow` binary.

pub mod eval;
pub mod report;
pub mod rollout;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use sceneflow_policy::{ModelConfig, PolicyModel};
use sceneflow_sim::demo::{generate_episode, write_demo_file};
use sceneflow_sim::{InitMode, TaskId};
use sceneflow_train::{
    run_variant, Corpus, FullConfig, TrainLog, Variant,
};
use sceneflow_util::derive_seed_indexed;

use eval::{evaluate, EvalReport};
use rollout::{write_traces, EpisodeTrace};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numeric(_) => 2,
            _ => 1,
        }
    }
}

impl From<sceneflow_train::TrainError> for CliError {
    fn from(e: sceneflow_train::TrainError) -> Self {
        match e {
            sceneflow_train::TrainError::Numeric(m) => CliError::Numeric(m),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<sceneflow_policy::PolicyError> for CliError {
    fn from(e: sceneflow_policy::PolicyError) -> Self {
        match e {
            sceneflow_policy::PolicyError::Numeric(m) => CliError::Numeric(m),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<sceneflow_sim::SimError> for CliError {
    fn from(e: sceneflow_sim::SimError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<sceneflow_nn::NnError> for CliError {
    fn from(e: sceneflow_nn::NnError) -> Self {
        match e {
            sceneflow_nn::NnError::Numeric(m) => CliError::Numeric(m),
            other => CliError::Usage(other.to_string()),
        }
    }
}

/// Generate a demo file for one task. Episode seeds derive from `seed`;
/// unsolvable resets are rejected inside the generator.
pub fn gen_demos(
    task: TaskId,
    mode: InitMode,
    episodes: usize,
    seed: u64,
    model_cfg: &ModelConfig,
    out: &Path,
) -> Result<(), CliError> {
    let mut eps = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let ep_seed = derive_seed_indexed(seed, "gen", i as u64);
        eps.push(generate_episode(task, mode, ep_seed, model_cfg.chunk_len, &model_cfg.schedule)?);
    }
    write_demo_file(out, model_cfg.chunk_len, &model_cfg.schedule, &eps)?;
    Ok(())
}

/// Demo file paths for an ablation workspace.
pub fn demo_paths(dir: &Path, tasks: &[TaskId]) -> Vec<PathBuf> {
    tasks.iter().map(|t| dir.join(format!("{}.demos", t.name()))).collect()
}

pub struct AblationOutcome {
    pub report: EvalReport,
    /// (variant, mean success Clean, mean success Rand, mean smoothness
    /// over the paired bank).
    pub ladder: Vec<(Variant, f64, f64)>,
    pub traces_dir: PathBuf,
}

/// The full ablation matrix: generate demos (if absent), train the three
/// distinct checkpoints, evaluate all four ladder variants on paired
/// seed banks, and emit CSV + traces.
pub fn run_ablation(
    config: &FullConfig,
    model_cfg: ModelConfig,
    out_dir: &Path,
) -> Result<AblationOutcome, CliError> {
    std::fs::create_dir_all(out_dir)?;
    let demos_dir = out_dir.join("demos");
    std::fs::create_dir_all(&demos_dir)?;
    let tasks = &config.task.tasks;
    let paths = demo_paths(&demos_dir, tasks);
    for (task, path) in tasks.iter().zip(&paths) {
        if !path.exists() {
            eprintln!("[ablate] generating {} demos for {}", config.task.episodes_per_task, task.name());
            gen_demos(
                *task,
                InitMode::Rand,
                config.task.episodes_per_task,
                config.task.seed,
                &model_cfg,
                path,
            )?;
        }
    }

    // one training run per distinct checkpoint
    let probe = PolicyModel::new(model_cfg.clone(), config.train.seed, true)?;
    let corpus = Corpus::load(&paths, &probe)?;
    let mut models: BTreeMap<&'static str, PolicyModel> = BTreeMap::new();
    for variant in [Variant::Baseline, Variant::PredRep, Variant::Geo] {
        let ckpt_path = out_dir.join(format!("ckpt_{}.bin", variant.name()));
        let model = if ckpt_path.exists() {
            eprintln!("[ablate] reusing checkpoint {}", ckpt_path.display());
            PolicyModel::load(&ckpt_path)?
        } else {
            eprintln!("[ablate] training {}", variant.name());
            let mut log = TrainLog::to_file(
                &out_dir.join(format!("train_{}.log", variant.name())),
                config.train.log_every,
            )?;
            let (model, _) = run_variant(
                variant,
                model_cfg.clone(),
                &config.train,
                config.loss,
                &corpus,
                &ckpt_path,
                &mut log,
            )?;
            model
        };
        models.insert(variant.name(), model);
    }

    // paired evaluation of the four ladder rungs
    let traces_dir = out_dir.join("traces");
    std::fs::create_dir_all(&traces_dir)?;
    let modes = [InitMode::Clean, InitMode::Rand];
    let mut report = EvalReport::default();
    let mut ladder = Vec::new();
    for variant in Variant::LADDER {
        let model = &models[variant.training_alias().name()];
        let (cell_report, traces) = evaluate(
            model,
            variant.name(),
            tasks,
            &modes,
            config.task.eval_episodes,
            variant.eval_carry(),
            config.task.horizon,
            config.task.seed,
        )?;
        save_cell_traces(&traces_dir, variant.name(), &traces)?;
        let clean = cell_report.mean_success(variant.name(), InitMode::Clean);
        let rand = cell_report.mean_success(variant.name(), InitMode::Rand);
        eprintln!("[ablate] {:<9} Clean {:6.2}%  Rand {:6.2}%", variant.name(), clean, rand);
        ladder.push((variant, clean, rand));
        report.merge(cell_report);
    }
    report::write_csv(&out_dir.join("report.csv"), &report)?;
    Ok(AblationOutcome { report, ladder, traces_dir })
}

fn save_cell_traces(dir: &Path, variant: &str, traces: &[EpisodeTrace]) -> Result<(), CliError> {
    use std::collections::BTreeMap as Map;
    let mut by_cell: Map<(usize, u8), Vec<EpisodeTrace>> = Map::new();
    for t in traces {
        let key = (t.task.index(), matches!(t.mode, InitMode::Rand) as u8);
        by_cell.entry(key).or_default().push(t.clone());
    }
    for ((task_idx, is_rand), ts) in by_cell {
        let task = TaskId::from_index(task_idx).expect("task index");
        let mode = if is_rand == 1 { "rand" } else { "clean" };
        let path = dir.join(format!("{variant}_{}_{mode}.traces", task.name()));
        write_traces(&path, variant, &ts)?;
    }
    Ok(())
}

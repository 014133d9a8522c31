//! `sceneflow`: demo generation, training, closed-loop evaluation, the
//! ablation matrix, and trajectory plots.
//!
//! Exit codes: 0 success, 1 usage error, 2 numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sceneflow_cli::eval::evaluate;
use sceneflow_cli::report::{write_csv, write_svg};
use sceneflow_cli::rollout::read_traces;
use sceneflow_cli::{gen_demos, run_ablation, CliError};
use sceneflow_policy::{ModelConfig, PolicyModel};
use sceneflow_sim::{InitMode, TaskId};
use sceneflow_train::{run_variant, Corpus, FullConfig, TrainLog, Variant};

#[derive(Parser)]
#[command(name = "sceneflow", about = "Chunked scene-carrying policy harness", disable_version_flag = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate expert demonstrations for one task.
    GenDemos {
        #[arg(long)]
        task: String,
        #[arg(long, default_value = "rand")]
        mode: String,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one ablation variant on demo files.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "geo")]
        variant: String,
        #[arg(long, required = true, num_args = 1..)]
        demos: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint over seeded episodes.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "push-to-goal,stack-two,wipe-cells")]
        tasks: String,
        #[arg(long, default_value = "clean,rand")]
        modes: String,
        #[arg(long, default_value_t = 200)]
        episodes: usize,
        /// on/off: carry the denoised scene prior across chunks.
        #[arg(long, default_value = "off")]
        carry: String,
        #[arg(long, default_value_t = 0)]
        seed_bank: u64,
        #[arg(long, default_value_t = 160)]
        horizon: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the four-variant ablation matrix end-to-end with paired seeds.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render saved traces as per-episode SVG trajectory plots.
    Plot {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap prints its own message; help/version requests are success
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn parse_tasks(s: &str) -> Result<Vec<TaskId>, CliError> {
    s.split(',').map(|t| TaskId::parse(t.trim()).map_err(CliError::from)).collect()
}

fn parse_modes(s: &str) -> Result<Vec<InitMode>, CliError> {
    s.split(',').map(|m| InitMode::parse(m.trim()).map_err(CliError::from)).collect()
}

fn load_config(path: &Option<PathBuf>) -> Result<FullConfig, CliError> {
    match path {
        Some(p) => Ok(FullConfig::parse_file(p)?),
        None => Ok(FullConfig::default()),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenDemos { task, mode, episodes, seed, out } => {
            let task = TaskId::parse(&task)?;
            let mode = InitMode::parse(&mode)?;
            let model_cfg = ModelConfig::default();
            gen_demos(task, mode, episodes, seed, &model_cfg, &out)?;
            println!("wrote {episodes} episodes to {}", out.display());
            Ok(())
        }
        Command::Train { config, variant, demos, out } => {
            let cfg = load_config(&config)?;
            let variant = Variant::parse(&variant)?;
            let model_cfg = ModelConfig::default();
            let probe = PolicyModel::new(model_cfg.clone(), cfg.train.seed, true)?;
            let corpus = Corpus::load(&demos, &probe)?;
            let log_path = out.with_extension("log");
            let mut log = TrainLog::to_file(&log_path, cfg.train.log_every)?;
            let (_, history) = run_variant(
                variant,
                model_cfg,
                &cfg.train,
                cfg.loss,
                &corpus,
                &out,
                &mut log,
            )?;
            let last = history.last().map(|b| b.total).unwrap_or(f64::NAN);
            println!(
                "trained {} for {} steps (final total {last:.4}) -> {}",
                variant.name(),
                history.len(),
                out.display()
            );
            Ok(())
        }
        Command::Eval { ckpt, tasks, modes, episodes, carry, seed_bank, horizon, out } => {
            let tasks = parse_tasks(&tasks)?;
            let modes = parse_modes(&modes)?;
            let carry = match carry.as_str() {
                "on" => true,
                "off" => false,
                other => return Err(CliError::Usage(format!("--carry must be on/off, got {other}"))),
            };
            let model = PolicyModel::load(&ckpt)?;
            std::fs::create_dir_all(&out)?;
            let variant = format!("eval-carry-{}", if carry { "on" } else { "off" });
            let (report, traces) =
                evaluate(&model, &variant, &tasks, &modes, episodes, carry, horizon, seed_bank)?;
            write_csv(&out.join("report.csv"), &report)?;
            sceneflow_cli::rollout::write_traces(&out.join("episodes.traces"), &variant, &traces)?;
            for c in &report.cells {
                println!(
                    "{} {} success {:.2}% smoothness {:.3e} len {:.1}",
                    c.task.name(),
                    c.mode.name(),
                    c.success_rate,
                    c.smoothness_mean,
                    c.episode_len_mean
                );
            }
            Ok(())
        }
        Command::Ablate { config, out } => {
            let cfg = load_config(&config)?;
            let outcome = run_ablation(&cfg, ModelConfig::default(), &out)?;
            println!("variant,clean,rand");
            for (v, clean, rand) in &outcome.ladder {
                println!("{},{clean:.2},{rand:.2}", v.name());
            }
            println!("report: {}", out.join("report.csv").display());
            Ok(())
        }
        Command::Plot { traces, out } => {
            std::fs::create_dir_all(&out)?;
            let mut count = 0usize;
            let mut entries: Vec<_> = std::fs::read_dir(&traces)?
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|x| x == "traces"))
                .collect();
            entries.sort();
            if entries.is_empty() {
                return Err(CliError::Usage(format!(
                    "no .traces files under {}",
                    traces.display()
                )));
            }
            for path in entries {
                let (variant, ts) = read_traces(&path)?;
                for (i, t) in ts.iter().enumerate() {
                    let name = format!(
                        "{variant}_{}_{}_{i:04}.svg",
                        t.task.name(),
                        t.mode.name()
                    );
                    write_svg(&out.join(name), t)?;
                    count += 1;
                }
            }
            println!("wrote {count} plots to {}", out.display());
            Ok(())
        }
    }
}

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sacsvg::replay::read_buffer;
use sacsvg::trainer::{
    ablate_architecture, ablate_expansion, emit_plots, entropy_search, evaluate, load_checkpoint, read_jsonl,
    write_architecture_table, ArchitectureConfig, EnsembleRollout, ExpansionCombo, TrainConfig, Trainer,
};

#[derive(Parser)]
#[command(name = "sacsvg", version, about = "Soft actor-critic with model-based value gradients")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent, or resume one from its output directory.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out_dir: PathBuf,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
        /// Run evaluation episodes on threads.
        #[arg(long)]
        parallel_eval: bool,
    },
    /// Evaluate the policy of a checkpoint with deterministic actions.
    Eval {
        /// A checkpoint directory, or a training output directory holding one.
        checkpoint: PathBuf,
        #[arg(long)]
        env: Option<String>,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Random search over target-entropy schedules.
    SearchEntropy {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Recurrent model versus one-step ensemble on a replay dump.
    AblateArch {
        /// A replay dump, e.g. `checkpoint/replay.bin` of a training run.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 4)]
        phases: usize,
        #[arg(long, default_value_t = 2)]
        test_episodes: usize,
        #[arg(long, default_value_t = 500)]
        updates: usize,
        #[arg(long, default_value_t = 3)]
        eval_len: usize,
        #[arg(long, value_enum, default_value_t = Rollout::MemberMean)]
        rollout: Rollout,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train the actor-only, critic-only and combined expansion variants.
    AblateExpansion {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated seeds shared by all three variants.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        /// Std of additive noise on the imagination model's parameters.
        #[arg(long)]
        model_noise: Option<f64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Mean ± std return curves from one or more metrics logs.
    Plot {
        /// `metrics.jsonl` files or the run directories containing them.
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// The full-size shared hyperparameters.
    Full,
    /// Smaller networks and batches for a laptop CPU.
    Desk,
}

#[derive(Clone, Copy, ValueEnum)]
enum Rollout {
    MemberMean,
    MeanState,
}

/// Configuration sources, applied in order: preset, file, `--set`, flags.
#[derive(Args)]
struct ConfigArgs {
    #[arg(long, value_enum, default_value_t = Preset::Full)]
    preset: Preset,
    /// A `key = value` file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Individual `key=value` overrides.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    steps: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut c = match self.preset {
            Preset::Full => TrainConfig::default(),
            Preset::Desk => TrainConfig::desk(),
        };
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            c.apply_text(&text)?;
        }
        for kv in &self.overrides {
            let Some((k, v)) = kv.split_once('=') else {
                bail!("override {kv:?} is not KEY=VALUE");
            };
            c.set(k.trim(), v.trim())?;
        }
        if let Some(seed) = self.seed {
            c.seed = seed;
        }
        if let Some(env) = &self.env {
            c.env = env.clone();
        }
        if let Some(h) = self.horizon {
            c.horizon = h;
        }
        if let Some(steps) = self.steps {
            c.steps = steps;
        }
        c.validate()?;
        Ok(c)
    }
}

fn checkpoint_path(path: &Path) -> PathBuf {
    let nested = sacsvg::trainer::checkpoint_dir(path);
    if nested.join("meta.json").exists() {
        nested
    } else {
        path.to_path_buf()
    }
}

fn log_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("metrics.jsonl")
    } else {
        path.to_path_buf()
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            out_dir,
            resume,
            parallel_eval,
        } => {
            let mut trainer = if resume {
                load_checkpoint(&sacsvg::trainer::checkpoint_dir(&out_dir)).context("loading checkpoint")?
            } else {
                let c = config.resolve()?;
                std::fs::create_dir_all(&out_dir)?;
                std::fs::write(out_dir.join("config.txt"), c.to_text())?;
                Trainer::new(c)?
            };
            trainer.set_parallel_eval(parallel_eval);
            let rows = trainer.run(Some(&out_dir))?;
            if let Some(last) = rows.last() {
                println!(
                    "step {}: eval return {:.3} ± {:.3}",
                    last.timestep, last.eval_return, last.eval_return_std
                );
            }
        }
        Command::Eval {
            checkpoint,
            env,
            episodes,
            seed,
        } => {
            let s = evaluate(&checkpoint_path(&checkpoint), env.as_deref(), episodes, seed)?;
            println!("{:.6} ± {:.6} over {} episodes", s.mean, s.std, s.episodes);
        }
        Command::SearchEntropy { config, trials, out_dir } => {
            let base = config.resolve()?;
            let mut rng = ChaCha8Rng::seed_from_u64(base.seed);
            let ranked = entropy_search(&base, trials, &mut rng, Some(&out_dir))?;
            for (rank, r) in ranked.iter().enumerate() {
                println!(
                    "{:>2}. trial {:>2} init {:>3} final {:>4} beta {:>2}: {:.3}",
                    rank + 1,
                    r.trial,
                    r.schedule.init,
                    r.schedule.final_,
                    r.schedule.beta,
                    r.score
                );
            }
        }
        Command::AblateArch {
            corpus,
            phases,
            test_episodes,
            updates,
            eval_len,
            rollout,
            seed,
            out_dir,
        } => {
            let buf = read_buffer(&mut BufReader::new(
                File::open(&corpus).with_context(|| format!("opening {}", corpus.display()))?,
            ))?;
            let config = ArchitectureConfig {
                phases,
                test_episodes,
                updates,
                eval_len,
                rollout: match rollout {
                    Rollout::MemberMean => EnsembleRollout::MemberMean,
                    Rollout::MeanState => EnsembleRollout::MeanState,
                },
                seed,
                ..ArchitectureConfig::default()
            };
            let rows = ablate_architecture(&buf, &config)?;
            std::fs::create_dir_all(&out_dir)?;
            let table = out_dir.join("architecture.csv");
            write_architecture_table(&rows, &table)?;
            for r in &rows {
                println!("{} {:<9} {:<7} {:>3} {:.4e}", r.phase, r.model, r.split, r.episodes, r.mse);
            }
            info!("table written to {}", table.display());
        }
        Command::AblateExpansion {
            config,
            seeds,
            model_noise,
            out_dir,
        } => {
            let mut base = config.resolve()?;
            if let Some(noise) = model_noise {
                base.model_noise = noise;
            }
            let report = ablate_expansion(&base, &seeds, Some(&out_dir))?;
            for r in &report.runs {
                println!("{:<10} seed {:>3}: mean curve return {:.3}", r.combo, r.seed, r.curve_mean());
            }
            let dominated = report.dominated_seeds(ExpansionCombo::CriticMve, ExpansionCombo::ActorSvg);
            println!("critic-mve below actor-svg on {}/{} seeds", dominated.len(), seeds.len());
        }
        Command::Plot { logs, out_dir } => {
            let rows = logs
                .iter()
                .map(|p| {
                    let path = log_path(p);
                    read_jsonl(&path).with_context(|| format!("reading {}", path.display()))
                })
                .collect::<Result<Vec<_>>>()?;
            let data = emit_plots(&rows, &out_dir)?;
            println!("{} points over {} runs in {}", data.bands.len(), rows.len(), out_dir.display());
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

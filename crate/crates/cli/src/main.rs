use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use uav_search::config::{parse_config, ExperimentConfig};
use uav_search::experiment::{
    cmd_compare, cmd_evaluate, cmd_generate_field, cmd_render, cmd_train, PolicyChoice, CHECKPOINT, COMPARISON, SUMMARY,
};

#[derive(Parser)]
#[command(name = "uav-search", version, about = "UAV weed search: simulation, DQN training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config file, applied after presets.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset; may be repeated and is applied in order.
    #[arg(long = "preset")]
    presets: Vec<String>,
    /// Override a key, e.g. `--set train.lambda=0.2`; applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run everything on one thread.
    #[arg(long)]
    single_threaded: bool,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let text = match &self.config {
            Some(p) => Some(std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?),
            None => None,
        };
        let mut cfg = parse_config(&self.presets, text.as_deref(), &self.overrides)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a Q-network.
    Train(Common),
    /// Evaluate a trained checkpoint (or the random-walk reference).
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Evaluate a uniform random walk instead of a checkpoint.
        #[arg(long, conflicts_with = "checkpoint")]
        random: bool,
    },
    /// Fly the row-by-row coverage baseline.
    Baseline(Common),
    /// Compare two evaluation output directories.
    Compare {
        #[command(flatten)]
        common: Common,
        a: PathBuf,
        b: PathBuf,
    },
    /// Render one episode of an `episodes.jsonl` file as SVG.
    Render {
        log: PathBuf,
        #[arg(long, default_value_t = 0)]
        episode: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a generated field as text.
    GenerateField {
        #[command(flatten)]
        common: Common,
        #[arg(long = "file")]
        file: PathBuf,
    },
}

fn threads(common: &Common) -> Result<()> {
    if common.single_threaded {
        rayon::ThreadPoolBuilder::new().num_threads(1).build_global().context("configuring the thread pool")?;
    }
    Ok(())
}

fn print_file(path: PathBuf) -> Result<()> {
    print!("{}", std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?);
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train(common) => {
            threads(&common)?;
            let cfg = common.resolve()?;
            let report = cmd_train(&cfg, &mut |r| {
                eprintln!(
                    "env_steps {:>9}  train_steps {:>8}  loss {:.4}  val_reward {:8.3}  val_found {:.3}",
                    r.env_steps, r.train_steps, r.loss, r.val_mean_reward, r.val_mean_found_fraction
                )
            })?;
            println!("wrote {}", report.out_dir.join(CHECKPOINT).display());
        }
        Command::Evaluate { common, checkpoint, random } => {
            threads(&common)?;
            let cfg = common.resolve()?;
            let policy = if random {
                PolicyChoice::Random
            } else {
                match checkpoint {
                    Some(p) => PolicyChoice::Greedy(p),
                    None => bail!("--checkpoint is required unless --random is given"),
                }
            };
            let report = cmd_evaluate(&cfg, &policy)?;
            print_file(report.out_dir.join(SUMMARY))?;
        }
        Command::Baseline(common) => {
            threads(&common)?;
            let cfg = common.resolve()?;
            let report = cmd_evaluate(&cfg, &PolicyChoice::Baseline)?;
            print_file(report.out_dir.join(SUMMARY))?;
        }
        Command::Compare { common, a, b } => {
            threads(&common)?;
            let cfg = common.resolve()?;
            cmd_compare(&cfg, &a, &b)?;
            print_file(cfg.out_dir.join(COMPARISON))?;
        }
        Command::Render { log, episode, out } => {
            cmd_render(&log, episode, &out)?;
            println!("wrote {}", out.display());
        }
        Command::GenerateField { common, file } => {
            let cfg = common.resolve()?;
            cmd_generate_field(&cfg, &file)?;
            println!("wrote {}", file.display());
        }
    }
    Ok(())
}

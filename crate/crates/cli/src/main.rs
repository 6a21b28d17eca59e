use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use gridstitch::harness::{self, Execution, RunConfig};
use gridstitch::stats;
use gridstitch::task_settings::{Mode, SettingKind, SettingSpec};

#[derive(Parser)]
#[command(
    name = "gridstitch",
    version,
    about = "Train and evaluate goal-conditioned critics on the block-moving grid"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent and write metrics.csv and checkpoint.bin.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        algo: Option<String>,
        #[arg(long)]
        setting: Option<String>,
        #[arg(long)]
        grid_size: Option<usize>,
        #[arg(long)]
        num_boxes: Option<usize>,
        #[arg(long)]
        num_preplaced: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Run everything on one thread.
        #[arg(long)]
        sequential: bool,
    },
    /// Evaluate a checkpoint and print one metrics row.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        setting: String,
        #[arg(long, default_value = "eval")]
        mode: String,
        #[arg(long, default_value_t = 256)]
        episodes: usize,
        /// Override the box count stored in the checkpoint.
        #[arg(long)]
        num_boxes: Option<usize>,
        #[arg(long)]
        num_preplaced: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        sequential: bool,
    },
    /// Aggregate final success rates into IQM with bootstrap intervals.
    Stats {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "algo,setting,mode")]
        group_by: String,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = stats::DEFAULT_BOOTSTRAP)]
        n_bootstrap: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn exec(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train {
            config,
            algo,
            setting,
            grid_size,
            num_boxes,
            num_preplaced,
            seed,
            out,
            sequential,
        } => {
            let mut cfg = match &config {
                Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
                None => RunConfig::default(),
            };
            if let Some(a) = algo {
                cfg.algo = Some(a.parse()?);
            }
            if let Some(s) = setting {
                cfg.setting = Some(s.parse()?);
            }
            cfg.grid_size = grid_size.or(cfg.grid_size);
            cfg.num_boxes = num_boxes.or(cfg.num_boxes);
            cfg.num_preplaced = num_preplaced.or(cfg.num_preplaced);
            let seed = seed.or(cfg.seed).unwrap_or(0);
            let Some(algorithm) = cfg.algo else {
                bail!("--algo is required")
            };
            let Some(spec) = cfg.setting_spec() else {
                bail!("--setting, --grid-size and --num-boxes are required")
            };
            let agent_spec = cfg.agent_spec(algorithm, spec.grid_size)?;
            let run = harness::run_to_dir(&cfg, agent_spec, &spec, seed, &out, exec(sequential))?;
            let last: Vec<_> = run.records.iter().rev().take(2).collect();
            for r in last.iter().rev() {
                println!(
                    "{} {} step {}: success {:.3} ({}/{})",
                    r.algorithm, r.mode, r.step, r.success_rate, r.successes, r.episodes
                );
            }
            println!(
                "{} env steps, {} episodes; wrote {}",
                run.env_steps,
                run.episodes,
                out.display()
            );
        }
        Command::Eval {
            checkpoint,
            setting,
            mode,
            episodes,
            num_boxes,
            num_preplaced,
            seed,
            sequential,
        } => {
            let (_, meta) = harness::load_checkpoint::<f32>(&checkpoint)?;
            let kind: SettingKind = setting.parse()?;
            let mode: Mode = mode.parse()?;
            let mut spec = SettingSpec::new(
                kind,
                meta.setting.grid_size,
                num_boxes.unwrap_or(meta.setting.n_boxes),
                mode,
            );
            spec.m_preplaced = num_preplaced.unwrap_or(if kind == meta.setting.kind {
                meta.setting.m_preplaced
            } else {
                0
            });
            let record = harness::evaluate_checkpoint(&checkpoint, &spec, episodes, seed, exec(sequential))?;
            let mut w = csv::Writer::from_writer(std::io::stdout());
            w.serialize(&record)?;
            w.flush()?;
        }
        Command::Stats {
            input,
            group_by,
            output,
            n_bootstrap,
            seed,
        } => {
            let keys = stats::parse_group_by(&group_by)?;
            let rows = stats::aggregate_file(&input, &keys, n_bootstrap, seed)
                .with_context(|| format!("aggregating {}", input.display()))?;
            match output {
                Some(p) => stats::write_aggregate(std::fs::File::create(&p)?, &rows)?,
                None => stats::write_aggregate(std::io::stdout(), &rows)?,
            }
        }
    }
    Ok(())
}

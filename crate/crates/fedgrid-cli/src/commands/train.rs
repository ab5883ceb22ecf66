//! `fedgrid train`: run FedSAC (or the decentralized baseline) for one or
//! all configured seeds, writing the per-episode reward CSV and a final
//! checkpoint per run.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use fedgrid_core::fed::{FedMode, TrainLog, TrainObserver};
use serde_json::json;

use crate::commands::{ensure_output_dir, write_csv};
use crate::config::ExperimentConfig;
use crate::experiment::run_training;
use crate::{checkpoint, fmt_f64, plot};

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Federation mode.
    #[arg(long, value_enum, default_value = "federated")]
    pub mode: ModeArg,
    /// Train only this seed instead of every seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also render reward curves as SVG.
    #[arg(long)]
    pub plot: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModeArg {
    Federated,
    Decentralized,
}

impl From<ModeArg> for FedMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Federated => FedMode::Federated,
            ModeArg::Decentralized => FedMode::Decentralized,
        }
    }
}

struct Progress {
    every: usize,
    total: usize,
}

impl TrainObserver for Progress {
    fn on_episode(&mut self, episode: usize, rewards: &[f64]) {
        if (episode + 1) % self.every == 0 || episode + 1 == self.total {
            let joined: Vec<String> = rewards.iter().map(|r| format!("{r:.3}")).collect();
            eprintln!("  episode {}/{}  rewards [{}]", episode + 1, self.total, joined.join(", "));
        }
    }
}

pub fn run(args: &TrainArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&args.config)?;
    ensure_output_dir(&cfg.output)?;
    let mode: FedMode = args.mode.into();
    let seeds: Vec<u64> = match args.seed {
        Some(s) => vec![s],
        None => cfg.seeds.clone(),
    };
    for seed in seeds {
        eprintln!("training mode={mode} seed={seed} ({} episodes)", cfg.train.episodes);
        let mut progress = Progress { every: (cfg.train.episodes / 10).max(1), total: cfg.train.episodes };
        let (log, agents) = run_training(&cfg, seed, mode, &mut progress)?;

        let reward_csv = cfg.output.join(format!("rewards_{mode}_seed{seed}.csv"));
        write_reward_csv(&reward_csv, &log, seed, mode)?;

        let echo = json!({
            "experiment": &cfg,
            "seed": seed,
            "mode": mode.to_string(),
        });
        let ck_path = cfg.output.join(format!("checkpoint_{mode}_seed{seed}.fgck"));
        checkpoint::save(&ck_path, &agents, &echo.to_string(), log.total_steps)
            .context("writing final checkpoint")?;
        eprintln!("wrote {} and {}", reward_csv.display(), ck_path.display());

        if args.plot {
            let svg = cfg.output.join(format!("rewards_{mode}_seed{seed}.svg"));
            plot_rewards(&svg, &log, mode, seed)?;
        }
    }
    Ok(())
}

pub fn write_reward_csv(path: &Path, log: &TrainLog, seed: u64, mode: FedMode) -> Result<()> {
    let rows = log.episode_rewards.iter().enumerate().flat_map(|(ep, rewards)| {
        rewards
            .iter()
            .enumerate()
            .map(move |(agent, r)| format!("{ep},{agent},{},{seed},{mode}", fmt_f64(*r)))
            .collect::<Vec<_>>()
    });
    write_csv(path, "episode,agent_id,reward,seed,mode", rows)
}

fn plot_rewards(path: &Path, log: &TrainLog, mode: FedMode, seed: u64) -> Result<()> {
    let n_agents = log.episode_rewards.first().map_or(0, Vec::len);
    let series: Vec<plot::Series> = (0..n_agents)
        .map(|agent| plot::Series {
            label: format!("agent {agent}"),
            points: log
                .episode_rewards
                .iter()
                .enumerate()
                .map(|(ep, r)| (ep as f64, r[agent]))
                .collect(),
        })
        .collect();
    plot::write_line_svg(
        path,
        &format!("episodic reward ({mode}, seed {seed})"),
        "episode",
        "reward",
        &series,
    )
}

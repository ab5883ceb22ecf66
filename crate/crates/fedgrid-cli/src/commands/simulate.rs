//! `fedgrid simulate`: run a single episode — by default with zero agent
//! actions, reproducing the "no resilient controller" baseline — and emit
//! the full voltage trace.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use fedgrid_core::env::{load_scenarios, AttackScenario};
use fedgrid_core::rollout::{run_episode, RolloutPolicy};

use crate::commands::{ensure_output_dir, write_csv};
use crate::config::ExperimentConfig;
use crate::experiment::build_eval_env;
use crate::{checkpoint, fmt_f64};

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Scenario pool file; without it the episode runs unattacked.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Which record of the scenario file to run.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Drive actions from this trained checkpoint instead of zeros.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Force zero actions even when a checkpoint is given.
    #[arg(long)]
    pub no_agent: bool,
    /// Trace output path (default: <output>/simulate_trace.csv).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also render the trace as SVG.
    #[arg(long)]
    pub plot: bool,
}

pub fn run(args: &SimulateArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&args.config)?;
    ensure_output_dir(&cfg.output)?;
    let mut env = build_eval_env(&cfg)?;

    let scenario = match &args.scenario {
        Some(path) => {
            let pool = load_scenarios(path).with_context(|| format!("loading {}", path.display()))?;
            pool.get(args.index)
                .cloned()
                .with_context(|| format!("scenario file has {} records, index {} requested", pool.len(), args.index))?
        }
        None => AttackScenario::no_attack(env.net())?,
    };

    let agents = match (&args.checkpoint, args.no_agent) {
        (Some(path), false) => {
            let ck = checkpoint::load(path)?;
            if ck.agents.len() != env.n_agents() {
                bail!("checkpoint has {} agents, environment expects {}", ck.agents.len(), env.n_agents());
            }
            Some(ck.agents)
        }
        _ => None,
    };

    let n_phases = env.net().n_phases;
    let n_buses = env.net().n_buses;
    let mut rows = Vec::with_capacity(cfg.env.episode_len as usize * n_buses * n_phases);
    let policy = match &agents {
        Some(a) => RolloutPolicy::Agents(a),
        None => RolloutPolicy::Zero,
    };
    let outcome = run_episode(&mut env, Some(scenario.clone()), policy, |t, state| {
        for bus in 0..n_buses {
            for phase in 0..n_phases {
                rows.push(format!("{t},{bus},{phase},{}", fmt_f64(state.v[bus * n_phases + phase])));
            }
        }
    })?;

    let out_path = args.out.clone().unwrap_or_else(|| cfg.output.join("simulate_trace.csv"));
    write_csv(&out_path, "t,bus,phase,v", rows)?;
    if args.plot {
        let svg = out_path.with_extension("svg");
        super::eval::plot_trace(&out_path, &svg, "simulated voltage trace")?;
    }

    let rewards: Vec<String> = outcome.agent_rewards.iter().map(|r| format!("{r:.4}")).collect();
    println!(
        "scenario: inverter {} {} magnitude {} t_a {} | rewards [{}] total {:.4} recovered {}",
        scenario.inverter_id,
        scenario.channel,
        fmt_f64(scenario.magnitude),
        scenario.t_a,
        rewards.join(", "),
        outcome.total_reward,
        outcome.recovered
    );
    println!("trace written to {}", out_path.display());
    Ok(())
}

//! `fedgrid eval`: roll a trained checkpoint over held-out attack scenarios
//! with deterministic actions, collect per-scenario rewards, recovery flags
//! and the zero-action baseline, and export voltage traces.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use fedgrid_core::env::{AttackScenario, Environment};
use fedgrid_core::rollout::{run_episode, RolloutPolicy};
use fedgrid_core::sac::AgentBundle;

use crate::commands::{ensure_output_dir, write_csv};
use crate::config::ExperimentConfig;
use crate::experiment::{build_eval_env, evaluate_pool, summarize, test_pool, EvalSummary, ScenarioEval};
use crate::{checkpoint, fmt_f64, plot};

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Trained checkpoint to evaluate.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Number of held-out scenarios (default: the config's pools.n_test).
    #[arg(long)]
    pub n_scenarios: Option<usize>,
    /// Export voltage traces for the first K scenarios.
    #[arg(long, default_value_t = 1)]
    pub traces: usize,
    /// Comma-separated bus ids to trace (default: all buses).
    #[arg(long)]
    pub trace_buses: Option<String>,
    /// Also render the traces as SVG.
    #[arg(long)]
    pub plot: bool,
}

pub fn run(args: &EvalArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&args.config)?;
    ensure_output_dir(&cfg.output)?;
    let ck = checkpoint::load(&args.checkpoint)?;
    let env = build_eval_env(&cfg)?;
    let dims_ok = ck.agents.len() == env.n_agents()
        && ck.agents.iter().zip(env.obs_dims()).all(|(a, d)| a.obs_dim == d)
        && ck.agents.iter().zip(env.action_dims()).all(|(a, d)| a.act_dim == d);
    if !dims_ok {
        bail!("checkpoint agents do not match the configured network (wrong shapes)");
    }

    let n = args.n_scenarios.unwrap_or(cfg.pools.n_test);
    let pool = test_pool(&cfg, env.net(), n)?;
    eprintln!("evaluating {} scenarios with {} agents", pool.len(), ck.agents.len());
    let evals = evaluate_pool(&env, &ck.agents, &pool)?;

    write_results_csv(&cfg.output.join("eval_results.csv"), &evals)?;
    write_agent_rewards_csv(&cfg.output.join("eval_agent_rewards.csv"), &evals)?;
    let summary = summarize(&evals);
    write_summary_csv(&cfg.output.join("eval_summary.csv"), &summary)?;

    let trace_buses = parse_trace_buses(args.trace_buses.as_deref(), env.net().n_buses)?;
    for (k, scenario) in pool.iter().take(args.traces).enumerate() {
        let path = cfg.output.join(format!("eval_trace_{k}.csv"));
        export_trace(&env, &ck.agents, scenario, &trace_buses, &path)?;
        if args.plot {
            let svg = cfg.output.join(format!("eval_trace_{k}.svg"));
            plot_trace(&path, &svg, &format!("scenario {k} voltage trace"))?;
        }
    }

    println!(
        "n={} mean={:.4} median={:.4} recovered={:.1}% | baseline median={:.4} recovered={:.1}%",
        summary.n_scenarios,
        summary.mean_reward,
        summary.median_reward,
        100.0 * summary.fraction_recovered,
        summary.baseline_median,
        100.0 * summary.baseline_fraction_recovered,
    );
    Ok(())
}

fn parse_trace_buses(arg: Option<&str>, n_buses: usize) -> Result<Vec<usize>> {
    match arg {
        None => Ok((0..n_buses).collect()),
        Some(list) => {
            let mut buses = Vec::new();
            for part in list.split(',') {
                let bus: usize = part
                    .trim()
                    .parse()
                    .with_context(|| format!("bad bus id '{part}' in --trace-buses"))?;
                if bus >= n_buses {
                    bail!("bus {bus} out of range (network has {n_buses} buses)");
                }
                buses.push(bus);
            }
            Ok(buses)
        }
    }
}

fn write_results_csv(path: &Path, evals: &[ScenarioEval]) -> Result<()> {
    let rows = evals.iter().enumerate().map(|(i, e)| {
        format!(
            "{i},{},{},{},{},{},{},{},{},{}",
            e.scenario.inverter_id,
            e.scenario.channel,
            fmt_f64(e.scenario.magnitude),
            e.scenario.t_a,
            e.scenario.duration,
            fmt_f64(e.total_reward),
            fmt_f64(e.baseline_total),
            e.recovered,
            e.baseline_recovered
        )
    });
    write_csv(
        path,
        "scenario,inverter_id,channel,magnitude,t_a,duration,reward_total,baseline_total,recovered,baseline_recovered",
        rows,
    )
}

fn write_agent_rewards_csv(path: &Path, evals: &[ScenarioEval]) -> Result<()> {
    let rows = evals.iter().enumerate().flat_map(|(i, e)| {
        e.agent_rewards
            .iter()
            .enumerate()
            .map(move |(agent, r)| format!("{i},{agent},{}", fmt_f64(*r)))
            .collect::<Vec<_>>()
    });
    write_csv(path, "scenario,agent_id,reward", rows)
}

fn write_summary_csv(path: &Path, s: &EvalSummary) -> Result<()> {
    let rows = vec![
        format!("n_scenarios,{}", s.n_scenarios),
        format!("mean_reward,{}", fmt_f64(s.mean_reward)),
        format!("median_reward,{}", fmt_f64(s.median_reward)),
        format!("fraction_recovered,{}", fmt_f64(s.fraction_recovered)),
        format!("baseline_mean,{}", fmt_f64(s.baseline_mean)),
        format!("baseline_median,{}", fmt_f64(s.baseline_median)),
        format!("baseline_fraction_recovered,{}", fmt_f64(s.baseline_fraction_recovered)),
    ];
    write_csv(path, "metric,value", rows)
}

/// Roll one scenario with the trained agents and write `t,bus,phase,v`
/// rows for the selected buses.
pub fn export_trace(
    proto: &Environment,
    agents: &[AgentBundle],
    scenario: &AttackScenario,
    buses: &[usize],
    path: &Path,
) -> Result<()> {
    let mut env = proto.clone();
    let n_phases = env.net().n_phases;
    let mut rows = Vec::new();
    run_episode(&mut env, Some(scenario.clone()), RolloutPolicy::Agents(agents), |t, state| {
        for &bus in buses {
            for phase in 0..n_phases {
                let v = state.v[bus * n_phases + phase];
                rows.push(format!("{t},{bus},{phase},{}", fmt_f64(v)));
            }
        }
    })?;
    write_csv(path, "t,bus,phase,v", rows)
}

/// Render a `t,bus,phase,v` CSV as one series per (bus, phase).
pub fn plot_trace(csv_path: &Path, svg_path: &Path, title: &str) -> Result<()> {
    let text = std::fs::read_to_string(csv_path)?;
    let mut series: std::collections::BTreeMap<(usize, usize), Vec<(f64, f64)>> = Default::default();
    for line in text.lines().skip(1) {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            continue;
        }
        let t: f64 = parts[0].parse()?;
        let bus: usize = parts[1].parse()?;
        let phase: usize = parts[2].parse()?;
        let v: f64 = parts[3].parse()?;
        series.entry((bus, phase)).or_default().push((t, v));
    }
    let series: Vec<plot::Series> = series
        .into_iter()
        .map(|((bus, phase), points)| plot::Series { label: format!("bus {bus} ph {phase}"), points })
        .collect();
    plot::write_line_svg(svg_path, title, "step", "voltage (pu)", &series)
}

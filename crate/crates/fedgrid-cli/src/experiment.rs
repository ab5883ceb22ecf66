//! Assembly of runnable experiments from a configuration: network,
//! environment, scenario pools, agents, training runs and parallel
//! evaluation sweeps.

use anyhow::{bail, Context, Result};
use rand::rngs::StdRng;
use rand::SeedableRng;
use rayon::prelude::*;

use fedgrid_core::env::{build_scenario_pool, AttackScenario, Environment};
use fedgrid_core::fed::{make_agents, train, FedMode, TrainConfig, TrainLog, TrainObserver};
use fedgrid_core::grid::NetworkModel;
use fedgrid_core::rollout::{run_episode, RolloutPolicy};
use fedgrid_core::sac::AgentBundle;
use fedgrid_core::seeding::{derive_seed, salt};

use crate::config::ExperimentConfig;

pub fn build_network(cfg: &ExperimentConfig) -> Result<NetworkModel> {
    cfg.network.resolve()
}

/// Training scenario pool; a fixed property of the experiment.
pub fn train_pool(cfg: &ExperimentConfig, net: &NetworkModel) -> Result<Vec<AttackScenario>> {
    let mut rng = StdRng::seed_from_u64(derive_seed(cfg.pools.seed, salt::TRAIN_POOL));
    Ok(build_scenario_pool(net, &cfg.env, cfg.pools.n_train, &mut rng)?)
}

/// Held-out test pool of `n` scenarios, drawn from a stream disjoint from
/// the training pool.
pub fn test_pool(cfg: &ExperimentConfig, net: &NetworkModel, n: usize) -> Result<Vec<AttackScenario>> {
    let mut rng = StdRng::seed_from_u64(derive_seed(cfg.pools.seed, salt::TEST_POOL));
    Ok(build_scenario_pool(net, &cfg.env, n, &mut rng)?)
}

/// Environment whose scenario-selection stream is derived from the run
/// seed, with the training pool installed.
pub fn build_env(cfg: &ExperimentConfig, run_seed: u64) -> Result<Environment> {
    let net = build_network(cfg)?;
    let env_cfg = fedgrid_core::env::EnvConfig {
        seed: derive_seed(run_seed, salt::ENV),
        ..cfg.env.clone()
    };
    let mut env = Environment::new(net.clone(), env_cfg).context("environment initialization failed")?;
    env.set_pool(train_pool(cfg, &net)?)?;
    Ok(env)
}

/// Environment for evaluation; no pool, scenarios are passed explicitly.
pub fn build_eval_env(cfg: &ExperimentConfig) -> Result<Environment> {
    let net = build_network(cfg)?;
    Ok(Environment::new(net, cfg.env.clone()).context("environment initialization failed")?)
}

/// One full training run under the given seed and federation mode.
pub fn run_training(
    cfg: &ExperimentConfig,
    run_seed: u64,
    mode: FedMode,
    observer: &mut impl TrainObserver,
) -> Result<(TrainLog, Vec<AgentBundle>)> {
    let mut env = build_env(cfg, run_seed)?;
    let train_cfg = TrainConfig {
        schedule: fedgrid_core::fed::FedSchedule { mode, ..cfg.train.schedule.clone() },
        ..cfg.train.clone()
    };
    let mut agents = make_agents(&env, &train_cfg, run_seed);
    let log = train(&mut env, &mut agents, &train_cfg, observer)
        .with_context(|| format!("training run failed (seed {run_seed}, mode {mode})"))?;
    Ok((log, agents))
}

/// Evaluation of one scenario: deterministic policy rollout plus the
/// zero-action baseline on the same scenario.
#[derive(Debug, Clone)]
pub struct ScenarioEval {
    pub scenario: AttackScenario,
    pub agent_rewards: Vec<f64>,
    pub total_reward: f64,
    pub recovered: bool,
    pub baseline_total: f64,
    pub baseline_recovered: bool,
}

/// Evaluate every scenario with the trained agents (deterministic actions)
/// and the zero-action baseline. Scenarios run in parallel on worker-local
/// environment clones; `FEDGRID_THREADS` caps the parallelism.
pub fn evaluate_pool(
    proto: &Environment,
    agents: &[AgentBundle],
    pool: &[AttackScenario],
) -> Result<Vec<ScenarioEval>> {
    if agents.len() != proto.n_agents() {
        bail!("checkpoint has {} agents, environment expects {}", agents.len(), proto.n_agents());
    }
    let eval_one = |scenario: &AttackScenario| -> Result<ScenarioEval> {
        let mut env = proto.clone();
        let out = run_episode(&mut env, Some(scenario.clone()), RolloutPolicy::Agents(agents), |_, _| {})?;
        let mut env = proto.clone();
        let base = run_episode(&mut env, Some(scenario.clone()), RolloutPolicy::Zero, |_, _| {})?;
        Ok(ScenarioEval {
            scenario: scenario.clone(),
            total_reward: out.total_reward,
            agent_rewards: out.agent_rewards,
            recovered: out.recovered,
            baseline_total: base.total_reward,
            baseline_recovered: base.recovered,
        })
    };
    match eval_thread_cap()? {
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .context("building evaluation thread pool")?
            .install(|| pool.par_iter().map(eval_one).collect()),
        None => pool.par_iter().map(eval_one).collect(),
    }
}

fn eval_thread_cap() -> Result<Option<usize>> {
    match std::env::var("FEDGRID_THREADS") {
        Ok(v) => {
            let n: usize = v
                .parse()
                .with_context(|| format!("FEDGRID_THREADS must be a positive integer, got '{v}'"))?;
            if n == 0 {
                bail!("FEDGRID_THREADS must be >= 1");
            }
            Ok(Some(n))
        }
        Err(_) => Ok(None),
    }
}

/// Summary statistics over an evaluation sweep.
#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub n_scenarios: usize,
    pub mean_reward: f64,
    pub median_reward: f64,
    pub fraction_recovered: f64,
    pub baseline_mean: f64,
    pub baseline_median: f64,
    pub baseline_fraction_recovered: f64,
}

pub fn summarize(evals: &[ScenarioEval]) -> EvalSummary {
    let totals: Vec<f64> = evals.iter().map(|e| e.total_reward).collect();
    let baselines: Vec<f64> = evals.iter().map(|e| e.baseline_total).collect();
    EvalSummary {
        n_scenarios: evals.len(),
        mean_reward: mean(&totals),
        median_reward: median(&totals),
        fraction_recovered: evals.iter().filter(|e| e.recovered).count() as f64 / evals.len().max(1) as f64,
        baseline_mean: mean(&baselines),
        baseline_median: median(&baselines),
        baseline_fraction_recovered: evals.iter().filter(|e| e.baseline_recovered).count() as f64
            / evals.len().max(1) as f64,
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd_lengths() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn pools_are_deterministic_and_disjoint() {
        let cfg = ExperimentConfig::default_nine_bus();
        let net = build_network(&cfg).unwrap();
        let t1 = train_pool(&cfg, &net).unwrap();
        let t2 = train_pool(&cfg, &net).unwrap();
        assert_eq!(t1, t2);
        let test = test_pool(&cfg, &net, 50).unwrap();
        for t in &test {
            assert!(!t1.iter().any(|s| s.inverter_id == t.inverter_id
                && s.magnitude == t.magnitude
                && s.t_a == t.t_a));
        }
    }

    #[test]
    fn default_train_pool_attacks_every_microgrid() {
        // keeps the shipped defaults healthy: each agent sees at least one
        // own-microgrid attack during training
        let cfg = ExperimentConfig::default_nine_bus();
        let net = build_network(&cfg).unwrap();
        let pool = train_pool(&cfg, &net).unwrap();
        for mg in 0..3 {
            let gfm = net.gfm_ids_of_mg(mg)[0];
            assert!(
                pool.iter().any(|s| s.inverter_id == gfm),
                "default pool never attacks microgrid {mg}"
            );
        }
    }
}

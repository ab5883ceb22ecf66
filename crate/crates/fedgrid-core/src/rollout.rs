//! Deterministic episode rollouts, shared by evaluation, the zero-action
//! baseline and the trace exports.

use crate::env::{AttackScenario, Environment, JointAction};
use crate::error::Result;
use crate::grid::GridState;
use crate::sac::AgentBundle;

/// How actions are produced during a rollout.
pub enum RolloutPolicy<'a> {
    /// Zero residuals everywhere (the "no resilient controller" baseline).
    Zero,
    /// Deterministic policy actions (squashed means), one bundle per agent.
    Agents(&'a [AgentBundle]),
}

#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    /// Episodic reward per agent.
    pub agent_rewards: Vec<f64>,
    /// Sum over agents.
    pub total_reward: f64,
    /// All bus entries inside the recovery band at the final step.
    pub recovered: bool,
}

/// Run one full episode. `on_state` is invoked after every step with the
/// post-step clock and grid state (for trace exports).
pub fn run_episode<F>(
    env: &mut Environment,
    scenario: Option<AttackScenario>,
    policy: RolloutPolicy<'_>,
    mut on_state: F,
) -> Result<EpisodeOutcome>
where
    F: FnMut(u32, &GridState),
{
    let mut obs = env.reset(scenario)?;
    let mut totals = vec![0.0; env.n_agents()];
    loop {
        let actions: JointAction = match &policy {
            RolloutPolicy::Zero => env.action_dims().iter().map(|&d| vec![0.0; d]).collect(),
            RolloutPolicy::Agents(agents) => agents
                .iter()
                .zip(&obs)
                .map(|(a, o)| a.act_deterministic(o))
                .collect::<Result<_>>()?,
        };
        let res = env.step(&actions)?;
        on_state(env.state().t, env.state());
        for (t, r) in totals.iter_mut().zip(&res.rewards) {
            *t += r;
        }
        obs = res.obs;
        if res.done.iter().all(|&d| d) {
            break;
        }
    }
    Ok(EpisodeOutcome {
        total_reward: totals.iter().sum(),
        agent_rewards: totals,
        recovered: env.all_in_band(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use crate::grid::NetworkModel;

    #[test]
    fn quiet_baseline_episode_is_recovered_with_zero_reward() {
        let net = NetworkModel::nine_bus_default();
        let mut env = Environment::new(net, EnvConfig::default()).unwrap();
        let scenario = AttackScenario::no_attack(env.net()).unwrap();
        let mut steps = 0;
        let out = run_episode(&mut env, Some(scenario), RolloutPolicy::Zero, |_, _| steps += 1).unwrap();
        assert_eq!(steps, 40);
        assert!(out.recovered);
        assert_eq!(out.total_reward, 0.0);
        assert_eq!(out.agent_rewards, vec![0.0; 3]);
    }

    #[test]
    fn attacked_baseline_episode_fails_to_recover() {
        let net = NetworkModel::nine_bus_default();
        let mut env = Environment::new(net, EnvConfig::default()).unwrap();
        let scenario = AttackScenario {
            inverter_id: 0,
            channel: crate::env::AttackChannel::Voltage,
            magnitude: -0.1,
            t_a: 5,
            duration: 35,
        };
        let out = run_episode(&mut env, Some(scenario), RolloutPolicy::Zero, |_, _| {}).unwrap();
        assert!(!out.recovered);
        assert!(out.agent_rewards[0] < -1.0);
    }
}

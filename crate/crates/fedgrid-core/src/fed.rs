//! Vertically federated training loop.
//!
//! All agents act in the same coupled environment; on a fixed schedule of
//! global environment steps, each agent's critic and target-critic
//! parameters are sent to a coordinator, averaged elementwise, and
//! broadcast back. Policies and replay data never cross agent boundaries.
//! For the first part of training targets use the clipped double-Q
//! minimum; after the configured fraction of total steps only one
//! critic/target pair is updated, averaged and used.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::sac::{sac_update_step, AgentBundle, ClipMode, SacHyper, Transition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FedMode {
    Federated,
    Decentralized,
}

impl std::fmt::Display for FedMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FedMode::Federated => write!(f, "federated"),
            FedMode::Decentralized => write!(f, "decentralized"),
        }
    }
}

/// When federation barriers fire, counted in global environment steps.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FedSchedule {
    pub start_step: u64,
    pub interval: u64,
    pub mode: FedMode,
}

impl Default for FedSchedule {
    fn default() -> Self {
        FedSchedule { start_step: 100, interval: 10, mode: FedMode::Federated }
    }
}

impl FedSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.interval < 1 {
            return Err(Error::Domain("federation interval must be >= 1".into()));
        }
        Ok(())
    }

    /// Whether a barrier fires at this global step (in federated mode).
    pub fn fires_at(&self, step: u64) -> bool {
        self.mode == FedMode::Federated
            && step >= self.start_step
            && (step - self.start_step) % self.interval == 0
    }
}

/// Training-loop configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Episode count n_f; total env steps = episodes × episode length.
    pub episodes: usize,
    /// Gradient updates start once every buffer holds this many transitions.
    pub warmup_transitions: usize,
    /// Fraction of total steps trained with the clipped double-Q minimum
    /// before switching to the single selected pair.
    pub clip_switch_fraction: f64,
    /// Hidden layer widths of policy and critics.
    pub hidden: Vec<usize>,
    pub schedule: FedSchedule,
    pub hyper: SacHyper,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 750,
            warmup_transitions: 256,
            clip_switch_fraction: 0.5,
            hidden: vec![64, 64],
            schedule: FedSchedule::default(),
            hyper: SacHyper::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::Domain("need at least one episode".into()));
        }
        if !(self.clip_switch_fraction > 0.0 && self.clip_switch_fraction <= 1.0) {
            return Err(Error::Domain(format!(
                "clip_switch_fraction {} outside (0,1]",
                self.clip_switch_fraction
            )));
        }
        if self.hidden.is_empty() {
            return Err(Error::Domain("need at least one hidden layer".into()));
        }
        self.schedule.validate()?;
        self.hyper.validate()
    }

    pub fn total_steps(&self, episode_len: u32) -> u64 {
        self.episodes as u64 * episode_len as u64
    }
}

/// Critic/target selection for a given global step: clipped double-Q for
/// the first `clip_switch_fraction` of total steps, then the fixed first
/// pair (closed-open boundary: the switch step itself is single-pair).
pub fn clip_mode_for(step: u64, total_steps: u64, cfg: &TrainConfig) -> ClipMode {
    if (step as f64) < cfg.clip_switch_fraction * total_steps as f64 {
        ClipMode::DoubleMin
    } else {
        ClipMode::SinglePair(0)
    }
}

/// Elementwise uniform mean over parameter snapshots.
///
/// Computed as min + mean of sorted offsets, which makes the result exactly
/// permutation-invariant and exactly the identity when all snapshots agree,
/// while remaining the arithmetic mean up to normal rounding otherwise.
pub fn federated_average(snapshots: &[Vec<f64>]) -> Result<Vec<f64>> {
    let r = snapshots.len();
    if r == 0 {
        return Err(Error::Domain("federated average of zero snapshots".into()));
    }
    let n = snapshots[0].len();
    if snapshots.iter().any(|s| s.len() != n) {
        return Err(Error::Dimension("parameter snapshots differ in shape".into()));
    }
    let mut out = vec![0.0; n];
    let mut offsets = vec![0.0; r];
    for j in 0..n {
        let mut base = snapshots[0][j];
        for s in snapshots.iter().skip(1) {
            if s[j] < base {
                base = s[j];
            }
        }
        for (k, s) in snapshots.iter().enumerate() {
            offsets[k] = s[j] - base;
        }
        offsets.sort_unstable_by(f64::total_cmp);
        let sum: f64 = offsets.iter().sum();
        out[j] = base + sum / r as f64;
    }
    Ok(out)
}

/// The aggregation point. It accepts critic and target-critic snapshots
/// only — policies and replay data have no path through it.
#[derive(Debug, Default)]
pub struct Coordinator {
    critics: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
}

impl Coordinator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn submit(&mut self, critic_params: Vec<f64>, target_params: Vec<f64>) {
        self.critics.push(critic_params);
        self.targets.push(target_params);
    }

    pub fn n_submitted(&self) -> usize {
        self.critics.len()
    }

    /// Uniform means of everything submitted so far.
    pub fn aggregate(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((federated_average(&self.critics)?, federated_average(&self.targets)?))
    }
}

/// Overwrite every agent's critic `idx` and its target with the averaged
/// parameters. Policies are untouched.
pub fn broadcast_assign(
    agents: &mut [AgentBundle],
    idx: usize,
    critic_avg: &[f64],
    target_avg: &[f64],
) -> Result<()> {
    for agent in agents.iter_mut() {
        agent.critics[idx].unflatten_from(critic_avg)?;
        agent.targets[idx].unflatten_from(target_avg)?;
    }
    Ok(())
}

/// One federation barrier: snapshot → average → broadcast, for every
/// critic index active under the given clip mode.
pub fn federate(agents: &mut [AgentBundle], clip: ClipMode) -> Result<()> {
    for &idx in clip.active_indices() {
        let mut coordinator = Coordinator::new();
        for agent in agents.iter() {
            coordinator.submit(agent.critics[idx].flatten(), agent.targets[idx].flatten());
        }
        let (critic_avg, target_avg) = coordinator.aggregate()?;
        broadcast_assign(agents, idx, &critic_avg, &target_avg)?;
    }
    Ok(())
}

/// Hooks into the training loop; all methods default to no-ops.
pub trait TrainObserver {
    fn on_episode(&mut self, _episode: usize, _rewards: &[f64]) {}
    fn on_federation(&mut self, _step: u64, _agents: &[AgentBundle]) {}
}

impl TrainObserver for () {}

#[derive(Debug, Clone)]
pub struct TrainLog {
    /// `episode_rewards[episode][agent]`.
    pub episode_rewards: Vec<Vec<f64>>,
    /// Global steps at which federation barriers fired.
    pub federation_steps: Vec<u64>,
    pub total_steps: u64,
}

/// Drive all agents against the shared environment for the configured
/// number of episodes: sample a scenario per episode, roll out with
/// stochastic per-agent actions, store transitions per agent, run one SAC
/// update per agent per env step after warm-up (agents update in
/// parallel), and federate on schedule.
pub fn train<O: TrainObserver>(
    env: &mut Environment,
    agents: &mut [AgentBundle],
    cfg: &TrainConfig,
    observer: &mut O,
) -> Result<TrainLog> {
    cfg.validate()?;
    if agents.is_empty() || agents.len() != env.n_agents() {
        return Err(Error::Dimension(format!(
            "environment has {} agents, got {}",
            env.n_agents(),
            agents.len()
        )));
    }
    let obs_dims = env.obs_dims();
    let act_dims = env.action_dims();
    for (i, agent) in agents.iter().enumerate() {
        if agent.obs_dim != obs_dims[i] || agent.act_dim != act_dims[i] {
            return Err(Error::Dimension(format!(
                "agent {i} dims ({}, {}) do not match environment ({}, {})",
                agent.obs_dim, agent.act_dim, obs_dims[i], act_dims[i]
            )));
        }
    }

    let total = cfg.total_steps(env.cfg().episode_len);
    let mut log = TrainLog {
        episode_rewards: Vec::with_capacity(cfg.episodes),
        federation_steps: Vec::new(),
        total_steps: total,
    };
    let mut episode = 0usize;
    let mut acc = vec![0.0; agents.len()];
    let mut obs = env
        .reset(None)
        .map_err(|e| e.with_context("episode 0, reset"))?;

    for step in 1..=total {
        let ep_now = episode;
        let diag = move |e: Error| e.with_context(&format!("episode {ep_now}, env step {step}"));

        let mut actions = Vec::with_capacity(agents.len());
        for (agent, o) in agents.iter_mut().zip(&obs) {
            actions.push(agent.select_action(o).map_err(diag)?);
        }
        let res = env.step(&actions).map_err(diag)?;
        for (alpha, agent) in agents.iter_mut().enumerate() {
            agent
                .buffer
                .push(Transition {
                    o: obs[alpha].clone(),
                    u: actions[alpha].clone(),
                    r: res.rewards[alpha],
                    o2: res.obs[alpha].clone(),
                    d: if res.done[alpha] { 1.0 } else { 0.0 },
                })
                .map_err(diag)?;
            acc[alpha] += res.rewards[alpha];
        }
        obs = res.obs;

        if res.done.iter().all(|&d| d) {
            observer.on_episode(episode, &acc);
            log.episode_rewards.push(std::mem::take(&mut acc));
            acc = vec![0.0; agents.len()];
            episode += 1;
            if episode < cfg.episodes {
                obs = env.reset(None).map_err(diag)?;
            }
        }

        if agents[0].buffer.len() >= cfg.warmup_transitions {
            let clip = clip_mode_for(step, total, cfg);
            let hyper = &cfg.hyper;
            agents
                .par_iter_mut()
                .map(|agent| sac_update_step(agent, hyper, clip).map(drop))
                .collect::<Result<Vec<()>>>()
                .map_err(diag)?;
        }

        if cfg.schedule.fires_at(step) {
            federate(agents, clip_mode_for(step, total, cfg)).map_err(diag)?;
            log.federation_steps.push(step);
            observer.on_federation(step, agents);
        }
    }
    Ok(log)
}

/// Build one agent per microgrid with dimensions taken from the
/// environment; agent α's RNG stream is derived from `master_seed`.
pub fn make_agents(env: &Environment, cfg: &TrainConfig, master_seed: u64) -> Vec<AgentBundle> {
    let obs_dims = env.obs_dims();
    let act_dims = env.action_dims();
    (0..env.n_agents())
        .map(|alpha| {
            let seed = crate::seeding::derive_seed(master_seed, crate::seeding::salt::AGENT + alpha as u64);
            AgentBundle::new(alpha, obs_dims[alpha], act_dims[alpha], &cfg.hidden, &cfg.hyper, seed)
        })
        .collect()
}

//! Episodic environment over the grid model: attack scenarios, reset/step
//! semantics, per-microgrid observations normalized by the pre-attack
//! steady state, and the piecewise reward.
//!
//! Observations are the bus voltage magnitudes of each microgrid divided
//! elementwise by their steady-state values, so every agent sees values
//! near 1.0 regardless of where its buses sit electrically. The
//! per-microgrid observation index sets partition the full observation
//! vector; rewards are computed per agent from that agent's own buses and
//! its own action only.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    compose_setpoints, compute_steady_state, step_dynamics, GridState, InverterKind, NetworkModel,
    SetpointVector,
};

/// Per-agent observation vectors; their index sets partition the full
/// observation space.
pub type JointObservation = Vec<Vec<f64>>;
/// Per-agent raw actions in [−1, 1], one entry per GFM of the microgrid.
pub type JointAction = Vec<Vec<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackChannel {
    Voltage,
    ActivePower,
}

impl fmt::Display for AttackChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttackChannel::Voltage => write!(f, "voltage"),
            AttackChannel::ActivePower => write!(f, "active_power"),
        }
    }
}

/// One adversarial perturbation of a GFM set-point channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackScenario {
    /// Target inverter; must be grid-forming.
    pub inverter_id: usize,
    pub channel: AttackChannel,
    /// Additive set-point perturbation, pu (signed).
    pub magnitude: f64,
    /// Onset step.
    pub t_a: u32,
    /// Number of steps the attack stays active.
    pub duration: u32,
}

impl AttackScenario {
    /// A degenerate scenario that never perturbs anything; used for
    /// baseline runs without an attack.
    pub fn no_attack(net: &NetworkModel) -> Result<Self> {
        let gfm = net
            .gfm_ids()
            .first()
            .copied()
            .ok_or_else(|| Error::Domain("network has no GFM inverter".into()))?;
        Ok(AttackScenario { inverter_id: gfm, channel: AttackChannel::Voltage, magnitude: 0.0, t_a: 1, duration: 0 })
    }

    pub fn validate(&self, net: &NetworkModel, episode_len: u32) -> Result<()> {
        let spec = net
            .inverters
            .get(self.inverter_id)
            .ok_or_else(|| Error::Domain(format!("scenario targets unknown inverter {}", self.inverter_id)))?;
        if spec.kind != InverterKind::Gfm {
            return Err(Error::Domain(format!(
                "scenario targets inverter {} which is not grid-forming",
                self.inverter_id
            )));
        }
        if self.t_a < 1 {
            return Err(Error::Domain("attack onset must be >= 1".into()));
        }
        if self.t_a + self.duration > episode_len {
            return Err(Error::Domain(format!(
                "attack window [{}, {}) exceeds episode length {episode_len}",
                self.t_a,
                self.t_a + self.duration
            )));
        }
        if !self.magnitude.is_finite() {
            return Err(Error::Domain("attack magnitude must be finite".into()));
        }
        Ok(())
    }

    /// Whether the attack perturbs the step taken at clock `t`.
    pub fn active_at(&self, t: u32) -> bool {
        t >= self.t_a && t < self.t_a + self.duration
    }
}

/// Environment configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub episode_len: u32,
    /// Recovery band, relative to the steady-state voltage.
    pub band_lo: f64,
    pub band_hi: f64,
    /// Per-bus voltage-deviation weights; empty means 1.0 for every bus.
    pub q_weights: Vec<f64>,
    /// Invalid-action penalty weight c.
    pub invalid_action_weight: f64,
    /// Residual set-point bound, pu: raw actions in [−1,1] scale to ±this.
    pub action_bound: f64,
    /// Threshold ε_act on the scaled action below which acting before the
    /// attack is not penalized.
    pub act_threshold: f64,
    /// |magnitude| sampling range of the scenario pool, pu.
    pub attack_magnitude: (f64, f64),
    /// Onset sampling range (inclusive) of the scenario pool.
    pub attack_onset: (u32, u32),
    /// Seed of the environment's scenario-selection stream.
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            episode_len: 40,
            band_lo: 0.99,
            band_hi: 1.01,
            q_weights: Vec::new(),
            invalid_action_weight: 1.0,
            action_bound: 0.1,
            act_threshold: 0.005,
            attack_magnitude: (0.03, 0.15),
            attack_onset: (5, 15),
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episode_len < 1 {
            return Err(Error::Domain("episode length must be >= 1".into()));
        }
        if !(self.band_lo < 1.0 && 1.0 < self.band_hi) {
            return Err(Error::Domain(format!(
                "recovery band ({}, {}) must straddle 1.0",
                self.band_lo, self.band_hi
            )));
        }
        if self.invalid_action_weight < 0.0 || self.action_bound <= 0.0 || self.act_threshold < 0.0 {
            return Err(Error::Domain("penalty weight, action bound and threshold must be non-negative".into()));
        }
        let (lo, hi) = self.attack_magnitude;
        if !(0.0 <= lo && lo <= hi) {
            return Err(Error::Domain(format!("attack magnitude range ({lo}, {hi}) invalid")));
        }
        let (a, b) = self.attack_onset;
        if a < 1 || a > b || b >= self.episode_len {
            return Err(Error::Domain(format!(
                "attack onset range ({a}, {b}) must satisfy 1 <= lo <= hi < episode_len"
            )));
        }
        Ok(())
    }
}

/// Elementwise V / V_ss; rejects non-positive steady-state entries.
pub fn normalize_obs(v: &[f64], v_ss: &[f64]) -> Result<Vec<f64>> {
    if v.len() != v_ss.len() {
        return Err(Error::Dimension("observation and steady-state lengths differ".into()));
    }
    v.iter()
        .zip(v_ss)
        .map(|(&x, &s)| {
            if s <= 0.0 {
                Err(Error::Domain("steady-state voltage must be positive".into()))
            } else {
                Ok(x / s)
            }
        })
        .collect()
}

/// Piecewise per-agent reward (always ≤ 0).
///
/// Before and at the attack onset, a flat penalty −c is charged iff the
/// agent acts (‖action‖∞ above ε_act). After the onset, if any of the
/// agent's bus entries leaves the recovery band the weighted absolute
/// deviation from the steady state is charged, otherwise the reward is 0.
pub fn reward(
    v_mg: &[f64],
    v_ss_mg: &[f64],
    weights: &[f64],
    t: u32,
    t_a: u32,
    action_pu: &[f64],
    cfg: &EnvConfig,
) -> f64 {
    assert_eq!(v_mg.len(), v_ss_mg.len());
    assert_eq!(v_mg.len(), weights.len());
    if t <= t_a {
        let invalid = action_pu.iter().any(|a| a.abs() > cfg.act_threshold);
        return if invalid { -cfg.invalid_action_weight } else { 0.0 };
    }
    let mut any_outside = false;
    let mut deviation = 0.0;
    for ((&v, &vss), &w) in v_mg.iter().zip(v_ss_mg).zip(weights) {
        if v < cfg.band_lo * vss || v > cfg.band_hi * vss {
            any_outside = true;
        }
        deviation += w * (v - vss).abs();
    }
    if any_outside {
        -deviation
    } else {
        0.0
    }
}

/// Sample `n` attack scenarios: GFM uniform, |magnitude| uniform in the
/// configured range with random sign, onset uniform in the configured
/// window, persisting to the episode end.
pub fn build_scenario_pool(
    net: &NetworkModel,
    cfg: &EnvConfig,
    n: usize,
    rng: &mut StdRng,
) -> Result<Vec<AttackScenario>> {
    if n == 0 {
        return Err(Error::Domain("scenario pool size must be >= 1".into()));
    }
    cfg.validate()?;
    let gfms = net.gfm_ids();
    if gfms.is_empty() {
        return Err(Error::Domain("network has no GFM inverter to attack".into()));
    }
    let (lo, hi) = cfg.attack_magnitude;
    let mut pool = Vec::with_capacity(n);
    for _ in 0..n {
        let inverter_id = gfms[rng.gen_range(0..gfms.len())];
        let mag = if lo < hi { rng.gen_range(lo..hi) } else { lo };
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let t_a = rng.gen_range(cfg.attack_onset.0..=cfg.attack_onset.1);
        let scenario = AttackScenario {
            inverter_id,
            channel: AttackChannel::Voltage,
            magnitude: sign * mag,
            t_a,
            duration: cfg.episode_len - t_a,
        };
        scenario.validate(net, cfg.episode_len)?;
        pool.push(scenario);
    }
    Ok(pool)
}

const POOL_HEADER: &str = "inverter_id,channel,magnitude,t_a,duration";

/// Write a scenario pool as one CSV record per scenario.
pub fn save_scenarios(path: &Path, pool: &[AttackScenario]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "{POOL_HEADER}")?;
    for s in pool {
        writeln!(f, "{},{},{},{},{}", s.inverter_id, s.channel, s.magnitude, s.t_a, s.duration)?;
    }
    Ok(())
}

/// Read a scenario pool written by [`save_scenarios`].
pub fn load_scenarios(path: &Path) -> Result<Vec<AttackScenario>> {
    let f = std::fs::File::open(path)?;
    let mut lines = BufReader::new(f).lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == POOL_HEADER => {}
        Some(Ok(h)) => return Err(Error::Parse(format!("unexpected scenario header: {h}"))),
        Some(Err(e)) => return Err(e.into()),
        None => return Err(Error::Parse("empty scenario file".into())),
    }
    let mut pool = Vec::new();
    for (ln, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Parse(format!("scenario line {}: expected 5 fields", ln + 2)));
        }
        let channel = match fields[1] {
            "voltage" => AttackChannel::Voltage,
            "active_power" => AttackChannel::ActivePower,
            other => return Err(Error::Parse(format!("scenario line {}: unknown channel {other}", ln + 2))),
        };
        let parse_err = |what: &str| Error::Parse(format!("scenario line {}: bad {what}", ln + 2));
        pool.push(AttackScenario {
            inverter_id: fields[0].parse().map_err(|_| parse_err("inverter_id"))?,
            channel,
            magnitude: fields[2].parse().map_err(|_| parse_err("magnitude"))?,
            t_a: fields[3].parse().map_err(|_| parse_err("t_a"))?,
            duration: fields[4].parse().map_err(|_| parse_err("duration"))?,
        });
    }
    Ok(pool)
}

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub obs: JointObservation,
    pub rewards: Vec<f64>,
    /// Per-agent done flags; all agents share the episode clock so these
    /// are always simultaneous.
    pub done: Vec<bool>,
}

/// Episodic multi-agent environment around one [`NetworkModel`].
#[derive(Debug, Clone)]
pub struct Environment {
    net: NetworkModel,
    cfg: EnvConfig,
    nominal: SetpointVector,
    v_ss: GridState,
    /// Per microgrid: flat indices into the voltage vector (bus-major).
    obs_index: Vec<Vec<usize>>,
    /// Per microgrid: deviation weight for each observation entry.
    entry_weights: Vec<Vec<f64>>,
    /// Per microgrid: GFM inverter ids actuated by the agent, ascending.
    gfms_of_mg: Vec<Vec<usize>>,
    pool: Vec<AttackScenario>,
    rng: StdRng,
    state: GridState,
    scenario: AttackScenario,
    started: bool,
    done: bool,
}

impl Environment {
    /// Validate the model, compute and cache the pre-attack steady state
    /// and build the per-microgrid observation index maps.
    pub fn new(net: NetworkModel, cfg: EnvConfig) -> Result<Self> {
        net.validate()?;
        cfg.validate()?;
        let cfg = EnvConfig {
            q_weights: if cfg.q_weights.is_empty() {
                vec![1.0; net.n_buses]
            } else if cfg.q_weights.len() == net.n_buses {
                cfg.q_weights.clone()
            } else {
                return Err(Error::Dimension(format!(
                    "q_weights has {} entries, network has {} buses",
                    cfg.q_weights.len(),
                    net.n_buses
                )));
            },
            ..cfg
        };
        let nominal = SetpointVector::nominal_of(&net);
        let v_ss = compute_steady_state(&net, &nominal)?;
        let n_mgs = net.n_mgs();
        let mut obs_index = vec![Vec::new(); n_mgs];
        let mut entry_weights = vec![Vec::new(); n_mgs];
        for bus in 0..net.n_buses {
            let mg = net.mg_of_bus[bus];
            for phase in 0..net.n_phases {
                obs_index[mg].push(GridState::v_index(bus, phase, net.n_phases));
                entry_weights[mg].push(cfg.q_weights[bus]);
            }
        }
        if obs_index.iter().any(Vec::is_empty) {
            return Err(Error::Domain("every microgrid needs at least one bus".into()));
        }
        let gfms_of_mg = (0..n_mgs).map(|mg| net.gfm_ids_of_mg(mg)).collect();
        let rng = StdRng::seed_from_u64(cfg.seed);
        let scenario = AttackScenario::no_attack(&net)?;
        let state = v_ss.clone();
        Ok(Environment {
            net,
            cfg,
            nominal,
            v_ss,
            obs_index,
            entry_weights,
            gfms_of_mg,
            pool: Vec::new(),
            rng,
            state,
            scenario,
            started: false,
            done: false,
        })
    }

    /// Install the scenario pool `reset(None)` samples from.
    pub fn set_pool(&mut self, pool: Vec<AttackScenario>) -> Result<()> {
        for s in &pool {
            s.validate(&self.net, self.cfg.episode_len)?;
        }
        self.pool = pool;
        Ok(())
    }

    pub fn n_agents(&self) -> usize {
        self.obs_index.len()
    }

    pub fn obs_dims(&self) -> Vec<usize> {
        self.obs_index.iter().map(Vec::len).collect()
    }

    /// Total observation size |O|.
    pub fn obs_size(&self) -> usize {
        self.obs_index.iter().map(Vec::len).sum()
    }

    pub fn action_dims(&self) -> Vec<usize> {
        self.gfms_of_mg.iter().map(Vec::len).collect()
    }

    pub fn net(&self) -> &NetworkModel {
        &self.net
    }

    pub fn cfg(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn state(&self) -> &GridState {
        &self.state
    }

    pub fn steady_state(&self) -> &GridState {
        &self.v_ss
    }

    pub fn scenario(&self) -> &AttackScenario {
        &self.scenario
    }

    pub fn obs_indices(&self) -> &[Vec<usize>] {
        &self.obs_index
    }

    /// Current normalized observations.
    pub fn observe(&self) -> JointObservation {
        self.obs_index
            .iter()
            .map(|idx| idx.iter().map(|&i| self.state.v[i] / self.v_ss.v[i]).collect())
            .collect()
    }

    /// Whether every bus entry currently sits inside the recovery band.
    pub fn all_in_band(&self) -> bool {
        self.state
            .v
            .iter()
            .zip(&self.v_ss.v)
            .all(|(&v, &s)| v >= self.cfg.band_lo * s && v <= self.cfg.band_hi * s)
    }

    /// Start an episode from the cached steady state. With `None`, a
    /// scenario is drawn uniformly from the installed pool.
    pub fn reset(&mut self, scenario: Option<AttackScenario>) -> Result<JointObservation> {
        let scenario = match scenario {
            Some(s) => {
                s.validate(&self.net, self.cfg.episode_len)?;
                s
            }
            None => {
                if self.pool.is_empty() {
                    return Err(Error::Protocol("reset(None) without a scenario pool".into()));
                }
                self.pool[self.rng.gen_range(0..self.pool.len())].clone()
            }
        };
        self.scenario = scenario;
        self.state = self.v_ss.clone();
        self.started = true;
        self.done = false;
        Ok(self.observe())
    }

    /// Advance one step: concatenate the per-agent residuals, inject the
    /// attack if its window covers the current clock, compose set-points,
    /// run the dynamics and score each agent on its own buses.
    pub fn step(&mut self, action: &JointAction) -> Result<StepResult> {
        if !self.started {
            return Err(Error::Protocol("step before reset".into()));
        }
        if self.done {
            return Err(Error::Protocol("step after episode end".into()));
        }
        if action.len() != self.n_agents() {
            return Err(Error::Dimension(format!(
                "expected actions for {} agents, got {}",
                self.n_agents(),
                action.len()
            )));
        }
        let n_inv = self.net.n_inverters();
        let mut res = SetpointVector::zeros(n_inv);
        let mut scaled: Vec<Vec<f64>> = Vec::with_capacity(self.n_agents());
        for (mg, gfms) in self.gfms_of_mg.iter().enumerate() {
            if action[mg].len() != gfms.len() {
                return Err(Error::Dimension(format!(
                    "agent {mg} action has {} entries, expected {}",
                    action[mg].len(),
                    gfms.len()
                )));
            }
            let mut pu = Vec::with_capacity(gfms.len());
            for (&inv, &raw) in gfms.iter().zip(&action[mg]) {
                if !raw.is_finite() {
                    return Err(Error::Domain(format!("non-finite action from agent {mg}")));
                }
                let v_res = raw.clamp(-1.0, 1.0) * self.cfg.action_bound;
                res.v_set[inv] = v_res;
                pu.push(v_res);
            }
            scaled.push(pu);
        }

        let mut attack = SetpointVector::zeros(n_inv);
        if self.scenario.active_at(self.state.t) {
            match self.scenario.channel {
                AttackChannel::Voltage => attack.v_set[self.scenario.inverter_id] = self.scenario.magnitude,
                AttackChannel::ActivePower => attack.p_set[self.scenario.inverter_id] = self.scenario.magnitude,
            }
        }

        let setpoints = compose_setpoints(&self.nominal, &res, &attack)?;
        self.state = step_dynamics(&self.state, &setpoints, &self.net, self.net.dt)?;
        let t = self.state.t;

        let rewards = (0..self.n_agents())
            .map(|mg| {
                let idx = &self.obs_index[mg];
                let v: Vec<f64> = idx.iter().map(|&i| self.state.v[i]).collect();
                let vss: Vec<f64> = idx.iter().map(|&i| self.v_ss.v[i]).collect();
                reward(&v, &vss, &self.entry_weights[mg], t, self.scenario.t_a, &scaled[mg], &self.cfg)
            })
            .collect();

        self.done = t >= self.cfg.episode_len;
        Ok(StepResult {
            obs: self.observe(),
            rewards,
            done: vec![self.done; self.n_agents()],
        })
    }
}

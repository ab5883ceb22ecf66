//! Quasi-static model of coupled microgrids with droop-controlled
//! grid-forming inverters.
//!
//! The electrical network is abstracted as a sensitivity model: each bus
//! voltage tracks a convex combination of the effective inverter voltage
//! references (rows of `G` sum to one), minus a load depression term, with
//! a first-order lag standing in for the inverters' PI voltage regulation.
//! Reactive power follows a linear flow approximation on the previous
//! step's voltages, which keeps every step explicit. This preserves the two
//! properties the training stack depends on — cross-microgrid electrical
//! coupling and voltage response to set-point changes — at desk scale.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Set-point limiter bounds for voltage references, pu.
pub const V_SET_LIMITS: (f64, f64) = (0.8, 1.2);
/// Set-point limiter bounds for active-power references, pu of rating.
pub const P_SET_LIMITS: (f64, f64) = (0.0, 1.2);

/// Convergence tolerance of the steady-state iteration (max |ΔV|, pu).
pub const STEADY_STATE_TOL: f64 = 1e-8;
/// Iteration cap; exceeding it signals an ill-posed network model.
pub const STEADY_STATE_MAX_ITERS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InverterKind {
    /// Grid-forming: controllable voltage source, the agents' actuator.
    Gfm,
    /// Grid-following: coupling participant, never actuated.
    Gfl,
}

/// Static description of one inverter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InverterSpec {
    pub id: usize,
    /// Owning microgrid.
    pub mg_id: usize,
    pub bus: usize,
    pub kind: InverterKind,
    pub rating_kw: f64,
    /// Frequency droop gain, pu frequency per pu power on the own rating base.
    pub m_p: f64,
    /// Voltage droop gain, pu voltage per pu reactive power.
    pub m_q: f64,
    pub omega_nom: f64,
    /// Nominal active set-point, pu of rating.
    pub p_set_nom: f64,
    /// Nominal voltage set-point, pu.
    pub v_set_nom: f64,
    /// Nominal reactive power, pu.
    pub q_nom: f64,
}

impl InverterSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rating_kw > 0.0) {
            return Err(Error::Domain(format!("inverter {}: rating must be > 0", self.id)));
        }
        if self.m_p < 0.0 || self.m_q < 0.0 {
            return Err(Error::Domain(format!("inverter {}: droop gains must be >= 0", self.id)));
        }
        let finite = [self.m_p, self.m_q, self.omega_nom, self.p_set_nom, self.v_set_nom, self.q_nom]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Domain(format!("inverter {}: non-finite field", self.id)));
        }
        Ok(())
    }
}

/// Static electrical description of the coupled microgrids.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkModel {
    pub n_buses: usize,
    pub n_phases: usize,
    pub inverters: Vec<InverterSpec>,
    /// `sensitivity[m][i]`: weight of inverter i's effective voltage
    /// reference on bus m's target. Rows are convex weights (sum to 1).
    pub sensitivity: Vec<Vec<f64>>,
    /// Symmetric bus-to-bus coupling for the reactive-flow approximation,
    /// pu reactive power per pu voltage difference.
    pub coupling: Vec<Vec<f64>>,
    /// Per-bus voltage depression from loads, pu.
    pub load_offset: Vec<f64>,
    /// Voltage response time constant, seconds.
    pub tau: f64,
    /// Simulation step, seconds.
    pub dt: f64,
    /// Bus → owning microgrid.
    pub mg_of_bus: Vec<usize>,
}

impl NetworkModel {
    pub fn n_inverters(&self) -> usize {
        self.inverters.len()
    }

    pub fn n_mgs(&self) -> usize {
        self.mg_of_bus.iter().copied().max().map_or(0, |m| m + 1)
    }

    /// Ids of grid-forming inverters, ascending.
    pub fn gfm_ids(&self) -> Vec<usize> {
        self.inverters
            .iter()
            .filter(|s| s.kind == InverterKind::Gfm)
            .map(|s| s.id)
            .collect()
    }

    /// Ids of grid-forming inverters belonging to microgrid `mg`, ascending.
    pub fn gfm_ids_of_mg(&self, mg: usize) -> Vec<usize> {
        self.inverters
            .iter()
            .filter(|s| s.kind == InverterKind::Gfm && s.mg_id == mg)
            .map(|s| s.id)
            .collect()
    }

    /// Buses of microgrid `mg`, ascending.
    pub fn buses_of_mg(&self, mg: usize) -> Vec<usize> {
        (0..self.n_buses).filter(|&b| self.mg_of_bus[b] == mg).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let (m, n) = (self.n_buses, self.n_inverters());
        if m == 0 || n == 0 || self.n_phases == 0 {
            return Err(Error::Domain("empty network".into()));
        }
        if self.sensitivity.len() != m
            || self.coupling.len() != m
            || self.load_offset.len() != m
            || self.mg_of_bus.len() != m
        {
            return Err(Error::Dimension("per-bus tables must have n_buses rows".into()));
        }
        for (idx, inv) in self.inverters.iter().enumerate() {
            inv.validate()?;
            if inv.id != idx {
                return Err(Error::Domain(format!("inverter ids must be dense, got {} at {idx}", inv.id)));
            }
            if inv.bus >= m {
                return Err(Error::Domain(format!("inverter {} on unknown bus {}", inv.id, inv.bus)));
            }
            if inv.mg_id != self.mg_of_bus[inv.bus] {
                return Err(Error::Domain(format!(
                    "inverter {} claims mg {} but its bus belongs to mg {}",
                    inv.id, inv.mg_id, self.mg_of_bus[inv.bus]
                )));
            }
        }
        for (bi, row) in self.sensitivity.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Dimension(format!("sensitivity row {bi} has {} entries, need {n}", row.len())));
            }
            if row.iter().any(|&w| w < 0.0 || !w.is_finite()) {
                return Err(Error::Domain(format!("sensitivity row {bi} has negative or non-finite weights")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Domain(format!("sensitivity row {bi} sums to {sum}, expected 1")));
            }
        }
        for (bi, row) in self.coupling.iter().enumerate() {
            if row.len() != m {
                return Err(Error::Dimension(format!("coupling row {bi} has {} entries, need {m}", row.len())));
            }
            for (bj, &v) in row.iter().enumerate() {
                if bi != bj && v < 0.0 {
                    return Err(Error::Domain("coupling off-diagonal entries must be >= 0".into()));
                }
                if (v - self.coupling[bj][bi]).abs() > 1e-12 {
                    return Err(Error::Domain("coupling matrix must be symmetric".into()));
                }
            }
        }
        if !(self.tau > 0.0) || !(self.dt > 0.0) || self.dt / self.tau > 1.0 {
            return Err(Error::Domain("need tau > 0, dt > 0 and dt/tau <= 1".into()));
        }
        // Cross-microgrid coupling: every pair of microgrids must interact
        // through the sensitivity matrix, otherwise the environments would
        // decompose into independent problems.
        let n_mgs = self.n_mgs();
        for a in 0..n_mgs {
            for b in 0..n_mgs {
                if a == b {
                    continue;
                }
                let coupled = (0..m).any(|bus| {
                    self.mg_of_bus[bus] == a
                        && self
                            .inverters
                            .iter()
                            .any(|inv| inv.mg_id == b && self.sensitivity[bus][inv.id] > 0.0)
                });
                if !coupled {
                    return Err(Error::Domain(format!(
                        "no sensitivity coupling from microgrid {b} inverters to microgrid {a} buses"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Default nine-bus system: three microgrids of three buses, one GFM
    /// (600 kW) and two GFLs (350 kW) each, GFMs on buses 0/3/6. All
    /// inverters carry 1% frequency and 5% voltage droop. Every bus weights
    /// its own GFM at 0.6, its own GFLs at 0.15 each and the two foreign
    /// GFMs at 0.05 each, which gives dominant local control with nonzero
    /// cross-microgrid coupling.
    pub fn nine_bus_default() -> Self {
        let n_buses = 9;
        let mg_of_bus: Vec<usize> = (0..n_buses).map(|b| b / 3).collect();
        let gfm_bus = [0usize, 3, 6];
        let gfl_buses = [[1usize, 2], [4, 5], [7, 8]];

        let mut inverters = Vec::new();
        for (mg, &bus) in gfm_bus.iter().enumerate() {
            inverters.push(InverterSpec {
                id: inverters.len(),
                mg_id: mg,
                bus,
                kind: InverterKind::Gfm,
                rating_kw: 600.0,
                m_p: 0.01,
                m_q: 0.05,
                omega_nom: 1.0,
                p_set_nom: 0.9,
                v_set_nom: 1.0,
                q_nom: 0.0,
            });
        }
        for (mg, buses) in gfl_buses.iter().enumerate() {
            for &bus in buses {
                inverters.push(InverterSpec {
                    id: inverters.len(),
                    mg_id: mg,
                    bus,
                    kind: InverterKind::Gfl,
                    rating_kw: 350.0,
                    m_p: 0.01,
                    m_q: 0.05,
                    omega_nom: 1.0,
                    p_set_nom: 0.9,
                    v_set_nom: 1.0,
                    q_nom: 0.0,
                });
            }
        }

        let n = inverters.len();
        let mut sensitivity = vec![vec![0.0; n]; n_buses];
        for bus in 0..n_buses {
            let mg = mg_of_bus[bus];
            for inv in &inverters {
                sensitivity[bus][inv.id] = match (inv.kind, inv.mg_id == mg) {
                    (InverterKind::Gfm, true) => 0.60,
                    (InverterKind::Gfl, true) => 0.15,
                    (InverterKind::Gfm, false) => 0.05,
                    (InverterKind::Gfl, false) => 0.0,
                };
            }
        }

        // Fully meshed inside each microgrid, tie-lines 2-3, 5-6 and 8-0
        // closing a ring across microgrids.
        let mut coupling = vec![vec![0.0; n_buses]; n_buses];
        let mut link = |a: usize, b: usize, y: f64| {
            coupling[a][b] = y;
            coupling[b][a] = y;
        };
        for mg in 0..3 {
            let base = mg * 3;
            link(base, base + 1, 0.8);
            link(base, base + 2, 0.8);
            link(base + 1, base + 2, 0.8);
        }
        link(2, 3, 0.2);
        link(5, 6, 0.2);
        link(8, 0, 0.2);

        let load_offset = vec![0.010, 0.014, 0.018, 0.011, 0.015, 0.019, 0.012, 0.016, 0.020];

        NetworkModel {
            n_buses,
            n_phases: 3,
            inverters,
            sensitivity,
            coupling,
            load_offset,
            tau: 1.0,
            dt: 0.25,
            mg_of_bus,
        }
    }
}

/// Dynamic simulation state: per-bus per-phase voltage magnitudes, per
/// inverter powers, system frequency and the step clock.
#[derive(Debug, Clone, PartialEq)]
pub struct GridState {
    /// Bus voltages, pu, flattened bus-major: `v[bus * n_phases + phase]`.
    pub v: Vec<f64>,
    /// Per-inverter reactive power, pu.
    pub q: Vec<f64>,
    /// Per-inverter active power, pu of rating.
    pub p: Vec<f64>,
    /// System frequency, pu.
    pub omega: f64,
    /// Step index.
    pub t: u32,
}

impl GridState {
    /// Flat voltage index for (bus, phase).
    pub fn v_index(bus: usize, phase: usize, n_phases: usize) -> usize {
        bus * n_phases + phase
    }

    pub fn validate(&self, net: &NetworkModel) -> Result<()> {
        if self.v.len() != net.n_buses * net.n_phases
            || self.q.len() != net.n_inverters()
            || self.p.len() != net.n_inverters()
        {
            return Err(Error::Dimension("grid state shapes do not match network".into()));
        }
        if self.v.iter().any(|&v| !(v > 0.0 && v < 2.0)) {
            return Err(Error::Domain("bus voltage outside (0, 2) pu".into()));
        }
        if !(self.omega > 0.9 && self.omega < 1.1) {
            return Err(Error::Domain("frequency outside (0.9, 1.1) pu".into()));
        }
        Ok(())
    }
}

/// Per-inverter (P_set, V_set) reference pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SetpointVector {
    pub p_set: Vec<f64>,
    pub v_set: Vec<f64>,
}

impl SetpointVector {
    pub fn zeros(n: usize) -> Self {
        SetpointVector { p_set: vec![0.0; n], v_set: vec![0.0; n] }
    }

    /// The nominal references recorded in the inverter specs.
    pub fn nominal_of(net: &NetworkModel) -> Self {
        SetpointVector {
            p_set: net.inverters.iter().map(|s| s.p_set_nom).collect(),
            v_set: net.inverters.iter().map(|s| s.v_set_nom).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.p_set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_set.is_empty()
    }
}

/// Frequency droop: ω_ref = ω_nom − m_P·(P − P_set).
pub fn droop_frequency_ref(spec: &InverterSpec, p: f64, p_set_eff: f64) -> f64 {
    spec.omega_nom - spec.m_p * (p - p_set_eff)
}

/// Voltage droop: V_ref = V_set − m_Q·(Q − Q_nom).
pub fn droop_voltage_ref(spec: &InverterSpec, q: f64, v_set_eff: f64) -> f64 {
    v_set_eff - spec.m_q * (q - spec.q_nom)
}

/// Effective set-points: nominal + resilient residual + attack, then the
/// set-point limiter. Non-finite inputs are rejected.
pub fn compose_setpoints(
    nominal: &SetpointVector,
    res: &SetpointVector,
    attack: &SetpointVector,
) -> Result<SetpointVector> {
    let n = nominal.len();
    if res.len() != n || attack.len() != n {
        return Err(Error::Dimension(format!(
            "setpoint vectors disagree: nominal {n}, res {}, attack {}",
            res.len(),
            attack.len()
        )));
    }
    let mut out = SetpointVector::zeros(n);
    for i in 0..n {
        // grouping the perturbations keeps the sum exactly symmetric in
        // residual and attack
        let p = nominal.p_set[i] + (res.p_set[i] + attack.p_set[i]);
        let v = nominal.v_set[i] + (res.v_set[i] + attack.v_set[i]);
        if !p.is_finite() || !v.is_finite() {
            return Err(Error::Domain(format!("non-finite set-point for inverter {i}")));
        }
        out.p_set[i] = p.clamp(P_SET_LIMITS.0, P_SET_LIMITS.1);
        out.v_set[i] = v.clamp(V_SET_LIMITS.0, V_SET_LIMITS.1);
    }
    Ok(out)
}

/// Per-bus voltage targets: V_tgt = G·v_eff − load_scale·d.
pub fn solve_targets(net: &NetworkModel, v_eff: &[f64], load_scale: f64) -> Result<Vec<f64>> {
    if v_eff.len() != net.n_inverters() {
        return Err(Error::Dimension(format!(
            "v_eff has {} entries, network has {} inverters",
            v_eff.len(),
            net.n_inverters()
        )));
    }
    if v_eff.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite effective voltage reference".into()));
    }
    Ok(net
        .sensitivity
        .iter()
        .zip(&net.load_offset)
        .map(|(row, d)| row.iter().zip(v_eff).map(|(g, v)| g * v).sum::<f64>() - load_scale * d)
        .collect())
}

/// Small fixed per-phase spread of the load offset (±0.2% across phases),
/// keeping the three phases distinguishable while staying balanced.
pub fn phase_load_skew(phase: usize, n_phases: usize) -> f64 {
    if n_phases <= 1 {
        0.0
    } else {
        -0.002 + 0.004 * phase as f64 / (n_phases - 1) as f64
    }
}

/// One explicit simulation step:
/// reactive powers from the previous voltages, voltage droop to effective
/// references, sensitivity solve to per-bus targets, first-order lag on the
/// voltages, and rating-weighted droop frequency over the GFMs.
pub fn step_dynamics(
    state: &GridState,
    setpoints: &SetpointVector,
    net: &NetworkModel,
    dt: f64,
) -> Result<GridState> {
    if !(dt > 0.0) || dt / net.tau > 1.0 {
        return Err(Error::Domain(format!("need 0 < dt <= tau, got dt={dt}, tau={}", net.tau)));
    }
    let (m, n, ph) = (net.n_buses, net.n_inverters(), net.n_phases);
    if setpoints.len() != n || state.v.len() != m * ph || state.p.len() != n {
        return Err(Error::Dimension("state/setpoint shapes do not match network".into()));
    }

    // Phase-mean bus voltages drive the reactive-flow approximation.
    let vbar: Vec<f64> = (0..m)
        .map(|bus| state.v[bus * ph..(bus + 1) * ph].iter().sum::<f64>() / ph as f64)
        .collect();

    let q: Vec<f64> = net
        .inverters
        .iter()
        .map(|inv| {
            let vb = vbar[inv.bus];
            net.coupling[inv.bus].iter().zip(&vbar).map(|(b, vj)| b * (vb - vj)).sum::<f64>()
        })
        .collect();

    let v_eff: Vec<f64> = net
        .inverters
        .iter()
        .zip(&q)
        .zip(&setpoints.v_set)
        .map(|((inv, &qi), &vs)| droop_voltage_ref(inv, qi, vs))
        .collect();

    let base = solve_targets(net, &v_eff, 1.0)?;

    let lambda = dt / net.tau;
    let mut v = state.v.clone();
    for bus in 0..m {
        for phase in 0..ph {
            let tgt = base[bus] - net.load_offset[bus] * phase_load_skew(phase, ph);
            let idx = GridState::v_index(bus, phase, ph);
            v[idx] += lambda * (tgt - v[idx]);
        }
    }

    let mut omega_num = 0.0;
    let mut omega_den = 0.0;
    for inv in &net.inverters {
        if inv.kind == InverterKind::Gfm {
            omega_num += inv.rating_kw * droop_frequency_ref(inv, state.p[inv.id], setpoints.p_set[inv.id]);
            omega_den += inv.rating_kw;
        }
    }
    let omega = if omega_den > 0.0 { omega_num / omega_den } else { state.omega };

    Ok(GridState { v, q, p: state.p.clone(), omega, t: state.t + 1 })
}

/// Iterate the dynamics under nominal set-points (zero residual, zero
/// attack) until the voltages stop moving. Returns the converged state with
/// the clock reset to zero. The per-phase voltage field of the result is
/// the `V_ss` every environment normalizes against.
pub fn compute_steady_state(net: &NetworkModel, nominal: &SetpointVector) -> Result<GridState> {
    let init = GridState {
        v: vec![1.0; net.n_buses * net.n_phases],
        q: vec![0.0; net.n_inverters()],
        p: net.inverters.iter().map(|s| s.p_set_nom).collect(),
        omega: 1.0,
        t: 0,
    };
    steady_state_from(net, nominal, init)
}

/// Same fixed-point iteration started from a caller-provided state; the
/// converged result does not depend on it (the lag map is a contraction
/// for well-posed networks).
pub fn steady_state_from(net: &NetworkModel, nominal: &SetpointVector, init: GridState) -> Result<GridState> {
    let sp = compose_setpoints(nominal, &SetpointVector::zeros(nominal.len()), &SetpointVector::zeros(nominal.len()))?;
    let mut state = init;
    for _ in 0..STEADY_STATE_MAX_ITERS {
        let next = step_dynamics(&state, &sp, net, net.dt)?;
        let delta = state
            .v
            .iter()
            .zip(&next.v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        state = next;
        if delta < STEADY_STATE_TOL {
            state.t = 0;
            return Ok(state);
        }
    }
    Err(Error::Convergence(format!(
        "steady state not reached within {STEADY_STATE_MAX_ITERS} iterations"
    )))
}

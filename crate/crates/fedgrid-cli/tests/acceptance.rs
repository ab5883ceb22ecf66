//! Acceptance suite.
//!
//! Runs every acceptance criterion at its stated tolerance and prints one
//! pass/fail line per criterion. Criteria 6 and 7 train the full default
//! configuration (3 seeds × 2 modes, ~30k env steps each) and take the
//! bulk of the runtime; expect tens of minutes on a laptop-class CPU.

use std::time::Instant;

use fedgrid_cli::commands::train::write_reward_csv;
use fedgrid_cli::config::ExperimentConfig;
use fedgrid_cli::experiment::{
    build_eval_env, build_network, evaluate_pool, median, run_training, summarize, test_pool, train_pool,
};
use fedgrid_cli::checkpoint;
use fedgrid_core::env::{AttackScenario, EnvConfig, Environment};
use fedgrid_core::fed::{
    clip_mode_for, federated_average, FedMode, TrainConfig, TrainLog, TrainObserver,
};
use fedgrid_core::gradcheck;
use fedgrid_core::grid::{compute_steady_state, solve_targets, step_dynamics, NetworkModel, SetpointVector};
use fedgrid_core::rollout::{run_episode, RolloutPolicy};
use fedgrid_core::sac::AgentBundle;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

struct Outcome {
    passed: bool,
    detail: String,
}

fn ok(detail: String) -> Outcome {
    Outcome { passed: true, detail }
}

fn fail(detail: String) -> Outcome {
    Outcome { passed: false, detail }
}

fn report(results: &mut Vec<(usize, &'static str, Outcome)>, id: usize, name: &'static str, out: Outcome) {
    println!(
        "criterion {id} [{}] {name}: {}",
        if out.passed { "PASS" } else { "FAIL" },
        out.detail
    );
    results.push((id, name, out));
}

#[test]
fn acceptance_criteria() {
    let mut results = Vec::new();

    report(&mut results, 1, "gradient correctness", criterion_1());
    report(&mut results, 2, "policy density normalization", criterion_2());
    report(&mut results, 3, "simulator fidelity", criterion_3());
    report(&mut results, 4, "attack non-vacuity", criterion_4());
    report(&mut results, 5, "federation semantics", criterion_5());

    let (c6, fed_agents) = criterion_6();
    report(&mut results, 6, "fedsac vs decentralized", c6);
    report(&mut results, 7, "recovery success", criterion_7(fed_agents));
    report(&mut results, 8, "determinism and persistence", criterion_8());

    let failed: Vec<String> = results
        .iter()
        .filter(|(_, _, o)| !o.passed)
        .map(|(id, name, _)| format!("criterion {id} ({name})"))
        .collect();
    assert!(failed.is_empty(), "failed: {}", failed.join(", "));
}

/// Gradcheck: every gradient path within tolerance of central finite
/// differences, in under a minute.
fn criterion_1() -> Outcome {
    let start = Instant::now();
    let rep = gradcheck::run(20, false, 0xACCE);
    let elapsed = start.elapsed().as_secs_f64();
    let detail: Vec<String> = rep
        .checks
        .iter()
        .map(|c| format!("{}={:.2e} (tol {:.0e})", c.name, c.max_rel_err, c.tolerance))
        .collect();
    let detail = format!("{} in {elapsed:.1}s", detail.join(", "));
    if rep.passed() && elapsed < 60.0 {
        ok(detail)
    } else {
        fail(detail)
    }
}

/// The 1-D squashed-Gaussian log-density integrates to 1 ± 1e-3 for 10
/// random heads.
fn criterion_2() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0xACCE + 2);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let mu = rng.gen_range(-2.0..2.0);
        let log_std = rng.gen_range(-2.0..0.7);
        let integral = gradcheck::squashed_density_integral(mu, log_std);
        worst = worst.max((integral - 1.0).abs());
    }
    let detail = format!("max |∫ p(a) da − 1| = {worst:.2e} over 10 heads (tol 1e-3)");
    if worst < 1e-3 {
        ok(detail)
    } else {
        fail(detail)
    }
}

/// Quiet episodes hold the steady state, the steady state is a verified
/// fixed point, and the sensitivity solve matches a dense oracle.
fn criterion_3() -> Outcome {
    let net = NetworkModel::nine_bus_default();
    let nominal = SetpointVector::nominal_of(&net);

    // (a) no-attack, no-action episode
    let mut env = Environment::new(net.clone(), EnvConfig::default()).unwrap();
    let v_ss = env.steady_state().v.clone();
    let scenario = AttackScenario::no_attack(&net).unwrap();
    let mut max_dev: f64 = 0.0;
    run_episode(&mut env, Some(scenario), RolloutPolicy::Zero, |_, state| {
        for (v, s) in state.v.iter().zip(&v_ss) {
            max_dev = max_dev.max((v - s).abs());
        }
    })
    .unwrap();

    // (b) converged state is a fixed point under one more step
    let ss = compute_steady_state(&net, &nominal).unwrap();
    let next = step_dynamics(&ss, &nominal, &net, net.dt).unwrap();
    let fp_dev = ss
        .v
        .iter()
        .zip(&next.v)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);

    // (c) sensitivity solve vs an independently written dense mat-vec
    let mut rng = StdRng::seed_from_u64(0xACCE + 3);
    let mut solver_err: f64 = 0.0;
    for _ in 0..20 {
        let v_eff: Vec<f64> = (0..net.n_inverters()).map(|_| rng.gen_range(0.8..1.2)).collect();
        let load_scale = rng.gen_range(0.0..2.0);
        let got = solve_targets(&net, &v_eff, load_scale).unwrap();
        for m in 0..net.n_buses {
            let mut acc = 0.0;
            for j in 0..net.n_inverters() {
                acc += net.sensitivity[m][j] * v_eff[j];
            }
            acc -= load_scale * net.load_offset[m];
            solver_err = solver_err.max((got[m] - acc).abs());
        }
    }

    let detail = format!(
        "quiet-episode max|V−Vss|={max_dev:.2e} (tol 1e-6), fixed-point dev={fp_dev:.2e} (tol 1e-8), solver vs oracle={solver_err:.2e} (tol 1e-12)"
    );
    if max_dev < 1e-6 && fp_dev < 1e-8 && solver_err < 1e-12 {
        ok(detail)
    } else {
        fail(detail)
    }
}

/// Every scenario in the default 7-element training pool, run with zero
/// actions, knocks at least one attacked-microgrid bus out of the band
/// within 5 steps of the onset.
fn criterion_4() -> Outcome {
    let cfg = ExperimentConfig::default_nine_bus();
    let net = build_network(&cfg).unwrap();
    let pool = train_pool(&cfg, &net).unwrap();
    if pool.len() != 7 {
        return fail(format!("default training pool has {} scenarios, expected 7", pool.len()));
    }
    let proto = Environment::new(net.clone(), cfg.env.clone()).unwrap();
    let mut worst_exit: i64 = -1;
    for scenario in &pool {
        let mg = net.inverters[scenario.inverter_id].mg_id;
        let buses: Vec<usize> = net.buses_of_mg(mg);
        let mut env = proto.clone();
        let v_ss = env.steady_state().v.clone();
        let (band_lo, band_hi) = (env.cfg().band_lo, env.cfg().band_hi);
        let n_phases = net.n_phases;
        let t_a = scenario.t_a;
        let mut first_exit: Option<u32> = None;
        run_episode(&mut env, Some(scenario.clone()), RolloutPolicy::Zero, |t, state| {
            if first_exit.is_some() || t <= t_a {
                return;
            }
            let outside = buses.iter().any(|&bus| {
                (0..n_phases).any(|ph| {
                    let i = bus * n_phases + ph;
                    state.v[i] < band_lo * v_ss[i] || state.v[i] > band_hi * v_ss[i]
                })
            });
            if outside {
                first_exit = Some(t);
            }
        })
        .unwrap();
        match first_exit {
            Some(t) if t <= t_a + 5 => worst_exit = worst_exit.max((t - t_a) as i64),
            Some(t) => {
                return fail(format!(
                    "scenario on inverter {} exits band only at step {t} (onset {})",
                    scenario.inverter_id, t_a
                ))
            }
            None => {
                return fail(format!(
                    "scenario on inverter {} (magnitude {}) never leaves the band",
                    scenario.inverter_id, scenario.magnitude
                ))
            }
        }
    }
    ok(format!("all 7 scenarios exit the band within {worst_exit} steps of onset (limit 5)"))
}

/// Observer that verifies exact equality of the active critic/target
/// parameters across agents right after every federation barrier.
struct EqualityProbe {
    cfg: TrainConfig,
    total_steps: u64,
    barriers: Vec<u64>,
    max_diff: f64,
}

impl TrainObserver for EqualityProbe {
    fn on_federation(&mut self, step: u64, agents: &[AgentBundle]) {
        self.barriers.push(step);
        let clip = clip_mode_for(step, self.total_steps, &self.cfg);
        for &idx in clip.active_indices() {
            let c0 = agents[0].critics[idx].flatten();
            let t0 = agents[0].targets[idx].flatten();
            for a in &agents[1..] {
                for (x, y) in a.critics[idx].flatten().iter().zip(&c0) {
                    self.max_diff = self.max_diff.max((x - y).abs());
                }
                for (x, y) in a.targets[idx].flatten().iter().zip(&t0) {
                    self.max_diff = self.max_diff.max((x - y).abs());
                }
            }
        }
    }
}

/// Federation semantics on a 3-agent toy run of ~500 steps, plus the exact
/// algebraic properties of the averaging operator.
fn criterion_5() -> Outcome {
    let cfg = ExperimentConfig::default_nine_bus();
    let toy = TrainConfig {
        episodes: 13, // 520 env steps
        warmup_transitions: 128,
        hidden: vec![32, 32],
        hyper: fedgrid_core::sac::SacHyper { batch_size: 128, ..Default::default() },
        ..cfg.train.clone()
    };

    // federated run: exact equality at every barrier
    let mut fed_cfg = ExperimentConfig { train: toy.clone(), ..cfg.clone() };
    fed_cfg.train.schedule.mode = FedMode::Federated;
    let mut probe = EqualityProbe {
        cfg: fed_cfg.train.clone(),
        total_steps: fed_cfg.train.total_steps(fed_cfg.env.episode_len),
        barriers: Vec::new(),
        max_diff: 0.0,
    };
    if let Err(e) = run_training(&fed_cfg, 11, FedMode::Federated, &mut probe) {
        return fail(format!("federated toy run failed: {e:#}"));
    }
    let expected: Vec<u64> = (100..=520).step_by(10).collect();
    if probe.barriers != expected {
        return fail(format!(
            "barriers fired at {:?}, expected every 10 steps from 100 to 520",
            probe.barriers
        ));
    }
    if probe.max_diff != 0.0 {
        return fail(format!("active parameters differed by {} after a barrier", probe.max_diff));
    }

    // decentralized run with the same master seed: critics must differ
    let (_, dec_agents) = match run_training(&fed_cfg, 11, FedMode::Decentralized, &mut ()) {
        Ok(v) => v,
        Err(e) => return fail(format!("decentralized toy run failed: {e:#}")),
    };
    for i in 0..dec_agents.len() {
        for j in i + 1..dec_agents.len() {
            if dec_agents[i].critics[0].flatten() == dec_agents[j].critics[0].flatten() {
                return fail(format!("decentralized agents {i} and {j} ended with equal critics"));
            }
        }
    }

    // identity on equal snapshots, exact permutation invariance
    let snap: Vec<f64> = (0..257).map(|i| ((i as f64) * 0.7133).sin() / 3.0).collect();
    let identity = federated_average(&[snap.clone(), snap.clone(), snap.clone()]).unwrap();
    if identity != snap {
        return fail("averaging identical snapshots is not the identity".into());
    }
    let a: Vec<f64> = (0..257).map(|i| ((i as f64) * 0.31).cos()).collect();
    let b: Vec<f64> = (0..257).map(|i| 1.0 / (i as f64 + 3.0)).collect();
    let fwd = federated_average(&[a.clone(), b.clone(), snap.clone()]).unwrap();
    let rev = federated_average(&[snap, b, a]).unwrap();
    if fwd != rev {
        return fail("federated average is not permutation-invariant".into());
    }

    ok(format!(
        "{} barriers exactly equal, decentralized runs diverge, averaging identity/permutation exact",
        expected.len()
    ))
}

fn final_decile_mean_per_agent(logs: &[&TrainLog]) -> Vec<f64> {
    let n_agents = logs[0].episode_rewards[0].len();
    let mut sums = vec![0.0; n_agents];
    let mut count = 0usize;
    for log in logs {
        let n = log.episode_rewards.len();
        let tail = n.div_ceil(10);
        for ep in &log.episode_rewards[n - tail..] {
            for (s, r) in sums.iter_mut().zip(ep) {
                *s += r;
            }
            count += 1;
        }
    }
    sums.iter().map(|s| s / count as f64).collect()
}

/// Full default-config comparison: FedSAC vs decentralized over 3 seeds.
/// Returns the federated seed-1 agents for criterion 7.
fn criterion_6() -> (Outcome, Option<Vec<AgentBundle>>) {
    let cfg = ExperimentConfig::default_nine_bus();
    let mut fed_logs = Vec::new();
    let mut dec_logs = Vec::new();
    let mut kept_agents = None;

    for &seed in &cfg.seeds {
        let start = Instant::now();
        match run_training(&cfg, seed, FedMode::Federated, &mut ()) {
            Ok((log, agents)) => {
                eprintln!(
                    "  [acceptance] federated seed {seed}: {} episodes in {:.0}s",
                    log.episode_rewards.len(),
                    start.elapsed().as_secs_f64()
                );
                if kept_agents.is_none() {
                    kept_agents = Some(agents);
                }
                fed_logs.push(log);
            }
            Err(e) => return (fail(format!("federated run (seed {seed}) failed: {e:#}")), None),
        }
        let start = Instant::now();
        match run_training(&cfg, seed, FedMode::Decentralized, &mut ()) {
            Ok((log, _)) => {
                eprintln!(
                    "  [acceptance] decentralized seed {seed}: {} episodes in {:.0}s",
                    log.episode_rewards.len(),
                    start.elapsed().as_secs_f64()
                );
                dec_logs.push(log);
            }
            Err(e) => return (fail(format!("decentralized run (seed {seed}) failed: {e:#}")), None),
        }
    }

    let fed = final_decile_mean_per_agent(&fed_logs.iter().collect::<Vec<_>>());
    let dec = final_decile_mean_per_agent(&dec_logs.iter().collect::<Vec<_>>());
    let wins = fed.iter().zip(&dec).filter(|(f, d)| f >= d).count();
    let fed_all: f64 = fed.iter().sum::<f64>() / fed.len() as f64;
    let dec_all: f64 = dec.iter().sum::<f64>() / dec.len() as f64;
    let detail = format!(
        "final-decile per-agent means fed=[{}] dec=[{}], fed wins {wins}/3 agents, all-agent fed {fed_all:.3} vs dec {dec_all:.3}",
        fed.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(", "),
        dec.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(", "),
    );
    if wins >= 2 && fed_all > dec_all {
        (ok(detail), kept_agents)
    } else {
        (fail(detail), kept_agents)
    }
}

/// Trained FedSAC policy on 200 held-out scenarios: ≥60% recovered and a
/// better median than the zero-action baseline.
fn criterion_7(agents: Option<Vec<AgentBundle>>) -> Outcome {
    let Some(agents) = agents else {
        return fail("no trained agents available (criterion 6 training failed)".into());
    };
    let cfg = ExperimentConfig::default_nine_bus();
    let env = match build_eval_env(&cfg) {
        Ok(e) => e,
        Err(e) => return fail(format!("building eval environment failed: {e:#}")),
    };
    let pool = match test_pool(&cfg, env.net(), 200) {
        Ok(p) => p,
        Err(e) => return fail(format!("building test pool failed: {e:#}")),
    };
    let evals = match evaluate_pool(&env, &agents, &pool) {
        Ok(v) => v,
        Err(e) => return fail(format!("evaluation failed: {e:#}")),
    };
    let summary = summarize(&evals);
    let policy_median = median(&evals.iter().map(|e| e.total_reward).collect::<Vec<_>>());
    let baseline_median = median(&evals.iter().map(|e| e.baseline_total).collect::<Vec<_>>());
    let detail = format!(
        "recovered {:.1}% (need ≥60%), median reward {policy_median:.3} vs baseline {baseline_median:.3}",
        100.0 * summary.fraction_recovered
    );
    if summary.fraction_recovered >= 0.60 && policy_median > baseline_median {
        ok(detail)
    } else {
        fail(detail)
    }
}

/// Byte-identical artifacts from identical (config, seed); checkpoint
/// round-trip preserves behavior exactly.
fn criterion_8() -> Outcome {
    let dir = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => return fail(format!("tempdir failed: {e}")),
    };
    let mut cfg = ExperimentConfig::default_nine_bus();
    cfg.train.episodes = 10;
    cfg.train.warmup_transitions = 200;
    cfg.train.hidden = vec![16, 16];
    cfg.train.hyper.batch_size = 64;
    cfg.output = dir.path().to_path_buf();

    // identical runs → identical reward CSVs
    let (log_a, agents_a) = match run_training(&cfg, 3, FedMode::Federated, &mut ()) {
        Ok(v) => v,
        Err(e) => return fail(format!("run A failed: {e:#}")),
    };
    let (log_b, _) = match run_training(&cfg, 3, FedMode::Federated, &mut ()) {
        Ok(v) => v,
        Err(e) => return fail(format!("run B failed: {e:#}")),
    };
    let csv_a = dir.path().join("a.csv");
    let csv_b = dir.path().join("b.csv");
    if let Err(e) = write_reward_csv(&csv_a, &log_a, 3, FedMode::Federated)
        .and_then(|_| write_reward_csv(&csv_b, &log_b, 3, FedMode::Federated))
    {
        return fail(format!("writing reward CSVs failed: {e:#}"));
    }
    let bytes_a = std::fs::read(&csv_a).unwrap();
    if bytes_a != std::fs::read(&csv_b).unwrap() {
        return fail("reward CSVs differ between identical (config, seed) runs".into());
    }

    // checkpoint round trip: behavior equality on probe inputs and
    // byte-identical re-save
    let ck1 = dir.path().join("ck1.fgck");
    let ck2 = dir.path().join("ck2.fgck");
    if let Err(e) = checkpoint::save(&ck1, &agents_a, "{\"echo\":true}", log_a.total_steps) {
        return fail(format!("checkpoint save failed: {e:#}"));
    }
    let loaded = match checkpoint::load(&ck1) {
        Ok(c) => c,
        Err(e) => return fail(format!("checkpoint load failed: {e:#}")),
    };
    let mut rng = StdRng::seed_from_u64(99);
    for _ in 0..32 {
        let probe: Vec<f64> = (0..9).map(|_| rng.gen_range(0.9..1.1)).collect();
        for (a, b) in agents_a.iter().zip(&loaded.agents) {
            let x = a.act_deterministic(&probe).unwrap();
            let y = b.act_deterministic(&probe).unwrap();
            if x != y {
                return fail(format!("loaded agent {} acts differently on a probe input", a.id));
            }
        }
    }
    if let Err(e) = checkpoint::save(&ck2, &loaded.agents, &loaded.config_echo, loaded.global_step) {
        return fail(format!("checkpoint re-save failed: {e:#}"));
    }
    if std::fs::read(&ck1).unwrap() != std::fs::read(&ck2).unwrap() {
        return fail("save→load→save is not byte-identical".into());
    }

    ok("byte-identical reward CSVs; checkpoint round-trip exact on 32 probe inputs".into())
}

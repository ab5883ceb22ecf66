//! Throughput probe: default-sized agents on the nine-bus environment.

use fedgrid_core::env::{build_scenario_pool, EnvConfig, Environment};
use fedgrid_core::fed::{make_agents, train, FedMode, FedSchedule, TrainConfig};
use fedgrid_core::grid::NetworkModel;
use rand::rngs::StdRng;
use rand::SeedableRng;
use std::time::Instant;

fn main() {
    let episodes: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(25);
    let cfg = TrainConfig {
        episodes,
        schedule: FedSchedule { mode: FedMode::Federated, ..Default::default() },
        ..Default::default()
    };
    let net = NetworkModel::nine_bus_default();
    let env_cfg = EnvConfig::default();
    let mut rng = StdRng::seed_from_u64(7);
    let pool = build_scenario_pool(&net, &env_cfg, 7, &mut rng).unwrap();
    let mut env = Environment::new(net, env_cfg).unwrap();
    env.set_pool(pool).unwrap();
    let mut agents = make_agents(&env, &cfg, 1);

    let start = Instant::now();
    let log = train(&mut env, &mut agents, &cfg, &mut ()).unwrap();
    let dt = start.elapsed().as_secs_f64();
    let steps = log.total_steps;
    println!(
        "{steps} env steps in {dt:.2}s  ({:.0} steps/s, est {:.1} min for 30k steps)",
        steps as f64 / dt,
        30_000.0 / (steps as f64 / dt) / 60.0
    );
}

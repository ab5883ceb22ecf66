//! Diagnostic runner: prints learning signals during a shortened training
//! run and evaluates the result. For experimentation only.

use fedgrid_cli::config::ExperimentConfig;
use fedgrid_cli::experiment::{build_env, build_eval_env, evaluate_pool, summarize, test_pool};
use fedgrid_core::fed::{clip_mode_for, federate, make_agents, FedMode, TrainConfig};
use fedgrid_core::sac::{sac_update_step, Transition};

fn main() {
    let mut args = std::env::args().skip(1);
    let episodes: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(300);
    let rho: f64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(0.005);
    let zeta: f64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(0.2);

    let mut cfg = ExperimentConfig::default_nine_bus();
    cfg.train.episodes = episodes;
    cfg.train.hyper.rho = rho;
    cfg.train.hyper.zeta = zeta;
    println!("episodes={episodes} rho={rho} zeta={zeta}");

    let mut env = build_env(&cfg, 1).unwrap();
    let train_cfg = TrainConfig { ..cfg.train.clone() };
    let mut agents = make_agents(&env, &train_cfg, 1);
    let total = train_cfg.total_steps(env.cfg().episode_len);

    let mut obs = env.reset(None).unwrap();
    let mut acc = vec![0.0; 3];
    let mut episode = 0usize;
    let mut closs_acc = 0.0;
    let mut ploss_acc = 0.0;
    let mut nupd = 0usize;
    for step in 1..=total {
        let mut actions = Vec::new();
        for (a, o) in agents.iter_mut().zip(&obs) {
            actions.push(a.select_action(o).unwrap());
        }
        let res = env.step(&actions).unwrap();
        for (alpha, a) in agents.iter_mut().enumerate() {
            a.buffer
                .push(Transition {
                    o: obs[alpha].clone(),
                    u: actions[alpha].clone(),
                    r: res.rewards[alpha],
                    o2: res.obs[alpha].clone(),
                    d: if res.done[alpha] { 1.0 } else { 0.0 },
                })
                .unwrap();
            acc[alpha] += res.rewards[alpha];
        }
        obs = res.obs;
        let done = res.done.iter().all(|&d| d);
        if done {
            episode += 1;
            if episode % 50 == 0 {
                // probe: deterministic action at the quiet observation and at a dipped one
                let quiet = vec![1.0; 9];
                let mut dipped = vec![1.0; 9];
                for v in dipped.iter_mut() {
                    *v = 0.95;
                }
                let a_quiet = agents[0].act_deterministic(&quiet).unwrap()[0];
                let a_dip = agents[0].act_deterministic(&dipped).unwrap()[0];
                println!(
                    "ep {episode:4} rewards [{:+.2} {:+.2} {:+.2}] closs {:.4} ploss {:+.3} a(quiet) {:+.3} a(dip) {:+.3}",
                    acc[0], acc[1], acc[2],
                    closs_acc / nupd.max(1) as f64,
                    ploss_acc / nupd.max(1) as f64,
                    a_quiet, a_dip
                );
                closs_acc = 0.0;
                ploss_acc = 0.0;
                nupd = 0;
            }
            acc = vec![0.0; 3];
            if episode < train_cfg.episodes {
                obs = env.reset(None).unwrap();
            }
        }
        if agents[0].buffer.len() >= train_cfg.warmup_transitions {
            let clip = clip_mode_for(step, total, &train_cfg);
            for a in agents.iter_mut() {
                let stats = sac_update_step(a, &train_cfg.hyper, clip).unwrap();
                if a.id == 0 {
                    closs_acc += stats.critic_losses[0].unwrap_or(0.0);
                    ploss_acc += stats.policy_loss;
                    nupd += 1;
                }
            }
        }
        if train_cfg.schedule.fires_at(step) {
            federate(&mut agents, clip_mode_for(step, total, &train_cfg)).unwrap();
        }
    }

    let eval_env = build_eval_env(&cfg).unwrap();
    let pool = test_pool(&cfg, eval_env.net(), 100).unwrap();
    let evals = evaluate_pool(&eval_env, &agents, &pool).unwrap();
    let s = summarize(&evals);
    println!(
        "EVAL n={} median={:.3} recovered={:.1}% | baseline median={:.3}",
        s.n_scenarios,
        s.median_reward,
        100.0 * s.fraction_recovered,
        s.baseline_median
    );
}

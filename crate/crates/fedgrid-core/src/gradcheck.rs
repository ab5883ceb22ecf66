//! Self-check suites: analytic gradients against central finite
//! differences, the forward pass against an independent matrix oracle, and
//! quadrature of the squashed-Gaussian density. Used by the CLI `gradcheck`
//! subcommand and the acceptance tests.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::nn::{Mat, Mlp, PolicyHead, LOG_STD_MAX, LOG_STD_MIN};
use crate::sac::{critic_loss_and_grads, policy_objective, policy_objective_grads};

const FD_STEP: f64 = 1e-5;
/// Redraw nets whose hidden pre-activations sit this close to a relu kink;
/// finite differences would straddle the non-smooth point there.
const KINK_GUARD: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub trials: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err < self.tolerance
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub checks: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }
}

/// Run all suites with `trials` random networks each. `corrupt` perturbs
/// the analytic gradients before comparison — a hook for verifying that
/// the harness actually detects broken gradients.
pub fn run(trials: usize, corrupt: bool, seed: u64) -> GradcheckReport {
    let mut rng = StdRng::seed_from_u64(seed);
    GradcheckReport {
        checks: vec![
            forward_oracle_check(trials, &mut rng),
            backward_fd_check(trials, corrupt, &mut rng),
            critic_loss_fd_check(trials, corrupt, &mut rng),
            policy_objective_fd_check(trials, corrupt, &mut rng),
        ],
    }
}

pub fn run_default(seed: u64) -> GradcheckReport {
    run(20, false, seed)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Plain nested-loop forward pass, independent of the `Mat` kernels.
/// Returns per-layer pre-activations and the output.
fn naive_forward(net: &Mlp, x: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut preacts = Vec::new();
    let mut cur = x.to_vec();
    let n_layers = net.layers.len();
    for (l, layer) in net.layers.iter().enumerate() {
        let out_dim = layer.w.rows();
        let in_dim = layer.w.cols();
        let mut z = vec![0.0; out_dim];
        for o in 0..out_dim {
            let mut acc = layer.b[o];
            for k in 0..in_dim {
                acc += layer.w.row(o)[k] * cur[k];
            }
            z[o] = acc;
        }
        preacts.push(z.clone());
        if l + 1 < n_layers {
            for v in &mut z {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        cur = z;
    }
    (preacts, cur)
}

fn min_abs_preact(net: &Mlp, inputs: &Mat) -> f64 {
    let mut min = f64::INFINITY;
    let hidden_layers = net.layers.len() - 1;
    for i in 0..inputs.rows() {
        let (preacts, _) = naive_forward(net, inputs.row(i));
        for z in preacts.iter().take(hidden_layers) {
            for v in z {
                min = min.min(v.abs());
            }
        }
    }
    min
}

fn random_input(rows: usize, cols: usize, rng: &mut StdRng) -> Mat {
    Mat::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Net + inputs with all hidden pre-activations clear of relu kinks.
fn smooth_net(dims: &[usize], batch: usize, rng: &mut StdRng) -> (Mlp, Mat) {
    for _ in 0..200 {
        let net = Mlp::new(dims, rng);
        let x = random_input(batch, dims[0], rng);
        if min_abs_preact(&net, &x) > KINK_GUARD {
            return (net, x);
        }
    }
    // overwhelmingly unlikely; accept the last draw rather than loop forever
    let net = Mlp::new(dims, rng);
    let x = random_input(batch, dims[0], rng);
    (net, x)
}

fn forward_oracle_check(trials: usize, rng: &mut StdRng) -> CheckResult {
    let mut max_rel: f64 = 0.0;
    for _ in 0..trials {
        let dims = [rng.gen_range(2..5), rng.gen_range(3..8), rng.gen_range(3..8), rng.gen_range(1..4)];
        let net = Mlp::new(&dims, rng);
        let x = random_input(3, dims[0], rng);
        let out = net.forward_only(&x).unwrap();
        for i in 0..x.rows() {
            let (_, expect) = naive_forward(&net, x.row(i));
            for (a, b) in out.row(i).iter().zip(&expect) {
                max_rel = max_rel.max(rel_err(*a, *b));
            }
        }
    }
    CheckResult { name: "mlp_forward vs dense oracle", trials, max_rel_err: max_rel, tolerance: 1e-12 }
}

fn backward_fd_check(trials: usize, corrupt: bool, rng: &mut StdRng) -> CheckResult {
    let mut max_rel: f64 = 0.0;
    for _ in 0..trials {
        let dims = [3, 6, 5, 2];
        let (net, x) = smooth_net(&dims, 4, rng);
        // random linear readout makes the objective scalar
        let proj = random_input(4, dims[3], rng);
        let objective = |net: &Mlp| -> f64 {
            let out = net.forward_only(&x).unwrap();
            out.data().iter().zip(proj.data()).map(|(o, p)| o * p).sum()
        };
        let (_, cache) = net.forward(&x).unwrap();
        let (grads, _) = net.backward(&cache, &proj).unwrap();
        let mut flat = grads.flatten();
        if corrupt {
            flat[0] += 1e-3;
        }
        max_rel = max_rel.max(max_fd_error(&net, &flat, objective));
    }
    CheckResult { name: "mlp_backward vs finite differences", trials, max_rel_err: max_rel, tolerance: 1e-5 }
}

fn critic_loss_fd_check(trials: usize, corrupt: bool, rng: &mut StdRng) -> CheckResult {
    let mut max_rel: f64 = 0.0;
    for _ in 0..trials {
        let dims = [4, 6, 6, 1];
        let (net, x) = smooth_net(&dims, 6, rng);
        let y: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, grads) = critic_loss_and_grads(&net, &x, &y).unwrap();
        let mut flat = grads.flatten();
        if corrupt {
            flat[0] += 1e-3;
        }
        let y_ref = &y;
        let x_ref = &x;
        max_rel = max_rel.max(max_fd_error(&net, &flat, |net| {
            critic_loss_and_grads(net, x_ref, y_ref).unwrap().0
        }));
    }
    CheckResult { name: "critic loss vs finite differences", trials, max_rel_err: max_rel, tolerance: 1e-4 }
}

fn policy_objective_fd_check(trials: usize, corrupt: bool, rng: &mut StdRng) -> CheckResult {
    let mut max_rel: f64 = 0.0;
    let zeta = 0.2;
    let mut done = 0;
    let mut attempts = 0;
    while done < trials && attempts < trials * 50 {
        attempts += 1;
        let obs_dim = 3;
        let act_dim = 2;
        let (policy, obs) = smooth_net(&[obs_dim, 6, 6, 2 * act_dim], 5, rng);
        let noise = random_input(5, act_dim, rng);
        let c0 = Mlp::new(&[obs_dim + act_dim, 6, 6, 1], rng);
        let c1 = Mlp::new(&[obs_dim + act_dim, 6, 6, 1], rng);

        // Skip draws where the two critics nearly tie anywhere (the min is
        // non-smooth there) or where a critic pre-activation sits on a kink.
        let x_q = sampled_critic_input(&policy, &obs, &noise);
        if min_abs_preact(&c0, &x_q) < KINK_GUARD || min_abs_preact(&c1, &x_q) < KINK_GUARD {
            continue;
        }
        let q0 = c0.forward_only(&x_q).unwrap();
        let q1 = c1.forward_only(&x_q).unwrap();
        let min_gap = (0..x_q.rows())
            .map(|i| (q0.row(i)[0] - q1.row(i)[0]).abs())
            .fold(f64::INFINITY, f64::min);
        if min_gap < 1e-4 {
            continue;
        }

        let critics = [&c0, &c1];
        let (_, grads) = policy_objective_grads(&policy, &critics, zeta, &obs, &noise).unwrap();
        let mut flat = grads.flatten();
        if corrupt {
            flat[0] += 1e-3;
        }
        let obs_ref = &obs;
        let noise_ref = &noise;
        max_rel = max_rel.max(max_fd_error(&policy, &flat, |p| {
            policy_objective(p, &critics, zeta, obs_ref, noise_ref).unwrap()
        }));
        done += 1;
    }
    CheckResult {
        name: "policy objective vs finite differences",
        trials: done,
        max_rel_err: if done == 0 { f64::INFINITY } else { max_rel },
        tolerance: 1e-4,
    }
}

fn sampled_critic_input(policy: &Mlp, obs: &Mat, noise: &Mat) -> Mat {
    let out = policy.forward_only(obs).unwrap();
    let act_dim = noise.cols();
    let mut x = Mat::zeros(obs.rows(), obs.cols() + act_dim);
    for i in 0..obs.rows() {
        let head = PolicyHead::from_output(out.row(i));
        let (a, _) = head.sample_squashed(noise.row(i));
        let row = x.row_mut(i);
        row[..obs.cols()].copy_from_slice(obs.row(i));
        row[obs.cols()..].copy_from_slice(&a);
    }
    x
}

/// Max relative error between `analytic` and central differences of
/// `objective` over every parameter of `net`.
fn max_fd_error<F: Fn(&Mlp) -> f64>(net: &Mlp, analytic: &[f64], objective: F) -> f64 {
    let base = net.flatten();
    let mut probe = net.clone();
    let mut max_rel: f64 = 0.0;
    let mut params = base.clone();
    for j in 0..base.len() {
        params[j] = base[j] + FD_STEP;
        probe.unflatten_from(&params).unwrap();
        let plus = objective(&probe);
        params[j] = base[j] - FD_STEP;
        probe.unflatten_from(&params).unwrap();
        let minus = objective(&probe);
        params[j] = base[j];
        let fd = (plus - minus) / (2.0 * FD_STEP);
        max_rel = max_rel.max(rel_err(analytic[j], fd));
    }
    max_rel
}

/// ∫ exp(log-density) over a ∈ (−1, 1) for a one-dimensional squashed
/// Gaussian, via the substitution a = tanh(u) and Simpson's rule on u.
/// A correct density integrates to 1.
pub fn squashed_density_integral(mu: f64, log_std: f64) -> f64 {
    let ls = log_std.clamp(LOG_STD_MIN, LOG_STD_MAX);
    let head = PolicyHead { mean: vec![mu], log_std: vec![ls] };
    let sigma = ls.exp();
    let (lo, hi) = (mu - 12.0 * sigma, mu + 12.0 * sigma);
    let n = 4000; // even
    let h = (hi - lo) / n as f64;
    let integrand = |u: f64| {
        let xi = (u - mu) / sigma;
        let (_, logp) = head.sample_squashed(&[xi]);
        (logp + crate::nn::tanh_log_jacobian(u)).exp()
    };
    let mut sum = integrand(lo) + integrand(hi);
    for k in 1..n {
        let u = lo + k as f64 * h;
        sum += integrand(u) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    sum * h / 3.0
}

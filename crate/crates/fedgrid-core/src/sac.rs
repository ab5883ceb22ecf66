//! Per-agent soft actor-critic machinery: replay buffer, entropy-regularized
//! targets, critic and policy updates, Polyak target tracking.
//!
//! Each agent owns a squashed-Gaussian policy and two critic/target-critic
//! pairs. Depending on [`ClipMode`], bootstrap targets take the minimum over
//! both target critics (clipped double-Q) or read a single selected pair;
//! the update order within one iteration is always targets → critic step →
//! policy step → Polyak step, orchestrated by [`sac_update_step`].

use std::collections::VecDeque;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{polyak_blend, AdamState, Mat, Mlp, MlpGrads, PolicyHead, LOG_STD_MAX, LOG_STD_MIN};

/// Default replay capacity.
pub const DEFAULT_REPLAY_CAPACITY: usize = 1_000_000;
/// Global gradient-norm clip applied to every critic and policy update.
pub const GRAD_CLIP_NORM: f64 = 10.0;

/// One stored interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub o: Vec<f64>,
    pub u: Vec<f64>,
    pub r: f64,
    pub o2: Vec<f64>,
    /// Done flag, 0.0 or 1.0.
    pub d: f64,
}

/// FIFO ring of transitions with uniform with-replacement sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
    total_pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer { items: VecDeque::new(), capacity, total_pushed: 0 }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn total_pushed(&self) -> u64 {
        self.total_pushed
    }

    /// Append, evicting the oldest item once full. Dimensions must match
    /// what the buffer already holds.
    pub fn push(&mut self, tr: Transition) -> Result<()> {
        if let Some(front) = self.items.front() {
            if tr.o.len() != front.o.len() || tr.u.len() != front.u.len() || tr.o2.len() != front.o2.len() {
                return Err(Error::Dimension("transition shape differs from buffer contents".into()));
            }
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(tr);
        self.total_pushed += 1;
        Ok(())
    }

    /// Uniform sample of `n` stored transitions, with replacement.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<Transition>> {
        if self.items.is_empty() {
            return Err(Error::Protocol("sample from empty replay buffer".into()));
        }
        Ok((0..n)
            .map(|_| self.items[rng.gen_range(0..self.items.len())].clone())
            .collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }
}

/// SAC hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SacHyper {
    /// Discount factor γ.
    pub gamma: f64,
    /// Polyak coefficient ρ: target ← ρ·target + (1−ρ)·critic.
    pub rho: f64,
    /// Entropy coefficient ζ.
    pub zeta: f64,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for SacHyper {
    fn default() -> Self {
        SacHyper { gamma: 0.99, rho: 0.005, zeta: 0.2, batch_size: 256, lr: 3e-4 }
    }
}

impl SacHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Domain(format!("gamma {} outside (0,1)", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Domain(format!("rho {} outside [0,1]", self.rho)));
        }
        if self.zeta < 0.0 || self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::Domain("need zeta >= 0, batch_size >= 1, lr > 0".into()));
        }
        Ok(())
    }
}

/// Which critic/target pairs drive targets, critic steps and policy steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClipMode {
    /// Clipped double-Q: both pairs update, targets take the min.
    DoubleMin,
    /// Only the selected pair (0-based index) is used; the other is frozen.
    SinglePair(usize),
}

impl ClipMode {
    pub fn active_indices(&self) -> &'static [usize] {
        match self {
            ClipMode::DoubleMin => &[0, 1],
            ClipMode::SinglePair(0) => &[0],
            ClipMode::SinglePair(1) => &[1],
            ClipMode::SinglePair(_) => panic!("critic pair index must be 0 or 1"),
        }
    }
}

/// Everything one microgrid agent owns: policy, twin critics with targets,
/// optimizer states, replay buffer and its private RNG stream.
#[derive(Debug, Clone)]
pub struct AgentBundle {
    pub id: usize,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub policy: Mlp,
    pub critics: [Mlp; 2],
    pub targets: [Mlp; 2],
    pub policy_opt: AdamState,
    pub critic_opts: [AdamState; 2],
    pub buffer: ReplayBuffer,
    pub rng: StdRng,
}

impl AgentBundle {
    /// Fresh agent. Target critics start as exact copies of the critics.
    pub fn new(id: usize, obs_dim: usize, act_dim: usize, hidden: &[usize], hyper: &SacHyper, seed: u64) -> Self {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut policy_dims = vec![obs_dim];
        policy_dims.extend_from_slice(hidden);
        policy_dims.push(2 * act_dim);
        let mut critic_dims = vec![obs_dim + act_dim];
        critic_dims.extend_from_slice(hidden);
        critic_dims.push(1);

        let policy = Mlp::new(&policy_dims, &mut rng);
        let critics = [Mlp::new(&critic_dims, &mut rng), Mlp::new(&critic_dims, &mut rng)];
        let targets = [critics[0].clone(), critics[1].clone()];
        let policy_opt = AdamState::new(policy.n_params(), hyper.lr);
        let critic_opts = [
            AdamState::new(critics[0].n_params(), hyper.lr),
            AdamState::new(critics[1].n_params(), hyper.lr),
        ];
        AgentBundle {
            id,
            obs_dim,
            act_dim,
            policy,
            critics,
            targets,
            policy_opt,
            critic_opts,
            buffer: ReplayBuffer::new(DEFAULT_REPLAY_CAPACITY),
            rng,
        }
    }

    pub fn policy_head(&self, obs: &[f64]) -> Result<PolicyHead> {
        Ok(PolicyHead::from_output(&self.policy.forward_vec(obs)?))
    }

    /// Stochastic action for rollouts.
    pub fn select_action(&mut self, obs: &[f64]) -> Result<Vec<f64>> {
        let head = PolicyHead::from_output(&self.policy.forward_vec(obs)?);
        let noise: Vec<f64> = (0..self.act_dim).map(|_| self.rng.sample(StandardNormal)).collect();
        Ok(head.sample_squashed(&noise).0)
    }

    /// Deterministic action (squashed mean), used for evaluation.
    pub fn act_deterministic(&self, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.policy_head(obs)?.mean_action())
    }

    pub fn validate(&self) -> Result<()> {
        if self.policy.in_dim() != self.obs_dim || self.policy.out_dim() != 2 * self.act_dim {
            return Err(Error::Dimension("policy dims inconsistent with agent dims".into()));
        }
        for i in 0..2 {
            if self.critics[i].dims() != self.targets[i].dims() {
                return Err(Error::Dimension("critic and target critic shapes differ".into()));
            }
            if self.critics[i].in_dim() != self.obs_dim + self.act_dim || self.critics[i].out_dim() != 1 {
                return Err(Error::Dimension("critic dims inconsistent with agent dims".into()));
            }
        }
        Ok(())
    }
}

fn batch_obs(batch: &[Transition], next: bool) -> Mat {
    let dim = if next { batch[0].o2.len() } else { batch[0].o.len() };
    let mut m = Mat::zeros(batch.len(), dim);
    for (i, tr) in batch.iter().enumerate() {
        m.row_mut(i).copy_from_slice(if next { &tr.o2 } else { &tr.o });
    }
    m
}

fn batch_obs_action(batch: &[Transition]) -> Mat {
    let (od, ad) = (batch[0].o.len(), batch[0].u.len());
    let mut m = Mat::zeros(batch.len(), od + ad);
    for (i, tr) in batch.iter().enumerate() {
        let row = m.row_mut(i);
        row[..od].copy_from_slice(&tr.o);
        row[od..].copy_from_slice(&tr.u);
    }
    m
}

/// Entropy-regularized bootstrap targets (treated as constants downstream):
/// y = r + γ(1−d)·(T − ζ·logπ(ũ|o′)) with ũ sampled from the current policy
/// and T the min over both target critics or the selected single one.
pub fn compute_targets(
    bundle: &mut AgentBundle,
    batch: &[Transition],
    hyper: &SacHyper,
    clip: ClipMode,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::Protocol("compute_targets on empty batch".into()));
    }
    let n = batch.len();
    let obs2 = batch_obs(batch, true);
    let head_out = bundle.policy.forward_only(&obs2)?;

    let mut x2 = Mat::zeros(n, bundle.obs_dim + bundle.act_dim);
    let mut logp = vec![0.0; n];
    for i in 0..n {
        let head = PolicyHead::from_output(head_out.row(i));
        let noise: Vec<f64> = (0..bundle.act_dim).map(|_| bundle.rng.sample(StandardNormal)).collect();
        let (action, lp) = head.sample_squashed(&noise);
        logp[i] = lp;
        let row = x2.row_mut(i);
        row[..bundle.obs_dim].copy_from_slice(obs2.row(i));
        row[bundle.obs_dim..].copy_from_slice(&action);
    }

    let qs: Vec<Mat> = clip
        .active_indices()
        .iter()
        .map(|&idx| bundle.targets[idx].forward_only(&x2))
        .collect::<Result<_>>()?;

    Ok(batch
        .iter()
        .enumerate()
        .map(|(i, tr)| {
            let t = qs.iter().map(|q| q.row(i)[0]).fold(f64::INFINITY, f64::min);
            tr.r + hyper.gamma * (1.0 - tr.d) * (t - hyper.zeta * logp[i])
        })
        .collect())
}

/// Mean-squared Bellman error of one critic on a prepared (o,u) batch and
/// its exact parameter gradients. The targets are constants.
pub fn critic_loss_and_grads(critic: &Mlp, x: &Mat, y: &[f64]) -> Result<(f64, MlpGrads)> {
    if x.rows() != y.len() {
        return Err(Error::Dimension("batch and target lengths differ".into()));
    }
    let n = y.len() as f64;
    let (q, cache) = critic.forward(x)?;
    let mut loss = 0.0;
    let mut upstream = Mat::zeros(y.len(), 1);
    for i in 0..y.len() {
        let e = q.row(i)[0] - y[i];
        loss += e * e;
        upstream.row_mut(i)[0] = 2.0 * e / n;
    }
    loss /= n;
    let (grads, _) = critic.backward(&cache, &upstream)?;
    Ok((loss, grads))
}

/// One optimizer step per active critic on the mean squared error against
/// the fixed targets. Returns per-critic losses (None for inactive pairs).
pub fn update_critics(
    bundle: &mut AgentBundle,
    batch: &[Transition],
    targets: &[f64],
    _hyper: &SacHyper,
    clip: ClipMode,
) -> Result<[Option<f64>; 2]> {
    if batch.len() != targets.len() {
        return Err(Error::Dimension("targets were computed for a different batch".into()));
    }
    let x = batch_obs_action(batch);
    let mut staged = Vec::new();
    for &idx in clip.active_indices() {
        let (loss, mut grads) = critic_loss_and_grads(&bundle.critics[idx], &x, targets)?;
        if !loss.is_finite() {
            return Err(Error::Domain(format!("non-finite critic {idx} loss; update skipped")));
        }
        grads.clip_global_norm(GRAD_CLIP_NORM);
        staged.push((idx, loss, grads));
    }
    let mut out = [None, None];
    for (idx, loss, grads) in staged {
        bundle.critic_opts[idx].step(&mut bundle.critics[idx], &grads)?;
        out[idx] = Some(loss);
    }
    Ok(out)
}

/// Policy objective J(θ) = mean( min_i Q_i(o, ã_θ) − ζ·logπ(ã_θ|o) ) with
/// reparameterized actions ã = tanh(μ + σ·ξ) under the given fixed noise.
pub fn policy_objective(policy: &Mlp, critics: &[&Mlp], zeta: f64, obs: &Mat, noise: &Mat) -> Result<f64> {
    let (n, act_dim) = (obs.rows(), noise.cols());
    check_policy_shapes(policy, critics, obs, noise)?;
    let head_out = policy.forward_only(obs)?;
    let mut x = Mat::zeros(n, obs.cols() + act_dim);
    let mut logp = vec![0.0; n];
    for i in 0..n {
        let head = PolicyHead::from_output(head_out.row(i));
        let (action, lp) = head.sample_squashed(noise.row(i));
        logp[i] = lp;
        let row = x.row_mut(i);
        row[..obs.cols()].copy_from_slice(obs.row(i));
        row[obs.cols()..].copy_from_slice(&action);
    }
    let qs: Vec<Mat> = critics.iter().map(|c| c.forward_only(&x)).collect::<Result<_>>()?;
    let mut j = 0.0;
    for i in 0..n {
        let qmin = qs.iter().map(|q| q.row(i)[0]).fold(f64::INFINITY, f64::min);
        j += qmin - zeta * logp[i];
    }
    Ok(j / n as f64)
}

/// Value and exact policy-parameter gradients of [`policy_objective`].
/// Gradients flow through the reparameterized action into the policy only;
/// critic parameters are left alone.
pub fn policy_objective_grads(
    policy: &Mlp,
    critics: &[&Mlp],
    zeta: f64,
    obs: &Mat,
    noise: &Mat,
) -> Result<(f64, MlpGrads)> {
    let (n, act_dim) = (obs.rows(), noise.cols());
    check_policy_shapes(policy, critics, obs, noise)?;
    let nf = n as f64;
    let (head_out, pcache) = policy.forward(obs)?;

    // Reparameterized sampling, keeping what the chain rule needs.
    let mut x = Mat::zeros(n, obs.cols() + act_dim);
    let mut actions = Mat::zeros(n, act_dim);
    let mut sigma_noise = Mat::zeros(n, act_dim); // σ·ξ = ∂u/∂logσ
    let mut clamped = vec![false; n * act_dim];
    let mut logp = vec![0.0; n];
    for i in 0..n {
        let row = head_out.row(i);
        let head = PolicyHead::from_output(row);
        let (action, lp) = head.sample_squashed(noise.row(i));
        logp[i] = lp;
        for d in 0..act_dim {
            let raw_ls = row[act_dim + d];
            clamped[i * act_dim + d] = raw_ls <= LOG_STD_MIN || raw_ls >= LOG_STD_MAX;
            sigma_noise.row_mut(i)[d] = head.log_std[d].exp() * noise.row(i)[d];
        }
        actions.row_mut(i).copy_from_slice(&action);
        let xrow = x.row_mut(i);
        xrow[..obs.cols()].copy_from_slice(obs.row(i));
        xrow[obs.cols()..].copy_from_slice(&action);
    }

    // Forward all critics, take the per-sample min, and pull the input
    // gradient back through whichever critic attained it.
    let mut qcaches = Vec::with_capacity(critics.len());
    let mut qvals = Vec::with_capacity(critics.len());
    for c in critics {
        let (q, cache) = c.forward(&x)?;
        qvals.push(q);
        qcaches.push(cache);
    }
    let mut j = 0.0;
    let mut argmin = vec![0usize; n];
    for i in 0..n {
        let (mut best_c, mut best_q) = (0usize, f64::INFINITY);
        for (c, q) in qvals.iter().enumerate() {
            let v = q.row(i)[0];
            if v < best_q {
                best_q = v;
                best_c = c;
            }
        }
        argmin[i] = best_c;
        j += best_q - zeta * logp[i];
    }
    j /= nf;

    let mut dj_da = Mat::zeros(n, act_dim);
    for (c, critic) in critics.iter().enumerate() {
        let mut upstream = Mat::zeros(n, 1);
        let mut any = false;
        for i in 0..n {
            if argmin[i] == c {
                upstream.row_mut(i)[0] = 1.0 / nf;
                any = true;
            }
        }
        if !any {
            continue;
        }
        let dx = critic.backward_input(&qcaches[c], &upstream)?;
        for i in 0..n {
            let src = &dx.row(i)[obs.cols()..];
            for (t, &s) in dj_da.row_mut(i).iter_mut().zip(src) {
                *t += s;
            }
        }
    }

    // Chain rule into the policy head outputs (μ, logσ):
    //   a = tanh(u), u = μ + σξ        ⇒ ∂a/∂μ = 1−a², ∂a/∂logσ = (1−a²)σξ
    //   ∂logπ/∂μ = 2a (via the tanh correction), ∂logπ/∂logσ = −1 + 2aσξ
    let dlogp = -zeta / nf;
    let mut upstream_policy = Mat::zeros(n, 2 * act_dim);
    for i in 0..n {
        let up = upstream_policy.row_mut(i);
        for d in 0..act_dim {
            let a = actions.row(i)[d];
            let sn = sigma_noise.row(i)[d];
            let dtanh = 1.0 - a * a;
            up[d] = dj_da.row(i)[d] * dtanh + dlogp * 2.0 * a;
            if !clamped[i * act_dim + d] {
                up[act_dim + d] = dj_da.row(i)[d] * dtanh * sn + dlogp * (-1.0 + 2.0 * a * sn);
            }
        }
    }
    let (grads, _) = policy.backward(&pcache, &upstream_policy)?;
    Ok((j, grads))
}

fn check_policy_shapes(policy: &Mlp, critics: &[&Mlp], obs: &Mat, noise: &Mat) -> Result<()> {
    if critics.is_empty() {
        return Err(Error::Domain("policy objective needs at least one critic".into()));
    }
    if noise.rows() != obs.rows() {
        return Err(Error::Dimension("noise and observation batches differ in length".into()));
    }
    if policy.out_dim() != 2 * noise.cols() || policy.in_dim() != obs.cols() {
        return Err(Error::Dimension("policy head does not match obs/action dims".into()));
    }
    for c in critics {
        if c.in_dim() != obs.cols() + noise.cols() || c.out_dim() != 1 {
            return Err(Error::Dimension("critic input does not match obs+action dims".into()));
        }
    }
    Ok(())
}

/// One ascent step on the policy objective over the batch observations.
/// Critics must already be updated for this batch (Alg. order); their
/// parameters stay frozen here. Returns the minimized loss (−J).
pub fn update_policy(
    bundle: &mut AgentBundle,
    batch: &[Transition],
    hyper: &SacHyper,
    clip: ClipMode,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Protocol("update_policy on empty batch".into()));
    }
    let obs = batch_obs(batch, false);
    let mut noise = Mat::zeros(batch.len(), bundle.act_dim);
    for v in noise.data_mut() {
        *v = bundle.rng.sample(StandardNormal);
    }
    let critics: Vec<&Mlp> = clip.active_indices().iter().map(|&i| &bundle.critics[i]).collect();
    let (j, mut grads) = policy_objective_grads(&bundle.policy, &critics, hyper.zeta, &obs, &noise)?;
    if !j.is_finite() {
        return Err(Error::Domain("non-finite policy objective; update skipped".into()));
    }
    grads.scale(-1.0); // ascend J
    grads.clip_global_norm(GRAD_CLIP_NORM);
    bundle.policy_opt.step(&mut bundle.policy, &grads)?;
    Ok(-j)
}

/// Polyak tracking for both pairs: target ← ρ·target + (1−ρ)·critic.
pub fn polyak_update(bundle: &mut AgentBundle, rho: f64) -> Result<()> {
    for idx in 0..2 {
        polyak_update_pair(bundle, rho, idx)?;
    }
    Ok(())
}

/// Polyak tracking for a single critic/target pair.
pub fn polyak_update_pair(bundle: &mut AgentBundle, rho: f64, idx: usize) -> Result<()> {
    polyak_blend(&mut bundle.targets[idx], &bundle.critics[idx], rho)
}

/// Losses of one full update iteration.
#[derive(Debug, Clone)]
pub struct UpdateStats {
    pub critic_losses: [Option<f64>; 2],
    pub policy_loss: f64,
}

/// One complete SAC iteration in the canonical order: sample a batch,
/// compute targets, step the active critics, step the policy, then Polyak.
/// In single-pair mode the unselected pair is fully frozen (no gradient
/// step, no target tracking).
pub fn sac_update_step(bundle: &mut AgentBundle, hyper: &SacHyper, clip: ClipMode) -> Result<UpdateStats> {
    let batch = bundle.buffer.sample(hyper.batch_size, &mut bundle.rng)?;
    let targets = compute_targets(bundle, &batch, hyper, clip)?;
    let critic_losses = update_critics(bundle, &batch, &targets, hyper, clip)?;
    let policy_loss = update_policy(bundle, &batch, hyper, clip)?;
    match clip {
        ClipMode::DoubleMin => polyak_update(bundle, hyper.rho)?,
        ClipMode::SinglePair(k) => polyak_update_pair(bundle, hyper.rho, k)?,
    }
    Ok(UpdateStats { critic_losses, policy_loss })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;

    fn tr(o: &[f64], u: &[f64], r: f64, o2: &[f64], d: f64) -> Transition {
        Transition { o: o.to_vec(), u: u.to_vec(), r, o2: o2.to_vec(), d }
    }

    /// Critic ignoring its input, always emitting `value`.
    fn constant_critic(in_dim: usize, value: f64) -> Mlp {
        let mut l = Linear::zeros(1, in_dim);
        l.b[0] = value;
        Mlp::from_layers(vec![l])
    }

    fn test_bundle(seed: u64) -> AgentBundle {
        AgentBundle::new(0, 2, 1, &[8, 8], &SacHyper::default(), seed)
    }

    #[test]
    fn buffer_evicts_fifo() {
        let mut buf = ReplayBuffer::new(2);
        let a = tr(&[1.0], &[0.0], 0.0, &[1.0], 0.0);
        let b = tr(&[2.0], &[0.0], 0.0, &[2.0], 0.0);
        let c = tr(&[3.0], &[0.0], 0.0, &[3.0], 0.0);
        buf.push(a).unwrap();
        buf.push(b.clone()).unwrap();
        buf.push(c.clone()).unwrap();
        let contents: Vec<_> = buf.iter().cloned().collect();
        assert_eq!(contents, vec![b, c]);
        assert_eq!(buf.total_pushed(), 3);
    }

    #[test]
    fn buffer_samples_stored_items_deterministically() {
        let mut buf = ReplayBuffer::new(8);
        for i in 0..5 {
            buf.push(tr(&[i as f64], &[0.1], -1.0, &[i as f64 + 1.0], 0.0)).unwrap();
        }
        let mut rng1 = StdRng::seed_from_u64(3);
        let mut rng2 = StdRng::seed_from_u64(3);
        let s1 = buf.sample(16, &mut rng1).unwrap();
        let s2 = buf.sample(16, &mut rng2).unwrap();
        assert_eq!(s1, s2);
        for item in &s1 {
            assert!(buf.iter().any(|stored| stored == item));
        }
    }

    #[test]
    fn buffer_rejects_empty_sample_and_bad_dims() {
        let buf = ReplayBuffer::new(4);
        let mut rng = StdRng::seed_from_u64(0);
        assert!(matches!(buf.sample(1, &mut rng), Err(Error::Protocol(_))));
        let mut buf = ReplayBuffer::new(4);
        buf.push(tr(&[1.0, 2.0], &[0.0], 0.0, &[1.0, 2.0], 0.0)).unwrap();
        let res = buf.push(tr(&[1.0], &[0.0], 0.0, &[1.0], 0.0));
        assert!(matches!(res, Err(Error::Dimension(_))));
    }

    #[test]
    fn targets_reduce_to_reward_when_done() {
        let mut b = test_bundle(1);
        let batch = vec![tr(&[0.1, 0.2], &[0.3], -2.5, &[0.0, 0.0], 1.0)];
        let y = compute_targets(&mut b, &batch, &SacHyper::default(), ClipMode::DoubleMin).unwrap();
        assert_eq!(y, vec![-2.5]);
    }

    #[test]
    fn targets_match_hand_computed_min() {
        let mut b = test_bundle(2);
        b.targets[0] = constant_critic(3, 1.0);
        b.targets[1] = constant_critic(3, 0.8);
        let hyper = SacHyper { zeta: 0.0, ..SacHyper::default() };
        let batch = vec![tr(&[0.0, 0.0], &[0.0], 0.0, &[0.0, 0.0], 0.0)];
        let y = compute_targets(&mut b, &batch, &hyper, ClipMode::DoubleMin).unwrap();
        assert!((y[0] - 0.792).abs() < 1e-12);
    }

    #[test]
    fn double_min_targets_bounded_by_single_pair() {
        let hyper = SacHyper { zeta: 0.0, ..SacHyper::default() };
        let batch = vec![tr(&[0.4, -0.2], &[0.1], -0.3, &[0.2, 0.1], 0.0)];
        for k in 0..2 {
            let mut b = test_bundle(3);
            b.targets[0] = constant_critic(3, 0.7);
            b.targets[1] = constant_critic(3, -0.4);
            let y_double = compute_targets(&mut b, &batch, &hyper, ClipMode::DoubleMin).unwrap();
            b.rng = StdRng::seed_from_u64(3);
            let y_single = compute_targets(&mut b, &batch, &hyper, ClipMode::SinglePair(k)).unwrap();
            assert!(y_double[0] <= y_single[0] + 1e-12);
        }
    }

    #[test]
    fn exact_critic_has_vanishing_gradient() {
        let b = test_bundle(4);
        let batch: Vec<Transition> = (0..6)
            .map(|i| tr(&[i as f64 * 0.1, -0.2], &[0.05 * i as f64], 0.0, &[0.0, 0.0], 0.0))
            .collect();
        let x = batch_obs_action(&batch);
        let q = b.critics[0].forward_only(&x).unwrap();
        let y: Vec<f64> = (0..batch.len()).map(|i| q.row(i)[0]).collect();
        let (loss, grads) = critic_loss_and_grads(&b.critics[0], &x, &y).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.global_norm() < 1e-10);
    }

    #[test]
    fn repeated_updates_overfit_one_batch() {
        let mut b = test_bundle(5);
        // faster optimizer for the overfit probe; the schedule is the point
        let hyper = SacHyper { lr: 0.02, batch_size: 8, ..SacHyper::default() };
        b.critic_opts[0] = AdamState::new(b.critics[0].n_params(), hyper.lr);
        let batch: Vec<Transition> = (0..8)
            .map(|i| {
                let x = i as f64 * 0.25 - 1.0;
                tr(&[x, x * x], &[0.3 * x], 0.0, &[0.0, 0.0], 0.0)
            })
            .collect();
        let y: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).sin()).collect();
        let x = batch_obs_action(&batch);
        let (initial, _) = critic_loss_and_grads(&b.critics[0], &x, &y).unwrap();
        let mut prev = initial;
        let mut decreases = 0;
        let mut last = initial;
        for _ in 0..50 {
            let (loss, mut grads) = critic_loss_and_grads(&b.critics[0], &x, &y).unwrap();
            grads.clip_global_norm(GRAD_CLIP_NORM);
            b.critic_opts[0].step(&mut b.critics[0], &grads).unwrap();
            let (after, _) = critic_loss_and_grads(&b.critics[0], &x, &y).unwrap();
            if after < prev {
                decreases += 1;
            }
            prev = after;
            last = loss.min(last);
        }
        assert!(decreases >= 45, "loss decreased only {decreases}/50 times");
        assert!(prev < 0.1 * initial, "loss {prev} vs initial {initial}");
        let _ = last;
    }

    #[test]
    fn constant_critic_and_zero_entropy_give_zero_policy_gradient() {
        let b = test_bundle(6);
        let critic = constant_critic(3, 0.37);
        let obs = Mat::from_vec(4, 2, vec![0.1, 0.2, -0.3, 0.4, 0.0, 0.9, 0.5, -0.5]);
        let noise = Mat::from_vec(4, 1, vec![0.3, -0.7, 1.1, 0.0]);
        let (_, grads) = policy_objective_grads(&b.policy, &[&critic], 0.0, &obs, &noise).unwrap();
        assert!(grads.global_norm() < 1e-8);
    }

    #[test]
    fn policy_gradient_matches_finite_differences_with_fixed_noise() {
        let mut rng = StdRng::seed_from_u64(7);
        let policy = Mlp::new(&[2, 6, 6, 2], &mut rng);
        let c0 = Mlp::new(&[3, 6, 6, 1], &mut rng);
        let c1 = Mlp::new(&[3, 6, 6, 1], &mut rng);
        let obs = Mat::from_vec(5, 2, (0..10).map(|i| (i as f64 * 0.37).sin() * 0.6).collect());
        let noise = Mat::from_vec(5, 1, (0..5).map(|i| (i as f64 * 0.91).cos()).collect());
        let zeta = 0.2;

        let (_, grads) = policy_objective_grads(&policy, &[&c0, &c1], zeta, &obs, &noise).unwrap();
        let flat_grads = grads.flatten();
        let base = policy.flatten();
        let h = 1e-5;
        let mut max_rel: f64 = 0.0;
        for j in 0..base.len() {
            let mut plus = policy.clone();
            let mut minus = policy.clone();
            let mut p = base.clone();
            p[j] += h;
            plus.unflatten_from(&p).unwrap();
            p[j] -= 2.0 * h;
            minus.unflatten_from(&p).unwrap();
            let jp = policy_objective(&plus, &[&c0, &c1], zeta, &obs, &noise).unwrap();
            let jm = policy_objective(&minus, &[&c0, &c1], zeta, &obs, &noise).unwrap();
            let fd = (jp - jm) / (2.0 * h);
            let denom = flat_grads[j].abs().max(fd.abs()).max(1e-3);
            max_rel = max_rel.max((flat_grads[j] - fd).abs() / denom);
        }
        assert!(max_rel < 1e-3, "max relative error {max_rel}");
    }

    #[test]
    fn v_shaped_critic_drives_mean_action_to_zero() {
        // Exact Q(o,u) = −|u| built from two relu units: optimum at u = 0.
        let mut l1 = Linear::zeros(2, 3);
        l1.w.row_mut(0)[2] = 1.0;
        l1.w.row_mut(1)[2] = -1.0;
        let mut l2 = Linear::zeros(1, 2);
        l2.w.row_mut(0)[0] = -1.0;
        l2.w.row_mut(0)[1] = -1.0;
        let critic = Mlp::from_layers(vec![l1, l2]);

        let mut b = test_bundle(8);
        b.critics[0] = critic;
        let hyper = SacHyper { zeta: 0.0, lr: 3e-3, batch_size: 16, ..SacHyper::default() };
        b.policy_opt = AdamState::new(b.policy.n_params(), hyper.lr);
        let batch: Vec<Transition> = (0..16)
            .map(|i| {
                let x = (i as f64 * 0.39).sin();
                tr(&[x, -x], &[0.0], 0.0, &[x, -x], 0.0)
            })
            .collect();

        let mean_abs_action = |b: &AgentBundle| {
            batch
                .iter()
                .map(|t| b.act_deterministic(&t.o).unwrap()[0].abs())
                .sum::<f64>()
                / batch.len() as f64
        };
        let before = mean_abs_action(&b);
        for _ in 0..300 {
            update_policy(&mut b, &batch, &hyper, ClipMode::SinglePair(0)).unwrap();
        }
        let after = mean_abs_action(&b);
        assert!(after < before * 0.5 && after < 0.05, "mean |a| {before} -> {after}");
    }

    #[test]
    fn polyak_endpoints_and_betweenness() {
        let mut b = test_bundle(9);
        let orig_targets = [b.targets[0].flatten(), b.targets[1].flatten()];
        // push critics away from the targets first
        let noisy: Vec<f64> = b.critics[0].flatten().iter().map(|v| v + 0.25).collect();
        b.critics[0].unflatten_from(&noisy).unwrap();

        polyak_update(&mut b, 1.0).unwrap();
        assert_eq!(b.targets[0].flatten(), orig_targets[0]);
        assert_eq!(b.targets[1].flatten(), orig_targets[1]);

        let mut c = b.clone();
        polyak_update(&mut c, 0.0).unwrap();
        assert_eq!(c.targets[0].flatten(), c.critics[0].flatten());

        polyak_update(&mut b, 0.3).unwrap();
        for ((t, o), c) in b.targets[0]
            .flatten()
            .iter()
            .zip(&orig_targets[0])
            .zip(b.critics[0].flatten().iter())
        {
            let (lo, hi) = if o < c { (*o, *c) } else { (*c, *o) };
            assert!(*t >= lo - 1e-12 && *t <= hi + 1e-12);
        }
    }

    #[test]
    fn identical_seeds_and_data_give_identical_updates() {
        let mut a = test_bundle(11);
        let mut b = test_bundle(11);
        let hyper = SacHyper { batch_size: 8, ..SacHyper::default() };
        for i in 0..32 {
            let x = (i as f64 * 0.17).sin();
            let t = tr(&[x, x * 0.5], &[0.2 * x], -x.abs(), &[x * 0.9, x * 0.4], 0.0);
            a.buffer.push(t.clone()).unwrap();
            b.buffer.push(t).unwrap();
        }
        for _ in 0..5 {
            sac_update_step(&mut a, &hyper, ClipMode::DoubleMin).unwrap();
            sac_update_step(&mut b, &hyper, ClipMode::DoubleMin).unwrap();
        }
        assert_eq!(a.policy.flatten(), b.policy.flatten());
        assert_eq!(a.critics[0].flatten(), b.critics[0].flatten());
        assert_eq!(a.targets[1].flatten(), b.targets[1].flatten());
    }

    #[test]
    fn single_pair_mode_freezes_the_other_pair() {
        let mut b = test_bundle(12);
        let hyper = SacHyper { batch_size: 4, ..SacHyper::default() };
        for i in 0..8 {
            let x = i as f64 * 0.1;
            b.buffer.push(tr(&[x, -x], &[0.1], -1.0, &[x, -x], 0.0)).unwrap();
        }
        let frozen_critic = b.critics[1].flatten();
        let frozen_target = b.targets[1].flatten();
        for _ in 0..3 {
            sac_update_step(&mut b, &hyper, ClipMode::SinglePair(0)).unwrap();
        }
        assert_eq!(b.critics[1].flatten(), frozen_critic);
        assert_eq!(b.targets[1].flatten(), frozen_target);
        assert_ne!(b.critics[0].flatten(), b.targets[0].flatten());
    }
}

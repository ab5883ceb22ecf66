//! Squashed-Gaussian policy head.
//!
//! The policy network's final layer emits `(μ, logσ)` per action dimension.
//! Actions are `tanh(μ + σ·ξ)` with ξ standard normal, so they stay strictly
//! inside (−1, 1); the log-density adds the tanh change-of-variables term,
//! computed through a softplus identity so it stays finite far into the
//! tails.

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Clamp range for the emitted log standard deviation.
pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// tanh saturates to exactly ±1.0 in f64 for |u| ≳ 19; pull such samples
/// back inside the open interval.
const SQUASH_LIMIT: f64 = 1.0 - 1e-12;

fn squash(u: f64) -> f64 {
    u.tanh().clamp(-SQUASH_LIMIT, SQUASH_LIMIT)
}

/// Mean and (clamped) log standard deviation for one observation.
#[derive(Debug, Clone)]
pub struct PolicyHead {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl PolicyHead {
    /// Split a policy-network output row of length 2·act_dim into head
    /// parameters, clamping the log-std half.
    pub fn from_output(row: &[f64]) -> Self {
        assert!(row.len() % 2 == 0, "policy output must have even length");
        let a = row.len() / 2;
        PolicyHead {
            mean: row[..a].to_vec(),
            log_std: row[a..].iter().map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect(),
        }
    }

    pub fn act_dim(&self) -> usize {
        self.mean.len()
    }

    /// Sample a squashed action from the given standard-normal draw and
    /// return it with its log-probability (summed over dimensions).
    pub fn sample_squashed(&self, noise: &[f64]) -> (Vec<f64>, f64) {
        assert_eq!(noise.len(), self.mean.len());
        let mut action = Vec::with_capacity(self.mean.len());
        let mut log_prob = 0.0;
        for ((&mu, &ls), &xi) in self.mean.iter().zip(&self.log_std).zip(noise) {
            let sigma = ls.exp();
            let u = mu + sigma * xi;
            action.push(squash(u));
            log_prob += -0.5 * xi * xi - ls - LN_SQRT_2PI - tanh_log_jacobian(u);
        }
        (action, log_prob)
    }

    /// Deterministic action: the squashed mean.
    pub fn mean_action(&self) -> Vec<f64> {
        self.mean.iter().map(|&m| squash(m)).collect()
    }
}

/// ln(1 − tanh²(u)) via 2·(ln 2 − u − softplus(−2u)); exact and finite for
/// large |u| where the naive form underflows to ln(0).
pub fn tanh_log_jacobian(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

pub(crate) fn softplus(x: f64) -> f64 {
    // max(x,0) + ln(1 + e^{−|x|}) avoids overflow on either side.
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

//! Adaptive-moment optimizer over the flat parameter order of [`Mlp`].

use super::{Mlp, MlpGrads};
use crate::error::{Error, Result};

/// Optimizer state: first/second moment accumulators plus the step counter
/// used for bias correction. Moments follow the [`Mlp::flatten`] order.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    /// Rebuild from persisted state (checkpoint loading).
    pub fn restore(lr: f64, m: Vec<f64>, v: Vec<f64>, step: u64) -> Result<Self> {
        if m.len() != v.len() {
            return Err(Error::Dimension("adam moment vectors differ in length".into()));
        }
        Ok(AdamState { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m, v, step })
    }

    /// One update. Non-finite gradients leave parameters and moments
    /// untouched and surface as an error.
    pub fn step(&mut self, net: &mut Mlp, grads: &MlpGrads) -> Result<()> {
        let n = net.n_params();
        if self.m.len() != n {
            return Err(Error::Dimension(format!(
                "optimizer tracks {} params, network has {n}",
                self.m.len()
            )));
        }
        if grads.layers.len() != net.layers.len()
            || grads
                .layers
                .iter()
                .zip(&net.layers)
                .any(|(g, l)| g.w.rows() != l.w.rows() || g.w.cols() != l.w.cols())
        {
            return Err(Error::Dimension("gradient shapes do not match network".into()));
        }
        if !grads.is_finite() {
            return Err(Error::Domain("non-finite gradient; update skipped".into()));
        }

        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let mut off = 0;
        for (layer, glayer) in net.layers.iter_mut().zip(&grads.layers) {
            let params = layer.w.data_mut().iter_mut().chain(layer.b.iter_mut());
            let gs = glayer.w.data().iter().chain(glayer.b.iter());
            for (p, &g) in params.zip(gs) {
                let m = &mut self.m[off];
                let v = &mut self.v[off];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                off += 1;
            }
        }
        net.touch();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;

    fn scalar_net(w0: f64) -> Mlp {
        let mut l = Linear::zeros(1, 1);
        l.w.row_mut(0)[0] = w0;
        Mlp::from_layers(vec![l])
    }

    fn scalar_grads(g_w: f64, g_b: f64) -> MlpGrads {
        let mut g = Linear::zeros(1, 1);
        g.w.row_mut(0)[0] = g_w;
        g.b[0] = g_b;
        MlpGrads { layers: vec![g] }
    }

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let mut net = scalar_net(0.7);
        let mut opt = AdamState::new(net.n_params(), 1e-3);
        let before = net.flatten();
        opt.step(&mut net, &scalar_grads(0.0, 0.0)).unwrap();
        assert_eq!(net.flatten(), before);
    }

    #[test]
    fn first_step_has_lr_magnitude() {
        let mut net = scalar_net(0.0);
        let lr = 3e-4;
        let mut opt = AdamState::new(net.n_params(), lr);
        opt.step(&mut net, &scalar_grads(0.37, 0.0)).unwrap();
        let delta = net.flatten()[0].abs();
        assert!((delta - lr).abs() < lr * 1e-6, "first-step |Δ| = {delta}");
    }

    #[test]
    fn non_finite_gradients_are_rejected() {
        let mut net = scalar_net(1.0);
        let mut opt = AdamState::new(net.n_params(), 1e-3);
        let before = net.flatten();
        let res = opt.step(&mut net, &scalar_grads(f64::NAN, 0.0));
        assert!(matches!(res, Err(Error::Domain(_))));
        assert_eq!(net.flatten(), before);
        assert_eq!(opt.step_count(), 0);
    }

    /// Independent scalar implementation of the same update, followed for
    /// 100 steps with a deterministic gradient sequence.
    #[test]
    fn matches_scalar_reference_over_100_steps() {
        let mut net = scalar_net(0.5);
        let lr = 0.01;
        let mut opt = AdamState::new(net.n_params(), lr);

        let (mut p_ref, mut m_ref, mut v_ref) = (0.5f64, 0.0f64, 0.0f64);
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
        for t in 1..=100u32 {
            let g = (t as f64 * 0.13).sin();
            opt.step(&mut net, &scalar_grads(g, 0.0)).unwrap();
            m_ref = b1 * m_ref + (1.0 - b1) * g;
            v_ref = b2 * v_ref + (1.0 - b2) * g * g;
            let m_hat = m_ref / (1.0 - b1.powi(t as i32));
            let v_hat = v_ref / (1.0 - b2.powi(t as i32));
            p_ref -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        assert!((net.flatten()[0] - p_ref).abs() < 1e-10);
    }
}

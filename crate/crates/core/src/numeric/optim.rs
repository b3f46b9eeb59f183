use super::params::{Grads, ParamStore};
use super::Tensor;

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the scale applied.
pub fn clip_grad_norm(grads: &mut Grads, max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "max_norm must be positive");
    let norm = grads.global_norm();
    if norm > max_norm {
        let scale = max_norm / norm;
        grads.scale(scale);
        scale
    } else {
        1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 0.001, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected ADAM update of a flat parameter slice; `t` starts at 1.
pub fn adam_step(params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], t: u64, cfg: &AdamConfig) {
    assert!(t >= 1, "adam step count starts at 1");
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// ADAM state over a whole parameter store.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        Adam { config, step: 0, first: zeros.clone(), second: zeros }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameters without a gradient see a zero
    /// gradient, so their moments still decay.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) {
        self.step += 1;
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let i = id.index();
            let p = store.get_mut(id);
            match grads.get(id) {
                Some(g) => adam_step(p.data_mut(), g.data(), self.first[i].data_mut(), self.second[i].data_mut(), self.step, &self.config),
                None => {
                    let zeros = vec![0.0; p.len()];
                    adam_step(p.data_mut(), &zeros, self.first[i].data_mut(), self.second[i].data_mut(), self.step, &self.config)
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_scales_down_only() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::row(vec![6.0, 8.0])).unwrap();
        let mut g = Grads::for_store(&store);
        g.accumulate(id, &Tensor::row(vec![6.0, 8.0]));
        assert_eq!(clip_grad_norm(&mut g, 5.0), 0.5);
        assert!((g.global_norm() - 5.0).abs() < 1e-12);

        let mut g = Grads::for_store(&store);
        g.accumulate(id, &Tensor::row(vec![0.0, 3.0]));
        assert_eq!(clip_grad_norm(&mut g, 5.0), 1.0);
        assert_eq!(g.get(id).unwrap().data(), &[0.0, 3.0]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // m_hat = v_hat = 1, so the step is lr / (1 + eps).
        let (mut p, mut m, mut v) = ([1.0], [0.0], [0.0]);
        adam_step(&mut p, &[1.0], &mut m, &mut v, 1, &AdamConfig::default());
        let expected = 1.0 - 0.001 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
        assert!((p[0] - 0.999).abs() < 1e-9);
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let (mut p, mut m, mut v) = ([0.3, -2.0], [0.0; 2], [0.0; 2]);
        for t in 1..=5 {
            adam_step(&mut p, &[0.0, 0.0], &mut m, &mut v, t, &AdamConfig::default());
        }
        assert_eq!(p, [0.3, -2.0]);
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let (mut p, mut m, mut v) = ([0.5f64, 0.25], [0.0; 2], [0.0; 2]);
            for t in 1..=10 {
                let g = [p[0] * 2.0, p[1].sin()];
                adam_step(&mut p, &g, &mut m, &mut v, t, &AdamConfig::default());
            }
            p
        };
        let (a, b) = (run(), run());
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        assert_eq!(a[1].to_bits(), b[1].to_bits());
    }
}

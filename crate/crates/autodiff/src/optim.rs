use crate::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam over a fixed, ordered list of parameter tensors.
pub struct Adam<E: Element> {
    pub config: AdamConfig,
    m: Vec<Vec<E>>,
    v: Vec<Vec<E>>,
    t: i32,
}

impl<E: Element> Adam<E> {
    pub fn new(config: AdamConfig, params: &[&Tensor<E>]) -> Self {
        let zeros = |p: &&Tensor<E>| vec![E::zero(); p.numel()];
        Self {
            config,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
            t: 0,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn step(&mut self, params: &mut [&mut Tensor<E>], grads: &[Tensor<E>]) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        self.t += 1;
        let c = self.config;
        let b1 = E::of(c.beta1);
        let b2 = E::of(c.beta2);
        let one = E::one();
        let bias1 = one - E::of(c.beta1.powi(self.t));
        let bias2 = one - E::of(c.beta2.powi(self.t));
        let step = E::of(c.lr) / bias1;
        let eps = E::of(c.eps);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            assert_eq!(p.shape(), g.shape(), "gradient shape mismatch");
            let data = p.data_mut();
            for (((x, &gi), mi), vi) in data.iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                *x -= step * *mi / ((*vi / bias2).sqrt() + eps);
            }
        }
    }
}

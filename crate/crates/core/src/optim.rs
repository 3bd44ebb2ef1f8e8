//! Adam.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.5, beta2: 0.9, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok { Ok(()) } else { Err(Error::Config(format!("invalid Adam settings {self:?}"))) }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<F: Scalar> {
    pub step: u64,
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<F>>) -> Self {
        let m: Vec<Tensor<F>> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState { step: 0, v: m.clone(), m }
    }

    /// One update `p -= lr * m_hat / (sqrt(v_hat) + eps)` on every parameter.
    pub fn update(&mut self, cfg: &AdamConfig, params: Vec<&mut Tensor<F>>, grads: &[Tensor<F>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape("adam", &[&[params.len()], &[grads.len()], &[self.m.len()]]));
        }
        self.step += 1;
        let b1 = F::lit(cfg.beta1);
        let b2 = F::lit(cfg.beta2);
        let c1 = F::lit(1.0 - cfg.beta1.powf(self.step as f64));
        let c2 = F::lit(1.0 - cfg.beta2.powf(self.step as f64));
        let lr = F::lit(cfg.lr);
        let eps = F::lit(cfg.eps);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::shape("adam", &[p.shape(), g.shape(), m.shape()]));
            }
            let it = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut());
            for (((p, &g), m), v) in it {
                *m = b1 * *m + (F::one() - b1) * g;
                *v = b2 * *v + (F::one() - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

//! Adam optimiser over the trainable tensors of a network.

use super::network::NetworkWeights;
use super::Real;

#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(weights: &NetworkWeights<T>, lr: f64) -> Self {
        let zeros: Vec<Vec<T>> = weights
            .trainable()
            .iter()
            .map(|t| vec![T::zero(); t.data.len()])
            .collect();
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update of every trainable tensor.
    pub fn step(&mut self, weights: &mut NetworkWeights<T>, grads: &NetworkWeights<T>) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (c1, c2) = (T::one() - b1, T::one() - b2);
        let corr1 = 1.0 - self.beta1.powi(t);
        let corr2 = 1.0 - self.beta2.powi(t);
        let step_size = T::of(self.lr / corr1);
        let inv_corr2_sqrt = T::of(1.0 / corr2.sqrt());
        let eps = T::of(self.eps);
        for (i, (w, g)) in weights
            .trainable_mut()
            .iter_mut()
            .zip(grads.trainable())
            .enumerate()
        {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..w.data.len() {
                let gj = g.data[j];
                m[j] = b1 * m[j] + c1 * gj;
                v[j] = b2 * v[j] + c2 * gj * gj;
                w.data[j] -= step_size * m[j] / (v[j].sqrt() * inv_corr2_sqrt + eps);
            }
        }
    }
}

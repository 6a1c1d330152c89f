use coloc_autograd::{Float, Tensor};

use crate::models::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

/// Adam with bias correction; moments are keyed by parameter path.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T: Float> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: ParamStore<T>,
    pub v: ParamStore<T>,
}

impl<T: Float> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: ParamStore::new(),
            v: ParamStore::new(),
        }
    }

    /// One update of every `(name, gradient)` pair in `params`.
    pub fn update(&mut self, params: &mut ParamStore<T>, grads: &[(String, Tensor<T>)]) {
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let one = T::one();
        let corr1 = T::of(1.0 - c.beta1.powi(self.step as i32));
        let corr2 = T::of(1.0 - c.beta2.powi(self.step as i32));
        let lr = T::of(c.learning_rate);
        let eps = T::of(c.epsilon);
        for (name, g) in grads {
            let p = params
                .get_mut(name)
                .unwrap_or_else(|| panic!("no parameter `{name}`"));
            if !self.m.contains(name) {
                self.m
                    .insert(name.clone(), Tensor::zeros(g.shape().to_vec()));
                self.v
                    .insert(name.clone(), Tensor::zeros(g.shape().to_vec()));
            }
            let m = self.m.get_mut(name).unwrap().data_mut();
            let gd = g.data();
            for (mi, gi) in m.iter_mut().zip(gd) {
                *mi = b1 * *mi + (one - b1) * *gi;
            }
            let v = self.v.get_mut(name).unwrap().data_mut();
            for (vi, gi) in v.iter_mut().zip(gd) {
                *vi = b2 * *vi + (one - b2) * *gi * *gi;
            }
            let (m, v) = (
                self.m.get(name).unwrap().data(),
                self.v.get(name).unwrap().data(),
            );
            for ((pi, mi), vi) in p.data_mut().iter_mut().zip(m).zip(v) {
                let mhat = *mi / corr1;
                let vhat = *vi / corr2;
                *pi = *pi - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

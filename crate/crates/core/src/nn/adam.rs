use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::params::{collect, squared_norm, Params};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: i32,
    m: Vec<ArrayD<T>>,
    v: Vec<ArrayD<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step<P: Params<T>>(&mut self, params: &mut P, grads: &P) {
        let g = collect(grads);
        if self.m.is_empty() {
            self.m = g.iter().map(|(_, v)| ArrayD::zeros(v.raw_dim())).collect();
            self.v = self.m.clone();
        }
        let clip = match self.config.clip_norm {
            Some(max) => {
                let norm = squared_norm(grads).sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        let c = self.config;
        let b1 = T::of(c.beta1);
        let b2 = T::of(c.beta2);
        let bc1 = T::of(1.0 - c.beta1.powi(self.step));
        let bc2 = T::of(1.0 - c.beta2.powi(self.step));
        let lr = T::of(c.learning_rate);
        let eps = T::of(c.eps);
        let clip = T::of(clip);
        let mut i = 0;
        params.visit_mut("", &mut |_, mut p| {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            ndarray::Zip::from(&mut p)
                .and(m)
                .and(v)
                .and(&g[i].1)
                .for_each(|p, m, v, &gr| {
                    let gr = gr * clip;
                    *m = b1 * *m + (T::one() - b1) * gr;
                    *v = b2 * *v + (T::one() - b2) * gr * gr;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p -= lr * mhat / (vhat.sqrt() + eps);
                });
            i += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;
    use crate::params::zeros_like;
    use crate::rng::rng_from;
    use ndarray::array;

    #[test]
    fn adam_fits_a_linear_map() {
        let mut rng = rng_from(3);
        let mut model = Linear::<f64>::new(&mut rng, 2, 1);
        let x = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [2.0, -1.0]];
        let y = array![[3.0], [-1.0], [2.0], [7.0]];
        let mut opt = Adam::new(AdamConfig { learning_rate: 0.05, clip_norm: None, ..Default::default() });
        for _ in 0..2000 {
            let pred = model.forward(x.view());
            let d = (&pred - &y) * (2.0 / 4.0);
            let mut g = zeros_like(&model);
            model.backward(x.view(), d.view(), Some(&mut g));
            opt.step(&mut model, &g);
        }
        assert!((model.w[[0, 0]] - 3.0).abs() < 1e-3);
        assert!((model.w[[1, 0]] + 1.0).abs() < 1e-3);
    }
}

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::nn::{gelu, gelu_grad, Linear};
use crate::params::{join, Params, Visit, VisitMut};
use crate::rng::Rng;
use crate::trajectory::Va;
use crate::Scalar;

/// Latent probe: spatial mean pooling, then `linear → GELU → linear` onto
/// the valence-arousal plane, clipped to `[-1, 1]²`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeHead<T> {
    pub l1: Linear<T>,
    pub l2: Linear<T>,
}

#[derive(Debug, Clone)]
pub struct ProbeCache<T> {
    hidden_pre: Array2<T>,
    hidden: Array2<T>,
}

impl<T: Scalar> ProbeHead<T> {
    pub fn new(rng: &mut Rng, input_dim: usize, hidden_dim: usize) -> Self {
        ProbeHead {
            l1: Linear::new(rng, input_dim, hidden_dim),
            l2: Linear::with_std(rng, hidden_dim, 2, 0.1 / (hidden_dim as f64).sqrt()),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.l1.input_dim()
    }

    /// Unclipped MLP output for pooled features `n × D_h`.
    pub fn forward_pooled(&self, pooled: ArrayView2<T>) -> (Array2<T>, ProbeCache<T>) {
        let hidden_pre = self.l1.forward(pooled);
        let hidden = hidden_pre.mapv(gelu);
        let out = self.l2.forward(hidden.view());
        (out, ProbeCache { hidden_pre, hidden })
    }

    pub fn backward(&self, pooled: ArrayView2<T>, cache: &ProbeCache<T>, d_out: ArrayView2<T>, grads: &mut Self) {
        let d_hidden = self.l2.backward(cache.hidden.view(), d_out, Some(&mut grads.l2));
        let d_pre = d_hidden * &cache.hidden_pre.mapv(gelu_grad);
        self.l1.backward(pooled, d_pre.view(), Some(&mut grads.l1));
    }

    /// Clipped predictions for pooled features.
    pub fn predict_pooled(&self, pooled: ArrayView2<T>) -> Array2<T> {
        self.forward_pooled(pooled).0.mapv(clip_unit)
    }

    /// `e_t` for one frame's hidden states `M × D_h`.
    pub fn probe(&self, z: ArrayView2<T>) -> Result<Va> {
        if z.nrows() == 0 || z.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "frame hidden states {:?} do not match probe input width {}",
                z.shape(),
                self.input_dim()
            )));
        }
        let pooled = z.mean_axis(Axis(0)).expect("nonempty").insert_axis(Axis(0));
        let out = self.predict_pooled(pooled.view());
        Ok(Va::new(out[[0, 0]].f64(), out[[0, 1]].f64()))
    }
}

pub fn clip_unit<T: Scalar>(x: T) -> T {
    x.max(-T::one()).min(T::one())
}

impl<T: Scalar> Params<T> for ProbeHead<T> {
    fn visit<'a>(&'a self, prefix: &str, f: Visit<'a, '_, T>) {
        self.l1.visit(&join(prefix, "l1"), f);
        self.l2.visit(&join(prefix, "l2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: VisitMut<'_, T>) {
        self.l1.visit_mut(&join(prefix, "l1"), f);
        self.l2.visit_mut(&join(prefix, "l2"), f);
    }
}

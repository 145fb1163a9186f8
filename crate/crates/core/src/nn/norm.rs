use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::params::{visit_fields, visit_fields_mut, Params, Visit, VisitMut};
use crate::Scalar;

const EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gain: Array1<T>,
    pub bias: Array1<T>,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    xhat: Array2<T>,
    rstd: Array1<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gain: Array1::ones(dim),
            bias: Array1::zeros(dim),
        }
    }

    pub fn forward(&self, x: ArrayView2<T>) -> (Array2<T>, LayerNormCache<T>) {
        let d = T::of(x.ncols() as f64);
        let mut xhat = x.to_owned();
        let mut rstd = Array1::zeros(x.nrows());
        for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
            let mean = row.sum() / d;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|&v| v * v).sum::<T>() / d;
            *r = T::one() / (var + T::of(EPS)).sqrt();
            let s = *r;
            row.mapv_inplace(|v| v * s);
        }
        let y = &xhat * &self.gain + &self.bias;
        (y, LayerNormCache { xhat, rstd })
    }

    pub fn forward_row(&self, x: ArrayView1<T>) -> Array1<T> {
        let d = T::of(x.len() as f64);
        let mean = x.sum() / d;
        let centered = x.mapv(|v| v - mean);
        let var = centered.iter().map(|&v| v * v).sum::<T>() / d;
        let r = T::one() / (var + T::of(EPS)).sqrt();
        centered.mapv(|v| v * r) * &self.gain + &self.bias
    }

    pub fn backward(&self, cache: &LayerNormCache<T>, dy: ArrayView2<T>, grads: Option<&mut Self>) -> Array2<T> {
        if let Some(g) = grads {
            g.gain += &(&dy * &cache.xhat).sum_axis(Axis(0));
            g.bias += &dy.sum_axis(Axis(0));
        }
        let d = T::of(dy.ncols() as f64);
        let mut dx = &dy * &self.gain;
        for ((mut row, xh), &r) in dx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(cache.rstd.iter()) {
            let sum = row.sum();
            let dot = row.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<T>();
            for (v, &h) in row.iter_mut().zip(xh.iter()) {
                *v = r / d * (d * *v - sum - h * dot);
            }
        }
        dx
    }
}

impl<T: Scalar> Params<T> for LayerNorm<T> {
    fn visit<'a>(&'a self, prefix: &str, f: Visit<'a, '_, T>) {
        visit_fields!(self, prefix, f; gain, bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: VisitMut<'_, T>) {
        visit_fields_mut!(self, prefix, f; gain, bias);
    }
}

//! Hand-written layers with explicit backward passes.
//!
//! Each layer returns whatever it needs for its backward pass from
//! `forward`, and `backward` accumulates parameter gradients into an
//! optional value of the layer's own type.

mod activation;
mod adam;
mod attention;
mod linear;
mod norm;

pub use activation::{gelu, gelu_grad, leaky_relu, leaky_relu_grad, Dropout};
pub use adam::{Adam, AdamConfig};
pub use attention::{Attention, AttentionCache, KvCache};
pub use linear::Linear;
pub use norm::{LayerNorm, LayerNormCache};

use ndarray::Array2;

use crate::Scalar;

/// Fixed sinusoidal encoding of integer positions (`rows × dim`), offset by `start`.
pub fn sinusoidal<T: Scalar>(start: usize, rows: usize, dim: usize, base: f64) -> Array2<T> {
    Array2::from_shape_fn((rows, dim), |(r, c)| {
        let pos = (start + r) as f64;
        let i = (c / 2) as f64;
        let freq = base.powf(-2.0 * i / dim as f64);
        T::of(if c % 2 == 0 { (pos * freq).sin() } else { (pos * freq).cos() })
    })
}

/// Row-wise softmax in place.
pub fn softmax_rows<T: Scalar>(m: &mut Array2<T>) {
    for mut row in m.rows_mut() {
        softmax_in_place(row.as_slice_mut().expect("contiguous row"));
    }
}

pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in row.iter_mut() {
        *x = if *x == T::neg_infinity() { T::zero() } else { (*x - max).exp() };
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// `log(sum(exp(row)))`, stable.
pub fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = row.iter().map(|&x| (x - max).exp()).sum();
    max + s.ln()
}

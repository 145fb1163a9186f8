use ndarray::Array2;
use rand::Rng as _;

use crate::rng::Rng;
use crate::Scalar;

const GELU_A: f64 = 0.044_715;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// GELU, tanh approximation.
pub fn gelu<T: Scalar>(x: T) -> T {
    let u = T::of(SQRT_2_OVER_PI) * (x + T::of(GELU_A) * x * x * x);
    T::of(0.5) * x * (T::one() + u.tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let k = T::of(SQRT_2_OVER_PI);
    let a = T::of(GELU_A);
    let th = (k * (x + a * x * x * x)).tanh();
    let half = T::of(0.5);
    half * (T::one() + th) + half * x * (T::one() - th * th) * k * (T::one() + T::of(3.0) * a * x * x)
}

pub fn leaky_relu<T: Scalar>(x: T, slope: T) -> T {
    if x >= T::zero() {
        x
    } else {
        slope * x
    }
}

pub fn leaky_relu_grad<T: Scalar>(x: T, slope: T) -> T {
    if x >= T::zero() {
        T::one()
    } else {
        slope
    }
}

/// Inverted dropout. The mask is kept for the backward pass.
#[derive(Debug, Clone, Copy)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    pub fn mask<T: Scalar>(&self, rows: usize, cols: usize, rng: &mut Rng) -> Array2<T> {
        let keep = T::of(1.0 / (1.0 - self.rate));
        Array2::from_shape_simple_fn((rows, cols), || {
            if rng.random::<f64>() < self.rate {
                T::zero()
            } else {
                keep
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_grad_matches_central_difference() {
        for &x in &[-3.0f64, -1.2, -0.3, 0.0, 0.4, 1.7, 3.1] {
            let h = 1e-5;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(0.0f64), 0.0);
        assert!((gelu(1.0f64) - 0.841_191_990).abs() < 1e-6);
    }
}

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::params::{visit_fields, visit_fields_mut, Params, Visit, VisitMut};
use crate::rng::{normal_matrix, Rng};
use crate::Scalar;

/// Affine map `y = x W + b` with `W: in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub w: Array2<T>,
    pub b: Array1<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(rng: &mut Rng, input: usize, output: usize) -> Self {
        Self::with_std(rng, input, output, 1.0 / (input as f64).sqrt())
    }

    pub fn with_std(rng: &mut Rng, input: usize, output: usize, std: f64) -> Self {
        Linear {
            w: normal_matrix(rng, input, output, std),
            b: Array1::zeros(output),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Linear {
            w: Array2::eye(dim),
            b: Array1::zeros(dim),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: ArrayView2<T>) -> Array2<T> {
        x.dot(&self.w) + &self.b
    }

    pub fn forward_row(&self, x: ndarray::ArrayView1<T>) -> Array1<T> {
        x.dot(&self.w) + &self.b
    }

    /// Returns `dx`; accumulates `dW`, `db` when `grads` is given.
    pub fn backward(&self, x: ArrayView2<T>, dy: ArrayView2<T>, grads: Option<&mut Self>) -> Array2<T> {
        if let Some(g) = grads {
            g.w += &x.t().dot(&dy);
            g.b += &dy.sum_axis(Axis(0));
        }
        dy.dot(&self.w.t())
    }
}

impl<T: Scalar> Params<T> for Linear<T> {
    fn visit<'a>(&'a self, prefix: &str, f: Visit<'a, '_, T>) {
        visit_fields!(self, prefix, f; w, b);
    }

    fn visit_mut(&mut self, prefix: &str, f: VisitMut<'_, T>) {
        visit_fields_mut!(self, prefix, f; w, b);
    }
}

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::Parameters;

/// Affine map `y = W x + b` applied row-wise to a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out x in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    /// Weights uniform in `[-bound, bound]`, zero bias.
    pub fn uniform<R: Rng + ?Sized>(input: usize, output: usize, bound: f64, rng: &mut R) -> Self {
        let weight = Array2::from_shape_simple_fn((output, input), || rng.random_range(-bound..=bound));
        Self {
            weight,
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    /// Returns parameter gradients and the input gradient.
    pub fn backward(&self, x: ArrayView2<'_, f64>, grad_out: ArrayView2<'_, f64>) -> (Dense, Array2<f64>) {
        let weight = grad_out.t().dot(&x).as_standard_layout().into_owned();
        let bias = grad_out.sum_axis(Axis(0));
        let grad_in = grad_out.dot(&self.weight);
        (Dense { weight, bias }, grad_in)
    }
}

impl Parameters for Dense {
    fn param_slices(&self) -> Vec<&[f64]> {
        vec![
            self.weight.as_slice().expect("standard layout"),
            self.bias.as_slice().expect("standard layout"),
        ]
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.weight.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
        ]
    }
}

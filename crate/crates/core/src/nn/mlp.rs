use ndarray::{Array2, ArrayView2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_finite, Dense, Parameters};
use crate::error::{Error, Result};

/// Two ReLU hidden layers and a linear output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub output: usize,
}

impl MlpSpec {
    pub fn new(input: usize, hidden1: usize, hidden2: usize, output: usize) -> Self {
        Self {
            input,
            hidden1,
            hidden2,
            output,
        }
    }

    fn widths(&self) -> [usize; 4] {
        [self.input, self.hidden1, self.hidden2, self.output]
    }

    fn validate(&self) -> Result<()> {
        if self.widths().contains(&0) {
            return Err(Error::Config(format!("MLP widths must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: [Dense; 3],
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub input: Array2<f64>,
    /// Pre-activations of the two hidden layers.
    pub pre_activations: [Array2<f64>; 2],
    pub activations: [Array2<f64>; 2],
}

fn relu(z: &Array2<f64>) -> Array2<f64> {
    z.mapv(|v| v.max(0.0))
}

impl Mlp {
    pub fn zeros(spec: &MlpSpec) -> Result<Self> {
        spec.validate()?;
        let w = spec.widths();
        Ok(Self {
            layers: [Dense::zeros(w[0], w[1]), Dense::zeros(w[1], w[2]), Dense::zeros(w[2], w[3])],
        })
    }

    /// He-uniform hidden layers, `1/sqrt(fan_in)` uniform output layer, zero biases.
    pub fn init<R: Rng + ?Sized>(spec: &MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let w = spec.widths();
        let he = |fan_in: usize| (6.0 / fan_in as f64).sqrt();
        Ok(Self {
            layers: [
                Dense::uniform(w[0], w[1], he(w[0]), rng),
                Dense::uniform(w[1], w[2], he(w[1]), rng),
                Dense::uniform(w[2], w[3], 1.0 / (w[2] as f64).sqrt(), rng),
            ],
        })
    }

    pub fn from_layers(layers: [Dense; 3]) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::Shape(format!(
                    "layer output {} does not feed layer input {}",
                    pair[0].output_dim(),
                    pair[1].input_dim()
                )));
            }
        }
        for l in &layers {
            if l.bias.len() != l.output_dim() {
                return Err(Error::Shape("bias length differs from layer output".into()));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense; 3] {
        &self.layers
    }

    pub fn spec(&self) -> MlpSpec {
        MlpSpec::new(
            self.layers[0].input_dim(),
            self.layers[0].output_dim(),
            self.layers[1].output_dim(),
            self.layers[2].output_dim(),
        )
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.spec()).expect("spec of an existing network is valid")
    }

    /// Batched forward pass over the rows of `x`.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, MlpCache)> {
        if x.ncols() != self.layers[0].input_dim() {
            return Err(Error::Shape(format!(
                "input dim {} != MLP input dim {}",
                x.ncols(),
                self.layers[0].input_dim()
            )));
        }
        check_finite("MLP input", x.iter().copied())?;
        let z1 = self.layers[0].forward(x);
        let a1 = relu(&z1);
        let z2 = self.layers[1].forward(a1.view());
        let a2 = relu(&z2);
        let y = self.layers[2].forward(a2.view());
        Ok((
            y,
            MlpCache {
                input: x.to_owned(),
                pre_activations: [z1, z2],
                activations: [a1, a2],
            },
        ))
    }

    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Shape(e.to_string()))?;
        Ok(self.forward(view)?.0.into_raw_vec_and_offset().0)
    }

    /// Parameter gradients and input gradient for upstream `grad_out`.
    pub fn backward(&self, cache: &MlpCache, grad_out: ArrayView2<'_, f64>) -> Result<(Mlp, Array2<f64>)> {
        if grad_out.dim() != (cache.input.nrows(), self.layers[2].output_dim()) {
            return Err(Error::Shape(format!(
                "upstream gradient {:?} does not match cached batch",
                grad_out.dim()
            )));
        }
        let [a1, a2] = &cache.activations;
        let [z1, z2] = &cache.pre_activations;
        let (g3, ga2) = self.layers[2].backward(a2.view(), grad_out);
        let gz2 = relu_backward(ga2, z2);
        let (g2, ga1) = self.layers[1].backward(a1.view(), gz2.view());
        let gz1 = relu_backward(ga1, z1);
        let (g1, gx) = self.layers[0].backward(cache.input.view(), gz1.view());
        Ok((Mlp { layers: [g1, g2, g3] }, gx))
    }
}

fn relu_backward(mut grad: Array2<f64>, pre: &Array2<f64>) -> Array2<f64> {
    Zip::from(&mut grad).and(pre).for_each(|g, &z| {
        if z <= 0.0 {
            *g = 0.0;
        }
    });
    grad
}

impl Parameters for Mlp {
    fn param_slices(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.param_slices()).collect()
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.param_slices_mut()).collect()
    }
}

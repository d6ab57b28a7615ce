//! Small neural core: dense layers, a two-hidden-layer ReLU MLP, an LSTM
//! sequence encoder, Adam, and a binary checkpoint format.
//!
//! Gradients are written out by hand. Every parameter container implements
//! [`Parameters`], which exposes the tensors as flat slices in a fixed order;
//! gradients use the same type as the parameters they differentiate.
//!
//! Parameters and activations are `f64`.

mod adam;
mod checkpoint;
mod dense;
mod lstm;
mod mlp;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureSequence;
use crate::error::{Error, Result};

pub use adam::{AdamConfig, AdamState, LrSchedule};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use dense::Dense;
pub use lstm::{LstmCache, LstmEncoder, LstmSpec};
pub use mlp::{Mlp, MlpCache, MlpSpec};

/// Flat, ordered view of trainable tensors.
pub trait Parameters {
    fn param_slices(&self) -> Vec<&[f64]>;
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.param_slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Sets every parameter to `value`.
    fn fill(&mut self, value: f64) {
        for s in self.param_slices_mut() {
            s.fill(value);
        }
    }

    /// Adds `other` elementwise; shapes must match.
    fn accumulate(&mut self, other: &Self)
    where
        Self: Sized,
    {
        for (dst, src) in self.param_slices_mut().into_iter().zip(other.param_slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Mlp,
    Lstm,
}

/// Shape description sufficient to rebuild an encoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "lowercase")]
pub enum EncoderSpec {
    Mlp(MlpSpec),
    Lstm(LstmSpec),
}

impl EncoderSpec {
    pub fn output_dim(&self) -> usize {
        match self {
            EncoderSpec::Mlp(s) => s.output,
            EncoderSpec::Lstm(s) => s.output,
        }
    }
}

/// Input to an encoder: a pooled vector for the MLP, a frame sequence for the LSTM.
#[derive(Debug, Clone, Copy)]
pub enum EncoderInput<'a> {
    Vector(&'a [f32]),
    Sequence(&'a FeatureSequence),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Encoder {
    Mlp(Mlp),
    Lstm(LstmEncoder),
}

#[derive(Debug, Clone)]
pub enum EncoderCache {
    Mlp(Box<MlpCache>),
    Lstm(Vec<LstmCache>),
}

impl Encoder {
    pub fn zeros(spec: &EncoderSpec) -> Result<Self> {
        Ok(match spec {
            EncoderSpec::Mlp(s) => Encoder::Mlp(Mlp::zeros(s)?),
            EncoderSpec::Lstm(s) => Encoder::Lstm(LstmEncoder::zeros(s)?),
        })
    }

    pub fn init<R: Rng + ?Sized>(spec: &EncoderSpec, rng: &mut R) -> Result<Self> {
        Ok(match spec {
            EncoderSpec::Mlp(s) => Encoder::Mlp(Mlp::init(s, rng)?),
            EncoderSpec::Lstm(s) => Encoder::Lstm(LstmEncoder::init(s, rng)?),
        })
    }

    pub fn spec(&self) -> EncoderSpec {
        match self {
            Encoder::Mlp(m) => EncoderSpec::Mlp(m.spec()),
            Encoder::Lstm(l) => EncoderSpec::Lstm(l.spec()),
        }
    }

    pub fn architecture(&self) -> Architecture {
        match self {
            Encoder::Mlp(_) => Architecture::Mlp,
            Encoder::Lstm(_) => Architecture::Lstm,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.spec().output_dim()
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            Encoder::Mlp(m) => Encoder::Mlp(m.zeros_like()),
            Encoder::Lstm(l) => Encoder::Lstm(l.zeros_like()),
        }
    }

    /// Projects a batch; row `i` of the output belongs to `inputs[i]`.
    pub fn forward_batch(&self, inputs: &[EncoderInput<'_>]) -> Result<(Array2<f64>, EncoderCache)> {
        match self {
            Encoder::Mlp(m) => {
                let d = m.spec().input;
                let mut x = Array2::zeros((inputs.len(), d));
                for (i, inp) in inputs.iter().enumerate() {
                    let EncoderInput::Vector(v) = inp else {
                        return Err(Error::Shape("MLP encoder expects vector inputs".into()));
                    };
                    if v.len() != d {
                        return Err(Error::Shape(format!("input dim {} != encoder input dim {d}", v.len())));
                    }
                    for (dst, &src) in x.row_mut(i).iter_mut().zip(v.iter()) {
                        *dst = f64::from(src);
                    }
                }
                let (y, cache) = m.forward(x.view())?;
                Ok((y, EncoderCache::Mlp(Box::new(cache))))
            }
            Encoder::Lstm(l) => {
                let seqs = inputs
                    .iter()
                    .map(|inp| match inp {
                        EncoderInput::Sequence(s) => Ok(*s),
                        EncoderInput::Vector(_) => Err(Error::Shape("LSTM encoder expects sequence inputs".into())),
                    })
                    .collect::<Result<Vec<_>>>()?;
                let outs = seqs
                    .par_iter()
                    .map(|s| l.forward(&sequence_matrix(s)))
                    .collect::<Result<Vec<_>>>()?;
                let mut y = Array2::zeros((outs.len(), l.spec().output));
                let mut caches = Vec::with_capacity(outs.len());
                for (i, (out, cache)) in outs.into_iter().enumerate() {
                    y.row_mut(i).assign(&out);
                    caches.push(cache);
                }
                Ok((y, EncoderCache::Lstm(caches)))
            }
        }
    }

    /// Parameter gradients of `sum(grad_out * output)` for the cached batch.
    pub fn backward_batch(&self, cache: &EncoderCache, grad_out: ArrayView2<'_, f64>) -> Result<Encoder> {
        match (self, cache) {
            (Encoder::Mlp(m), EncoderCache::Mlp(c)) => Ok(Encoder::Mlp(m.backward(c, grad_out)?.0)),
            (Encoder::Lstm(l), EncoderCache::Lstm(caches)) => {
                if caches.len() != grad_out.nrows() {
                    return Err(Error::Shape("gradient rows do not match cached batch".into()));
                }
                let per_item = caches
                    .par_iter()
                    .enumerate()
                    .map(|(i, c)| l.backward(c, grad_out.row(i)).map(|(g, _)| g))
                    .collect::<Result<Vec<_>>>()?;
                // Fixed summation order keeps the result independent of scheduling.
                let mut total = l.zeros_like();
                for g in &per_item {
                    total.accumulate(g);
                }
                Ok(Encoder::Lstm(total))
            }
            _ => Err(Error::Shape("cache does not match encoder architecture".into())),
        }
    }
}

impl Parameters for Encoder {
    fn param_slices(&self) -> Vec<&[f64]> {
        match self {
            Encoder::Mlp(m) => m.param_slices(),
            Encoder::Lstm(l) => l.param_slices(),
        }
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Encoder::Mlp(m) => m.param_slices_mut(),
            Encoder::Lstm(l) => l.param_slices_mut(),
        }
    }
}

pub(crate) fn sequence_matrix(seq: &FeatureSequence) -> Array2<f64> {
    Array2::from_shape_fn((seq.n_frames, seq.n_coeffs), |(t, k)| f64::from(seq.data[t * seq.n_coeffs + k]))
}

pub(crate) fn check_finite(what: &str, values: impl IntoIterator<Item = f64>) -> Result<()> {
    if values.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

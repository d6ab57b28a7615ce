use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sampling::{sample_triplets, AnchorMode, Triplet, TrainingPool};
use super::{cosine_distance_grad, hinge};
use crate::dataset::{Dataset, Modality, SplitTag};
use crate::error::{Error, Result};
use crate::nn::{
    AdamConfig, AdamState, Architecture, Checkpoint, Encoder, EncoderInput, EncoderSpec, LrSchedule, LstmSpec,
    MlpSpec, Parameters,
};
use crate::rng::{hash_str, rng_for};

/// Rows per parallel chunk when projecting many records.
const PROJECTION_CHUNK: usize = 256;
const EPOCH_STREAM_BASE: u64 = 0x5EED_0000;

pub type LanguageArch = Architecture;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub margin: f64,
    pub epochs: usize,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
    pub batch_size: usize,
    /// Defaults to the number of training language records.
    pub triplets_per_epoch: Option<usize>,
    pub anchor_mode: AnchorMode,
    pub seed: u64,
    pub language_arch: LanguageArch,
    /// Hidden widths of both MLP encoders.
    pub hidden: [usize; 2],
    pub projection_dim: usize,
    pub lstm_hidden: usize,
    pub lstm_tail: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: 0.4,
            epochs: 300,
            schedule: LrSchedule::default(),
            adam: AdamConfig::default(),
            batch_size: 64,
            triplets_per_epoch: None,
            anchor_mode: AnchorMode::ClassUniform,
            seed: 0,
            language_arch: Architecture::Mlp,
            hidden: [2048, 1536],
            projection_dim: 1024,
            lstm_hidden: 64,
            lstm_tail: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!("margin must be a finite non-negative number, got {}", self.margin)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.triplets_per_epoch == Some(0) {
            return Err(Error::Config("epochs, batch size and triplets per epoch must be positive".into()));
        }
        if self.hidden.contains(&0) || self.projection_dim == 0 || self.lstm_hidden == 0 || self.lstm_tail == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        self.schedule.validate()
    }

    /// Encoder shapes for the given input widths. For the LSTM language
    /// encoder `language_input` is the frame width.
    pub fn encoder_specs(&self, language_input: usize, vision_input: usize) -> (EncoderSpec, EncoderSpec) {
        let [h1, h2] = self.hidden;
        let language = match self.language_arch {
            Architecture::Mlp => EncoderSpec::Mlp(MlpSpec::new(language_input, h1, h2, self.projection_dim)),
            Architecture::Lstm => EncoderSpec::Lstm(LstmSpec {
                input: language_input,
                hidden: self.lstm_hidden,
                tail: self.lstm_tail,
                output: self.projection_dim,
            }),
        };
        let vision = EncoderSpec::Mlp(MlpSpec::new(vision_input, h1, h2, self.projection_dim));
        (language, vision)
    }
}

/// A language encoder and a vision encoder sharing one output space.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifold {
    pub language: Encoder,
    pub vision: Encoder,
}

impl Manifold {
    pub fn new(language: Encoder, vision: Encoder) -> Result<Self> {
        if language.output_dim() != vision.output_dim() {
            return Err(Error::Config(format!(
                "encoder output dims differ: language {} vs vision {}",
                language.output_dim(),
                vision.output_dim()
            )));
        }
        if let Encoder::Lstm(_) = vision {
            return Err(Error::Config("the vision encoder must be an MLP".into()));
        }
        Ok(Self { language, vision })
    }

    /// Randomly initialized encoders sized for `dataset`.
    pub fn init(dataset: &Dataset, config: &TrainConfig) -> Result<Self> {
        let language_input = match config.language_arch {
            Architecture::Mlp => dataset.dim(Modality::Language),
            Architecture::Lstm => dataset.sequence_dim(),
        }
        .ok_or_else(|| Error::Config("dataset has no language inputs for the chosen encoder".into()))?;
        let vision_input = dataset
            .dim(Modality::Vision)
            .ok_or_else(|| Error::Config("dataset has no vision records".into()))?;
        let (ls, vs) = config.encoder_specs(language_input, vision_input);
        let language = Encoder::init(&ls, &mut rng_for(config.seed, hash_str("init/language")))?;
        let vision = Encoder::init(&vs, &mut rng_for(config.seed, hash_str("init/vision")))?;
        Self::new(language, vision)
    }

    pub fn output_dim(&self) -> usize {
        self.vision.output_dim()
    }

    pub fn encoder(&self, modality: Modality) -> &Encoder {
        match modality {
            Modality::Language => &self.language,
            Modality::Vision => &self.vision,
        }
    }

    fn encoder_mut(&mut self, modality: Modality) -> &mut Encoder {
        match modality {
            Modality::Language => &mut self.language,
            Modality::Vision => &mut self.vision,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            language: self.language.zeros_like(),
            vision: self.vision.zeros_like(),
        }
    }

    /// Encoder input for record `index`: its vector, or its frame sequence
    /// when the language encoder is recurrent.
    pub fn input_for<'a>(&self, dataset: &'a Dataset, index: usize) -> Result<EncoderInput<'a>> {
        let r = dataset.record(index);
        match (r.modality, &self.language) {
            (Modality::Language, Encoder::Lstm(_)) => dataset
                .sequence(&r.record_id)
                .map(EncoderInput::Sequence)
                .ok_or_else(|| Error::InvalidRecord {
                    record_id: r.record_id.clone(),
                    reason: "no feature sequence for the recurrent language encoder".into(),
                }),
            _ => Ok(EncoderInput::Vector(&r.vector)),
        }
    }

    pub fn project(&self, dataset: &Dataset, index: usize) -> Result<Vec<f64>> {
        let input = self.input_for(dataset, index)?;
        let modality = dataset.record(index).modality;
        let (y, _) = self.encoder(modality).forward_batch(&[input])?;
        Ok(y.row(0).to_vec())
    }

    /// Projects many records; output row `k` belongs to `indices[k]`.
    pub fn project_all(&self, dataset: &Dataset, indices: &[usize]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((indices.len(), self.output_dim()));
        for modality in Modality::ALL {
            let rows: Vec<usize> = (0..indices.len())
                .filter(|&k| dataset.record(indices[k]).modality == modality)
                .collect();
            let encoder = self.encoder(modality);
            let chunks = rows
                .par_chunks(PROJECTION_CHUNK)
                .map(|chunk| {
                    let inputs = chunk
                        .iter()
                        .map(|&k| self.input_for(dataset, indices[k]))
                        .collect::<Result<Vec<_>>>()?;
                    Ok(encoder.forward_batch(&inputs)?.0)
                })
                .collect::<Result<Vec<_>>>()?;
            for (chunk, y) in rows.chunks(PROJECTION_CHUNK).zip(chunks) {
                for (r, &k) in chunk.iter().enumerate() {
                    out.row_mut(k).assign(&y.row(r));
                }
            }
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self, metadata: serde_json::Value) -> Checkpoint {
        Checkpoint {
            metadata,
            encoders: vec![
                ("language".into(), self.language.clone()),
                ("vision".into(), self.vision.clone()),
            ],
        }
    }

    pub fn from_checkpoint(checkpoint: &Checkpoint) -> Result<Self> {
        let get = |name: &str| {
            checkpoint
                .encoder(name)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("checkpoint has no {name} encoder")))
        };
        Self::new(get("language")?, get("vision")?)
    }
}

impl Parameters for Manifold {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = self.language.param_slices();
        v.extend(self.vision.param_slices());
        v
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.language.param_slices_mut();
        v.extend(self.vision.param_slices_mut());
        v
    }
}

/// Mean triplet loss over a batch and its gradient with respect to every
/// manifold parameter. `active[k]` reports whether triplet `k` violates the margin.
#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub loss: f64,
    pub grads: Manifold,
    pub active: Vec<bool>,
}

pub fn batch_gradient(manifold: &Manifold, dataset: &Dataset, triplets: &[Triplet], margin: f64) -> Result<BatchGradient> {
    if triplets.is_empty() {
        return Err(Error::Config("empty triplet batch".into()));
    }
    // Route every member to its encoder; `rows[k][j]` is (modality, row).
    let mut inputs: [Vec<EncoderInput<'_>>; 2] = [Vec::new(), Vec::new()];
    let slot = |m: Modality| usize::from(m == Modality::Language);
    let mut rows = Vec::with_capacity(triplets.len());
    for t in triplets {
        let mut r = [(Modality::Vision, 0); 3];
        for (j, (index, modality)) in t.members().into_iter().enumerate() {
            let s = slot(modality);
            r[j] = (modality, inputs[s].len());
            inputs[s].push(manifold.input_for(dataset, index)?);
        }
        rows.push(r);
    }
    let mut outputs = Vec::with_capacity(2);
    for (s, modality) in [Modality::Vision, Modality::Language].into_iter().enumerate() {
        outputs.push(if inputs[s].is_empty() {
            None
        } else {
            Some(manifold.encoder(modality).forward_batch(&inputs[s])?)
        });
    }
    let proj = |(m, row): (Modality, usize)| {
        let (y, _) = outputs[slot(m)].as_ref().expect("encoder ran for routed member");
        y.row(row).to_vec()
    };

    let scale = 1.0 / triplets.len() as f64;
    let mut grad_out: Vec<Option<Array2<f64>>> = outputs.iter().map(|o| o.as_ref().map(|(y, _)| Array2::zeros(y.dim()))).collect();
    let mut loss = 0.0;
    let mut active = Vec::with_capacity(triplets.len());
    for r in &rows {
        let (a, p, n) = (proj(r[0]), proj(r[1]), proj(r[2]));
        let (d_ap, ga_p, gp) = cosine_distance_grad(&a, &p)?;
        let (d_an, ga_n, gn) = cosine_distance_grad(&a, &n)?;
        let l = hinge(d_ap, d_an, margin);
        loss += l;
        active.push(l > 0.0);
        if l > 0.0 {
            let updates = [
                (r[0], ga_p.iter().zip(&ga_n).map(|(x, y)| x - y).collect::<Vec<_>>()),
                (r[1], gp),
                (r[2], gn.iter().map(|x| -x).collect()),
            ];
            for ((m, row), g) in updates {
                let target = grad_out[slot(m)].as_mut().expect("encoder ran for routed member");
                for (dst, v) in target.row_mut(row).iter_mut().zip(g) {
                    *dst += v * scale;
                }
            }
        }
    }
    let loss = loss * scale;

    let mut grads = manifold.zeros_like();
    for (s, modality) in [Modality::Vision, Modality::Language].into_iter().enumerate() {
        if let (Some((_, cache)), Some(g)) = (&outputs[s], &grad_out[s]) {
            *grads.encoder_mut(modality) = manifold.encoder(modality).backward_batch(cache, g.view())?;
        }
    }
    Ok(BatchGradient { loss, grads, active })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub manifold: Manifold,
    pub loss_curve: Vec<EpochStats>,
    pub skipped_triplets: usize,
}

/// Trains on the records tagged `Train`.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_observer(dataset, config, |_, _| Ok(()))
}

/// As [`train`], calling `observer` after every epoch.
pub fn train_with_observer<F>(dataset: &Dataset, config: &TrainConfig, mut observer: F) -> Result<TrainOutcome>
where
    F: FnMut(&EpochStats, &Manifold) -> Result<()>,
{
    config.validate()?;
    let train_idx = dataset.indices_in(SplitTag::Train);
    if train_idx.is_empty() {
        return Err(Error::Config("no records are tagged for training".into()));
    }
    let pool = TrainingPool::new(dataset, &train_idx)?;
    let per_epoch = config.triplets_per_epoch.unwrap_or_else(|| {
        train_idx
            .iter()
            .filter(|&&i| dataset.record(i).modality == Modality::Language)
            .count()
            .max(1)
    });
    let mut manifold = Manifold::init(dataset, config)?;
    let mut adam_language = AdamState::new(&manifold.language, config.adam);
    let mut adam_vision = AdamState::new(&manifold.vision, config.adam);
    let mut loss_curve = Vec::with_capacity(config.epochs);
    let mut skipped_triplets = 0;

    for epoch in 0..config.epochs {
        let lr = config.schedule.lr(epoch);
        let mut rng = rng_for(config.seed, EPOCH_STREAM_BASE + epoch as u64);
        let (triplets, skipped) = sample_triplets(&pool, per_epoch, config.anchor_mode, &mut rng);
        skipped_triplets += skipped;
        if triplets.is_empty() {
            return Err(Error::Config(format!("epoch {epoch}: no triplet could be sampled")));
        }
        let mut total = 0.0;
        for (batch, chunk) in triplets.chunks(config.batch_size).enumerate() {
            let bg = batch_gradient(&manifold, dataset, chunk, config.margin)?;
            if !bg.loss.is_finite() || !bg.grads.all_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch,
                    loss: bg.loss,
                });
            }
            total += bg.loss * chunk.len() as f64;
            adam_language.step(&mut manifold.language, &bg.grads.language, lr)?;
            adam_vision.step(&mut manifold.vision, &bg.grads.vision, lr)?;
            if !manifold.all_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch,
                    loss: bg.loss,
                });
            }
        }
        let stats = EpochStats {
            epoch,
            mean_loss: total / triplets.len() as f64,
            lr,
        };
        log::debug!("epoch {epoch}: mean loss {:.6} lr {lr:e}", stats.mean_loss);
        loss_curve.push(stats);
        observer(&stats, &manifold)?;
    }
    Ok(TrainOutcome {
        manifold,
        loss_curve,
        skipped_triplets,
    })
}

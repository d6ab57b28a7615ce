//! Seeded synthetic paired data.
//!
//! Every object has a latent point drawn around its class mean. Vision and
//! language vectors are fixed random linear images of that latent point plus
//! isotropic Gaussian noise, so instance identity is shared across modalities.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, EmbeddingRecord, Modality, SplitTag};
use crate::error::{Error, Result};
use crate::rng::{hash_str, rng_for};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub instances_per_class: usize,
    pub language_dim: usize,
    pub vision_dim: usize,
    pub latent_dim: usize,
    /// Standard deviation of class means in latent space.
    pub class_scale: f64,
    /// Standard deviation of an instance around its class mean.
    pub instance_scale: f64,
    /// Observation noise standard deviation, per output coordinate.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            instances_per_class: 40,
            language_dim: 64,
            vision_dim: 96,
            latent_dim: 8,
            class_scale: 1.0,
            instance_scale: 0.5,
            noise: 0.05,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    /// No class or instance structure: every vector is independent noise.
    pub fn unstructured(classes: usize, instances_per_class: usize, seed: u64) -> Self {
        Self {
            classes,
            instances_per_class,
            class_scale: 0.0,
            instance_scale: 0.0,
            noise: 1.0,
            seed,
            ..Self::default()
        }
    }
}

fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || scale * rng.sample::<f64, _>(StandardNormal))
}

fn gaussian_vector<R: Rng + ?Sized>(n: usize, scale: f64, rng: &mut R) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || scale * rng.sample::<f64, _>(StandardNormal))
}

/// Latent structure and modality maps for one configuration.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    config: SyntheticConfig,
    /// `objects x latent_dim`, row `c * instances_per_class + i`.
    latents: Array2<f64>,
    language_map: Array2<f64>,
    vision_map: Array2<f64>,
}

impl SyntheticWorld {
    pub fn new(config: SyntheticConfig) -> Result<Self> {
        if config.classes < 2 || config.instances_per_class == 0 {
            return Err(Error::Config("synthetic data needs >= 2 classes and >= 1 instance per class".into()));
        }
        if config.language_dim == 0 || config.vision_dim == 0 || config.latent_dim == 0 {
            return Err(Error::Config("synthetic dimensions must be positive".into()));
        }
        let mut rng = rng_for(config.seed, hash_str("synthetic/world"));
        let k = config.latent_dim;
        let means = gaussian_matrix(config.classes, k, config.class_scale, &mut rng);
        let n = config.classes * config.instances_per_class;
        let mut latents = Array2::zeros((n, k));
        for o in 0..n {
            let offset = gaussian_vector(k, config.instance_scale, &mut rng);
            latents.row_mut(o).assign(&(&means.row(o / config.instances_per_class) + &offset));
        }
        let map_scale = 1.0 / (k as f64).sqrt();
        let language_map = gaussian_matrix(config.language_dim, k, map_scale, &mut rng);
        let vision_map = gaussian_matrix(config.vision_dim, k, map_scale, &mut rng);
        Ok(Self {
            config,
            latents,
            language_map,
            vision_map,
        })
    }

    pub fn config(&self) -> &SyntheticConfig {
        &self.config
    }

    pub fn objects(&self) -> usize {
        self.latents.nrows()
    }

    pub fn class_label(&self, object: usize) -> String {
        format!("class{:02}", object / self.config.instances_per_class)
    }

    pub fn object_id(&self, object: usize) -> String {
        let c = object / self.config.instances_per_class;
        format!("obj{c:02}_{:03}", object % self.config.instances_per_class)
    }

    fn observe(&self, object: usize, modality: Modality, noise: f64, record_id: &str) -> Vec<f32> {
        let map = match modality {
            Modality::Language => &self.language_map,
            Modality::Vision => &self.vision_map,
        };
        let mut rng = rng_for(self.config.seed, hash_str(record_id));
        let clean = map.dot(&self.latents.row(object));
        let noisy = &clean + &gaussian_vector(clean.len(), noise, &mut rng);
        noisy.iter().map(|&v| v as f32).collect()
    }

    pub fn vision_record(&self, object: usize) -> EmbeddingRecord {
        let record_id = format!("vis_{}", self.object_id(object));
        EmbeddingRecord {
            vector: self.observe(object, Modality::Vision, self.config.noise, &record_id),
            record_id,
            modality: Modality::Vision,
            class_label: self.class_label(object),
            object_id: self.object_id(object),
            speaker_id: None,
            split: SplitTag::Unassigned,
        }
    }

    /// A description of `object`; `extra_noise` is added to the base noise
    /// in quadrature.
    pub fn language_record(&self, object: usize, speaker: Option<&str>, take: usize, extra_noise: f64) -> EmbeddingRecord {
        let record_id = match speaker {
            Some(s) => format!("lang_{}_{s}_{take}", self.object_id(object)),
            None => format!("lang_{}_{take}", self.object_id(object)),
        };
        let noise = (self.config.noise.powi(2) + extra_noise.powi(2)).sqrt();
        EmbeddingRecord {
            vector: self.observe(object, Modality::Language, noise, &record_id),
            record_id,
            modality: Modality::Language,
            class_label: self.class_label(object),
            object_id: self.object_id(object),
            speaker_id: speaker.map(str::to_string),
            split: SplitTag::Unassigned,
        }
    }

    /// One vision and one language record per object.
    pub fn paired_dataset(&self) -> Result<Dataset> {
        let mut records = Vec::with_capacity(2 * self.objects());
        for o in 0..self.objects() {
            records.push(self.vision_record(o));
            records.push(self.language_record(o, None, 0, 0.0));
        }
        Dataset::new(records)
    }

    /// `count` descriptions by `speaker`, cycling through classes so that
    /// consecutive utterances cover different classes. Objects are picked
    /// with a speaker-specific seeded draw.
    pub fn speaker_utterances(&self, speaker: &str, count: usize, extra_noise: f64) -> Vec<EmbeddingRecord> {
        let mut rng = rng_for(self.config.seed, hash_str(&format!("speaker/{speaker}")));
        let per = self.config.instances_per_class;
        (0..count)
            .map(|k| {
                let class = k % self.config.classes;
                let object = class * per + rng.random_range(0..per);
                self.language_record(object, Some(speaker), k, extra_noise)
            })
            .collect()
    }

    /// Vision records for every object plus the given language records.
    pub fn with_language(&self, language: Vec<EmbeddingRecord>) -> Result<Dataset> {
        let mut records: Vec<_> = (0..self.objects()).map(|o| self.vision_record(o)).collect();
        records.extend(language);
        Dataset::new(records)
    }
}

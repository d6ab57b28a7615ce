//! Embedding records, identities and splits.
//!
//! A [`Dataset`] holds precomputed feature vectors for two modalities. Records
//! sharing an `object_id` describe the same physical instance: a vision record
//! is a percept, language records are descriptions of it. Language records may
//! additionally carry a frame sequence (MFCC frames) for the LSTM encoder.

mod io;
mod split;
mod traits;
mod users;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_dataset, load_sequences, write_dataset, write_sequences};
pub use split::{apportion, make_split, per_user_split, DatasetSplit, SplitRatios};
pub use traits::{load_traits, write_traits, Gender, SpeakerTraits, TraitTable};
pub use users::{filter_users_for_study, EligibleUser, MIN_CLASSES_PER_USER, MIN_EXAMPLES_PER_CLASS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Vision,
    Language,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Vision, Modality::Language];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Vision => "vision",
            Modality::Language => "language",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "vision" => Ok(Modality::Vision),
            "language" => Ok(Modality::Language),
            other => Err(format!("unknown modality {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
    Unassigned,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
            SplitTag::Unassigned => "unassigned",
        }
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitTag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(SplitTag::Train),
            "val" => Ok(SplitTag::Val),
            "test" => Ok(SplitTag::Test),
            "unassigned" | "" => Ok(SplitTag::Unassigned),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// One featurized instance.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub record_id: String,
    pub modality: Modality,
    pub class_label: String,
    pub object_id: String,
    /// Present on language records only.
    pub speaker_id: Option<String>,
    pub split: SplitTag,
    pub vector: Vec<f32>,
}

/// Row-major frame sequence (`n_frames x n_coeffs`) attached to a language record.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub n_frames: usize,
    pub n_coeffs: usize,
    pub data: Vec<f32>,
}

impl FeatureSequence {
    pub fn new(n_frames: usize, n_coeffs: usize, data: Vec<f32>) -> Result<Self> {
        if n_frames == 0 || n_coeffs == 0 {
            return Err(Error::Shape("feature sequence must be non-empty".into()));
        }
        if data.len() != n_frames * n_coeffs {
            return Err(Error::Shape(format!(
                "feature sequence has {} values, expected {n_frames} x {n_coeffs}",
                data.len()
            )));
        }
        Ok(Self {
            n_frames,
            n_coeffs,
            data,
        })
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * self.n_coeffs..(t + 1) * self.n_coeffs]
    }
}

/// Immutable, validated collection of records.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    records: Vec<EmbeddingRecord>,
    index: HashMap<String, usize>,
    dims: BTreeMap<Modality, usize>,
    sequences: BTreeMap<String, FeatureSequence>,
}

impl Dataset {
    /// Validates record invariants: unique ids, one vector dimension per
    /// modality, no speaker on vision records, one class per object.
    pub fn new(records: Vec<EmbeddingRecord>) -> Result<Self> {
        let mut index = HashMap::with_capacity(records.len());
        let mut dims: BTreeMap<Modality, usize> = BTreeMap::new();
        let mut object_class: HashMap<&str, &str> = HashMap::new();
        for (i, r) in records.iter().enumerate() {
            if r.record_id.is_empty() {
                return Err(Error::InvalidRecord {
                    record_id: String::new(),
                    reason: "empty record_id".into(),
                });
            }
            if index.insert(r.record_id.clone(), i).is_some() {
                return Err(Error::DuplicateRecord(r.record_id.clone()));
            }
            if r.vector.is_empty() {
                return Err(Error::InvalidRecord {
                    record_id: r.record_id.clone(),
                    reason: "empty vector".into(),
                });
            }
            if r.vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidRecord {
                    record_id: r.record_id.clone(),
                    reason: "vector contains non-finite values".into(),
                });
            }
            let expected = *dims.entry(r.modality).or_insert(r.vector.len());
            if expected != r.vector.len() {
                return Err(Error::ModalityDimMismatch {
                    record_id: r.record_id.clone(),
                    modality: r.modality.to_string(),
                    expected,
                    found: r.vector.len(),
                });
            }
            if r.modality == Modality::Vision && r.speaker_id.is_some() {
                return Err(Error::InvalidRecord {
                    record_id: r.record_id.clone(),
                    reason: "vision records carry no speaker_id".into(),
                });
            }
            match object_class.get(r.object_id.as_str()) {
                Some(c) if *c != r.class_label => {
                    return Err(Error::InvalidRecord {
                        record_id: r.record_id.clone(),
                        reason: format!(
                            "object {} labelled both {c:?} and {:?}",
                            r.object_id, r.class_label
                        ),
                    })
                }
                Some(_) => {}
                None => {
                    object_class.insert(&r.object_id, &r.class_label);
                }
            }
        }
        Ok(Self {
            records,
            index,
            dims,
            sequences: BTreeMap::new(),
        })
    }

    /// Attaches frame sequences keyed by language record id.
    pub fn with_sequences(mut self, sequences: BTreeMap<String, FeatureSequence>) -> Result<Self> {
        let mut n_coeffs = None;
        for (id, seq) in &sequences {
            let Some(&i) = self.index.get(id) else {
                return Err(Error::InvalidRecord {
                    record_id: id.clone(),
                    reason: "sequence refers to an unknown record".into(),
                });
            };
            if self.records[i].modality != Modality::Language {
                return Err(Error::InvalidRecord {
                    record_id: id.clone(),
                    reason: "sequences attach to language records only".into(),
                });
            }
            match n_coeffs {
                None => n_coeffs = Some(seq.n_coeffs),
                Some(n) if n != seq.n_coeffs => {
                    return Err(Error::Shape(format!(
                        "sequence {id} has {} coefficients per frame, expected {n}",
                        seq.n_coeffs
                    )))
                }
                Some(_) => {}
            }
        }
        self.sequences = sequences;
        Ok(self)
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn record(&self, i: usize) -> &EmbeddingRecord {
        &self.records[i]
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn index_of(&self, record_id: &str) -> Option<usize> {
        self.index.get(record_id).copied()
    }

    pub fn get(&self, record_id: &str) -> Option<&EmbeddingRecord> {
        self.index_of(record_id).map(|i| &self.records[i])
    }

    /// Vector dimension of a modality, if any record of it exists.
    pub fn dim(&self, modality: Modality) -> Option<usize> {
        self.dims.get(&modality).copied()
    }

    pub fn sequence(&self, record_id: &str) -> Option<&FeatureSequence> {
        self.sequences.get(record_id)
    }

    pub fn sequences(&self) -> &BTreeMap<String, FeatureSequence> {
        &self.sequences
    }

    /// Frame width of the attached sequences.
    pub fn sequence_dim(&self) -> Option<usize> {
        self.sequences.values().next().map(|s| s.n_coeffs)
    }

    /// Indices of records carrying `tag`.
    pub fn indices_in(&self, tag: SplitTag) -> Vec<usize> {
        (0..self.records.len())
            .filter(|&i| self.records[i].split == tag)
            .collect()
    }

    /// Returns a copy with split tags taken from `split`; records absent from
    /// it become `Unassigned`.
    pub fn with_split(&self, split: &DatasetSplit) -> Dataset {
        let mut out = self.clone();
        for r in &mut out.records {
            r.split = split.tag_of(&r.record_id);
        }
        out
    }

    /// Returns a copy restricted to the given record ids (order preserved from
    /// this dataset). Unknown ids are ignored.
    pub fn subset(&self, ids: &BTreeSet<String>) -> Result<Dataset> {
        let records: Vec<_> = self
            .records
            .iter()
            .filter(|r| ids.contains(&r.record_id))
            .cloned()
            .collect();
        let sequences = self
            .sequences
            .iter()
            .filter(|(id, _)| ids.contains(*id))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Dataset::new(records)?.with_sequences(sequences)
    }

    pub fn classes(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.class_label.as_str()).collect()
    }

    pub fn summary(&self) -> DatasetSummary {
        let mut s = DatasetSummary::default();
        for r in &self.records {
            *s.per_modality.entry(r.modality.to_string()).or_default() += 1;
            *s.per_class.entry(r.class_label.clone()).or_default() += 1;
            *s.per_split.entry(r.split.to_string()).or_default() += 1;
            if let Some(sp) = &r.speaker_id {
                *s.per_speaker.entry(sp.clone()).or_default() += 1;
            }
        }
        s.records = self.records.len();
        s.dims = self.dims.iter().map(|(m, d)| (m.to_string(), *d)).collect();
        s.sequences = self.sequences.len();
        s
    }
}

/// Record counts used by the ingest summary.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub records: usize,
    pub dims: BTreeMap<String, usize>,
    pub per_modality: BTreeMap<String, usize>,
    pub per_class: BTreeMap<String, usize>,
    pub per_speaker: BTreeMap<String, usize>,
    pub per_split: BTreeMap<String, usize>,
    pub sequences: usize,
}

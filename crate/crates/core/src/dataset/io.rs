//! Manifest + flat float32 vector container, and the frame-sequence sidecar.
//!
//! Manifest columns (tab separated, one header line):
//! `record_id modality class_label object_id speaker_id split vector_offset vector_dim`.
//! `vector_offset` counts float32 elements, not bytes. The vectors file is a
//! contiguous little-endian float32 array.
//!
//! The sidecar index has columns `record_id offset n_frames n_coeffs` and
//! addresses a second float32 container of row-major frames.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Dataset, EmbeddingRecord, FeatureSequence, Modality, SplitTag};
use crate::error::{Error, Result};

const MANIFEST_HEADER: [&str; 8] = [
    "record_id",
    "modality",
    "class_label",
    "object_id",
    "speaker_id",
    "split",
    "vector_offset",
    "vector_dim",
];

const SEQUENCE_HEADER: [&str; 4] = ["record_id", "offset", "n_frames", "n_coeffs"];

fn read_f32_container(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Manifest {
            line: 0,
            reason: format!(
                "{} is {} bytes, not a whole number of float32 values",
                path.display(),
                bytes.len()
            ),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn write_f32_container(path: &Path, values: impl Iterator<Item = f32>) -> Result<()> {
    let mut buf = Vec::new();
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn tsv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .has_headers(true)
        .from_reader(file))
}

fn tsv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .delimiter(b'\t')
        .quote_style(csv::QuoteStyle::Never)
        .from_writer(file))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Manifest {
            line: 0,
            reason: format!("{}: {other:?}", path.display()),
        },
    }
}

fn check_field(record_id: &str, name: &str, value: &str) -> Result<()> {
    if value.contains(['\t', '\n', '\r']) {
        return Err(Error::InvalidRecord {
            record_id: record_id.to_string(),
            reason: format!("{name} contains a tab or newline"),
        });
    }
    Ok(())
}

/// Loads a manifest and its vector container, validating every record.
pub fn load_dataset(manifest_path: impl AsRef<Path>, vectors_path: impl AsRef<Path>) -> Result<Dataset> {
    let manifest_path = manifest_path.as_ref();
    let values = read_f32_container(vectors_path.as_ref())?;
    let mut reader = tsv_reader(manifest_path)?;
    let header = reader.headers().map_err(|e| csv_err(manifest_path, e))?.clone();
    if header.iter().ne(MANIFEST_HEADER.iter().copied()) {
        return Err(Error::Manifest {
            line: 1,
            reason: format!("expected header {:?}", MANIFEST_HEADER.join("\t")),
        });
    }
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Manifest {
            line,
            reason: e.to_string(),
        })?;
        if row.len() != MANIFEST_HEADER.len() {
            return Err(Error::Manifest {
                line,
                reason: format!("expected {} fields, found {}", MANIFEST_HEADER.len(), row.len()),
            });
        }
        let bad = |reason: String| Error::Manifest { line, reason };
        let record_id = row[0].to_string();
        let modality: Modality = row[1].parse().map_err(bad)?;
        let split: SplitTag = row[5].parse().map_err(bad)?;
        let offset: usize = row[6]
            .parse()
            .map_err(|_| bad(format!("bad vector_offset {:?}", &row[6])))?;
        let dim: usize = row[7]
            .parse()
            .map_err(|_| bad(format!("bad vector_dim {:?}", &row[7])))?;
        if record_id.is_empty() || row[2].is_empty() || row[3].is_empty() {
            return Err(bad("record_id, class_label and object_id are required".into()));
        }
        let end = offset.checked_add(dim).filter(|&e| e <= values.len());
        let Some(end) = end else {
            return Err(Error::VectorOutOfBounds {
                record_id,
                offset,
                dim,
                available: values.len(),
            });
        };
        records.push(EmbeddingRecord {
            record_id,
            modality,
            class_label: row[2].to_string(),
            object_id: row[3].to_string(),
            speaker_id: (!row[4].is_empty()).then(|| row[4].to_string()),
            split,
            vector: values[offset..end].to_vec(),
        });
    }
    Dataset::new(records)
}

/// Writes the dataset's manifest and vector container; vectors are laid out
/// contiguously in record order.
pub fn write_dataset(dataset: &Dataset, manifest_path: impl AsRef<Path>, vectors_path: impl AsRef<Path>) -> Result<()> {
    let manifest_path = manifest_path.as_ref();
    let mut w = tsv_writer(manifest_path)?;
    w.write_record(MANIFEST_HEADER).map_err(|e| csv_err(manifest_path, e))?;
    let mut offset = 0usize;
    for r in dataset.records() {
        for (name, v) in [
            ("record_id", r.record_id.as_str()),
            ("class_label", &r.class_label),
            ("object_id", &r.object_id),
            ("speaker_id", r.speaker_id.as_deref().unwrap_or("")),
        ] {
            check_field(&r.record_id, name, v)?;
        }
        let off = offset.to_string();
        let dim = r.vector.len().to_string();
        w.write_record([
            r.record_id.as_str(),
            r.modality.as_str(),
            &r.class_label,
            &r.object_id,
            r.speaker_id.as_deref().unwrap_or(""),
            r.split.as_str(),
            &off,
            &dim,
        ])
        .map_err(|e| csv_err(manifest_path, e))?;
        offset += r.vector.len();
    }
    w.flush().map_err(|e| Error::io(manifest_path, e))?;
    write_f32_container(
        vectors_path.as_ref(),
        dataset.records().iter().flat_map(|r| r.vector.iter().copied()),
    )
}

pub fn load_sequences(
    index_path: impl AsRef<Path>,
    data_path: impl AsRef<Path>,
) -> Result<BTreeMap<String, FeatureSequence>> {
    let index_path = index_path.as_ref();
    let values = read_f32_container(data_path.as_ref())?;
    let mut reader = tsv_reader(index_path)?;
    let header = reader.headers().map_err(|e| csv_err(index_path, e))?.clone();
    if header.iter().ne(SEQUENCE_HEADER.iter().copied()) {
        return Err(Error::Manifest {
            line: 1,
            reason: format!("expected sequence header {:?}", SEQUENCE_HEADER.join("\t")),
        });
    }
    let mut out = BTreeMap::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Manifest {
            line,
            reason: e.to_string(),
        })?;
        if row.len() != SEQUENCE_HEADER.len() {
            return Err(Error::Manifest {
                line,
                reason: "expected 4 fields".into(),
            });
        }
        let num = |k: usize| {
            row[k].parse::<usize>().map_err(|_| Error::Manifest {
                line,
                reason: format!("bad integer {:?}", &row[k]),
            })
        };
        let (offset, n_frames, n_coeffs) = (num(1)?, num(2)?, num(3)?);
        let len = n_frames * n_coeffs;
        let Some(end) = offset.checked_add(len).filter(|&e| e <= values.len()) else {
            return Err(Error::VectorOutOfBounds {
                record_id: row[0].to_string(),
                offset,
                dim: len,
                available: values.len(),
            });
        };
        let seq = FeatureSequence::new(n_frames, n_coeffs, values[offset..end].to_vec())?;
        if out.insert(row[0].to_string(), seq).is_some() {
            return Err(Error::DuplicateRecord(row[0].to_string()));
        }
    }
    Ok(out)
}

pub fn write_sequences(
    sequences: &BTreeMap<String, FeatureSequence>,
    index_path: impl AsRef<Path>,
    data_path: impl AsRef<Path>,
) -> Result<()> {
    let index_path = index_path.as_ref();
    let mut w = tsv_writer(index_path)?;
    w.write_record(SEQUENCE_HEADER).map_err(|e| csv_err(index_path, e))?;
    let mut offset = 0usize;
    for (id, s) in sequences {
        check_field(id, "record_id", id)?;
        w.write_record([
            id.clone(),
            offset.to_string(),
            s.n_frames.to_string(),
            s.n_coeffs.to_string(),
        ])
        .map_err(|e| csv_err(index_path, e))?;
        offset += s.data.len();
    }
    w.flush().map_err(|e| Error::io(index_path, e))?;
    let mut file = fs::File::create(data_path.as_ref()).map_err(|e| Error::io(data_path.as_ref(), e))?;
    let mut buf = Vec::new();
    for s in sequences.values() {
        for v in &s.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    file.write_all(&buf).map_err(|e| Error::io(data_path.as_ref(), e))
}

//! Checkpoint container.
//!
//! Layout: a magic line, a one-line JSON header describing each encoder
//! (name, architecture spec, payload offset and length in values) plus free
//! metadata, then the concatenated little-endian `f64` payload.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Encoder, EncoderSpec, Parameters};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "SPEECHGROUND-CHECKPOINT v1";
const FORMAT_VERSION: u32 = 1;
const DTYPE: &str = "f64le";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub metadata: serde_json::Value,
    pub encoders: Vec<(String, Encoder)>,
}

impl Checkpoint {
    pub fn encoder(&self, name: &str) -> Option<&Encoder> {
        self.encoders.iter().find(|(n, _)| n == name).map(|(_, e)| e)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    dtype: String,
    encoders: Vec<EncoderEntry>,
    metadata: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct EncoderEntry {
    name: String,
    spec: EncoderSpec,
    offset: usize,
    len: usize,
}

pub fn write_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let mut entries = Vec::new();
    let mut offset = 0;
    for (name, enc) in &checkpoint.encoders {
        let len = enc.num_params();
        entries.push(EncoderEntry {
            name: name.clone(),
            spec: enc.spec(),
            offset,
            len,
        });
        offset += len;
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        dtype: DTYPE.into(),
        encoders: entries,
        metadata: checkpoint.metadata.clone(),
    };
    let header = serde_json::to_string(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{CHECKPOINT_MAGIC}").map_err(io)?;
    writeln!(w, "{header}").map_err(io)?;
    for (_, enc) in &checkpoint.encoders {
        for slice in enc.param_slices() {
            for v in slice {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    if line.trim_end() != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint (bad magic line)", path.display())));
    }
    line.clear();
    r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let header: Header =
        serde_json::from_str(line.trim_end()).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if header.format_version != FORMAT_VERSION || header.dtype != DTYPE {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {} / dtype {}",
            header.format_version, header.dtype
        )));
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Checkpoint("payload is not a whole number of values".into()));
    }
    let payload: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();

    let mut encoders = Vec::new();
    for entry in header.encoders {
        let mut enc = Encoder::zeros(&entry.spec)?;
        if enc.num_params() != entry.len {
            return Err(Error::Checkpoint(format!(
                "encoder {} declares {} values but its spec needs {}",
                entry.name,
                entry.len,
                enc.num_params()
            )));
        }
        let end = entry.offset.checked_add(entry.len).filter(|&e| e <= payload.len()).ok_or_else(|| {
            Error::Checkpoint(format!("encoder {} payload runs past end of file", entry.name))
        })?;
        let mut src = payload[entry.offset..end].iter();
        for slice in enc.param_slices_mut() {
            for (dst, s) in slice.iter_mut().zip(src.by_ref()) {
                *dst = *s;
            }
        }
        if !enc.all_finite() {
            return Err(Error::Checkpoint(format!("encoder {} has non-finite parameters", entry.name)));
        }
        encoders.push((entry.name, enc));
    }
    Ok(Checkpoint {
        metadata: header.metadata,
        encoders,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LstmSpec, MlpSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lang = Encoder::init(&EncoderSpec::Lstm(LstmSpec { input: 3, hidden: 4, tail: 2, output: 5 }), &mut rng).unwrap();
        let vis = Encoder::init(&EncoderSpec::Mlp(MlpSpec::new(6, 7, 8, 5)), &mut rng).unwrap();
        Checkpoint {
            metadata: serde_json::json!({"margin": 0.4, "epochs": 3}),
            encoders: vec![("language".into(), lang), ("vision".into(), vis)],
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ck = sample();
        write_checkpoint(&path, &ck).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.encoder("vision"), ck.encoder("vision"));
    }

    #[test]
    fn truncated_and_foreign_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        write_checkpoint(&path, &sample()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 16]).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Checkpoint(_))));
        std::fs::write(&path, b"hello\n").unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Checkpoint(_))));
    }
}

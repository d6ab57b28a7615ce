//! Annotated speaker traits.
//!
//! Table columns (tab separated, one header line):
//! `speaker_id gender accent creak hoarseness muffledness volume background_noise`.
//! Gender is `man`, `woman` or `undetermined`; binary traits are `0`/`1`;
//! ordinal traits are integers in 1..=4.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Man,
    Woman,
    Undetermined,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Man => "man",
            Gender::Woman => "woman",
            Gender::Undetermined => "undetermined",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Gender {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "man" => Ok(Gender::Man),
            "woman" => Ok(Gender::Woman),
            "undetermined" => Ok(Gender::Undetermined),
            other => Err(format!("unknown gender {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeakerTraits {
    pub speaker_id: String,
    pub gender: Gender,
    pub accent: bool,
    pub creak: bool,
    pub hoarseness: bool,
    pub muffledness: u8,
    pub volume: u8,
    pub background_noise: u8,
}

impl SpeakerTraits {
    pub fn validate(&self) -> std::result::Result<(), String> {
        for (name, v) in [
            ("muffledness", self.muffledness),
            ("volume", self.volume),
            ("background_noise", self.background_noise),
        ] {
            if !(1..=4).contains(&v) {
                return Err(format!("{name} {v} outside 1..=4"));
            }
        }
        Ok(())
    }
}

pub type TraitTable = BTreeMap<String, SpeakerTraits>;

const HEADER: [&str; 8] = [
    "speaker_id",
    "gender",
    "accent",
    "creak",
    "hoarseness",
    "muffledness",
    "volume",
    "background_noise",
];

pub fn load_traits(path: impl AsRef<Path>) -> Result<TraitTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.split('\t').eq(HEADER.iter().copied()) => {}
        _ => {
            return Err(Error::Traits {
                line: 1,
                reason: format!("expected header {:?}", HEADER.join("\t")),
            })
        }
    }
    let mut table = TraitTable::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| Error::Traits {
            line: line_no,
            reason,
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != HEADER.len() {
            return Err(bad(format!("expected {} fields, found {}", HEADER.len(), f.len())));
        }
        let binary = |k: usize| match f[k] {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(bad(format!("{} must be 0 or 1, got {other:?}", HEADER[k]))),
        };
        let ordinal = |k: usize| {
            f[k].parse::<u8>()
                .map_err(|_| bad(format!("{} must be an integer, got {:?}", HEADER[k], f[k])))
        };
        let t = SpeakerTraits {
            speaker_id: f[0].to_string(),
            gender: f[1].parse().map_err(bad)?,
            accent: binary(2)?,
            creak: binary(3)?,
            hoarseness: binary(4)?,
            muffledness: ordinal(5)?,
            volume: ordinal(6)?,
            background_noise: ordinal(7)?,
        };
        t.validate().map_err(bad)?;
        if t.speaker_id.is_empty() {
            return Err(bad("empty speaker_id".into()));
        }
        if table.insert(t.speaker_id.clone(), t).is_some() {
            return Err(bad(format!("duplicate speaker_id {}", f[0])));
        }
    }
    Ok(table)
}

pub fn write_traits(table: &TraitTable, path: impl AsRef<Path>) -> Result<()> {
    let mut out = HEADER.join("\t");
    out.push('\n');
    for t in table.values() {
        let b = |v: bool| if v { "1" } else { "0" };
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            t.speaker_id,
            t.gender,
            b(t.accent),
            b(t.creak),
            b(t.hoarseness),
            t.muffledness,
            t.volume,
            t.background_noise
        ));
    }
    fs::write(path.as_ref(), out).map_err(|e| Error::io(path.as_ref(), e))
}

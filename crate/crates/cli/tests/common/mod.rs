#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use speechground::dataset::{write_traits, EmbeddingRecord, Gender, SpeakerTraits, TraitTable};
use speechground::synthetic::{SyntheticConfig, SyntheticWorld};

pub const VECTOR_HEADER: &str = "record_id\tmodality\tclass_label\tobject_id\tspeaker_id\tsplit\tvector";

/// Small, fast training flags shared by the CLI tests.
pub const FAST: &[&str] = &["--hidden1", "32", "--hidden2", "32", "--projection-dim", "16"];

pub fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_speechground"))
        .args(args)
        .env_remove("SPEECHGROUND_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

/// Runs and asserts success, returning stdout.
pub fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed ({:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn vector_line(r: &EmbeddingRecord) -> String {
    let vector: Vec<String> = r.vector.iter().map(|v| v.to_string()).collect();
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}",
        r.record_id,
        r.modality.as_str(),
        r.class_label,
        r.object_id,
        r.speaker_id.as_deref().unwrap_or(""),
        r.split.as_str(),
        vector.join(" ")
    )
}

pub fn write_vector_tsv(path: &Path, records: &[EmbeddingRecord]) {
    let mut text = format!("{VECTOR_HEADER}\n");
    for r in records {
        writeln!(text, "{}", vector_line(r)).unwrap();
    }
    fs::write(path, text).unwrap();
}

pub fn small_world(seed: u64) -> SyntheticWorld {
    SyntheticWorld::new(SyntheticConfig {
        classes: 6,
        instances_per_class: 20,
        language_dim: 12,
        vision_dim: 16,
        seed,
        ..Default::default()
    })
    .unwrap()
}

pub fn traits(id: &str, accent: bool, gender: Gender) -> SpeakerTraits {
    SpeakerTraits {
        speaker_id: id.into(),
        gender,
        accent,
        creak: false,
        hoarseness: false,
        muffledness: 1,
        volume: 2,
        background_noise: 1,
    }
}

/// Six speakers (three accented) describing every class several times.
pub fn cohort(world: &SyntheticWorld) -> (Vec<EmbeddingRecord>, TraitTable) {
    let mut records: Vec<EmbeddingRecord> = (0..world.objects()).map(|o| world.vision_record(o)).collect();
    let mut table = TraitTable::new();
    for k in 0..6 {
        let id = format!("spk{k}");
        records.extend(world.speaker_utterances(&id, 24 + 6 * k, 0.0));
        let gender = if k % 2 == 0 { Gender::Man } else { Gender::Woman };
        table.insert(id.clone(), traits(&id, k >= 3, gender));
    }
    (records, table)
}

/// Writes the cohort's vector table and trait table into `dir`.
pub fn write_cohort(dir: &Path, world: &SyntheticWorld) -> (PathBuf, PathBuf) {
    let (records, table) = cohort(world);
    let vectors = dir.join("cohort.tsv");
    let traits = dir.join("traits.tsv");
    write_vector_tsv(&vectors, &records);
    write_traits(&table, &traits).unwrap();
    (vectors, traits)
}

/// Runs `ingest` on a vector table and returns the manifest and vector paths.
pub fn ingest(vectors_tsv: &Path, out: &Path) -> (PathBuf, PathBuf) {
    ok(&["ingest", "--vectors-tsv", s(vectors_tsv), "--output-dir", s(out)]);
    (out.join("manifest.tsv"), out.join("vectors.f32"))
}

/// Every regular file under `dir` with its bytes, sorted by name.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Data rows of a table written by the CLI (comments and header dropped).
pub fn table_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap().split('\t').map(str::to_string).collect();
    let rows = lines.map(|l| l.split('\t').map(str::to_string).collect()).collect();
    (header, rows)
}

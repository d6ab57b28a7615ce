mod common;

use std::fs;
use std::time::{Duration, Instant};

use common::*;
use speechground::dataset::{load_dataset, load_sequences, Modality};
use speechground::mfcc::{extract_mfcc, mean_pool, read_wav, write_wav, MfccConfig, SAMPLE_RATE};
use speechground::nn::read_checkpoint;

const EXIT_USAGE: i32 = 2;
const EXIT_VALIDATION: i32 = 3;
const EXIT_TRAINING: i32 = 4;
const EXIT_IO: i32 = 5;

/// Ingested paired dataset from the small synthetic world.
fn paired(dir: &std::path::Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let ds = small_world(1).paired_dataset().unwrap();
    let tsv = dir.join("paired.tsv");
    write_vector_tsv(&tsv, ds.records());
    ingest(&tsv, &dir.join("data"))
}

fn train_args<'a>(manifest: &'a str, vectors: &'a str, out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut a = vec!["train", "--manifest", manifest, "--vectors", vectors, "--output-dir", out];
    a.extend_from_slice(extra);
    a
}

#[test]
fn ingest_three_vectors() {
    let dir = tempfile::tempdir().unwrap();
    let tsv = dir.path().join("v.tsv");
    fs::write(
        &tsv,
        format!(
            "{VECTOR_HEADER}\n\
             v1\tvision\tapple\tapple_1\t\t\t0.1 0.2 0.3\n\
             l1\tlanguage\tapple\tapple_1\tsam\ttrain\t1 0\n\
             l2\tlanguage\tbanana\tbanana_1\tsam\ttest\t0 1\n"
        ),
    )
    .unwrap();
    let out = dir.path().join("out");
    let stdout = ok(&["ingest", "--vectors-tsv", s(&tsv), "--output-dir", s(&out)]);
    let printed: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(printed["records"], 3);

    let manifest = fs::read_to_string(out.join("manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().filter(|l| !l.starts_with('#')).count(), 4, "header plus three rows");
    let ds = load_dataset(out.join("manifest.tsv"), out.join("vectors.f32")).unwrap();
    assert_eq!(ds.len(), 3);
    assert_eq!(ds.get("v1").unwrap().vector, vec![0.1, 0.2, 0.3]);

    let summary = read_json(&out.join("ingest_summary.json"))["summary"].clone();
    assert_eq!(summary["per_modality"]["vision"], 1);
    assert_eq!(summary["per_modality"]["language"], 2);
    assert_eq!(summary["per_class"]["apple"], 2);
    assert_eq!(summary["per_speaker"]["sam"], 2);
    assert_eq!(summary["dims"]["vision"], 3);
}

#[test]
fn duplicate_record_id_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let tsv = dir.path().join("v.tsv");
    fs::write(
        &tsv,
        format!("{VECTOR_HEADER}\nv1\tvision\ta\ta1\t\t\t1 2\nv1\tvision\tb\tb1\t\t\t3 4\n"),
    )
    .unwrap();
    let out = run(&["ingest", "--vectors-tsv", s(&tsv), "--output-dir", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(EXIT_VALIDATION));
    assert!(String::from_utf8_lossy(&out.stderr).contains("v1"));
}

#[test]
fn wav_clips_are_featurized_with_mfcc() {
    let dir = tempfile::tempdir().unwrap();
    let wavs = dir.path().join("wav");
    fs::create_dir(&wavs).unwrap();
    let mut table = String::from("record_id\tclass_label\tobject_id\tspeaker_id\tsplit\twav_file\n");
    for (k, freq) in [220.0, 330.0, 550.0].into_iter().enumerate() {
        let n = SAMPLE_RATE as usize / 2 + 800 * k;
        let samples: Vec<f64> = (0..n)
            .map(|i| 0.3 * (2.0 * std::f64::consts::PI * freq * i as f64 / f64::from(SAMPLE_RATE)).sin())
            .collect();
        write_wav(wavs.join(format!("c{k}.wav")), &samples, SAMPLE_RATE).unwrap();
        table.push_str(&format!("utt{k}\tclass{k}\tobj{k}\tspk\t\tc{k}.wav\n"));
    }
    let manifest = dir.path().join("audio.tsv");
    fs::write(&manifest, table).unwrap();
    let out = dir.path().join("out");

    let missing_flag = run(&["ingest", "--audio-manifest", s(&manifest), "--output-dir", s(&out)]);
    assert_eq!(missing_flag.status.code(), Some(EXIT_USAGE));

    ok(&[
        "ingest",
        "--audio-manifest",
        s(&manifest),
        "--audio-dir",
        s(&wavs),
        "--featurize",
        "mfcc",
        "--output-dir",
        s(&out),
    ]);
    let ds = load_dataset(out.join("manifest.tsv"), out.join("vectors.f32")).unwrap();
    let config = MfccConfig::default();
    assert_eq!(ds.dim(Modality::Language), Some(config.n_coeffs));
    let sequences = load_sequences(out.join("sequences.tsv"), out.join("sequences.f32")).unwrap();
    for k in 0..3 {
        let seq = extract_mfcc(&read_wav(wavs.join(format!("c{k}.wav"))).unwrap(), &config).unwrap();
        let pooled = mean_pool(&seq).unwrap();
        let stored = &ds.get(&format!("utt{k}")).unwrap().vector;
        for (a, b) in stored.iter().zip(&pooled) {
            assert_eq!(*a, *b as f32);
        }
        let sidecar = &sequences[&format!("utt{k}")];
        assert_eq!((sidecar.n_frames, sidecar.n_coeffs), (seq.len(), config.n_coeffs));
    }
}

#[test]
fn default_training_config_is_echoed_into_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (m, v) = paired(dir.path());
    let out = dir.path().join("run");
    ok(&train_args(s(&m), s(&v), s(&out), FAST));
    let ck = read_checkpoint(&out.join("manifold.ckpt")).unwrap();
    let cfg = &ck.metadata["train_config"];
    assert_eq!(cfg["margin"], 0.4);
    assert_eq!(cfg["epochs"], 300);
    assert_eq!(cfg["schedule"]["base"], 1e-3);
    assert_eq!(cfg["schedule"]["divisor"], 10.0);
    assert_eq!(cfg["schedule"]["every"], 100);
    assert_eq!(cfg["seed"], 0);
    assert!(ck.metadata["version"].is_string());
    let (header, rows) = table_rows(&out.join("loss_curve.tsv"));
    assert_eq!(header, ["epoch", "mean_loss", "lr"]);
    assert_eq!(rows.len(), 300);
    assert_eq!(rows[100][2], "0.0001");
}

#[test]
fn five_epoch_smoke_run_is_fast_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (m, v) = paired(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let start = Instant::now();
    ok(&train_args(s(&m), s(&v), s(&a), &["--epochs", "5", "--seed", "7"]));
    assert!(start.elapsed() < Duration::from_secs(60), "took {:?}", start.elapsed());
    ok(&train_args(s(&m), s(&v), s(&b), &["--epochs", "5", "--seed", "7"]));
    let curve = fs::read(a.join("loss_curve.tsv")).unwrap();
    assert_eq!(curve, fs::read(b.join("loss_curve.tsv")).unwrap());
    assert_eq!(fs::read(a.join("manifold.ckpt")).unwrap(), fs::read(b.join("manifold.ckpt")).unwrap());
    assert!(String::from_utf8(curve).unwrap().starts_with("# version="));
}

#[test]
fn evaluation_reports_carry_the_expected_fields() {
    let dir = tempfile::tempdir().unwrap();
    let (m, v) = paired(dir.path());
    let run_dir = dir.path().join("run");
    let mut args = train_args(s(&m), s(&v), s(&run_dir), FAST);
    args.extend(["--epochs", "30", "--f1-curve"]);
    ok(&args);
    let (header, rows) = table_rows(&run_dir.join("f1_curve.tsv"));
    assert_eq!(header, ["epoch", "threshold", "val_f1"]);
    assert_eq!(rows.len(), 30);

    let ckpt = run_dir.join("manifold.ckpt");
    let eval_dir = dir.path().join("eval");
    let base = ["--manifest", s(&m), "--vectors", s(&v), "--checkpoint", s(&ckpt), "--output-dir", s(&eval_dir)];
    fn with(cmd: &str, base: &[&str], extra: &[&str]) {
        let mut a = vec![cmd];
        a.extend_from_slice(base);
        a.extend_from_slice(extra);
        ok(&a);
    }
    with("eval", &base, &[]);
    let report = read_json(&eval_dir.join("eval_report.json"));
    for key in ["triplet_mrr", "subset_mrr", "f1", "auc", "tuned_threshold"] {
        let x = report[key].as_f64().unwrap_or_else(|| panic!("missing {key}"));
        assert!((0.0..=1.0).contains(&x), "{key} = {x}");
    }
    assert_eq!(report["seed"], 0);
    assert_eq!(report["split"]["source"], "checkpoint");
    assert!(report["checkpoint_metadata"]["train_config"].is_object());
    let (roc_header, roc) = table_rows(&eval_dir.join("eval_roc.tsv"));
    assert_eq!(roc_header, ["fpr", "tpr"]);
    assert_eq!(roc.first().unwrap(), &["0", "0"]);
    assert_eq!(roc.last().unwrap(), &["1", "1"]);

    with("eval", &base, &["--split-file", s(&run_dir.join("split.tsv"))]);
    let via_split_file = read_json(&eval_dir.join("eval_report.json"));
    assert_eq!(via_split_file["triplet_mrr"], report["triplet_mrr"]);
    assert_eq!(via_split_file["split"]["source"], "split_file");

    with("tune-threshold", &base, &[]);
    let (_, sweep) = table_rows(&eval_dir.join("threshold_sweep.tsv"));
    assert_eq!(sweep.len(), 101);
    let t = read_json(&eval_dir.join("threshold.json"));
    assert!(t["tuned_threshold"].is_number() && t["f1"].is_number());

    with("roc", &base, &["--on", "val"]);
    assert!(read_json(&eval_dir.join("roc_val.json"))["auc"].is_number());
    assert!(eval_dir.join("roc_val.tsv").is_file());
}

#[test]
fn user_study_has_a_row_per_eligible_user_and_a_correlation_table() {
    let dir = tempfile::tempdir().unwrap();
    let (vectors, traits) = write_cohort(dir.path(), &small_world(2));
    let (m, v) = ingest(&vectors, &dir.path().join("data"));
    let out = dir.path().join("study");
    let mut args = vec![
        "user-study", "--manifest", s(&m), "--vectors", s(&v), "--traits", s(&traits), "--epochs", "15", "--output-dir",
        s(&out),
    ];
    args.extend_from_slice(FAST);
    ok(&args);
    let (header, rows) = table_rows(&out.join("user_study.tsv"));
    assert_eq!(&header[..3], ["speaker_id", "n_train", "n_test"]);
    let ids: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(ids, ["spk0", "spk1", "spk2", "spk3", "spk4", "spk5"]);
    let (corr_header, corr) = table_rows(&out.join("correlations.tsv"));
    assert_eq!(corr_header, ["trait", "r_subset_mrr", "r_triplet_mrr", "n", "excluded"]);
    let traits_listed: Vec<&str> = corr.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(
        traits_listed,
        ["examples", "accent", "gender", "creak", "muffledness", "volume", "background_noise"]
    );
    // Creak and muffledness are constant across the cohort.
    assert_eq!(corr[3][1], "undefined");
    assert!(corr[0][1].parse::<f64>().is_ok());
}

#[test]
fn group_study_header_reports_equal_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (vectors, traits) = write_cohort(dir.path(), &small_world(3));
    let (m, v) = ingest(&vectors, &dir.path().join("data"));
    let out = dir.path().join("groups");
    let mut args = vec![
        "group-study", "--manifest", s(&m), "--vectors", s(&v), "--traits", s(&traits), "--trait", "accent", "--epochs",
        "15", "--output-dir", s(&out),
    ];
    args.extend_from_slice(FAST);
    ok(&args);
    let path = out.join("group_study_accent.tsv");
    let text = fs::read_to_string(&path).unwrap();
    let header = text.lines().nth(1).unwrap();
    let field = |name: &str| -> usize {
        header
            .split_whitespace()
            .find_map(|kv| kv.strip_prefix(&format!("{name}=")))
            .unwrap()
            .parse()
            .unwrap()
    };
    let (n_train, n_test) = (field("n_train_per_group"), field("n_test_per_group"));
    assert!(n_train > 0 && n_test > 0);
    let (cols, rows) = table_rows(&path);
    let col = |name: &str| cols.iter().position(|c| c == name).unwrap();
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert_eq!(r[col("n_train")].parse::<usize>().unwrap(), n_train);
        assert_eq!(r[col("n_test")].parse::<usize>().unwrap(), n_test);
    }
}

#[test]
fn failures_map_to_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (m, v) = paired(dir.path());
    let out = dir.path().join("o");

    assert_eq!(run(&["train", "--bogus"]).status.code(), Some(EXIT_USAGE));

    let missing = dir.path().join("nope.ckpt");
    let code = run(&["eval", "--manifest", s(&m), "--vectors", s(&v), "--checkpoint", s(&missing), "--output-dir", s(&out)])
        .status
        .code();
    assert_eq!(code, Some(EXIT_IO));

    let code = run(&["user-study", "--manifest", s(&m), "--vectors", s(&v), "--traits", s(&missing), "--output-dir", s(&out)])
        .status
        .code();
    assert_eq!(code, Some(EXIT_IO));

    let bad_ratio = train_args(s(&m), s(&v), s(&out), &["--train-ratio", "0.9", "--val-ratio", "0.3"]);
    assert_eq!(run(&bad_ratio).status.code(), Some(EXIT_VALIDATION));

    let mut diverge = train_args(s(&m), s(&v), s(&out), &["--epochs", "50", "--lr", "1e300"]);
    diverge.extend_from_slice(FAST);
    let result = run(&diverge);
    assert_eq!(result.status.code(), Some(EXIT_TRAINING), "{}", String::from_utf8_lossy(&result.stderr));
}

#[test]
fn output_dir_falls_back_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let tsv = dir.path().join("v.tsv");
    fs::write(&tsv, format!("{VECTOR_HEADER}\nv1\tvision\ta\ta1\t\t\t1 2\n")).unwrap();
    let target = dir.path().join("from_env");
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_speechground"))
        .args(["ingest", "--vectors-tsv", s(&tsv)])
        .env("SPEECHGROUND_OUTPUT_DIR", &target)
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    assert!(target.join("manifest.tsv").is_file());
}

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::json;

use speechground::align::{self, Manifold, TrainConfig};
use speechground::analysis::{self, trait_correlations, Metric, StudyConfig, TraitGrouping};
use speechground::dataset::{
    load_dataset, load_sequences, load_traits, make_split, write_dataset, write_sequences, Dataset, DatasetSplit,
    EmbeddingRecord, FeatureSequence, Modality, SplitRatios, SplitTag,
};
use speechground::eval::{
    self, roc_curve, threshold_eval, threshold_pairs, tune_threshold, EvalOptions, EvalSet, THRESHOLD_GRID_STEPS,
};
use speechground::mfcc::{mean_pool, read_wav, MfccConfig, MfccExtractor};
use speechground::nn::{read_checkpoint, write_checkpoint};
use speechground::rng::{derive_seed, hash_str};
use speechground::{Error, VERSION_TAG};

use crate::args::{
    DataArgs, EvalArgs, Featurizer, GroupStudyArgs, IngestArgs, RocArgs, SplitArgs, SplitChoice, StudyArgs, TrainArgs,
};
use crate::output::{cell, opt_cell, OutputDir, Table};

const MANIFEST: &str = "manifest.tsv";
const VECTORS: &str = "vectors.f32";
const SEQUENCES: &str = "sequences.tsv";
const SEQUENCE_DATA: &str = "sequences.f32";
const CHECKPOINT: &str = "manifold.ckpt";

fn manifest_error(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Manifest {
        line,
        reason: format!("{}: {}", path.display(), reason.into()),
    }
}

/// Rows of a tab-separated file with a header, skipping `#` comments.
fn read_table(path: &Path, expected: &[&str]) -> Result<Vec<(usize, Vec<String>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty());
    let (n, header) = lines
        .next()
        .ok_or_else(|| manifest_error(path, 1, "empty file"))?;
    if header.split('\t').ne(expected.iter().copied()) {
        return Err(manifest_error(path, n, format!("expected header {:?}", expected.join("\t"))).into());
    }
    lines
        .map(|(n, l)| {
            let cells: Vec<String> = l.split('\t').map(str::to_string).collect();
            if cells.len() != expected.len() {
                return Err(manifest_error(path, n, format!("expected {} fields, found {}", expected.len(), cells.len())).into());
            }
            Ok((n, cells))
        })
        .collect()
}

fn parse_or<T: std::str::FromStr>(path: &Path, line: usize, what: &str, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| manifest_error(path, line, format!("bad {what} {s:?}")).into())
}

fn optional(s: &str) -> Option<String> {
    (!s.is_empty()).then(|| s.to_string())
}

fn read_vector_table(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    let header = ["record_id", "modality", "class_label", "object_id", "speaker_id", "split", "vector"];
    read_table(path, &header)?
        .into_iter()
        .map(|(n, c)| {
            let vector = c[6]
                .split_whitespace()
                .map(|v| parse_or::<f32>(path, n, "vector value", v))
                .collect::<Result<Vec<_>>>()?;
            Ok(EmbeddingRecord {
                record_id: c[0].clone(),
                modality: parse_or(path, n, "modality", &c[1])?,
                class_label: c[2].clone(),
                object_id: c[3].clone(),
                speaker_id: optional(&c[4]),
                split: parse_or(path, n, "split", &c[5])?,
                vector,
            })
        })
        .collect()
}

fn featurize_audio(
    path: &Path,
    audio_dir: Option<&Path>,
) -> Result<(Vec<EmbeddingRecord>, BTreeMap<String, FeatureSequence>)> {
    let header = ["record_id", "class_label", "object_id", "speaker_id", "split", "wav_file"];
    let base = audio_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| path.parent().map(Path::to_path_buf).unwrap_or_default());
    let extractor = MfccExtractor::new(MfccConfig::default())?;
    let mut records = Vec::new();
    let mut sequences = BTreeMap::new();
    for (n, c) in read_table(path, &header)? {
        let wav = base.join(&c[5]);
        let clip = read_wav(&wav).with_context(|| format!("reading audio for {}", c[0]))?;
        let seq = extractor.extract(&clip)?;
        let pooled = mean_pool(&seq)?;
        records.push(EmbeddingRecord {
            record_id: c[0].clone(),
            modality: Modality::Language,
            class_label: c[1].clone(),
            object_id: c[2].clone(),
            speaker_id: optional(&c[3]),
            split: parse_or(path, n, "split", &c[4])?,
            vector: pooled.iter().map(|&v| v as f32).collect(),
        });
        sequences.insert(c[0].clone(), seq.to_feature_sequence()?);
    }
    Ok((records, sequences))
}

pub fn ingest(a: &IngestArgs) -> Result<()> {
    if a.vectors_tsv.is_none() && a.audio_manifest.is_none() {
        return Err(Error::Config("give --vectors-tsv and/or --audio-manifest".into()).into());
    }
    let mut records = Vec::new();
    let mut sequences = BTreeMap::new();
    if let Some(p) = &a.vectors_tsv {
        records.extend(read_vector_table(p)?);
    }
    if let Some(p) = &a.audio_manifest {
        match a.featurize {
            Some(Featurizer::Mfcc) => {
                let (r, s) = featurize_audio(p, a.audio_dir.as_deref())?;
                records.extend(r);
                sequences = s;
            }
            None => return Err(Error::Config("audio input needs --featurize mfcc".into()).into()),
        }
    }
    let mut dataset = Dataset::new(records)?.with_sequences(sequences)?;
    let mut split_info = json!({"source": "input"});
    if a.assign_split {
        let ratios = a.split.ratios()?;
        let split = make_split(&dataset, &ratios, a.split.split_seed)?;
        dataset = dataset.with_split(&split);
        split_info = json!({"source": "generated", "ratios": ratios, "seed": a.split.split_seed});
    }
    let out = OutputDir::create(&a.output.output_dir)?;
    write_dataset(&dataset, out.path(MANIFEST), out.path(VECTORS))?;
    if !dataset.sequences().is_empty() {
        write_sequences(dataset.sequences(), out.path(SEQUENCES), out.path(SEQUENCE_DATA))?;
    }
    let summary = dataset.summary();
    out.write_json(
        "ingest_summary.json",
        &json!({
            "version": VERSION_TAG,
            "split": split_info,
            "summary": summary,
            "sequences": dataset.sequences().len(),
        }),
    )?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn load_data(d: &DataArgs) -> Result<Dataset> {
    let mut ds = load_dataset(&d.manifest, &d.vectors)?;
    if let (Some(idx), Some(data)) = (&d.sequences, &d.sequence_data) {
        ds = ds.with_sequences(load_sequences(idx, data)?)?;
    }
    Ok(ds)
}

fn has_tags(ds: &Dataset) -> bool {
    ds.records().iter().any(|r| r.split != SplitTag::Unassigned)
}

#[derive(Debug, Clone, Serialize)]
struct SplitInfo {
    source: &'static str,
    ratios: Option<SplitRatios>,
    seed: u64,
    train: usize,
    val: usize,
    test: usize,
}

impl SplitInfo {
    fn new(source: &'static str, ratios: Option<SplitRatios>, split: &DatasetSplit) -> Self {
        let (train, val, test) = split.sizes();
        Self {
            source,
            ratios,
            seed: split.seed,
            train,
            val,
            test,
        }
    }
}

fn split_for_training(ds: &Dataset, args: &SplitArgs) -> Result<(Dataset, SplitInfo)> {
    if has_tags(ds) {
        let split = DatasetSplit::from_tags(ds, args.split_seed);
        split.check(ds)?;
        let info = SplitInfo::new("manifest", None, &split);
        return Ok((ds.clone(), info));
    }
    let ratios = args.ratios()?;
    let split = make_split(ds, &ratios, args.split_seed)?;
    let info = SplitInfo::new("generated", Some(ratios), &split);
    Ok((ds.with_split(&split), info))
}

fn read_split_file(path: &Path, seed: u64) -> Result<DatasetSplit> {
    let mut split = DatasetSplit {
        seed,
        ..Default::default()
    };
    for (n, c) in read_table(path, &["record_id", "split"])? {
        match parse_or::<SplitTag>(path, n, "split", &c[1])? {
            SplitTag::Train => split.train.insert(c[0].clone()),
            SplitTag::Val => split.val.insert(c[0].clone()),
            SplitTag::Test => split.test.insert(c[0].clone()),
            SplitTag::Unassigned => false,
        };
    }
    Ok(split)
}

fn split_table(ds: &Dataset, seed: u64) -> Table {
    let mut t = Table::new(seed, &["record_id", "split"]);
    let mut rows: Vec<(&str, SplitTag)> = ds.records().iter().map(|r| (r.record_id.as_str(), r.split)).collect();
    rows.sort_unstable();
    for (id, tag) in rows {
        t.row(vec![id.to_string(), tag.as_str().to_string()]);
    }
    t
}

/// Validation F1 at the tuned threshold after every epoch.
fn f1_observer(seed: u64) -> impl FnMut(&align::EpochStats, &Manifold, &Dataset) -> speechground::Result<(f64, f64)> {
    move |_, manifold, ds| {
        let set = EvalSet::for_split(manifold, ds, SplitTag::Val)?;
        let pairs = threshold_pairs(&set, derive_seed(seed, hash_str("pairs/val")));
        let (t, c) = tune_threshold(&pairs)?;
        Ok((t, c.f1()))
    }
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let config: TrainConfig = a.training.config();
    config.validate()?;
    let ds = load_data(&a.data)?;
    let (ds, split_info) = split_for_training(&ds, &a.split)?;
    let out = OutputDir::create(&a.output.output_dir)?;

    let mut f1_rows = Vec::new();
    let mut f1 = f1_observer(config.seed);
    let outcome = if a.f1_curve {
        align::train_with_observer(&ds, &config, |stats, m| {
            let (t, f) = f1(stats, m, &ds)?;
            f1_rows.push((stats.epoch, t, f));
            Ok(())
        })
    } else {
        align::train(&ds, &config)
    }
    .context("training failed")?;

    let metadata = json!({
        "version": VERSION_TAG,
        "train_config": config,
        "split": split_info,
    });
    write_checkpoint(&out.path(CHECKPOINT), &outcome.manifold.to_checkpoint(metadata.clone()))?;

    let mut loss = Table::new(config.seed, &["epoch", "mean_loss", "lr"]);
    for s in &outcome.loss_curve {
        loss.row(vec![cell(s.epoch), cell(s.mean_loss), cell(s.lr)]);
    }
    out.write_table("loss_curve.tsv", &loss)?;
    out.write_table("split.tsv", &split_table(&ds, split_info.seed))?;
    if a.f1_curve {
        let mut t = Table::new(config.seed, &["epoch", "threshold", "val_f1"]);
        for (e, th, f) in &f1_rows {
            t.row(vec![cell(e), cell(th), cell(f)]);
        }
        out.write_table("f1_curve.tsv", &t)?;
    }
    let last = outcome.loss_curve.last().map(|s| s.mean_loss);
    out.write_json(
        "train_report.json",
        &json!({
            "checkpoint_metadata": metadata,
            "final_mean_loss": last,
            "skipped_triplets": outcome.skipped_triplets,
            "epochs_run": outcome.loss_curve.len(),
        }),
    )?;
    println!(
        "trained {} epochs, final mean loss {}",
        outcome.loss_curve.len(),
        last.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}"))
    );
    Ok(())
}

struct Loaded {
    manifold: Manifold,
    dataset: Dataset,
    metadata: serde_json::Value,
    split: SplitInfo,
}

fn load_for_eval(a: &EvalArgs) -> Result<Loaded> {
    let checkpoint = read_checkpoint(&a.checkpoint)?;
    let manifold = Manifold::from_checkpoint(&checkpoint)?;
    let ds = load_data(&a.data)?;
    let (dataset, split) = if has_tags(&ds) {
        let s = DatasetSplit::from_tags(&ds, 0);
        let info = SplitInfo::new("manifest", None, &s);
        (ds, info)
    } else if let Some(p) = &a.split_file {
        let s = read_split_file(p, 0)?;
        s.check(&ds)?;
        let info = SplitInfo::new("split_file", None, &s);
        (ds.with_split(&s), info)
    } else {
        let meta = &checkpoint.metadata["split"];
        let ratios: SplitRatios = serde_json::from_value(meta["ratios"].clone()).map_err(|_| {
            Error::Checkpoint("checkpoint records no generated split; pass --split-file".into())
        })?;
        let seed = meta["seed"]
            .as_u64()
            .ok_or_else(|| Error::Checkpoint("checkpoint split has no seed".into()))?;
        let s = make_split(&ds, &ratios, seed)?;
        let info = SplitInfo::new("checkpoint", Some(ratios), &s);
        (ds.with_split(&s), info)
    };
    Ok(Loaded {
        manifold,
        dataset,
        metadata: checkpoint.metadata,
        split,
    })
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let l = load_for_eval(a)?;
    let options = EvalOptions {
        repeats: a.repeats,
        seed: a.seed,
    };
    let report = eval::evaluate(&l.manifold, &l.dataset, &options)?;
    let out = OutputDir::create(&a.output.output_dir)?;
    let mut roc = Table::new(a.seed, &["fpr", "tpr"]);
    roc.comment(format!("split=test auc={}", report.auc));
    for (x, y) in &report.roc_points {
        roc.row(vec![cell(x), cell(y)]);
    }
    out.write_table("eval_roc.tsv", &roc)?;
    let mut details = serde_json::to_value(&report)?;
    if let Some(obj) = details.as_object_mut() {
        obj.remove("roc_points");
    }
    out.write_json(
        "eval_report.json",
        &json!({
            "version": VERSION_TAG,
            "checkpoint": path_str(&a.checkpoint),
            "checkpoint_metadata": l.metadata,
            "seed": a.seed,
            "repeats": a.repeats,
            "split": l.split,
            "triplet_mrr": report.triplet_mrr.mean,
            "triplet_mrr_std": report.triplet_mrr.std,
            "subset_mrr": report.subset_mrr.mean,
            "subset_mrr_std": report.subset_mrr.std,
            "f1": report.threshold.f1,
            "tuned_threshold": report.threshold.threshold,
            "auc": report.auc,
            "details": details,
        }),
    )?;
    println!(
        "triplet MRR {:.4} ± {:.4}  subset MRR {:.4} ± {:.4}  F1 {:.4} (t* = {:.2})  AUC {:.4}",
        report.triplet_mrr.mean,
        report.triplet_mrr.std,
        report.subset_mrr.mean,
        report.subset_mrr.std,
        report.threshold.f1,
        report.threshold.threshold,
        report.auc
    );
    Ok(())
}

fn pairs_for(l: &Loaded, tag: SplitTag, seed: u64) -> Result<eval::ThresholdPairs> {
    let set = EvalSet::for_split(&l.manifold, &l.dataset, tag)?;
    let stream = match tag {
        SplitTag::Val => "pairs/val",
        _ => "pairs/test",
    };
    Ok(threshold_pairs(&set, derive_seed(seed, hash_str(stream))))
}

pub fn tune_threshold_cmd(a: &EvalArgs) -> Result<()> {
    let l = load_for_eval(a)?;
    let pairs = pairs_for(&l, SplitTag::Val, a.seed)?;
    let (t, best) = tune_threshold(&pairs)?;
    let out = OutputDir::create(&a.output.output_dir)?;
    let mut sweep = Table::new(a.seed, &["threshold", "precision", "recall", "f1"]);
    sweep.comment("split=val");
    for i in 0..=THRESHOLD_GRID_STEPS {
        let th = i as f64 / THRESHOLD_GRID_STEPS as f64;
        let c = threshold_eval(&pairs, th)?;
        sweep.row(vec![cell(th), cell(c.precision()), cell(c.recall()), cell(c.f1())]);
    }
    out.write_table("threshold_sweep.tsv", &sweep)?;
    out.write_json(
        "threshold.json",
        &json!({
            "version": VERSION_TAG,
            "checkpoint": path_str(&a.checkpoint),
            "seed": a.seed,
            "split": l.split,
            "tuned_threshold": t,
            "f1": best.f1(),
            "precision": best.precision(),
            "recall": best.recall(),
            "positive_pairs": pairs.positives.len(),
            "negative_pairs": pairs.negatives.len(),
        }),
    )?;
    println!("t* = {t:.2}, validation F1 {:.4}", best.f1());
    Ok(())
}


pub fn roc(a: &RocArgs) -> Result<()> {
    let l = load_for_eval(&a.eval)?;
    let (tag, name) = match a.on {
        SplitChoice::Val => (SplitTag::Val, "val"),
        SplitChoice::Test => (SplitTag::Test, "test"),
    };
    let pairs = pairs_for(&l, tag, a.eval.seed)?;
    let curve = roc_curve(&pairs)?;
    let out = OutputDir::create(&a.eval.output.output_dir)?;
    let mut t = Table::new(a.eval.seed, &["fpr", "tpr"]);
    t.comment(format!("split={name} auc={}", curve.auc));
    for (x, y) in &curve.points {
        t.row(vec![cell(x), cell(y)]);
    }
    out.write_table(&format!("roc_{name}.tsv"), &t)?;
    out.write_json(
        &format!("roc_{name}.json"),
        &json!({
            "version": VERSION_TAG,
            "checkpoint": path_str(&a.eval.checkpoint),
            "seed": a.eval.seed,
            "split": name,
            "auc": curve.auc,
            "points": curve.points.len(),
            "positive_pairs": pairs.positives.len(),
            "negative_pairs": pairs.negatives.len(),
        }),
    )?;
    println!("AUC ({name}) {:.4}", curve.auc);
    Ok(())
}

fn study_config(a: &StudyArgs) -> Result<StudyConfig> {
    let train = a.training.config();
    train.validate()?;
    Ok(StudyConfig {
        train,
        eval: EvalOptions {
            repeats: a.repeats,
            seed: a.eval_seed,
        },
    })
}

pub fn user_study(a: &StudyArgs) -> Result<()> {
    let config = study_config(a)?;
    let ds = load_data(&a.data)?;
    let traits = load_traits(&a.traits)?;
    let study = analysis::per_user_study(&ds, &traits, &config)?;
    let out = OutputDir::create(&a.output.output_dir)?;
    let seed = config.train.seed;

    let mut users = Table::new(
        seed,
        &[
            "speaker_id",
            "n_train",
            "n_test",
            "n_examples",
            "classes",
            "triplet_mrr",
            "subset_mrr",
            "gender",
            "accent",
            "creak",
            "hoarseness",
            "muffledness",
            "volume",
            "background_noise",
        ],
    );
    for r in &study.results {
        let t = &r.traits;
        users.row(vec![
            r.speaker_id.clone(),
            cell(r.n_train),
            cell(r.n_test),
            cell(r.n_examples),
            cell(r.classes),
            cell(r.triplet_mrr),
            cell(r.subset_mrr),
            cell(t.gender),
            cell(u8::from(t.accent)),
            cell(u8::from(t.creak)),
            cell(u8::from(t.hoarseness)),
            cell(t.muffledness),
            cell(t.volume),
            cell(t.background_noise),
        ]);
    }
    out.write_table("user_study.tsv", &users)?;

    let (subset, triplet) = if study.results.len() >= 2 {
        (
            trait_correlations(&study.results, Metric::SubsetMrr)?,
            trait_correlations(&study.results, Metric::TripletMrr)?,
        )
    } else {
        log::warn!("fewer than two eligible users; correlation table is empty");
        (Vec::new(), Vec::new())
    };
    let mut corr = Table::new(seed, &["trait", "r_subset_mrr", "r_triplet_mrr", "n", "excluded"]);
    corr.comment(format!("users={}", study.results.len()));
    for (s, t) in subset.iter().zip(&triplet) {
        corr.row(vec![cell(s.trait_), opt_cell(s.r), opt_cell(t.r), cell(s.n), cell(s.excluded)]);
    }
    out.write_table("correlations.tsv", &corr)?;
    out.write_json(
        "user_study.json",
        &json!({
            "version": VERSION_TAG,
            "config": config,
            "traits_file": path_str(&a.traits),
            "results": study.results,
            "excluded": study.excluded,
            "correlations": {"subset_mrr": subset, "triplet_mrr": triplet},
        }),
    )?;
    println!("{} eligible users, {} excluded", study.results.len(), study.excluded.len());
    Ok(())
}

pub fn group_study(a: &GroupStudyArgs) -> Result<()> {
    let config = study_config(&a.study)?;
    let ds = load_data(&a.study.data)?;
    let traits = load_traits(&a.study.traits)?;
    let grouping = TraitGrouping::standard(a.trait_)?;
    let study = analysis::group_study(&ds, &traits, &grouping, &config)?;
    let out = OutputDir::create(&a.study.output.output_dir)?;

    let mut t = Table::new(
        config.train.seed,
        &[
            "group",
            "values",
            "speakers",
            "n_train",
            "n_test",
            "train_classes",
            "triplet_mrr",
            "triplet_mrr_std",
            "subset_mrr",
            "subset_mrr_std",
        ],
    );
    t.comment(format!(
        "trait={} n_train_per_group={} n_test_per_group={} dropped_test_records={}",
        a.trait_, study.n_train, study.n_test, study.dropped_test_records
    ));
    for g in &study.groups {
        let values: Vec<String> = g.values.iter().map(|v| v.to_string()).collect();
        t.row(vec![
            g.name.clone(),
            values.join(","),
            cell(g.speakers),
            cell(g.n_train),
            cell(g.n_test),
            cell(g.train_classes),
            cell(g.triplet_mrr.mean),
            cell(g.triplet_mrr.std),
            cell(g.subset_mrr.mean),
            cell(g.subset_mrr.std),
        ]);
    }
    out.write_table(&format!("group_study_{}.tsv", a.trait_), &t)?;
    out.write_json(
        &format!("group_study_{}.json", a.trait_),
        &json!({
            "version": VERSION_TAG,
            "config": config,
            "traits_file": path_str(&a.study.traits),
            "study": study,
        }),
    )?;
    for g in &study.groups {
        println!(
            "{}: triplet MRR {:.4}, subset MRR {:.4} ({} train / {} test)",
            g.name, g.triplet_mrr.mean, g.subset_mrr.mean, g.n_train, g.n_test
        );
    }
    Ok(())
}


//! MFCC output against reference matrices produced by an independent
//! implementation (see `fixtures/mfcc/generate_reference.py`).

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use speechground::mfcc::{read_wav, AudioClip, MfccConfig, MfccExtractor, SAMPLE_RATE};

#[derive(Deserialize)]
struct Reference {
    n_frames: usize,
    n_coeffs: usize,
    frames: Vec<Vec<f64>>,
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mfcc").join(name)
}

/// Relative tolerance with a tiny absolute floor for coefficients that are
/// zero up to rounding (every cepstral term of a constant log spectrum).
fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-3 * b.abs() + 1e-9
}

fn check_clip(name: &str) {
    let reference: Reference =
        serde_json::from_str(&std::fs::read_to_string(fixture(&format!("{name}.json"))).unwrap()).unwrap();
    let clip = read_wav(fixture(&format!("{name}.wav"))).unwrap();
    let seq = MfccExtractor::new(MfccConfig::default()).unwrap().extract(&clip).unwrap();
    assert_eq!(seq.len(), reference.n_frames, "{name}: frame count");
    assert_eq!(seq.n_coeffs, reference.n_coeffs, "{name}: coefficient count");
    let mut worst = (0.0f64, 0, 0);
    for (t, (got, want)) in seq.frames.iter().zip(&reference.frames).enumerate() {
        for (k, (&a, &b)) in got.iter().zip(want).enumerate() {
            assert!(close(a, b), "{name}: frame {t} coeff {k}: {a} vs reference {b}");
            let rel = (a - b).abs() / b.abs().max(1e-12);
            if rel > worst.0 {
                worst = (rel, t, k);
            }
        }
    }
    eprintln!("{name}: worst relative deviation {:.2e} at frame {} coeff {}", worst.0, worst.1, worst.2);
}

#[test]
fn silence_matches_reference() {
    check_clip("silence");
}

#[test]
fn sine_matches_reference() {
    check_clip("sine440");
}

#[test]
fn speech_matches_reference() {
    check_clip("speech");
}

#[test]
fn frame_count_formula_on_random_lengths() {
    let cfg = MfccConfig::default();
    let (w, h) = (cfg.window_samples(), cfg.hop_samples());
    assert_eq!((w, h), (400, 160));
    let extractor = MfccExtractor::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0xF4A3);
    for _ in 0..100 {
        let n = rng.random_range(w..3 * SAMPLE_RATE as usize);
        let samples: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
        let seq = extractor.extract(&AudioClip::new(samples, SAMPLE_RATE).unwrap()).unwrap();
        let expect = 1 + (n - w) / h;
        assert_eq!(seq.len(), expect, "n = {n}");
        assert_eq!(extractor.frame_count(n), expect);
    }
}

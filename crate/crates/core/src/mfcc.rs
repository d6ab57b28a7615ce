//! MFCC front end for raw 16 kHz speech.
//!
//! Pipeline: pre-emphasis, framing, periodic Hann window, DFT magnitude, HTK
//! mel filterbank (unit-peak triangles), natural log with a floor, orthonormal
//! DCT-II, first `n_coeffs` coefficients. The DFT length equals the window
//! length, so a clip of `N` samples yields `floor((N - window) / hop) + 1`
//! frames.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::dataset::FeatureSequence;
use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;

/// Mono PCM audio scaled to [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate != SAMPLE_RATE {
            return Err(Error::Audio(format!(
                "unsupported sample rate {sample_rate} Hz (only {SAMPLE_RATE} Hz is accepted)"
            )));
        }
        if samples.is_empty() {
            return Err(Error::Audio("empty clip".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("audio samples".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

/// Reads a 16-bit integer PCM WAV file; stereo is downmixed by averaging.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Audio(format!(
            "{}: only 16-bit integer PCM is supported",
            path.display()
        )));
    }
    let channels = usize::from(spec.channels);
    if !(1..=2).contains(&channels) {
        return Err(Error::Audio(format!(
            "{}: {channels} channels (mono or stereo expected)",
            path.display()
        )));
    }
    let raw: Vec<i16> = reader
        .samples::<i16>()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
    let samples = raw
        .chunks_exact(channels)
        .map(|frame| frame.iter().map(|&s| f64::from(s) / 32768.0).sum::<f64>() / channels as f64)
        .collect();
    AudioClip::new(samples, spec.sample_rate)
}

/// Writes mono 16-bit PCM; samples are clipped to [-1, 1).
pub fn write_wav(path: impl AsRef<Path>, samples: &[f64], sample_rate: u32) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wrap = |e: hound::Error| Error::Audio(format!("{}: {e}", path.display()));
    let mut w = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &s in samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(q).map_err(wrap)?;
    }
    w.finalize().map_err(wrap)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfccConfig {
    pub n_coeffs: usize,
    pub n_mels: usize,
    /// Analysis window length in seconds.
    pub window: f64,
    /// Frame hop in seconds.
    pub hop: f64,
    pub pre_emphasis: f64,
    pub log_floor: f64,
    pub f_min: f64,
    /// Upper filterbank edge; `None` means Nyquist.
    pub f_max: Option<f64>,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            n_coeffs: 13,
            n_mels: 26,
            window: 0.025,
            hop: 0.010,
            pre_emphasis: 0.97,
            log_floor: 1e-10,
            f_min: 0.0,
            f_max: None,
        }
    }
}

impl MfccConfig {
    pub fn window_samples(&self) -> usize {
        (self.window * f64::from(SAMPLE_RATE)).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop * f64::from(SAMPLE_RATE)).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.window_samples(), self.hop_samples());
        if h == 0 || w < h {
            return Err(Error::Config(format!(
                "mfcc window ({w} samples) must be at least the hop ({h} samples) and the hop non-zero"
            )));
        }
        if self.n_coeffs == 0 || self.n_coeffs > self.n_mels {
            return Err(Error::Config(format!(
                "n_coeffs {} must be in 1..={}",
                self.n_coeffs, self.n_mels
            )));
        }
        let nyquist = f64::from(SAMPLE_RATE) / 2.0;
        let f_max = self.f_max.unwrap_or(nyquist);
        if !(0.0..f_max).contains(&self.f_min) || f_max > nyquist {
            return Err(Error::Config(format!(
                "filterbank edges {}..{f_max} Hz must lie within 0..{nyquist} Hz",
                self.f_min
            )));
        }
        if self.log_floor.is_nan() || self.log_floor <= 0.0 {
            return Err(Error::Config("log floor must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfccSequence {
    pub frames: Vec<Vec<f64>>,
    pub n_coeffs: usize,
    /// Seconds between frame starts.
    pub frame_hop: f64,
    /// Seconds per frame.
    pub frame_len: f64,
}

impl MfccSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn to_feature_sequence(&self) -> Result<FeatureSequence> {
        FeatureSequence::new(
            self.frames.len(),
            self.n_coeffs,
            self.frames.iter().flatten().map(|&v| v as f32).collect(),
        )
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters over the `n_fft / 2 + 1` DFT bins, peaks at 1.
fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: f64, f_min: f64, f_max: f64) -> Vec<Vec<f64>> {
    let n_bins = n_fft / 2 + 1;
    let (m_lo, m_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    (0..n_mels)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * sample_rate / n_fft as f64;
                    let rising = (f - lo) / (mid - lo);
                    let falling = (hi - f) / (hi - mid);
                    rising.min(falling).max(0.0)
                })
                .collect()
        })
        .collect()
}

/// Orthonormal DCT-II basis rows for the first `n_out` coefficients.
fn dct_basis(n_in: usize, n_out: usize) -> Vec<Vec<f64>> {
    let n = n_in as f64;
    (0..n_out)
        .map(|k| {
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            (0..n_in)
                .map(|i| scale * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos())
                .collect()
        })
        .collect()
}

/// Precomputed window, filterbank, DCT basis and FFT plan for one config.
pub struct MfccExtractor {
    config: MfccConfig,
    window: Vec<f64>,
    filterbank: Vec<Vec<f64>>,
    dct: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for MfccExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MfccExtractor").field("config", &self.config).finish()
    }
}

impl MfccExtractor {
    pub fn new(config: MfccConfig) -> Result<Self> {
        config.validate()?;
        let n_fft = config.window_samples();
        let sr = f64::from(SAMPLE_RATE);
        let window = (0..n_fft)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n_fft as f64).cos())
            .collect();
        let filterbank = mel_filterbank(
            config.n_mels,
            n_fft,
            sr,
            config.f_min,
            config.f_max.unwrap_or(sr / 2.0),
        );
        let dct = dct_basis(config.n_mels, config.n_coeffs);
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Ok(Self {
            config,
            window,
            filterbank,
            dct,
            fft,
        })
    }

    pub fn config(&self) -> &MfccConfig {
        &self.config
    }

    /// Number of frames produced for a clip of `n_samples`.
    pub fn frame_count(&self, n_samples: usize) -> usize {
        let (w, h) = (self.config.window_samples(), self.config.hop_samples());
        if n_samples < w {
            0
        } else {
            (n_samples - w) / h + 1
        }
    }

    pub fn extract(&self, clip: &AudioClip) -> Result<MfccSequence> {
        let (w, h) = (self.config.window_samples(), self.config.hop_samples());
        let x = clip.samples();
        if x.len() < w {
            return Err(Error::Audio(format!(
                "clip of {} samples is shorter than one {w}-sample window",
                x.len()
            )));
        }
        let alpha = self.config.pre_emphasis;
        let emphasized: Vec<f64> = std::iter::once(x[0])
            .chain(x.windows(2).map(|p| p[1] - alpha * p[0]))
            .collect();

        let n_bins = w / 2 + 1;
        let mut buf = vec![Complex::new(0.0, 0.0); w];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut magnitude = vec![0.0; n_bins];
        let mut log_mel = vec![0.0; self.config.n_mels];
        let frames = (0..self.frame_count(x.len()))
            .map(|t| {
                let start = t * h;
                for (b, (s, win)) in buf.iter_mut().zip(emphasized[start..start + w].iter().zip(&self.window)) {
                    *b = Complex::new(s * win, 0.0);
                }
                self.fft.process_with_scratch(&mut buf, &mut scratch);
                for (m, c) in magnitude.iter_mut().zip(&buf) {
                    *m = c.norm();
                }
                for (lm, filt) in log_mel.iter_mut().zip(&self.filterbank) {
                    let e: f64 = filt.iter().zip(&magnitude).map(|(a, b)| a * b).sum();
                    *lm = e.max(self.config.log_floor).ln();
                }
                self.dct
                    .iter()
                    .map(|row| row.iter().zip(&log_mel).map(|(a, b)| a * b).sum())
                    .collect()
            })
            .collect();
        Ok(MfccSequence {
            frames,
            n_coeffs: self.config.n_coeffs,
            frame_hop: h as f64 / f64::from(SAMPLE_RATE),
            frame_len: w as f64 / f64::from(SAMPLE_RATE),
        })
    }
}

/// One-shot extraction; build an [`MfccExtractor`] to reuse plans across clips.
pub fn extract_mfcc(clip: &AudioClip, config: &MfccConfig) -> Result<MfccSequence> {
    MfccExtractor::new(config.clone())?.extract(clip)
}

/// Per-coefficient arithmetic mean over frames.
pub fn mean_pool(seq: &MfccSequence) -> Result<Vec<f64>> {
    if seq.frames.is_empty() {
        return Err(Error::Shape("cannot pool an empty MFCC sequence".into()));
    }
    let mut acc = vec![0.0; seq.n_coeffs];
    for f in &seq.frames {
        if f.len() != seq.n_coeffs {
            return Err(Error::Shape(format!(
                "frame has {} coefficients, expected {}",
                f.len(),
                seq.n_coeffs
            )));
        }
        for (a, v) in acc.iter_mut().zip(f) {
            *a += v;
        }
    }
    let n = seq.frames.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

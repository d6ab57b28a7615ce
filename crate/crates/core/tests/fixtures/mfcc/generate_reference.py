"""Regenerates the MFCC conformance fixtures.

Writes three 16 kHz mono 16-bit WAV clips and, for each, the MFCC matrix
computed with librosa + scipy from the quantized samples:

    pre-emphasis 0.97 -> STFT (n_fft = win = 400, hop 160, periodic Hann,
    no centering) -> |X| -> HTK mel filterbank (26 bands, 0..8000 Hz,
    unnormalized) -> ln(max(., 1e-10)) -> orthonormal DCT-II -> first 13.

Usage: python3 generate_reference.py   (librosa 0.11, scipy 1.15)
"""

import json

import librosa
import numpy as np
import scipy.fft
import scipy.io.wavfile

SR = 16000
N_FFT = 400
HOP = 160
N_MELS = 26
N_MFCC = 13


def quantize(x):
    return np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)


def speech_like(rng):
    # Glottal pulse train at a gliding pitch through three formant resonators,
    # with a syllable-shaped envelope and a little aspiration noise.
    n = int(0.8 * SR)
    t = np.arange(n) / SR
    f0 = 110.0 + 30.0 * np.sin(2 * np.pi * 2.5 * t)
    phase = np.cumsum(2 * np.pi * f0 / SR)
    source = (np.sin(phase) > 0.95).astype(np.float64) + 0.02 * rng.standard_normal(n)
    out = np.zeros(n)
    for fc, bw, gain in [(700.0, 110.0, 1.0), (1220.0, 120.0, 0.6), (2600.0, 160.0, 0.3)]:
        r = np.exp(-np.pi * bw / SR)
        a1, a2 = -2 * r * np.cos(2 * np.pi * fc / SR), r * r
        y = np.zeros(n)
        for i in range(n):
            y[i] = source[i] - a1 * (y[i - 1] if i >= 1 else 0.0) - a2 * (y[i - 2] if i >= 2 else 0.0)
        out += gain * y
    env = np.sin(np.pi * np.clip(t / 0.8, 0, 1)) ** 2
    out = out * env
    return 0.6 * out / np.max(np.abs(out))


def mfcc(samples):
    y = samples.astype(np.float64)
    y = np.concatenate([[y[0]], y[1:] - 0.97 * y[:-1]])
    spec = np.abs(
        librosa.stft(y, n_fft=N_FFT, hop_length=HOP, win_length=N_FFT, window="hann", center=False)
    )
    fb = librosa.filters.mel(sr=SR, n_fft=N_FFT, n_mels=N_MELS, fmin=0.0, fmax=SR / 2, htk=True, norm=None, dtype=np.float64)
    log_mel = np.log(np.maximum(fb @ spec, 1e-10))
    return scipy.fft.dct(log_mel, type=2, norm="ortho", axis=0)[:N_MFCC].T


def main():
    rng = np.random.default_rng(20240611)
    clips = {
        "silence": np.zeros(SR),
        "sine440": 0.5 * np.sin(2 * np.pi * 440.0 * np.arange(SR) / SR),
        "speech": speech_like(rng),
    }
    for name, x in clips.items():
        q = quantize(x)
        scipy.io.wavfile.write(f"{name}.wav", SR, q)
        coeffs = mfcc(q.astype(np.float64) / 32768.0)
        with open(f"{name}.json", "w") as f:
            json.dump({"n_frames": int(coeffs.shape[0]), "n_coeffs": N_MFCC, "frames": coeffs.tolist()}, f)
        print(name, coeffs.shape)


if __name__ == "__main__":
    main()

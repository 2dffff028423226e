//! MFCC extraction: 13 coefficients per 25 ms window at a 10 ms hop (100 Hz).
//!
//! The pipeline is the standard one: pre-emphasis, Hamming window, 512-point
//! FFT power spectrum, 26 HTK mel filters, floored natural log, orthonormal
//! DCT-II. All arithmetic is `f64` and fully deterministic.

use ndarray::Array2;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};

use super::AudioFeatures;

/// Expected input rate; callers resample before reaching this function.
pub const SAMPLE_RATE_HZ: u32 = 16_000;
/// Analysis window: 25 ms at 16 kHz.
pub const MFCC_WINDOW: usize = 400;
/// Hop: 10 ms at 16 kHz, i.e. 100 feature frames per second.
pub const MFCC_HOP: usize = 160;
/// Cepstral coefficients kept per frame.
pub const MFCC_COEFFS: usize = 13;

const NFFT: usize = 512;
const NMELS: usize = 26;
const PRE_EMPHASIS: f64 = 0.97;
const LOG_FLOOR: f64 = 1e-10;

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank over the `NFFT/2 + 1` power-spectrum bins.
fn mel_filterbank(rate: f64) -> Vec<Vec<(usize, f64)>> {
    let low = hz_to_mel(0.0);
    let high = hz_to_mel(rate / 2.0);
    let points: Vec<f64> = (0..NMELS + 2)
        .map(|i| {
            let mel = low + (high - low) * i as f64 / (NMELS + 1) as f64;
            ((NFFT + 1) as f64 * mel_to_hz(mel) / rate).floor()
        })
        .collect();
    let mut bank = Vec::with_capacity(NMELS);
    for m in 1..=NMELS {
        let (a, b, c) = (points[m - 1], points[m], points[m + 1]);
        let mut taps = Vec::new();
        let lo = a as usize;
        let hi = (c as usize).min(NFFT / 2);
        for k in lo..=hi {
            let kf = k as f64;
            let w = if kf < b {
                if b > a {
                    (kf - a) / (b - a)
                } else {
                    0.0
                }
            } else if c > b {
                (c - kf) / (c - b)
            } else {
                0.0
            };
            if w > 0.0 {
                taps.push((k, w));
            }
        }
        bank.push(taps);
    }
    bank
}

/// Orthonormal DCT-II basis: `basis[k][m]` maps `NMELS` log energies to
/// coefficient `k`.
fn dct_basis() -> [[f64; NMELS]; MFCC_COEFFS] {
    let mut basis = [[0.0; NMELS]; MFCC_COEFFS];
    let n = NMELS as f64;
    for (k, row) in basis.iter_mut().enumerate() {
        let scale = if k == 0 {
            (1.0 / n).sqrt()
        } else {
            (2.0 / n).sqrt()
        };
        for (m, cell) in row.iter_mut().enumerate() {
            *cell = scale
                * (std::f64::consts::PI * k as f64 * (2.0 * m as f64 + 1.0) / (2.0 * n)).cos();
        }
    }
    basis
}

/// Extract MFCC features from a mono waveform at 16 kHz.
pub fn extract_mfcc(waveform: &[f64], rate_hz: u32) -> Result<AudioFeatures> {
    if rate_hz != SAMPLE_RATE_HZ {
        return Err(Error::validation(
            "rate_hz",
            format!("expected {SAMPLE_RATE_HZ} Hz input, got {rate_hz}"),
        ));
    }
    if waveform.len() < MFCC_WINDOW {
        return Err(Error::AudioTooShort {
            got: waveform.len(),
            need: MFCC_WINDOW,
        });
    }
    if waveform.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("waveform", "contains NaN/Inf"));
    }

    // Pre-emphasis (first sample kept as-is).
    let mut emph = Vec::with_capacity(waveform.len());
    emph.push(waveform[0]);
    for i in 1..waveform.len() {
        emph.push(waveform[i] - PRE_EMPHASIS * waveform[i - 1]);
    }

    let hamming: Vec<f64> = (0..MFCC_WINDOW)
        .map(|n| {
            0.54 - 0.46
                * (2.0 * std::f64::consts::PI * n as f64 / (MFCC_WINDOW - 1) as f64).cos()
        })
        .collect();

    let n_frames = (waveform.len() - MFCC_WINDOW) / MFCC_HOP + 1;
    let bank = mel_filterbank(rate_hz as f64);
    let dct = dct_basis();

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(NFFT);
    let mut mfcc = Array2::zeros((n_frames, MFCC_COEFFS));
    let mut buf = vec![Complex::new(0.0, 0.0); NFFT];

    for t in 0..n_frames {
        let start = t * MFCC_HOP;
        for (n, slot) in buf.iter_mut().enumerate() {
            let v = if n < MFCC_WINDOW {
                emph[start + n] * hamming[n]
            } else {
                0.0
            };
            *slot = Complex::new(v, 0.0);
        }
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..NFFT / 2 + 1]
            .iter()
            .map(|c| c.norm_sqr() / NFFT as f64)
            .collect();
        let mut logmel = [0.0; NMELS];
        for (m, taps) in bank.iter().enumerate() {
            let e: f64 = taps.iter().map(|&(k, w)| w * power[k]).sum();
            logmel[m] = e.max(LOG_FLOOR).ln();
        }
        for k in 0..MFCC_COEFFS {
            mfcc[[t, k]] = dct[k].iter().zip(logmel.iter()).map(|(b, e)| b * e).sum();
        }
    }

    Ok(AudioFeatures {
        mfcc,
        sample_rate_hz: rate_hz,
    })
}

//! Mel-cepstral feature extraction: Hann window, FFT power spectrum,
//! triangular mel filterbank (HTK mel scale), log with floor, orthonormal
//! DCT-II with c0 dropped.

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::{Cepstrogram, CepstrogramConfig, Waveform};
use crate::error::{Error, Result};

/// Floor applied to mel energies before the log, so silence is well-defined.
const LOG_FLOOR: f64 = 1e-10;

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filterbank, `n_mels x (fft_size/2 + 1)`, peaks at 1.
fn mel_filterbank(sample_rate: u32, fft_size: usize, n_mels: usize) -> Array2<f64> {
    let n_bins = fft_size / 2 + 1;
    let f_max = sample_rate as f64 / 2.0;
    let mel_max = hz_to_mel(f_max);
    // n_mels + 2 edge frequencies, evenly spaced in mel.
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / fft_size as f64;

    let mut bank = Array2::zeros((n_mels, n_bins));
    for m in 0..n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for bin in 0..n_bins {
            let f = bin as f64 * bin_hz;
            let w = if f >= lo && f <= center && center > lo {
                (f - lo) / (center - lo)
            } else if f > center && f <= hi && hi > center {
                (hi - f) / (hi - center)
            } else {
                0.0
            };
            bank[[m, bin]] = w;
        }
    }
    bank
}

fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos()))
        .collect()
}

/// Log-mel energies per frame, `n_frames x n_mels`. Shared by the cepstra
/// pipeline and the speaker embedding.
pub(super) fn log_mel_frames(w: &Waveform, cfg: &CepstrogramConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    if w.len() < cfg.frame_length {
        return Err(Error::InvalidInput(format!(
            "waveform of {} samples is shorter than one frame ({})",
            w.len(),
            cfg.frame_length
        )));
    }
    let n_frames = 1 + (w.len() - cfg.frame_length) / cfg.hop;
    let n_bins = cfg.fft_size / 2 + 1;
    let window = hann(cfg.frame_length);
    let bank = mel_filterbank(w.sample_rate, cfg.fft_size, cfg.n_mels);

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(cfg.fft_size);
    let mut out = Array2::zeros((n_frames, cfg.n_mels));
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_size];

    for fi in 0..n_frames {
        let start = fi * cfg.hop;
        for (i, c) in buf.iter_mut().enumerate() {
            let s = if i < cfg.frame_length {
                w.samples[start + i] * window[i]
            } else {
                0.0
            };
            *c = Complex64::new(s, 0.0);
        }
        fft.process(&mut buf);
        // Power spectrum through the filterbank, then floored log.
        for m in 0..cfg.n_mels {
            let mut energy = 0.0;
            for (bin, c) in buf.iter().take(n_bins).enumerate() {
                let weight = bank[[m, bin]];
                if weight > 0.0 {
                    energy += weight * c.norm_sqr();
                }
            }
            out[[fi, m]] = energy.max(LOG_FLOOR).ln();
        }
    }
    Ok(out)
}

/// Orthonormal DCT-II of each log-mel frame, dropping c0 and keeping
/// coefficients `1..=n_ceps`.
pub fn mel_cepstra(w: &Waveform, cfg: &CepstrogramConfig) -> Result<Cepstrogram> {
    let log_mel = log_mel_frames(w, cfg)?;
    let n_frames = log_mel.nrows();
    let m = cfg.n_mels;

    let mut frames = Array2::zeros((n_frames, cfg.n_ceps));
    let scale = (2.0 / m as f64).sqrt();
    for fi in 0..n_frames {
        for k in 1..=cfg.n_ceps {
            let mut acc = 0.0;
            for n in 0..m {
                acc += log_mel[[fi, n]]
                    * (std::f64::consts::PI * k as f64 * (n as f64 + 0.5) / m as f64).cos();
            }
            frames[[fi, k - 1]] = scale * acc;
        }
    }
    Ok(Cepstrogram::from_array(frames))
}

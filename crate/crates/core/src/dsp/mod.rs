//! Waveform feature machinery: mel-cepstral extraction, dynamic time
//! warping, mel-cepstral distortion, sample-region extraction, and the
//! long-term spectral speaker embedding.

mod dtw;
mod mel;

pub use dtw::{dtw, mcd, DtwResult, MCD_SCALE};
pub use mel::mel_cepstra;

use std::io::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Mono audio with an explicit sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample_rate must be > 0".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidInput("waveform contains non-finite samples".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Debugging dump: headerless little-endian f32 samples. Play with e.g.
    /// `ffplay -f f32le -ar <rate> <file>`. Not used by any pipeline.
    pub fn write_raw_f32le(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut buf = Vec::with_capacity(self.samples.len() * 4);
        for s in &self.samples {
            buf.extend_from_slice(&(*s as f32).to_le_bytes());
        }
        file.write_all(&buf).map_err(|e| Error::io(path, e))
    }
}

/// Analysis settings for mel-cepstral extraction. Lengths are in samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CepstrogramConfig {
    pub frame_length: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub n_mels: usize,
    /// Cepstral coefficients retained, excluding c0.
    pub n_ceps: usize,
}

impl Default for CepstrogramConfig {
    /// 25 ms frames, 10 ms hop at 8 kHz; 64 mel bands, 13 cepstra.
    fn default() -> Self {
        Self {
            frame_length: 200,
            hop: 80,
            fft_size: 256,
            n_mels: 64,
            n_ceps: 13,
        }
    }
}

impl CepstrogramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_length == 0 || self.hop == 0 || self.n_mels == 0 || self.n_ceps == 0 {
            return Err(Error::InvalidInput("cepstrogram dimensions must be positive".into()));
        }
        if self.fft_size < self.frame_length {
            return Err(Error::InvalidInput(format!(
                "fft_size {} < frame_length {}",
                self.fft_size, self.frame_length
            )));
        }
        if self.hop > self.frame_length {
            return Err(Error::InvalidInput(format!(
                "hop {} > frame_length {}",
                self.hop, self.frame_length
            )));
        }
        if self.n_ceps > self.n_mels {
            return Err(Error::InvalidInput(format!(
                "n_ceps {} > n_mels {}",
                self.n_ceps, self.n_mels
            )));
        }
        Ok(())
    }
}

/// Frame-by-coefficient matrix of mel-cepstral vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Cepstrogram {
    frames: Array2<f64>,
}

impl Cepstrogram {
    pub(crate) fn from_array(frames: Array2<f64>) -> Self {
        Self { frames }
    }

    /// Build directly from rows; mainly for tests and oracles.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidInput("cepstrogram must have at least one frame".into()));
        }
        let dim = rows[0].len();
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidInput("cepstrogram rows must share a positive length".into()));
        }
        let mut frames = Array2::zeros((rows.len(), dim));
        for (i, row) in rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                frames[[i, j]] = *v;
            }
        }
        Ok(Self { frames })
    }

    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn n_coeffs(&self) -> usize {
        self.frames.ncols()
    }

    pub fn frame(&self, i: usize) -> ndarray::ArrayView1<'_, f64> {
        self.frames.row(i)
    }

    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }
}

/// Half-open sample range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SampleSpan {
    pub start: usize,
    pub end: usize,
}

impl SampleSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }
}

/// Concatenate the given sample spans of a waveform, in order. Spans must be
/// sorted, disjoint, and within bounds. An empty span list yields an empty
/// waveform; callers decide what that means.
pub fn extract_region(w: &Waveform, spans: &[SampleSpan]) -> Result<Waveform> {
    let mut samples = Vec::new();
    let mut prev_end = 0usize;
    for span in spans {
        if span.start < prev_end && prev_end > 0 {
            return Err(Error::InvalidInput(format!(
                "spans must be sorted and disjoint, got overlap at {}",
                span.start
            )));
        }
        if span.start > span.end || span.end > w.len() {
            return Err(Error::InvalidInput(format!(
                "span [{}, {}) out of range for waveform of {} samples",
                span.start,
                span.end,
                w.len()
            )));
        }
        samples.extend_from_slice(&w.samples[span.start..span.end]);
        prev_end = span.end;
    }
    Waveform::new(samples, w.sample_rate)
}

/// Long-term spectral speaker signature: the time average of log-mel frames,
/// L2-normalized. A degenerate all-zero average maps to the first unit basis
/// vector so the result is always unit norm.
pub fn speaker_embedding(w: &Waveform, cfg: &CepstrogramConfig) -> Result<Vec<f64>> {
    let log_mel = mel::log_mel_frames(w, cfg)?;
    let n_frames = log_mel.nrows() as f64;
    let mut mean: Vec<f64> = log_mel
        .columns()
        .into_iter()
        .map(|col| col.sum() / n_frames)
        .collect();
    let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-12 {
        mean = vec![0.0; cfg.n_mels];
        mean[0] = 1.0;
        return Ok(mean);
    }
    for v in &mut mean {
        *v /= norm;
    }
    Ok(mean)
}

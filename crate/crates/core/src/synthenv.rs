//! Deterministic synthetic speech environment. Tokens map one-to-one to
//! words and to fixed-duration enveloped sinusoid segments; a template
//! correlation detector maps waveforms back to transcripts. Everything the
//! reward pipeline needs is computable exactly at desk scale.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::dsp::{SampleSpan, Waveform};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, seeded_rng};
use crate::textedit::{EditAlignment, Transcript};
use crate::Token;

const CONSONANTS: [&str; 16] = [
    "b", "d", "k", "m", "n", "p", "s", "t", "g", "l", "r", "v", "z", "f", "h", "w",
];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

/// Deterministic pseudo-word list; word `i` is the spelling of token `i`.
pub fn lexicon(vocab_size: usize) -> Vec<String> {
    let syllable = |i: usize| format!("{}{}", CONSONANTS[(i / 5) % 16], VOWELS[i % 5]);
    (0..vocab_size)
        .map(|i| {
            if i < 80 {
                syllable(i)
            } else {
                format!("{}{}", syllable(i / 80 - 1), syllable(i % 80))
            }
        })
        .collect()
}

/// Parameters of the synthetic decoder/ASR pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub vocab_size: usize,
    pub base_freq: f64,
    pub freq_step: f64,
    pub segment_ms: u32,
    pub sample_rate: u32,
    pub speaker_offsets: Vec<f64>,
    pub noise_amp: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            vocab_size: 16,
            base_freq: 250.0,
            freq_step: 60.0,
            segment_ms: 50,
            sample_rate: 8000,
            speaker_offsets: vec![0.0, 1300.0, 2600.0],
            noise_amp: 1e-4,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 {
            return Err(Error::InvalidInput("vocab_size must be >= 1".into()));
        }
        if self.speaker_offsets.is_empty() {
            return Err(Error::InvalidInput("need at least one speaker".into()));
        }
        if self.sample_rate == 0 || self.segment_ms == 0 {
            return Err(Error::InvalidInput("sample_rate and segment_ms must be positive".into()));
        }
        let max_offset = self.speaker_offsets.iter().cloned().fold(0.0, f64::max);
        let top = self.base_freq + self.vocab_size as f64 * self.freq_step + max_offset;
        if top >= self.sample_rate as f64 / 2.0 {
            return Err(Error::InvalidInput(format!(
                "top frequency {top} Hz violates Nyquist for sample_rate {}",
                self.sample_rate
            )));
        }
        // Each segment must span at least two analysis frames of the default
        // cepstrogram config.
        let cep = crate::dsp::CepstrogramConfig::default();
        if self.segment_samples() < cep.frame_length + cep.hop {
            return Err(Error::InvalidInput(format!(
                "segment of {} samples yields fewer than two analysis frames",
                self.segment_samples()
            )));
        }
        Ok(())
    }

    pub fn segment_samples(&self) -> usize {
        (self.sample_rate as u64 * self.segment_ms as u64 / 1000) as usize
    }

    pub fn n_speakers(&self) -> usize {
        self.speaker_offsets.len()
    }

    pub fn token_freq(&self, token: Token, speaker_id: usize) -> f64 {
        self.base_freq + token as f64 * self.freq_step + self.speaker_offsets[speaker_id]
    }

    pub fn vocab(&self) -> Vocab {
        Vocab::new(self.vocab_size)
    }
}

/// Bijective word/token map for a vocabulary size.
#[derive(Debug, Clone)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, Token>,
}

impl Vocab {
    pub fn new(vocab_size: usize) -> Self {
        let words = lexicon(vocab_size);
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as Token))
            .collect();
        Self { words, index }
    }

    pub fn size(&self) -> usize {
        self.words.len()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, token: Token) -> Result<&str> {
        self.words
            .get(token as usize)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::InvalidInput(format!("token {token} out of vocabulary")))
    }

    pub fn token(&self, word: &str) -> Result<Token> {
        self.index
            .get(word)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("word {word:?} not in vocabulary")))
    }

    pub fn encode(&self, t: &Transcript) -> Result<Vec<Token>> {
        t.words().iter().map(|w| self.token(w)).collect()
    }

    pub fn decode_words(&self, tokens: &[Token]) -> Result<Vec<String>> {
        tokens.iter().map(|t| self.word(*t).map(str::to_string)).collect()
    }
}

/// One speech-text pair of the synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusPair {
    pub transcript: Transcript,
    pub tokens: Vec<Token>,
    pub speaker_id: usize,
    pub seed: u64,
}

/// Render a token sequence as concatenated Hann-enveloped sinusoid segments
/// plus seeded low-amplitude noise. Deterministic per (tokens, speaker, seed).
pub fn decode(tokens: &[Token], speaker_id: usize, spec: &SynthSpec, seed: u64) -> Result<Waveform> {
    if speaker_id >= spec.n_speakers() {
        return Err(Error::InvalidInput(format!("speaker {speaker_id} out of range")));
    }
    for &t in tokens {
        if t as usize >= spec.vocab_size {
            return Err(Error::InvalidInput(format!("token {t} out of vocabulary")));
        }
    }
    let seg = spec.segment_samples();
    let mut rng = rng_from_seed(seed);
    let mut samples = Vec::with_capacity(tokens.len() * seg);
    for &token in tokens {
        let freq = spec.token_freq(token, speaker_id);
        for n in 0..seg {
            let envelope = if seg == 1 {
                1.0
            } else {
                0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / (seg - 1) as f64).cos())
            };
            let tone = (2.0 * std::f64::consts::PI * freq * n as f64 / spec.sample_rate as f64).sin();
            let noise = rng.gen_range(-spec.noise_amp..=spec.noise_amp);
            samples.push(envelope * tone + noise);
        }
    }
    Waveform::new(samples, spec.sample_rate)
}

/// Projection magnitude of a segment onto a complex exponential at `freq`.
fn template_correlation(samples: &[f64], freq: f64, sample_rate: u32) -> f64 {
    let mut re = 0.0;
    let mut im = 0.0;
    for (n, s) in samples.iter().enumerate() {
        let phase = 2.0 * std::f64::consts::PI * freq * n as f64 / sample_rate as f64;
        re += s * phase.cos();
        im -= s * phase.sin();
    }
    (re * re + im * im).sqrt()
}

/// Template-matching recognizer: segment the waveform, pick the (token,
/// speaker) template with maximal spectral correlation per segment, return
/// the word sequence. Tolerates length deviations below half a segment; a
/// zero-length waveform yields an empty word list.
pub fn oracle_asr(w: &Waveform, spec: &SynthSpec) -> Result<Vec<String>> {
    if w.is_empty() {
        return Ok(Vec::new());
    }
    let seg = spec.segment_samples();
    let n_segments = (w.len() + seg / 2) / seg;
    let vocab = spec.vocab();
    let mut words = Vec::with_capacity(n_segments);
    for k in 0..n_segments {
        let start = k * seg;
        let end = ((k + 1) * seg).min(w.len());
        let slice = &w.samples[start..end];
        let mut best = (0 as Token, f64::NEG_INFINITY);
        for token in 0..spec.vocab_size as Token {
            for speaker in 0..spec.n_speakers() {
                let corr = template_correlation(slice, spec.token_freq(token, speaker), w.sample_rate);
                if corr > best.1 {
                    best = (token, corr);
                }
            }
        }
        words.push(vocab.word(best.0)?.to_string());
    }
    Ok(words)
}

/// Map the kept word pairs of an alignment to exact sample spans on the
/// original (`n_ori = tokens.len()`) and generated (`n_tar`) timelines.
/// Adjacent kept words merge into one span per side.
pub fn token_time_spans(
    tokens: &[Token],
    n_tar: usize,
    alignment: &EditAlignment,
    spec: &SynthSpec,
) -> Result<(Vec<SampleSpan>, Vec<SampleSpan>)> {
    let n_ori = tokens.len();
    for &(i, j) in &alignment.kept_pairs {
        if i >= n_ori || j >= n_tar {
            return Err(Error::InvalidInput(format!(
                "kept pair ({i}, {j}) out of range for lengths ({n_ori}, {n_tar})"
            )));
        }
    }
    let seg = spec.segment_samples();
    let merge = |indices: Vec<usize>| -> Vec<SampleSpan> {
        let mut spans: Vec<SampleSpan> = Vec::new();
        for idx in indices {
            let start = idx * seg;
            let end = start + seg;
            match spans.last_mut() {
                Some(last) if last.end == start => last.end = end,
                _ => spans.push(SampleSpan { start, end }),
            }
        }
        spans
    };
    let ori = merge(alignment.kept_pairs.iter().map(|p| p.0).collect());
    let tar = merge(alignment.kept_pairs.iter().map(|p| p.1).collect());
    Ok((ori, tar))
}

/// Generate `n` seeded speech-text pairs with word counts uniform in
/// `word_range` and speakers assigned round-robin.
pub fn make_corpus(
    n: usize,
    word_range: std::ops::RangeInclusive<usize>,
    spec: &SynthSpec,
    seed: u64,
) -> Result<Vec<CorpusPair>> {
    if n == 0 {
        return Err(Error::InvalidInput("corpus size must be >= 1".into()));
    }
    if *word_range.start() == 0 || word_range.is_empty() {
        return Err(Error::InvalidInput("word_range must start at >= 1".into()));
    }
    spec.validate()?;
    let vocab = spec.vocab();
    let mut pairs = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = seeded_rng(seed, &format!("corpus/{i}"));
        let len = rng.gen_range(word_range.clone());
        let tokens: Vec<Token> = (0..len)
            .map(|_| rng.gen_range(0..spec.vocab_size as Token))
            .collect();
        let transcript = Transcript::new(vocab.decode_words(&tokens)?)?;
        pairs.push(CorpusPair {
            transcript,
            tokens,
            speaker_id: i % spec.n_speakers(),
            seed: derive_seed(seed, &format!("pair/{i}")),
        });
    }
    Ok(pairs)
}

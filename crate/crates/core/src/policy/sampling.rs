//! Constrained autoregressive sampling: temperature, top-k, then nucleus
//! truncation over the speech tokens plus end-of-sequence. Stored log-probs
//! come from the untruncated temperature-1 distribution so importance ratios
//! and KL terms stay well-defined off the truncated support.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{forward, PolicyParams, PromptEncoding};
use crate::error::{Error, Result};
use crate::Token;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: usize,
    pub max_len: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { temperature: 0.8, top_p: 0.95, top_k: 25, max_len: 24 }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature <= 0.0 {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config("top_p must lie in (0, 1]".into()));
        }
        if self.top_k == 0 || self.max_len == 0 {
            return Err(Error::Config("top_k and max_len must be positive".into()));
        }
        Ok(())
    }
}

/// One sampled target sequence. `tokens` ends with the end-of-sequence
/// marker unless `max_len` cut generation short; `log_probs` has one entry
/// per token, taken from the full temperature-1 policy distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub tokens: Vec<Token>,
    pub log_probs: Vec<f64>,
    pub ended_with_eos: bool,
}

impl Rollout {
    /// The decodable speech tokens, i.e. everything before the end marker.
    pub fn speech_tokens(&self) -> &[Token] {
        if self.ended_with_eos {
            &self.tokens[..self.tokens.len() - 1]
        } else {
            &self.tokens
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Candidate set for one sampling step: speech tokens and end-of-sequence,
/// with temperature, top-k, and nucleus truncation applied in that order.
/// Returns (token, probability) pairs renormalized over the kept set.
fn truncated_candidates(
    log_probs: &ndarray::Array1<f64>,
    params: &PolicyParams,
    cfg: &SamplingConfig,
) -> Vec<(Token, f64)> {
    let eos = params.cfg.eos();
    let allowed = (0..params.cfg.vocab_size as Token).chain([eos]);

    // Temperature rescale within the allowed set: softmax(logit / T) equals
    // renormalized p^(1/T), computed from log-probs for stability.
    let mut cands: Vec<(Token, f64)> = allowed
        .map(|t| (t, log_probs[t as usize] / cfg.temperature))
        .collect();
    let max = cands.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let mut cands: Vec<(Token, f64)> = cands
        .drain(..)
        .map(|(t, l)| (t, (l - max).exp()))
        .collect();
    let z: f64 = cands.iter().map(|c| c.1).sum();
    for c in &mut cands {
        c.1 /= z;
    }

    // Top-k: highest probabilities, ids break ties for determinism.
    cands.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    cands.truncate(cfg.top_k);

    // Nucleus: smallest prefix of the sorted list reaching top_p.
    let mut cum = 0.0;
    let mut keep = cands.len();
    for (i, c) in cands.iter().enumerate() {
        cum += c.1;
        if cum >= cfg.top_p - 1e-12 {
            keep = i + 1;
            break;
        }
    }
    cands.truncate(keep);

    let z: f64 = cands.iter().map(|c| c.1).sum();
    for c in &mut cands {
        c.1 /= z;
    }
    cands
}

/// Sample one target sequence autoregressively. Stops at end-of-sequence or
/// after `max_len` tokens.
pub fn sample_sequence<R: Rng>(
    params: &PolicyParams,
    prompt: &PromptEncoding,
    cfg: &SamplingConfig,
    rng: &mut R,
) -> Result<Rollout> {
    cfg.validate()?;
    let eos = params.cfg.eos();
    let mut context = prompt.tokens.clone();
    let mut tokens = Vec::new();
    let mut log_probs = Vec::new();
    let mut ended_with_eos = false;

    while tokens.len() < cfg.max_len {
        let fwd = forward(params, &context)?;
        let cands = truncated_candidates(&fwd.log_probs, params, cfg);
        let token = if cands.len() == 1 {
            cands[0].0
        } else {
            let u: f64 = rng.gen_range(0.0..1.0);
            let mut cum = 0.0;
            let mut chosen = cands.last().unwrap().0;
            for (t, p) in &cands {
                cum += p;
                if u < cum {
                    chosen = *t;
                    break;
                }
            }
            chosen
        };
        tokens.push(token);
        log_probs.push(fwd.log_probs[token as usize]);
        if token == eos {
            ended_with_eos = true;
            break;
        }
        context.push(token);
    }

    Ok(Rollout { tokens, log_probs, ended_with_eos })
}

/// Deterministic argmax decoding over speech tokens plus end-of-sequence.
pub fn greedy_decode(
    params: &PolicyParams,
    prompt: &PromptEncoding,
    max_len: usize,
) -> Result<Rollout> {
    let cfg = SamplingConfig { temperature: 1.0, top_p: 1.0, top_k: 1, max_len };
    // top_k = 1 leaves a single candidate, so the rng is never consulted.
    let mut rng = crate::rng::rng_from_seed(0);
    sample_sequence(params, prompt, &cfg, &mut rng)
}

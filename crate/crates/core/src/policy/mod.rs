//! Toy autoregressive token policy with exact log-probabilities and analytic
//! gradients. The backbone is deliberately small: embeddings of the last
//! `context_window` tokens are averaged, passed through one tanh layer, and
//! projected to logits over the speech vocabulary plus special markers. The
//! optimization math is architecture-agnostic.

mod checkpoint;
mod loss;
mod sampling;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use loss::{
    nll_loss, nll_loss_and_grad, surrogate_objective, surrogate_objective_and_grad, Gradient,
};
pub use sampling::{greedy_decode, sample_sequence, Rollout, SamplingConfig};

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::synthenv::Vocab;
use crate::textedit::EditPrompt;
use crate::Token;

/// Architecture settings; the special markers live past the speech vocab.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub context_window: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self { vocab_size: 16, embed_dim: 16, context_window: 8 }
    }
}

impl PolicyConfig {
    /// Speech tokens plus start-of-sequence, turn-of-speech, end-of-sequence.
    pub fn total_tokens(&self) -> usize {
        self.vocab_size + 3
    }

    pub fn bos(&self) -> Token {
        self.vocab_size as Token
    }

    pub fn tos(&self) -> Token {
        self.vocab_size as Token + 1
    }

    pub fn eos(&self) -> Token {
        self.vocab_size as Token + 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.embed_dim == 0 || self.context_window == 0 {
            return Err(Error::Config("policy dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// Policy parameters. Snapshots are plain clones; the rollout and reference
/// policies are frozen copies of this struct.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub cfg: PolicyConfig,
    /// [total_tokens, embed_dim]
    pub emb: Array2<f64>,
    /// [embed_dim, embed_dim]
    pub ctx_w: Array2<f64>,
    /// [embed_dim]
    pub ctx_b: Array1<f64>,
    /// [embed_dim, total_tokens]
    pub out_w: Array2<f64>,
    /// [total_tokens]
    pub out_b: Array1<f64>,
}

impl PolicyParams {
    /// Scaled-uniform init (scale `0.1 / sqrt(embed_dim)`), zero biases.
    pub fn init(cfg: PolicyConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng_from_seed(seed);
        let scale = 0.1 / (cfg.embed_dim as f64).sqrt();
        let total = cfg.total_tokens();
        let d = cfg.embed_dim;
        let mut fill = |rows: usize, cols: usize| {
            Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-scale..=scale))
        };
        Ok(Self {
            cfg,
            emb: fill(total, d),
            ctx_w: fill(d, d),
            ctx_b: Array1::zeros(d),
            out_w: fill(d, total),
            out_b: Array1::zeros(total),
        })
    }

    /// All-zero parameters; the next-token distribution is exactly uniform.
    pub fn zeros(cfg: PolicyConfig) -> Result<Self> {
        cfg.validate()?;
        let total = cfg.total_tokens();
        let d = cfg.embed_dim;
        Ok(Self {
            cfg,
            emb: Array2::zeros((total, d)),
            ctx_w: Array2::zeros((d, d)),
            ctx_b: Array1::zeros(d),
            out_w: Array2::zeros((d, total)),
            out_b: Array1::zeros(total),
        })
    }

    pub fn n_params(&self) -> usize {
        self.emb.len() + self.ctx_w.len() + self.ctx_b.len() + self.out_w.len() + self.out_b.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.emb
            .iter()
            .chain(self.ctx_w.iter())
            .chain(self.ctx_b.iter())
            .chain(self.out_w.iter())
            .chain(self.out_b.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.emb
            .iter_mut()
            .chain(self.ctx_w.iter_mut())
            .chain(self.ctx_b.iter_mut())
            .chain(self.out_w.iter_mut())
            .chain(self.out_b.iter_mut())
    }

    pub fn get_flat(&self, index: usize) -> f64 {
        *self.iter().nth(index).expect("flat index in range")
    }

    pub fn set_flat(&mut self, index: usize, value: f64) {
        *self.iter_mut().nth(index).expect("flat index in range") = value;
    }

    /// Euclidean distance to another snapshot of the same shape.
    pub fn distance(&self, other: &Self) -> f64 {
        self.iter()
            .zip(other.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    fn check_token(&self, token: Token) -> Result<()> {
        if (token as usize) < self.cfg.total_tokens() {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "token {token} out of range for {} total tokens",
                self.cfg.total_tokens()
            )))
        }
    }
}

/// Intermediate activations for one next-token prediction; kept for backprop.
#[derive(Debug, Clone)]
pub(crate) struct Forward {
    /// Tokens inside the context window (last `context_window` of the context).
    pub window: Vec<Token>,
    /// Mean embedding of the window.
    pub x: Array1<f64>,
    /// tanh hidden state.
    pub h: Array1<f64>,
    pub log_probs: Array1<f64>,
}

impl Forward {
    pub fn probs(&self) -> Array1<f64> {
        self.log_probs.mapv(f64::exp)
    }
}

pub(crate) fn forward(params: &PolicyParams, context: &[Token]) -> Result<Forward> {
    if context.is_empty() {
        return Err(Error::InvalidInput("context must be non-empty".into()));
    }
    for &t in context {
        params.check_token(t)?;
    }
    let w = params.cfg.context_window.min(context.len());
    let window = context[context.len() - w..].to_vec();
    let d = params.cfg.embed_dim;

    let mut x = Array1::zeros(d);
    for &t in &window {
        x += &params.emb.row(t as usize);
    }
    x /= window.len() as f64;

    let h = (params.ctx_w.dot(&x) + &params.ctx_b).mapv(f64::tanh);
    let logits = params.out_w.t().dot(&h) + &params.out_b;

    // log softmax with max-shift
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
    let log_probs = logits.mapv(|l| l - log_z);

    Ok(Forward { window, x, h, log_probs })
}

/// Next-token probability vector given a context; strictly positive and
/// normalized. Temperature and truncation are sampling-time concerns and do
/// not affect this distribution.
pub fn next_distribution(params: &PolicyParams, context: &[Token]) -> Result<Vec<f64>> {
    Ok(forward(params, context)?.probs().to_vec())
}

/// Sum and per-token values of `log pi(z_t | c, z_<t)` for a given sequence.
pub fn sequence_log_prob(
    params: &PolicyParams,
    prompt: &PromptEncoding,
    tokens: &[Token],
) -> Result<(f64, Vec<f64>)> {
    for &t in tokens {
        params.check_token(t)?;
    }
    let mut context = prompt.tokens.clone();
    let mut per_token = Vec::with_capacity(tokens.len());
    for &t in tokens {
        let fwd = forward(params, &context)?;
        per_token.push(fwd.log_probs[t as usize]);
        context.push(t);
    }
    Ok((per_token.iter().sum(), per_token))
}

/// Conditioning sequence `[BOS, X_ori, X_tar, mu_ori, TOS]`: both texts as
/// word tokens, then the original speech tokens, closed by the single
/// turn-of-speech marker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptEncoding {
    pub tokens: Vec<Token>,
}

impl PromptEncoding {
    pub fn from_parts(
        x_ori_tokens: &[Token],
        x_tar_tokens: &[Token],
        mu_ori: &[Token],
        cfg: &PolicyConfig,
    ) -> Result<Self> {
        for &t in x_ori_tokens.iter().chain(x_tar_tokens).chain(mu_ori) {
            if t as usize >= cfg.vocab_size {
                return Err(Error::InvalidInput(format!(
                    "prompt token {t} outside speech vocabulary of {}",
                    cfg.vocab_size
                )));
            }
        }
        let mut tokens = Vec::with_capacity(x_ori_tokens.len() + x_tar_tokens.len() + mu_ori.len() + 2);
        tokens.push(cfg.bos());
        tokens.extend_from_slice(x_ori_tokens);
        tokens.extend_from_slice(x_tar_tokens);
        tokens.extend_from_slice(mu_ori);
        tokens.push(cfg.tos());
        Ok(Self { tokens })
    }

    /// Encode an editing prompt with the environment's word/token map.
    pub fn from_edit_prompt(prompt: &EditPrompt, vocab: &Vocab, cfg: &PolicyConfig) -> Result<Self> {
        let x_ori = vocab.encode(&prompt.x_ori)?;
        let x_tar = vocab.encode(&prompt.x_tar)?;
        Self::from_parts(&x_ori, &x_tar, &prompt.tokens_ori, cfg)
    }
}

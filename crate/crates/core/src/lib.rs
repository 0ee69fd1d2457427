//! Editing-oriented group-relative policy optimization over a synthetic
//! speech-editing environment.
//!
//! The pipeline: plain speech-text pairs become editing prompts through
//! rule-based word perturbations ([`textedit`]); a deterministic synthetic
//! environment decodes token sequences to waveforms and recognizes them back
//! ([`synthenv`]); sampled rollouts are scored on the decoded audio with
//! content, preservation, and speaker rewards ([`wer`], [`dsp`], [`rewards`]);
//! and a small autoregressive token policy ([`policy`]) is optimized with a
//! group-relative clipped-surrogate objective against a frozen reference
//! ([`grpo`]). [`corpuscheck`] evaluates checkpoints on held-out prompts.
//!
//! Scoring and rollout generation for a training step are data-parallel
//! across (prompt, rollout) pairs; the `parallel` feature (default) runs
//! them on rayon. Results are bit-identical with or without it.

pub mod config;
pub mod corpuscheck;
pub mod dsp;
pub mod error;
pub mod grpo;
pub mod par;
pub mod policy;
pub mod rewards;
pub mod rng;
pub mod synthenv;
pub mod textedit;
pub mod wer;

pub use error::{Error, Result};

/// Speech token id; the policy adds its own special markers past the
/// environment vocabulary.
pub type Token = u32;

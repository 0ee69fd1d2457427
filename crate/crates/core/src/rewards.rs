//! Reward shaping for speech-editing rollouts: an exponential content gate
//! on WER, a margin-tolerant exponential MCD preservation reward over the
//! non-edited regions, raw cosine speaker similarity, multiplicative
//! coarse-to-fine composition, and the scheduled weighted total.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::{extract_region, mcd, mel_cepstra, speaker_embedding, CepstrogramConfig};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::synthenv::{decode, oracle_asr, token_time_spans, SynthSpec};
use crate::textedit::{align, compose_alignments, EditPrompt, Transcript};
use crate::wer::wer;
use crate::Token;

/// One phase of the reward-weight schedule: applies to steps strictly below
/// `until_step`; the last phase also covers everything beyond it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaPhase {
    pub until_step: u64,
    pub lambda_c: f64,
    pub lambda_s: f64,
}

/// Hyperparameters of the shaped rewards and the weight schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub k_w: f64,
    pub alpha: f64,
    pub k_m: f64,
    pub delta_db: f64,
    pub gamma: f64,
    pub lambda_schedule: Vec<LambdaPhase>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            k_w: 12.0,
            alpha: 1.5,
            k_m: 0.2,
            delta_db: 2.0,
            gamma: 0.5,
            lambda_schedule: vec![
                LambdaPhase { until_step: 290, lambda_c: 0.9, lambda_s: 0.1 },
                LambdaPhase { until_step: 380, lambda_c: 0.8, lambda_s: 0.2 },
            ],
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_w <= 0.0 || self.alpha <= 0.0 || self.k_m <= 0.0 {
            return Err(Error::Config("k_w, alpha, k_m must be positive".into()));
        }
        if self.delta_db < 0.0 {
            return Err(Error::Config("delta_db must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config("gamma must lie in [0, 1]".into()));
        }
        if self.lambda_schedule.is_empty() {
            return Err(Error::Config("lambda_schedule must be non-empty".into()));
        }
        let mut prev = None;
        for phase in &self.lambda_schedule {
            if phase.lambda_c < 0.0 || phase.lambda_s < 0.0 {
                return Err(Error::Config("lambda weights must be non-negative".into()));
            }
            if (phase.lambda_c + phase.lambda_s - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "lambda weights must sum to 1, got {} + {}",
                    phase.lambda_c, phase.lambda_s
                )));
            }
            if let Some(p) = prev {
                if phase.until_step <= p {
                    return Err(Error::Config("schedule thresholds must be strictly increasing".into()));
                }
            }
            prev = Some(phase.until_step);
        }
        Ok(())
    }
}

/// Raw measurements and shaped rewards for one rollout. `m` is absent when
/// there is no shared non-edited region to compare.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub w: f64,
    pub s: f64,
    pub m: Option<f64>,
    pub r_wer: f64,
    pub r_mcd: f64,
    pub r_sim: f64,
    pub r_wer_mcd: f64,
    pub r_total: f64,
}

/// Content reward `exp(-k_w * w^alpha)`.
pub fn r_wer(w: f64, cfg: &RewardConfig) -> Result<f64> {
    if !w.is_finite() || w < 0.0 {
        return Err(Error::InvalidInput(format!("WER must be non-negative, got {w}")));
    }
    Ok((-cfg.k_w * w.powf(cfg.alpha)).exp())
}

/// Speaker reward: cosine similarity between two (unit-norm) embeddings.
pub fn r_sim(emb_a: &[f64], emb_b: &[f64]) -> Result<f64> {
    if emb_a.len() != emb_b.len() {
        return Err(Error::InvalidInput("embedding dimensions differ".into()));
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (na, nb) = (norm(emb_a), norm(emb_b));
    if na < 1e-12 || nb < 1e-12 {
        return Err(Error::InvalidInput("zero-vector embedding".into()));
    }
    if (na - 1.0).abs() > 1e-6 || (nb - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidInput("embeddings must be unit-norm within 1e-6".into()));
    }
    let dot: f64 = emb_a.iter().zip(emb_b).map(|(x, y)| x * y).sum();
    Ok(dot / (na * nb))
}

/// Preservation reward `exp(-k_m * max(m - delta, 0))`; a missing MCD (whole
/// utterance edited) imposes no preservation constraint and scores 1.
pub fn r_mcd(m: Option<f64>, cfg: &RewardConfig) -> Result<f64> {
    match m {
        None => Ok(1.0),
        Some(m) if !m.is_finite() || m < 0.0 => {
            Err(Error::InvalidInput(format!("MCD must be non-negative, got {m}")))
        }
        Some(m) => Ok((-cfg.k_m * (m - cfg.delta_db).max(0.0)).exp()),
    }
}

/// Coarse-to-fine composition: the content gate scaled by
/// `(1 - gamma) + gamma * r_mcd`.
pub fn combine_wer_mcd(r_wer: f64, r_mcd: f64, gamma: f64) -> f64 {
    r_wer * ((1.0 - gamma) + gamma * r_mcd)
}

/// Weighted total `lambda_c * r_wer_mcd + lambda_s * r_sim`.
pub fn total_reward(r_wer_mcd: f64, r_sim: f64, lambda_c: f64, lambda_s: f64) -> Result<f64> {
    if (lambda_c + lambda_s - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "lambda weights must sum to 1, got {lambda_c} + {lambda_s}"
        )));
    }
    Ok(lambda_c * r_wer_mcd + lambda_s * r_sim)
}

/// Reward weights for a training step: the first phase whose (exclusive)
/// threshold exceeds the step, saturating at the last phase.
pub fn schedule_lambdas(step: u64, cfg: &RewardConfig) -> (f64, f64) {
    for phase in &cfg.lambda_schedule {
        if step < phase.until_step {
            return (phase.lambda_c, phase.lambda_s);
        }
    }
    let last = cfg.lambda_schedule.last().expect("schedule validated non-empty");
    (last.lambda_c, last.lambda_s)
}

fn embedding_or_basis(w: &crate::dsp::Waveform, cep: &CepstrogramConfig) -> Vec<f64> {
    speaker_embedding(w, cep).unwrap_or_else(|_| {
        // Waveform too short to analyze: fixed unit basis vector, same as
        // the degenerate-zero guard inside speaker_embedding.
        let mut e = vec![0.0; cep.n_mels];
        e[0] = 1.0;
        e
    })
}

/// Score one rollout against its prompt on the decoded waveforms: WER of the
/// recognized transcript against the target text, speaker-embedding cosine,
/// and DTW-MCD over the non-edited regions shared by the original audio and
/// the rollout. Never fails on degenerate rollouts; empty output simply
/// scores poorly.
pub fn score_rollout(
    prompt: &EditPrompt,
    rollout_tokens: &[Token],
    spec: &SynthSpec,
    cep: &CepstrogramConfig,
    cfg: &RewardConfig,
    step: u64,
) -> Result<RewardBreakdown> {
    let y_ori = decode(
        &prompt.tokens_ori,
        prompt.speaker_id,
        spec,
        derive_seed(prompt.seed, "ori-audio"),
    )?;
    let y_hat = decode(
        rollout_tokens,
        prompt.speaker_id,
        spec,
        derive_seed(prompt.seed, "rollout-audio"),
    )?;

    let hyp = oracle_asr(&y_hat, spec)?;
    let w = wer(&prompt.x_tar, &hyp)?;
    let reward_wer = r_wer(w, cfg)?;

    let emb_ori = embedding_or_basis(&y_ori, cep);
    let emb_hat = embedding_or_basis(&y_hat, cep);
    let s = r_sim(&emb_ori, &emb_hat)?;

    // Non-edited regions on the generated timeline: align the recognized
    // words back to the target text, then compose with the prompt's
    // ori-to-tar alignment to pair original words with rollout segments.
    let m = measure_omega_mcd(prompt, rollout_tokens, &hyp, &y_ori, &y_hat, spec, cep)?;
    let reward_mcd = r_mcd(m, cfg)?;

    let (lambda_c, lambda_s) = schedule_lambdas(step, cfg);
    let r_wer_mcd = combine_wer_mcd(reward_wer, reward_mcd, cfg.gamma);
    let r_total = total_reward(r_wer_mcd, s, lambda_c, lambda_s)?;

    Ok(RewardBreakdown {
        w,
        s,
        m,
        r_wer: reward_wer,
        r_mcd: reward_mcd,
        r_sim: s,
        r_wer_mcd,
        r_total,
    })
}

fn measure_omega_mcd(
    prompt: &EditPrompt,
    rollout_tokens: &[Token],
    hyp: &[String],
    y_ori: &crate::dsp::Waveform,
    y_hat: &crate::dsp::Waveform,
    spec: &SynthSpec,
    cep: &CepstrogramConfig,
) -> Result<Option<f64>> {
    if hyp.is_empty() || prompt.alignment.kept_pairs.is_empty() {
        return Ok(None);
    }
    let hyp_transcript = Transcript::new(hyp.to_vec())?;
    let tar_to_hyp = align(&prompt.x_tar, &hyp_transcript);
    let ori_to_hyp = compose_alignments(
        &prompt.alignment,
        &tar_to_hyp,
        prompt.x_ori.len(),
        hyp_transcript.len(),
    );
    if ori_to_hyp.kept_pairs.is_empty() {
        return Ok(None);
    }
    let (ori_spans, hyp_spans) =
        token_time_spans(&prompt.tokens_ori, rollout_tokens.len(), &ori_to_hyp, spec)?;
    let region_ori = extract_region(y_ori, &ori_spans)?;
    let region_hat = extract_region(y_hat, &hyp_spans)?;
    if region_ori.len() < cep.frame_length || region_hat.len() < cep.frame_length {
        return Ok(None);
    }
    let cep_ori = mel_cepstra(&region_ori, cep)?;
    let cep_hat = mel_cepstra(&region_hat, cep)?;
    Ok(Some(mcd(&cep_ori, &cep_hat)?))
}

/// Per-rollout reward log row.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardRow {
    pub step: u64,
    pub rollout_index: usize,
    pub breakdown: RewardBreakdown,
}

/// Write reward rows as CSV with the schema
/// `step,rollout_index,w,s,m,r_wer,r_mcd,r_sim,r_total` (empty `m` when no
/// non-edited region existed).
pub fn write_reward_csv(path: &Path, rows: &[RewardRow]) -> Result<()> {
    let mut out = String::from("step,rollout_index,w,s,m,r_wer,r_mcd,r_sim,r_total\n");
    for row in rows {
        let b = &row.breakdown;
        let m = b.m.map(|v| format!("{v}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            row.step, row.rollout_index, b.w, b.s, m, b.r_wer, b.r_mcd, b.r_sim, b.r_total
        ));
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::synthenv::{lexicon, make_corpus};
    use crate::textedit::synth_prompt;
    use rand::Rng;

    fn cfg() -> RewardConfig {
        RewardConfig::default()
    }

    fn rel_close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-9 * b.abs().max(1.0)
    }

    #[test]
    fn r_wer_golden_values() {
        let c = cfg();
        assert_eq!(r_wer(0.0, &c).unwrap(), 1.0);
        assert!(rel_close(r_wer(0.1, &c).unwrap(), 0.6842216807383472));
        assert!(rel_close(r_wer(1.0, &c).unwrap(), 6.14421235332821e-6));
        assert!(r_wer(-0.1, &c).is_err());
    }

    #[test]
    fn r_mcd_golden_values() {
        let c = cfg();
        assert_eq!(r_mcd(Some(1.5), &c).unwrap(), 1.0);
        assert!(rel_close(r_mcd(Some(7.0), &c).unwrap(), 0.36787944117144233));
        assert_eq!(r_mcd(None, &c).unwrap(), 1.0);
        assert!(r_mcd(Some(-1.0), &c).is_err());
    }

    #[test]
    fn r_sim_golden_values() {
        let a = vec![1.0, 0.0];
        let b = vec![0.0, 1.0];
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert_eq!(r_sim(&a, &a).unwrap(), 1.0);
        assert_eq!(r_sim(&a, &b).unwrap(), 0.0);
        assert_eq!(r_sim(&a, &neg).unwrap(), -1.0);
        assert!(r_sim(&a, &[0.0, 0.0]).is_err());
        assert!(r_sim(&a, &[0.5, 0.0]).is_err());
    }

    #[test]
    fn combine_and_total_golden_values() {
        assert_eq!(combine_wer_mcd(1.0, 1.0, 0.5), 1.0);
        assert!(rel_close(combine_wer_mcd(0.8, 0.5, 0.5), 0.6));
        assert_eq!(combine_wer_mcd(0.7, 0.123, 0.0), 0.7);
        assert!(rel_close(total_reward(0.6, 0.9, 0.9, 0.1).unwrap(), 0.63));
        assert_eq!(total_reward(0.5, 0.5, 1.0, 0.0).unwrap(), 0.5);
        assert!(total_reward(0.5, 0.5, 0.9, 0.2).is_err());
    }

    #[test]
    fn schedule_boundaries() {
        let c = cfg();
        assert_eq!(schedule_lambdas(100, &c), (0.9, 0.1));
        assert_eq!(schedule_lambdas(289, &c), (0.9, 0.1));
        // The boundary step belongs to the later phase.
        assert_eq!(schedule_lambdas(290, &c), (0.8, 0.2));
        assert_eq!(schedule_lambdas(300, &c), (0.8, 0.2));
        // Saturation past the last threshold.
        assert_eq!(schedule_lambdas(10_000, &c), (0.8, 0.2));
    }

    #[test]
    fn schedule_validation() {
        let mut c = cfg();
        c.lambda_schedule[0].lambda_s = 0.3;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.lambda_schedule[1].until_step = 100;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.lambda_schedule.clear();
        assert!(c.validate().is_err());
    }

    #[test]
    fn monotonicity_and_bounds() {
        let c = cfg();
        let mut rng = rng_from_seed(2);
        for _ in 0..10_000 {
            let w1 = rng.gen_range(0.0..3.0);
            let w2 = w1 + rng.gen_range(1e-6..1.0);
            let rw1 = r_wer(w1, &c).unwrap();
            let rw2 = r_wer(w2, &c).unwrap();
            assert!(rw1 > rw2, "r_wer not strictly decreasing at {w1} vs {w2}");
            assert!(rw1 > 0.0 && rw1 <= 1.0);

            let m1 = rng.gen_range(0.0..20.0);
            let m2 = m1 + rng.gen_range(1e-6..5.0);
            let rm1 = r_mcd(Some(m1), &c).unwrap();
            let rm2 = r_mcd(Some(m2), &c).unwrap();
            assert!(rm1 >= rm2);
            assert!(rm1 > 0.0 && rm1 <= 1.0);
            if m1 <= c.delta_db {
                assert_eq!(rm1, 1.0);
            }

            let combined = combine_wer_mcd(rw1, rm1, c.gamma);
            assert!(combined > 0.0 && combined <= 1.0);
            // Fixed r_mcd: ratio of composites equals ratio of content gates.
            let other = combine_wer_mcd(rw2, rm1, c.gamma);
            assert!(rel_close(combined / other, rw1 / rw2));

            let total = total_reward(combined, rng.gen_range(-1.0..1.0), 0.8, 0.2).unwrap();
            assert!(total >= -0.2 - 1e-12 && total <= 1.0 + 1e-12);
        }
    }

    fn scoring_fixture() -> (crate::synthenv::SynthSpec, CepstrogramConfig, EditPrompt) {
        let spec = crate::synthenv::SynthSpec::default();
        let cep = CepstrogramConfig::default();
        let pairs = make_corpus(8, 4..=7, &spec, 21).unwrap();
        let lex = lexicon(spec.vocab_size);
        let pair = &pairs[0];
        let prompt = synth_prompt(&pair.transcript, &pair.tokens, pair.speaker_id, pair.seed, &lex)
            .unwrap();
        (spec, cep, prompt)
    }

    #[test]
    fn exact_target_rollout_scores_highest() {
        let (spec, cep, prompt) = scoring_fixture();
        let cfg = cfg();
        let vocab = spec.vocab();
        let target_tokens = vocab.encode(&prompt.x_tar).unwrap();

        let exact = score_rollout(&prompt, &target_tokens, &spec, &cep, &cfg, 0).unwrap();
        assert_eq!(exact.w, 0.0);
        assert_eq!(exact.r_wer, 1.0);
        if let Some(m) = exact.m {
            assert!(m < cfg.delta_db, "same-speaker kept regions should sit under the margin, got {m}");
        }
        assert!(exact.s > 0.9, "same-speaker similarity {} too low", exact.s);

        // Keeping the original tokens while the text changed is penalized.
        let stale = score_rollout(&prompt, &prompt.tokens_ori, &spec, &cep, &cfg, 0).unwrap();
        assert!(stale.w > 0.0);
        assert!(stale.r_wer < 1.0);

        // Random rollouts lose to the exact target.
        let mut rng = rng_from_seed(5);
        for _ in 0..20 {
            let len = rng.gen_range(1..=8);
            let tokens: Vec<Token> =
                (0..len).map(|_| rng.gen_range(0..spec.vocab_size as Token)).collect();
            let b = score_rollout(&prompt, &tokens, &spec, &cep, &cfg, 0).unwrap();
            if tokens != target_tokens {
                assert!(b.r_total < exact.r_total);
            }
        }
    }

    #[test]
    fn empty_rollout_never_crashes() {
        let (spec, cep, prompt) = scoring_fixture();
        let b = score_rollout(&prompt, &[], &spec, &cep, &cfg(), 0).unwrap();
        assert_eq!(b.w, 1.0); // all target words deleted
        assert_eq!(b.m, None);
        assert_eq!(b.r_mcd, 1.0);
        assert!(b.r_total.is_finite());
    }

    #[test]
    fn scoring_is_deterministic() {
        let (spec, cep, prompt) = scoring_fixture();
        let tokens = [1, 2, 3];
        let a = score_rollout(&prompt, &tokens, &spec, &cep, &cfg(), 3).unwrap();
        let b = score_rollout(&prompt, &tokens, &spec, &cep, &cfg(), 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reward_csv_has_schema_and_empty_m() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rewards.csv");
        let rows = vec![RewardRow {
            step: 1,
            rollout_index: 0,
            breakdown: RewardBreakdown {
                w: 0.5,
                s: 0.9,
                m: None,
                r_wer: 0.1,
                r_mcd: 1.0,
                r_sim: 0.9,
                r_wer_mcd: 0.1,
                r_total: 0.2,
            },
        }];
        write_reward_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "step,rollout_index,w,s,m,r_wer,r_mcd,r_sim,r_total");
        assert!(lines.next().unwrap().starts_with("1,0,0.5,0.9,,"));
    }
}

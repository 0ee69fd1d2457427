//! Offline checkpoint evaluation: greedy decoding over held-out prompts,
//! scored with the reward pipeline at the final schedule weights.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grpo::TrainContext;
use crate::par;
use crate::policy::{greedy_decode, PolicyParams, PromptEncoding};
use crate::rewards::{score_rollout, RewardBreakdown};
use crate::textedit::EditPrompt;

/// One evaluated prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub prompt_index: usize,
    pub w: f64,
    pub m: Option<f64>,
    pub s: f64,
    pub r_total: f64,
}

/// Aggregated evaluation results; every aggregate is recomputable from the
/// per-prompt rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_prompts: usize,
    pub mean_wer: f64,
    pub median_wer: f64,
    /// Mean over prompts with a measurable non-edited region.
    pub mean_mcd: Option<f64>,
    pub mean_sim: f64,
    pub mean_reward: f64,
    pub rows: Vec<EvalRow>,
}

/// Greedy-decode and score every prompt. Deterministic: greedy decoding and
/// fixed environment seeds leave nothing random. Scoring uses the last phase
/// of the lambda schedule.
pub fn evaluate(
    params: &PolicyParams,
    prompts: &[EditPrompt],
    ctx: &TrainContext,
) -> Result<EvalReport> {
    if prompts.is_empty() {
        return Err(Error::InvalidInput("no prompts to evaluate".into()));
    }
    if params.cfg.vocab_size != ctx.spec.vocab_size {
        return Err(Error::Checkpoint(format!(
            "checkpoint vocab {} does not match environment vocab {}",
            params.cfg.vocab_size, ctx.spec.vocab_size
        )));
    }
    let vocab = ctx.spec.vocab();
    let final_step = u64::MAX;
    let breakdowns: Vec<Result<RewardBreakdown>> = par::map_ordered(prompts, |prompt| {
        let encoding = PromptEncoding::from_edit_prompt(prompt, &vocab, &params.cfg)?;
        let rollout = greedy_decode(params, &encoding, ctx.cfg.sampling.max_len)?;
        score_rollout(
            prompt,
            rollout.speech_tokens(),
            &ctx.spec,
            &ctx.cep,
            &ctx.cfg.reward,
            final_step,
        )
    });

    let mut rows = Vec::with_capacity(prompts.len());
    for (i, b) in breakdowns.into_iter().enumerate() {
        let b = b?;
        rows.push(EvalRow { prompt_index: i, w: b.w, m: b.m, s: b.s, r_total: b.r_total });
    }
    Ok(aggregate(rows))
}

fn aggregate(rows: Vec<EvalRow>) -> EvalReport {
    let n = rows.len();
    let mean = |f: &dyn Fn(&EvalRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n as f64;
    let mut wers: Vec<f64> = rows.iter().map(|r| r.w).collect();
    wers.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median_wer = if n % 2 == 1 {
        wers[n / 2]
    } else {
        (wers[n / 2 - 1] + wers[n / 2]) / 2.0
    };
    let mcds: Vec<f64> = rows.iter().filter_map(|r| r.m).collect();
    EvalReport {
        n_prompts: n,
        mean_wer: mean(&|r| r.w),
        median_wer,
        mean_mcd: if mcds.is_empty() {
            None
        } else {
            Some(mcds.iter().sum::<f64>() / mcds.len() as f64)
        },
        mean_sim: mean(&|r| r.s),
        mean_reward: mean(&|r| r.r_total),
        rows,
    }
}

impl EvalReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidInput(format!("report serialization failed: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("prompt_index,w,m,s,r_total\n");
        for r in &self.rows {
            let m = r.m.map(|v| format!("{v}")).unwrap_or_default();
            out.push_str(&format!("{},{},{},{},{}\n", r.prompt_index, r.w, m, r.s, r.r_total));
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::synthenv::{lexicon, make_corpus};
    use crate::textedit::synth_prompt;

    fn fixture() -> (TrainContext, Vec<EditPrompt>) {
        let mut run = RunConfig::default();
        run.env.vocab_size = 8;
        run.policy.embed_dim = 8;
        let ctx = TrainContext::from_run_config(&run);
        let pairs = make_corpus(8, 3..=5, &ctx.spec, 17).unwrap();
        let lex = lexicon(ctx.spec.vocab_size);
        let prompts = pairs
            .iter()
            .map(|p| synth_prompt(&p.transcript, &p.tokens, p.speaker_id, p.seed, &lex).unwrap())
            .collect();
        (ctx, prompts)
    }

    #[test]
    fn evaluation_is_deterministic_and_aggregates_match_rows() {
        let (ctx, prompts) = fixture();
        let params = PolicyParams::init(ctx.policy_cfg, 3).unwrap();
        let a = evaluate(&params, &prompts, &ctx).unwrap();
        let b = evaluate(&params, &prompts, &ctx).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_prompts, prompts.len());
        let mean_w: f64 = a.rows.iter().map(|r| r.w).sum::<f64>() / a.rows.len() as f64;
        assert!((a.mean_wer - mean_w).abs() < 1e-12);
        let mean_s: f64 = a.rows.iter().map(|r| r.s).sum::<f64>() / a.rows.len() as f64;
        assert!((a.mean_sim - mean_s).abs() < 1e-12);
    }

    #[test]
    fn vocab_mismatch_is_a_startup_error() {
        let (ctx, prompts) = fixture();
        let wrong = crate::policy::PolicyConfig { vocab_size: 99, embed_dim: 8, context_window: 8 };
        let params = PolicyParams::init(wrong, 3).unwrap();
        assert!(matches!(evaluate(&params, &prompts, &ctx), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn report_files_round_trip() {
        let (ctx, prompts) = fixture();
        let params = PolicyParams::init(ctx.policy_cfg, 3).unwrap();
        let report = evaluate(&params, &prompts, &ctx).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let json = dir.path().join("report.json");
        let csv = dir.path().join("report.csv");
        report.write_json(&json).unwrap();
        report.write_csv(&csv).unwrap();
        let back: EvalReport = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
        assert_eq!(back, report);
        let text = std::fs::read_to_string(&csv).unwrap();
        assert!(text.starts_with("prompt_index,w,m,s,r_total\n"));
        assert_eq!(text.lines().count(), 1 + report.rows.len());
    }
}

//! Group rollout orchestration: group-relative advantages, the clipped
//! surrogate with KL penalty, and the optimization loop. Rollout sampling
//! and reward scoring are data-parallel across (prompt, rollout) pairs; the
//! parameter update is a single sequential reduction in index order, so
//! training traces are bit-identical across thread counts.

mod adam;

pub use adam::AdamState;

use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::par;
use crate::policy::{
    sample_sequence, surrogate_objective_and_grad, Gradient, PolicyConfig, PolicyParams,
    PromptEncoding, Rollout, SamplingConfig,
};
use crate::rewards::{schedule_lambdas, score_rollout, RewardBreakdown, RewardConfig, RewardRow};
use crate::rng::seeded_rng;
use crate::synthenv::SynthSpec;
use crate::textedit::EditPrompt;
use crate::Token;

/// GRPO hyperparameters, including sampling and reward settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_coeff: f64,
    /// Epsilon in the advantage denominator.
    pub adv_eps: f64,
    pub learning_rate: f64,
    pub steps: u64,
    pub batch_prompts: usize,
    pub seed: u64,
    pub sampling: SamplingConfig,
    pub reward: RewardConfig,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 4,
            clip_eps: 0.2,
            kl_coeff: 0.001,
            adv_eps: 1e-8,
            learning_rate: 1e-3,
            steps: 200,
            batch_prompts: 8,
            seed: 42,
            sampling: SamplingConfig::default(),
            // Same weights as the full-scale schedule, crossing over at 3/4
            // of the default desk-scale run.
            reward: RewardConfig {
                lambda_schedule: vec![
                    crate::rewards::LambdaPhase { until_step: 150, lambda_c: 0.9, lambda_s: 0.1 },
                    crate::rewards::LambdaPhase { until_step: 200, lambda_c: 0.8, lambda_s: 0.2 },
                ],
                ..RewardConfig::default()
            },
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::Config("group_size must be at least 2".into()));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::Config("clip_eps must lie in (0, 1)".into()));
        }
        if self.kl_coeff < 0.0 {
            return Err(Error::Config("kl_coeff must be non-negative".into()));
        }
        if self.adv_eps <= 0.0 || self.learning_rate <= 0.0 {
            return Err(Error::Config("adv_eps and learning_rate must be positive".into()));
        }
        if self.batch_prompts == 0 {
            return Err(Error::Config("batch_prompts must be positive".into()));
        }
        self.sampling.validate()?;
        self.reward.validate()
    }
}

/// Group-relative advantages: rewards centered on the group mean and scaled
/// by the population standard deviation plus `eps`.
pub fn group_advantages(rewards: &[f64], eps: f64) -> Result<Vec<f64>> {
    let g = rewards.len();
    if g < 2 {
        return Err(Error::InvalidInput(format!("group must have at least 2 rollouts, got {g}")));
    }
    let mean = rewards.iter().sum::<f64>() / g as f64;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / g as f64;
    let sd = var.sqrt();
    Ok(rewards.iter().map(|r| (r - mean) / (sd + eps)).collect())
}

/// Pessimistic clipped surrogate term
/// `min(ratio * adv, clip(ratio, 1 +/- eps) * adv)`.
pub fn clipped_term(ratio: f64, advantage: f64, clip_eps: f64) -> f64 {
    debug_assert!(ratio > 0.0);
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
    (ratio * advantage).min(clipped * advantage)
}

/// Exact categorical KL divergence `sum p ln(p/q)` between two strictly
/// positive, normalized distributions.
pub fn kl_term(policy: &[f64], reference: &[f64]) -> Result<f64> {
    if policy.len() != reference.len() {
        return Err(Error::InvalidInput("distribution lengths differ".into()));
    }
    for dist in [policy, reference] {
        if dist.iter().any(|p| *p <= 0.0) {
            return Err(Error::InvalidInput("distributions must be strictly positive".into()));
        }
        let sum: f64 = dist.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!("distribution sums to {sum}, not 1")));
        }
    }
    Ok(policy
        .iter()
        .zip(reference)
        .map(|(p, q)| p * (p / q).ln())
        .sum())
}

/// One scored rollout within a group.
#[derive(Debug, Clone)]
pub struct ScoredRollout {
    pub rollout: Rollout,
    pub breakdown: RewardBreakdown,
    pub advantage: f64,
}

/// All rollouts for one prompt at one step.
#[derive(Debug, Clone)]
pub struct GroupBatch {
    pub prompt_encoding: PromptEncoding,
    pub rollouts: Vec<ScoredRollout>,
}

/// Per-step training metrics; `mean_mcd` is absent when no rollout had a
/// measurable non-edited region.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub mean_reward: f64,
    pub mean_wer: f64,
    pub mean_mcd: Option<f64>,
    pub mean_sim: f64,
    pub mean_kl: f64,
    pub clip_frac: f64,
    pub lambda_c: f64,
    pub lambda_s: f64,
}

/// Shared environment and policy settings for training and evaluation.
#[derive(Debug, Clone)]
pub struct TrainContext {
    pub spec: SynthSpec,
    pub cep: crate::dsp::CepstrogramConfig,
    pub policy_cfg: PolicyConfig,
    pub cfg: GrpoConfig,
}

impl TrainContext {
    pub fn from_run_config(run: &RunConfig) -> Self {
        Self {
            spec: run.env.clone(),
            cep: run.cepstrogram,
            policy_cfg: run.policy_config(),
            cfg: run.grpo.clone(),
        }
    }
}

/// Mean gradient of the per-sequence surrogate objective over a set of
/// scored rollouts, plus aggregate KL and clip statistics. This is the
/// ascent direction; the optimizer negates it.
pub fn batch_gradient(
    actor: &PolicyParams,
    reference: &PolicyParams,
    groups: &[GroupBatch],
    clip_eps: f64,
    kl_coeff: f64,
) -> Result<(Gradient, f64, f64)> {
    let items: Vec<(&PromptEncoding, &ScoredRollout)> = groups
        .iter()
        .flat_map(|g| g.rollouts.iter().map(move |r| (&g.prompt_encoding, r)))
        .collect();
    if items.is_empty() {
        return Err(Error::InvalidInput("no rollouts to accumulate".into()));
    }
    let outputs = par::map_ordered(&items, |(encoding, scored)| {
        surrogate_objective_and_grad(
            actor,
            reference,
            encoding,
            &scored.rollout.tokens,
            scored.advantage,
            &scored.rollout.log_probs,
            clip_eps,
            kl_coeff,
        )
    });

    let mut grad = Gradient::zeros_like(actor);
    let mut kl = 0.0;
    let mut clip = 0.0;
    let n = items.len() as f64;
    for out in outputs {
        let out = out?;
        grad.axpy(1.0 / n, &out.grad);
        kl += out.mean_kl / n;
        clip += out.clip_fraction / n;
    }
    Ok((grad, kl, clip))
}

/// Sample and score `group_size` rollouts for each prompt of the batch from
/// the rollout snapshot. Parallel across (prompt, rollout) pairs.
fn collect_groups(
    rollout_policy: &PolicyParams,
    prompts: &[&EditPrompt],
    ctx: &TrainContext,
    step: u64,
) -> Result<Vec<GroupBatch>> {
    let vocab = ctx.spec.vocab();
    let encodings: Vec<PromptEncoding> = prompts
        .iter()
        .map(|p| PromptEncoding::from_edit_prompt(p, &vocab, &ctx.policy_cfg))
        .collect::<Result<_>>()?;

    let g = ctx.cfg.group_size;
    let n_items = prompts.len() * g;
    let sampled: Vec<Result<(Rollout, RewardBreakdown)>> = par::map_indices(n_items, |item| {
        let slot = item / g;
        let k = item % g;
        let mut rng = seeded_rng(ctx.cfg.seed, &format!("rollout/{step}/{slot}/{k}"));
        let rollout = sample_sequence(rollout_policy, &encodings[slot], &ctx.cfg.sampling, &mut rng)?;
        let breakdown = score_rollout(
            prompts[slot],
            rollout.speech_tokens(),
            &ctx.spec,
            &ctx.cep,
            &ctx.cfg.reward,
            step,
        )
        .map_err(|e| {
            Error::InvalidInput(format!(
                "scoring failed for prompt {:?} at step {step}: {e}",
                prompts[slot].x_tar.joined()
            ))
        })?;
        Ok((rollout, breakdown))
    });

    let mut groups = Vec::with_capacity(prompts.len());
    let mut sampled = sampled.into_iter();
    for encoding in encodings {
        let mut scored = Vec::with_capacity(g);
        for _ in 0..g {
            let (rollout, breakdown) = sampled.next().expect("item count matches")?;
            scored.push(ScoredRollout { rollout, breakdown, advantage: 0.0 });
        }
        let advantages =
            group_advantages(&scored.iter().map(|r| r.breakdown.r_total).collect::<Vec<_>>(), ctx.cfg.adv_eps)?;
        for (r, a) in scored.iter_mut().zip(advantages) {
            r.advantage = a;
        }
        groups.push(GroupBatch { prompt_encoding: encoding, rollouts: scored });
    }
    Ok(groups)
}

/// One GRPO step: sample groups from the rollout snapshot (the actor as of
/// the step start), score them, normalize advantages within each group,
/// accumulate the surrogate gradient, and apply a single Adam update.
pub fn grpo_step(
    actor: &mut PolicyParams,
    reference: &PolicyParams,
    adam: &mut AdamState,
    prompts: &[&EditPrompt],
    ctx: &TrainContext,
    step: u64,
) -> Result<(StepMetrics, Vec<GroupBatch>)> {
    let groups = collect_groups(actor, prompts, ctx, step)?;
    let (ascent, mean_kl, clip_frac) =
        batch_gradient(actor, reference, &groups, ctx.cfg.clip_eps, ctx.cfg.kl_coeff)?;
    if !ascent.is_finite() {
        return Err(Error::Diverged(format!("non-finite gradient at step {step}")));
    }
    let mut descent = ascent;
    descent.scale(-1.0);
    adam.step(actor, &descent, ctx.cfg.learning_rate);
    if actor.iter().any(|p| !p.is_finite()) {
        return Err(Error::Diverged(format!("non-finite parameters after step {step}")));
    }

    let all: Vec<&ScoredRollout> = groups.iter().flat_map(|g| g.rollouts.iter()).collect();
    let n = all.len() as f64;
    let mean = |f: &dyn Fn(&ScoredRollout) -> f64| all.iter().map(|r| f(r)).sum::<f64>() / n;
    let mcds: Vec<f64> = all.iter().filter_map(|r| r.breakdown.m).collect();
    let (lambda_c, lambda_s) = schedule_lambdas(step, &ctx.cfg.reward);
    let metrics = StepMetrics {
        step,
        mean_reward: mean(&|r| r.breakdown.r_total),
        mean_wer: mean(&|r| r.breakdown.w),
        mean_mcd: if mcds.is_empty() {
            None
        } else {
            Some(mcds.iter().sum::<f64>() / mcds.len() as f64)
        },
        mean_sim: mean(&|r| r.breakdown.s),
        mean_kl,
        clip_frac,
        lambda_c,
        lambda_s,
    };
    Ok((metrics, groups))
}

/// Full training output.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: PolicyParams,
    pub metrics: Vec<StepMetrics>,
    pub reward_rows: Vec<RewardRow>,
}

/// Run GRPO for `cfg.steps` steps over shuffled prompt batches, starting the
/// actor from the frozen reference snapshot.
pub fn train(prompts: &[EditPrompt], reference: &PolicyParams, ctx: &TrainContext) -> Result<TrainOutput> {
    ctx.cfg.validate()?;
    if prompts.is_empty() {
        return Err(Error::InvalidInput("no training prompts".into()));
    }
    let mut actor = reference.clone();
    let mut adam = AdamState::new(&actor);
    let mut metrics = Vec::with_capacity(ctx.cfg.steps as usize);
    let mut reward_rows = Vec::new();

    for step in 0..ctx.cfg.steps {
        let mut order: Vec<usize> = (0..prompts.len()).collect();
        let mut rng = seeded_rng(ctx.cfg.seed, &format!("batch/{step}"));
        order.shuffle(&mut rng);
        let batch: Vec<&EditPrompt> = order
            .iter()
            .take(ctx.cfg.batch_prompts.min(prompts.len()))
            .map(|&i| &prompts[i])
            .collect();

        let (step_metrics, groups) = grpo_step(&mut actor, reference, &mut adam, &batch, ctx, step)?;
        for (i, scored) in groups.iter().flat_map(|g| g.rollouts.iter()).enumerate() {
            reward_rows.push(RewardRow { step, rollout_index: i, breakdown: scored.breakdown.clone() });
        }
        metrics.push(step_metrics);
    }

    Ok(TrainOutput { params: actor, metrics, reward_rows })
}

/// Write step metrics as CSV with the schema
/// `step,mean_reward,mean_wer,mean_mcd,mean_sim,mean_kl,clip_frac,lambda_c,lambda_s`.
pub fn write_metrics_csv(path: &Path, metrics: &[StepMetrics]) -> Result<()> {
    let mut out =
        String::from("step,mean_reward,mean_wer,mean_mcd,mean_sim,mean_kl,clip_frac,lambda_c,lambda_s\n");
    for m in metrics {
        let mcd = m.mean_mcd.map(|v| format!("{v}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            m.step, m.mean_reward, m.mean_wer, mcd, m.mean_sim, m.mean_kl, m.clip_frac, m.lambda_c, m.lambda_s
        ));
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Build one `Token` sequence usable as a surrogate rollout from raw tokens,
/// appending the end marker; used by tests and the pretraining pipeline.
pub fn target_sequence(speech_tokens: &[Token], policy_cfg: &PolicyConfig) -> Vec<Token> {
    let mut seq = speech_tokens.to_vec();
    seq.push(policy_cfg.eos());
    seq
}

//! Analytic gradients for the supervised next-token loss and the per-sequence
//! clipped-surrogate term with exact categorical KL against a frozen
//! reference. Both objectives are also computable forward-only so finite
//! differences can check the gradients.

use ndarray::{Array1, Array2};

use super::{forward, Forward, PolicyParams, PromptEncoding};
use crate::error::{Error, Result};
use crate::Token;

/// Gradient with the same shape as [`PolicyParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub emb: Array2<f64>,
    pub ctx_w: Array2<f64>,
    pub ctx_b: Array1<f64>,
    pub out_w: Array2<f64>,
    pub out_b: Array1<f64>,
}

impl Gradient {
    pub fn zeros_like(params: &PolicyParams) -> Self {
        Self {
            emb: Array2::zeros(params.emb.raw_dim()),
            ctx_w: Array2::zeros(params.ctx_w.raw_dim()),
            ctx_b: Array1::zeros(params.ctx_b.raw_dim()),
            out_w: Array2::zeros(params.out_w.raw_dim()),
            out_b: Array1::zeros(params.out_b.raw_dim()),
        }
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

    /// `self += scale * other`
    pub fn axpy(&mut self, scale: f64, other: &Self) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.iter_mut() {
            *v *= s;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

/// Accumulate the chain from `d objective / d logits` at one position into
/// the parameter gradient.
fn backprop_position(params: &PolicyParams, fwd: &Forward, dlogits: &Array1<f64>, grad: &mut Gradient) {
    grad.out_b += dlogits;
    // out_w[k, v] += h_k * dlogits_v
    for (k, hk) in fwd.h.iter().enumerate() {
        let mut row = grad.out_w.row_mut(k);
        row += &(dlogits * *hk);
    }
    let dh = params.out_w.dot(dlogits);
    let da = &dh * &fwd.h.mapv(|h| 1.0 - h * h);
    grad.ctx_b += &da;
    for (i, dai) in da.iter().enumerate() {
        let mut row = grad.ctx_w.row_mut(i);
        row += &(&fwd.x * *dai);
    }
    let dx = params.ctx_w.t().dot(&da);
    let share = 1.0 / fwd.window.len() as f64;
    for &t in &fwd.window {
        let mut row = grad.emb.row_mut(t as usize);
        row += &(&dx * share);
    }
}

fn validate_targets(params: &PolicyParams, targets: &[Token]) -> Result<()> {
    if targets.is_empty() {
        return Err(Error::InvalidInput("target sequence must be non-empty".into()));
    }
    if *targets.last().unwrap() != params.cfg.eos() {
        return Err(Error::InvalidInput(
            "target sequence must end with the end-of-sequence token".into(),
        ));
    }
    for &t in targets {
        if t as usize >= params.cfg.total_tokens() {
            return Err(Error::InvalidInput(format!("target token {t} out of range")));
        }
    }
    Ok(())
}

/// Mean next-token prediction loss over a batch: per sequence the mean of
/// `-log pi(target_t)` over all positions including the end marker, then the
/// batch mean.
pub fn nll_loss(params: &PolicyParams, batch: &[(PromptEncoding, Vec<Token>)]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("batch must be non-empty".into()));
    }
    let mut loss = 0.0;
    for (prompt, targets) in batch {
        validate_targets(params, targets)?;
        let (total, per) = super::sequence_log_prob(params, prompt, targets)?;
        loss -= total / per.len() as f64;
    }
    Ok(loss / batch.len() as f64)
}

/// [`nll_loss`] plus its analytic gradient.
pub fn nll_loss_and_grad(
    params: &PolicyParams,
    batch: &[(PromptEncoding, Vec<Token>)],
) -> Result<(f64, Gradient)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("batch must be non-empty".into()));
    }
    let mut grad = Gradient::zeros_like(params);
    let mut loss = 0.0;
    let batch_w = 1.0 / batch.len() as f64;
    for (prompt, targets) in batch {
        validate_targets(params, targets)?;
        let seq_w = batch_w / targets.len() as f64;
        let mut context = prompt.tokens.clone();
        for &target in targets {
            let fwd = forward(params, &context)?;
            loss -= fwd.log_probs[target as usize] * seq_w;
            // d(-log p_y)/d logits = p - onehot(y)
            let mut dlogits = fwd.probs();
            dlogits[target as usize] -= 1.0;
            dlogits *= seq_w;
            backprop_position(params, &fwd, &dlogits, &mut grad);
            context.push(target);
        }
    }
    Ok((loss, grad))
}

/// Per-sequence surrogate statistics.
#[derive(Debug, Clone)]
pub struct SurrogateOutput {
    pub objective: f64,
    pub grad: Gradient,
    /// Mean per-position KL(pi_theta || pi_ref).
    pub mean_kl: f64,
    /// Fraction of positions with the importance ratio outside the clip window.
    pub clip_fraction: f64,
}

struct PositionTerm {
    value: f64,
    kl: f64,
    ratio: f64,
    /// Gradient flows through the ratio (unclipped branch selected).
    ratio_grad_active: bool,
    clipped: bool,
}

fn position_term(
    log_p: &Array1<f64>,
    log_q: &Array1<f64>,
    token: Token,
    advantage: f64,
    old_log_prob: f64,
    clip_eps: f64,
) -> PositionTerm {
    let ratio = (log_p[token as usize] - old_log_prob).exp();
    let clipped_ratio = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
    let unclipped = ratio * advantage;
    let clipped = clipped_ratio * advantage;
    let kl: f64 = log_p
        .iter()
        .zip(log_q.iter())
        .map(|(lp, lq)| lp.exp() * (lp - lq))
        .sum();
    PositionTerm {
        value: unclipped.min(clipped),
        kl,
        ratio,
        ratio_grad_active: unclipped <= clipped,
        clipped: ratio < 1.0 - clip_eps || ratio > 1.0 + clip_eps,
    }
}

fn check_rollout(params: &PolicyParams, tokens: &[Token], old_log_probs: &[f64]) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::InvalidInput("rollout must contain at least one token".into()));
    }
    if tokens.len() != old_log_probs.len() {
        return Err(Error::InvalidInput(format!(
            "{} tokens but {} stored log-probs",
            tokens.len(),
            old_log_probs.len()
        )));
    }
    for &t in tokens {
        if t as usize >= params.cfg.total_tokens() {
            return Err(Error::InvalidInput(format!("rollout token {t} out of range")));
        }
    }
    Ok(())
}

/// Forward-only evaluation of the per-sequence surrogate term
/// `(1/T) sum_t min(rho_t A, clip(rho_t, 1 +/- eps) A) - beta KL_t`.
pub fn surrogate_objective(
    params: &PolicyParams,
    reference: &PolicyParams,
    prompt: &PromptEncoding,
    tokens: &[Token],
    advantage: f64,
    old_log_probs: &[f64],
    clip_eps: f64,
    kl_coeff: f64,
) -> Result<f64> {
    check_rollout(params, tokens, old_log_probs)?;
    let mut context = prompt.tokens.clone();
    let mut total = 0.0;
    for (i, &token) in tokens.iter().enumerate() {
        let fwd = forward(params, &context)?;
        let fwd_ref = forward(reference, &context)?;
        let term = position_term(
            &fwd.log_probs,
            &fwd_ref.log_probs,
            token,
            advantage,
            old_log_probs[i],
            clip_eps,
        );
        total += term.value - kl_coeff * term.kl;
        context.push(token);
    }
    Ok(total / tokens.len() as f64)
}

/// [`surrogate_objective`] with its analytic gradient and per-sequence
/// KL/clip statistics.
pub fn surrogate_objective_and_grad(
    params: &PolicyParams,
    reference: &PolicyParams,
    prompt: &PromptEncoding,
    tokens: &[Token],
    advantage: f64,
    old_log_probs: &[f64],
    clip_eps: f64,
    kl_coeff: f64,
) -> Result<SurrogateOutput> {
    check_rollout(params, tokens, old_log_probs)?;
    let inv_t = 1.0 / tokens.len() as f64;
    let mut grad = Gradient::zeros_like(params);
    let mut objective = 0.0;
    let mut kl_sum = 0.0;
    let mut clip_count = 0usize;

    let mut context = prompt.tokens.clone();
    for (i, &token) in tokens.iter().enumerate() {
        let fwd = forward(params, &context)?;
        let fwd_ref = forward(reference, &context)?;
        let term = position_term(
            &fwd.log_probs,
            &fwd_ref.log_probs,
            token,
            advantage,
            old_log_probs[i],
            clip_eps,
        );
        objective += term.value - kl_coeff * term.kl;
        kl_sum += term.kl;
        if term.clipped {
            clip_count += 1;
        }

        let p = fwd.probs();
        let mut dlogits = Array1::zeros(p.len());
        if term.ratio_grad_active && advantage != 0.0 {
            // d(rho A)/d logits = A rho (onehot - p)
            let coeff = advantage * term.ratio * inv_t;
            dlogits -= &(&p * coeff);
            dlogits[token as usize] += coeff;
        }
        if kl_coeff != 0.0 {
            // dKL/dlogit_j = p_j (log(p_j/q_j) - KL)
            let log_ratio = &fwd.log_probs - &fwd_ref.log_probs;
            let dkl = &p * &log_ratio.mapv(|lr| lr) - &(&p * term.kl);
            dlogits -= &(&dkl * (kl_coeff * inv_t));
        }
        backprop_position(params, &fwd, &dlogits, &mut grad);
        context.push(token);
    }

    Ok(SurrogateOutput {
        objective: objective * inv_t,
        grad,
        mean_kl: kl_sum * inv_t,
        clip_fraction: clip_count as f64 / tokens.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{greedy_decode, PolicyConfig};

    fn cfg() -> PolicyConfig {
        PolicyConfig { vocab_size: 6, embed_dim: 5, context_window: 3 }
    }

    fn prompt(c: &PolicyConfig) -> PromptEncoding {
        PromptEncoding::from_parts(&[0, 1], &[0, 2], &[0, 1], c).unwrap()
    }

    fn fd_check<F: Fn(&PolicyParams) -> f64>(
        params: &PolicyParams,
        analytic: &Gradient,
        f: F,
        probes: usize,
        seed: u64,
        tol: f64,
    ) {
        use rand::Rng;
        let mut rng = crate::rng::rng_from_seed(seed);
        let n = params.n_params();
        let h = 1e-5;
        for _ in 0..probes {
            let idx = rng.gen_range(0..n);
            let mut plus = params.clone();
            plus.set_flat(idx, params.get_flat(idx) + h);
            let mut minus = params.clone();
            minus.set_flat(idx, params.get_flat(idx) - h);
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            let a = analytic.get_flat(idx);
            let denom = a.abs().max(fd.abs());
            if denom > 1e-8 {
                assert!(
                    (a - fd).abs() / denom < tol,
                    "param {idx}: analytic {a} vs fd {fd}"
                );
            } else {
                assert!((a - fd).abs() < 1e-8, "param {idx}: analytic {a} vs fd {fd}");
            }
        }
    }

    #[test]
    fn uniform_policy_loss_is_log_vocab() {
        let c = cfg();
        let params = PolicyParams::zeros(c).unwrap();
        let batch = vec![(prompt(&c), vec![1, 2, c.eos()])];
        let loss = nll_loss(&params, &batch).unwrap();
        assert!((loss - (c.total_tokens() as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let c = cfg();
        let params = PolicyParams::init(c, 31).unwrap();
        let batch = vec![
            (prompt(&c), vec![1, 2, c.eos()]),
            (prompt(&c), vec![3, c.eos()]),
        ];
        let (loss, grad) = nll_loss_and_grad(&params, &batch).unwrap();
        assert!((loss - nll_loss(&params, &batch).unwrap()).abs() < 1e-12);
        fd_check(&params, &grad, |p| nll_loss(p, &batch).unwrap(), 20, 7, 1e-4);
    }

    #[test]
    fn nll_rejects_bad_batches() {
        let c = cfg();
        let params = PolicyParams::init(c, 1).unwrap();
        assert!(nll_loss(&params, &[]).is_err());
        // Missing EOS.
        let batch = vec![(prompt(&c), vec![1, 2])];
        assert!(nll_loss(&params, &batch).is_err());
    }

    #[test]
    fn repeated_sequence_training_reaches_exact_recall() {
        let c = cfg();
        let mut params = PolicyParams::init(c, 5).unwrap();
        let target = vec![3, 1, 4, c.eos()];
        let batch = vec![(prompt(&c), target.clone())];
        // Plain gradient descent is enough at this scale.
        for _ in 0..600 {
            let (_, grad) = nll_loss_and_grad(&params, &batch).unwrap();
            for (p, g) in params.iter_mut().zip(grad.iter()) {
                *p -= 0.5 * g;
            }
        }
        let decoded = greedy_decode(&params, &prompt(&c), 8).unwrap();
        assert_eq!(decoded.tokens, target);
    }

    #[test]
    fn surrogate_gradient_matches_finite_differences() {
        let c = cfg();
        let old = PolicyParams::init(c, 41).unwrap();
        let reference = PolicyParams::init(c, 42).unwrap();
        // Probe slightly away from the rollout snapshot so ratios differ
        // from 1 without saturating the clip window.
        let mut params = old.clone();
        let mut bump = crate::rng::rng_from_seed(43);
        use rand::Rng;
        for v in params.iter_mut() {
            *v += bump.gen_range(-0.02..0.02);
        }
        let p = prompt(&c);
        let tokens = vec![2, 0, 5, c.eos()];
        let (_, old_lp) = crate::policy::sequence_log_prob(&old, &p, &tokens).unwrap();
        let out = surrogate_objective_and_grad(&params, &reference, &p, &tokens, 0.7, &old_lp, 0.2, 0.05)
            .unwrap();
        let obj = surrogate_objective(&params, &reference, &p, &tokens, 0.7, &old_lp, 0.2, 0.05)
            .unwrap();
        assert!((out.objective - obj).abs() < 1e-12);
        fd_check(
            &params,
            &out.grad,
            |q| surrogate_objective(q, &reference, &p, &tokens, 0.7, &old_lp, 0.2, 0.05).unwrap(),
            20,
            11,
            1e-4,
        );
    }

    #[test]
    fn surrogate_at_snapshot_equals_policy_gradient() {
        // theta = theta_old, beta = 0: the gradient collapses to
        // A * grad mean log-prob, i.e. -A * grad nll of that sequence.
        let c = cfg();
        let params = PolicyParams::init(c, 23).unwrap();
        let p = prompt(&c);
        let tokens = vec![1, 4, c.eos()];
        let (_, old_lp) = crate::policy::sequence_log_prob(&params, &p, &tokens).unwrap();
        let advantage = 1.37;
        let out = surrogate_objective_and_grad(&params, &params, &p, &tokens, advantage, &old_lp, 0.2, 0.0)
            .unwrap();
        let (_, nll_grad) = nll_loss_and_grad(&params, &[(p.clone(), tokens.clone())]).unwrap();
        for (s, n) in out.grad.iter().zip(nll_grad.iter()) {
            assert!((s - (-advantage) * n).abs() < 1e-10, "{s} vs {}", -advantage * n);
        }
        // All ratios are exactly 1: objective equals the advantage, no clips.
        assert!((out.objective - advantage).abs() < 1e-12);
        assert_eq!(out.clip_fraction, 0.0);
    }

    #[test]
    fn zero_advantage_zero_beta_gives_zero_gradient() {
        let c = cfg();
        let params = PolicyParams::init(c, 3).unwrap();
        let p = prompt(&c);
        let tokens = vec![2, c.eos()];
        let (_, old_lp) = crate::policy::sequence_log_prob(&params, &p, &tokens).unwrap();
        let out =
            surrogate_objective_and_grad(&params, &params, &p, &tokens, 0.0, &old_lp, 0.2, 0.0).unwrap();
        assert_eq!(out.grad.max_abs(), 0.0);
        assert_eq!(out.objective, 0.0);
    }

    #[test]
    fn clip_inactive_when_ratios_inside_window() {
        // When every ratio sits inside [1-eps, 1+eps] the clipped objective
        // equals the unclipped one (evaluated as eps = infinity) exactly.
        let c = cfg();
        let old = PolicyParams::init(c, 51).unwrap();
        let mut params = old.clone();
        use rand::Rng;
        let mut bump = crate::rng::rng_from_seed(52);
        for v in params.iter_mut() {
            *v += bump.gen_range(-0.001..0.001);
        }
        let p = prompt(&c);
        let tokens = vec![0, 3, c.eos()];
        let (_, old_lp) = crate::policy::sequence_log_prob(&old, &p, &tokens).unwrap();
        let clipped = surrogate_objective(&params, &old, &p, &tokens, -0.9, &old_lp, 0.2, 0.0).unwrap();
        let unclipped =
            surrogate_objective(&params, &old, &p, &tokens, -0.9, &old_lp, f64::INFINITY, 0.0).unwrap();
        assert_eq!(clipped, unclipped);
    }
}

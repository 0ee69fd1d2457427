//! Throughput comparison of the data-parallel hot loops against the plain
//! sequential path: group rollout scoring, corpus round-trips, and batched
//! DTW. Run with `cargo bench -p editgrpo-core`.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use editgrpo_core::config::RunConfig;
use editgrpo_core::dsp::{dtw, mel_cepstra, CepstrogramConfig};
use editgrpo_core::grpo::{GroupBatch, TrainContext};
use editgrpo_core::policy::{sample_sequence, PolicyParams, PromptEncoding};
use editgrpo_core::rewards::score_rollout;
use editgrpo_core::rng::seeded_rng;
use editgrpo_core::synthenv::{decode, lexicon, make_corpus, oracle_asr};
use editgrpo_core::textedit::{synth_prompt, EditPrompt};

struct Fixture {
    ctx: TrainContext,
    prompts: Vec<EditPrompt>,
    params: PolicyParams,
}

fn fixture(n_prompts: usize) -> Fixture {
    let run = RunConfig::default();
    let ctx = TrainContext::from_run_config(&run);
    let pairs = make_corpus(n_prompts, 4..=8, &ctx.spec, 99).unwrap();
    let lex = lexicon(ctx.spec.vocab_size);
    let prompts = pairs
        .iter()
        .map(|p| synth_prompt(&p.transcript, &p.tokens, p.speaker_id, p.seed, &lex).unwrap())
        .collect();
    let params = PolicyParams::init(ctx.policy_cfg, 5).unwrap();
    Fixture { ctx, prompts, params }
}

/// Sample + score one rollout per prompt, sequentially in a plain loop.
fn score_sequential(f: &Fixture) -> f64 {
    let vocab = f.ctx.spec.vocab();
    let mut total = 0.0;
    for (i, prompt) in f.prompts.iter().enumerate() {
        let enc = PromptEncoding::from_edit_prompt(prompt, &vocab, &f.params.cfg).unwrap();
        let mut rng = seeded_rng(7, &format!("bench/{i}"));
        let rollout = sample_sequence(&f.params, &enc, &f.ctx.cfg.sampling, &mut rng).unwrap();
        let b = score_rollout(
            prompt,
            rollout.speech_tokens(),
            &f.ctx.spec,
            &f.ctx.cep,
            &f.ctx.cfg.reward,
            0,
        )
        .unwrap();
        total += b.r_total;
    }
    total
}

/// Same work routed through the rayon-backed gradient path: sample, score,
/// and accumulate the batch gradient the way a training step does.
fn score_parallel(f: &Fixture) -> f64 {
    use editgrpo_core::grpo::batch_gradient;
    use editgrpo_core::policy::Rollout;
    let vocab = f.ctx.spec.vocab();
    let groups: Vec<GroupBatch> = {
        use rayon::prelude::*;
        f.prompts
            .par_iter()
            .enumerate()
            .map(|(i, prompt)| {
                let enc = PromptEncoding::from_edit_prompt(prompt, &vocab, &f.params.cfg).unwrap();
                let mut rollouts = Vec::new();
                for k in 0..2 {
                    let mut rng = seeded_rng(7, &format!("bench/{i}/{k}"));
                    let rollout: Rollout =
                        sample_sequence(&f.params, &enc, &f.ctx.cfg.sampling, &mut rng).unwrap();
                    let b = score_rollout(
                        prompt,
                        rollout.speech_tokens(),
                        &f.ctx.spec,
                        &f.ctx.cep,
                        &f.ctx.cfg.reward,
                        0,
                    )
                    .unwrap();
                    rollouts.push(editgrpo_core::grpo::ScoredRollout {
                        rollout,
                        advantage: if k == 0 { 1.0 } else { -1.0 },
                        breakdown: b,
                    });
                }
                GroupBatch { prompt_encoding: enc, rollouts }
            })
            .collect()
    };
    let (grad, _, _) = batch_gradient(&f.params, &f.params, &groups, 0.2, 0.001).unwrap();
    grad.max_abs()
}

fn bench_group_scoring(c: &mut Criterion) {
    let f = fixture(16);
    let mut group = c.benchmark_group("group_scoring");
    group.sample_size(10);
    group.bench_function("sequential_loop", |b| b.iter(|| score_sequential(&f)));
    for threads in [1usize, 2, num_cpus()] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        group.bench_with_input(BenchmarkId::new("rayon", threads), &threads, |b, _| {
            b.iter(|| pool.install(|| score_parallel(&f)))
        });
    }
    group.finish();
}

fn bench_env_round_trip(c: &mut Criterion) {
    let f = fixture(4);
    let pairs = make_corpus(32, 4..=8, &f.ctx.spec, 3).unwrap();
    let mut group = c.benchmark_group("env_round_trip");
    group.sample_size(10);
    group.bench_function("sequential_loop", |b| {
        b.iter(|| {
            pairs
                .iter()
                .map(|p| {
                    let w = decode(&p.tokens, p.speaker_id, &f.ctx.spec, p.seed).unwrap();
                    oracle_asr(&w, &f.ctx.spec).unwrap().len()
                })
                .sum::<usize>()
        })
    });
    group.bench_function("rayon", |b| {
        use rayon::prelude::*;
        b.iter(|| {
            pairs
                .par_iter()
                .map(|p| {
                    let w = decode(&p.tokens, p.speaker_id, &f.ctx.spec, p.seed).unwrap();
                    oracle_asr(&w, &f.ctx.spec).unwrap().len()
                })
                .sum::<usize>()
        })
    });
    group.finish();
}

fn bench_dtw_batch(c: &mut Criterion) {
    let f = fixture(4);
    let cep_cfg = CepstrogramConfig::default();
    let waves: Vec<_> = (0..16)
        .map(|i| {
            let tokens: Vec<u32> = (0..6).map(|k| ((i + k) % 8) as u32).collect();
            decode(&tokens, 0, &f.ctx.spec, i as u64).unwrap()
        })
        .collect();
    let ceps: Vec<_> = waves.iter().map(|w| mel_cepstra(w, &cep_cfg).unwrap()).collect();
    let mut group = c.benchmark_group("dtw_batch");
    group.sample_size(10);
    group.bench_function("sequential_loop", |b| {
        b.iter(|| {
            let mut acc = 0.0;
            for i in 0..ceps.len() {
                let j = (i + 1) % ceps.len();
                acc += dtw(&ceps[i], &ceps[j]).unwrap().total_cost;
            }
            acc
        })
    });
    group.bench_function("rayon", |b| {
        use rayon::prelude::*;
        b.iter(|| {
            (0..ceps.len())
                .into_par_iter()
                .map(|i| {
                    let j = (i + 1) % ceps.len();
                    dtw(&ceps[i], &ceps[j]).unwrap().total_cost
                })
                .sum::<f64>()
        })
    });
    group.finish();
}

fn num_cpus() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(4)
}

criterion_group!(benches, bench_group_scoring, bench_env_round_trip, bench_dtw_batch);
criterion_main!(benches);

//! Shipped deterministic fixtures.
//!
//! Everything here is a pure function of frozen constants, so the fixtures
//! regenerate bit-identically on every platform. They back the acceptance
//! suite and the CLI's `--fixture` flags.

use alloc::vec;
use alloc::vec::Vec;

use crate::losses::{LossKind, LossParams, SteWeighting};
use crate::pairs::{PairMeta, PairSource, PreferencePair};
use crate::policy::{DiffPolicy, TabularPolicy, Token, Vocab};
use crate::rng::{derive_seed, SplitMix64};
use crate::trainer::TrainConfig;

/// A corpus of (prompt, ground-truth) sentences.
pub type Corpus = Vec<(Vec<Token>, Vec<Token>)>;

/// Root seed of the margin-coupling fixture.
pub const CASE2_SEED: u64 = 8467;
/// Init-logit scale of the margin-coupling fixture.
pub const CASE2_SCALE: f64 = 0.8;
/// Learning rate both training runs of the fixture use.
pub const CASE2_LR: f64 = 0.15;

/// A tabular policy, its frozen reference twin, a ten-pair dataset with
/// heavily shared token support, and the two training configurations that
/// expose the margin-coupling contrast on it.
///
/// Under the DPO config, both dataset-mean margins sink over the first 50
/// optimizer steps (the coupled both-decreasing regime) and preference
/// accuracy peaks before the final epoch. Under the LPO config on the same
/// data, the hinge keeps the mean chosen log-probability from declining
/// and accuracy climbs monotonically through the early epochs.
#[derive(Debug, Clone)]
pub struct Case2Fixture {
    pub policy: TabularPolicy,
    pub reference: TabularPolicy,
    pub pairs: Vec<PreferencePair>,
    pub dpo_config: TrainConfig,
    pub lpo_config: TrainConfig,
}

/// Builds the margin-coupling fixture from its frozen constants.
///
/// The dataset is a sentence pool over a two-letter alphabet: four long
/// sentences serve as chosen responses, while three medium and three short
/// sentences are reused as rejected responses across pairs. The reuse is
/// what couples the pairs: suppressing a shared rejected sentence also
/// drags down chosen sentences that traverse the same context windows.
pub fn case2_fixture() -> Case2Fixture {
    let (policy, pairs) = case2_policy_and_pairs(CASE2_SEED, CASE2_SCALE);
    let reference = policy.clone();
    let train_seed = derive_seed(CASE2_SEED, "train", 0);
    let dpo_config = TrainConfig {
        loss: LossKind::Dpo,
        params: LossParams::dpo_baseline(),
        ste_weighting: SteWeighting::Quadratic,
        lr: CASE2_LR,
        batch_size: 1,
        epochs: 5,
        seed: train_seed,
        eval_every: 1,
    };
    let lpo_config = TrainConfig {
        loss: LossKind::Lpo,
        params: LossParams::default(),
        ..dpo_config.clone()
    };
    Case2Fixture {
        policy,
        reference,
        pairs,
        dpo_config,
        lpo_config,
    }
}

fn sentence(rng: &mut SplitMix64, eos: Token, content_len: usize) -> Vec<Token> {
    let mut s: Vec<Token> = (0..content_len)
        .map(|_| rng.next_below(2) as Token)
        .collect();
    s.push(eos);
    s
}

fn case2_policy_and_pairs(seed: u64, scale: f64) -> (TabularPolicy, Vec<PreferencePair>) {
    let vocab = Vocab::with_size(3);
    let eos = vocab.eos();
    let mut rng = SplitMix64::new(derive_seed(seed, "case2-pool", 0));

    let mut pool: Vec<Vec<Token>> = Vec::with_capacity(10);
    for _ in 0..4 {
        let len = 4 + rng.next_below(2);
        pool.push(sentence(&mut rng, eos, len));
    }
    for _ in 0..3 {
        pool.push(sentence(&mut rng, eos, 3));
    }
    for _ in 0..3 {
        let len = 1 + rng.next_below(2);
        pool.push(sentence(&mut rng, eos, len));
    }

    let mut pairs: Vec<PreferencePair> = Vec::with_capacity(10);
    while pairs.len() < 10 {
        let chosen_idx = rng.next_below(4);
        let rejected_idx = 4 + rng.next_below(6);
        if pool[chosen_idx] == pool[rejected_idx] {
            continue;
        }
        let prompt = vec![rng.next_below(2) as Token];
        let index = pairs.len() as u64;
        pairs.push(PreferencePair {
            prompt,
            chosen: pool[chosen_idx].clone(),
            rejected: pool[rejected_idx].clone(),
            source: PairSource::Lppc,
            meta: PairMeta::Lppc {
                seed: derive_seed(seed, "case2-pair", index),
                attempt: 0,
                temperature: 1.0,
                top_p: 1.0,
            },
        });
    }

    let mut policy = TabularPolicy::new(vocab, 2);
    let sequences: Vec<(&[Token], &[Token])> = pairs
        .iter()
        .flat_map(|p| {
            [
                (p.prompt.as_slice(), p.chosen.as_slice()),
                (p.prompt.as_slice(), p.rejected.as_slice()),
            ]
        })
        .collect();
    policy.prepare(&sequences);
    let mut init_rng = SplitMix64::new(derive_seed(seed, "case2-init", 0));
    policy.randomize(&mut init_rng, scale);
    (policy, pairs)
}

/// Default size of the perturbation demo corpus.
pub const DEMO_CORPUS_SENTENCES: usize = 10_000;
/// Content length of every demo-corpus sentence.
pub const DEMO_CORPUS_LEN: usize = 10;
/// Seed of the shipped demo corpus.
pub const DEMO_CORPUS_SEED: u64 = 424242;

/// The corpus vocabulary shared by the demo fixtures (seven content
/// tokens plus EOS).
pub fn demo_vocab() -> Vocab {
    Vocab::with_size(8)
}

/// A seeded corpus of (prompt, ground-truth) sentences for the
/// perturbation builder: fixed-length sentences over [`demo_vocab`].
pub fn demo_corpus(sentences: usize, content_len: usize, seed: u64) -> Corpus {
    let vocab = demo_vocab();
    let content = vocab.size() - 1;
    let eos = vocab.eos();
    let mut rng = SplitMix64::new(derive_seed(seed, "corpus", 0));
    (0..sentences)
        .map(|_| {
            let prompt = vec![
                rng.next_below(content) as Token,
                rng.next_below(content) as Token,
            ];
            let mut gt: Vec<Token> = (0..content_len)
                .map(|_| rng.next_below(content) as Token)
                .collect();
            gt.push(eos);
            (prompt, gt)
        })
        .collect()
}

/// The shipped 10k-sentence corpus.
pub fn demo_corpus_default() -> Corpus {
    demo_corpus(DEMO_CORPUS_SENTENCES, DEMO_CORPUS_LEN, DEMO_CORPUS_SEED)
}

/// Seed of the model-sampled pair-construction demo.
pub const LPPC_DEMO_SEED: u64 = 31337;
/// Prompts in the model-sampled pair-construction demo.
pub const LPPC_DEMO_PROMPTS: usize = 32;

/// A seeded tabular policy plus a small prompt set for the model-sampled
/// pair builders; backs the byte-stability golden test.
pub fn lppc_demo() -> (TabularPolicy, Corpus) {
    let vocab = demo_vocab();
    let mut policy = TabularPolicy::new(vocab.clone(), 2);
    policy.materialize_all_contexts();
    let mut rng = SplitMix64::new(derive_seed(LPPC_DEMO_SEED, "policy-init", 0));
    policy.randomize(&mut rng, 1.8);
    let data = demo_corpus(
        LPPC_DEMO_PROMPTS,
        4,
        derive_seed(LPPC_DEMO_SEED, "prompts", 0),
    );
    (policy, data)
}

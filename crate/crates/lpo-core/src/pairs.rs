//! Preference pair construction.
//!
//! Two ways to build (prompt, chosen, rejected) examples from a corpus of
//! (prompt, ground-truth) sentences:
//!
//! - [`build_lppc`]: the chosen response is the ground truth verbatim, the
//!   rejected response is sampled from the SFT policy at temperature 1.0,
//!   top-p 1.0. A bounded retry budget re-samples when the draw equals the
//!   chosen response or truncates.
//! - [`build_perturbed`]: the rejected response is the ground truth
//!   corrupted by insertion / deletion / repetition edits, with a
//!   per-position edit probability η, so the expected number of edits per
//!   sentence is η × length.
//!
//! [`triple_candidates`] samples three candidates per prompt and pairs
//! each with the ground truth.
//!
//! Every builder drops pairs whose chosen and rejected sequences are
//! token-identical, records enough provenance in [`PairMeta`] to
//! regenerate each pair, and is byte-deterministic given its seed.

use alloc::vec::Vec;

use crate::policy::{sample, Policy, SampleConfig, Token};
use crate::rng::{derive_seed, SplitMix64};

/// Re-sampling budget per prompt for the model-based builders.
pub const LPPC_RETRY_BUDGET: u32 = 8;

/// Candidate draws per prompt for [`triple_candidates`].
pub const TRIPLE_CANDIDATES: u32 = 3;

/// Errors from pair construction.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PairError {
    #[error("invalid perturbation config: {0}")]
    BadConfig(&'static str),
    /// Ground truths must be non-empty and end with EOS.
    #[error("ground truth {index} is malformed: {reason}")]
    BadGroundTruth { index: usize, reason: &'static str },
    #[error(transparent)]
    Policy(#[from] crate::policy::PolicyError),
}

/// How a pair was constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PairSource {
    Lppc,
    Perturbation,
}

/// One edit applied by the perturbation builder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Edit {
    pub op: EditOp,
    /// Content position the edit targeted (insertion slot for inserts).
    pub position: usize,
    /// Inserted token, when the operator adds one.
    pub token: Option<Token>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum EditOp {
    Insertion,
    Deletion,
    Repetition,
}

/// Provenance sufficient to regenerate a pair.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PairMeta {
    Lppc {
        /// Sub-seed of the successful draw.
        seed: u64,
        /// Which retry produced the rejected sample.
        attempt: u32,
        temperature: f64,
        top_p: f64,
    },
    Perturbation {
        /// Per-sentence sub-seed.
        seed: u64,
        eta: f64,
        /// Applied edits, in application order.
        edits: Vec<Edit>,
    },
}

/// One training example.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PreferencePair {
    pub prompt: Vec<Token>,
    pub chosen: Vec<Token>,
    pub rejected: Vec<Token>,
    pub source: PairSource,
    pub meta: PairMeta,
}

/// Perturbation controls: per-position edit probability and operator mix.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PerturbationConfig {
    /// Per-position edit probability η in (0, 1].
    pub eta: f64,
    /// Weights for (insertion, deletion, repetition); must sum to 1.
    pub weights: [f64; 3],
    pub seed: u64,
}

impl PerturbationConfig {
    /// Equal-weight operators at the given noise ratio.
    pub fn new(eta: f64, seed: u64) -> Self {
        Self {
            eta,
            weights: [1.0 / 3.0; 3],
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), PairError> {
        if self.eta.is_nan() || self.eta <= 0.0 || self.eta > 1.0 {
            return Err(PairError::BadConfig("eta must be in (0, 1]"));
        }
        if self.weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(PairError::BadConfig("weights must be non-negative"));
        }
        let total: f64 = self.weights.iter().sum();
        if crate::math::abs(total - 1.0) > 1e-9 {
            return Err(PairError::BadConfig("weights must sum to 1"));
        }
        Ok(())
    }
}

/// Construction counters reported next to the emitted pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PairStats {
    pub emitted: usize,
    /// Draws or perturbations discarded because rejected == chosen.
    pub dropped_identical: usize,
    /// Draws discarded because sampling hit max_len without EOS.
    pub dropped_truncated: usize,
    /// Within-prompt duplicate (chosen, rejected) pairs removed.
    pub dropped_duplicate: usize,
    /// Prompts that produced no pair at all.
    pub prompts_skipped: usize,
    /// Applied edits across all sentences (perturbation only).
    pub total_edits: usize,
    pub sentences: usize,
}

impl PairStats {
    /// Mean applied edits per input sentence.
    pub fn mean_edits(&self) -> f64 {
        if self.sentences == 0 {
            0.0
        } else {
            self.total_edits as f64 / self.sentences as f64
        }
    }
}

fn check_ground_truth(
    index: usize,
    prompt: &[Token],
    gt: &[Token],
    eos: Token,
) -> Result<(), PairError> {
    if prompt.is_empty() {
        return Err(PairError::BadGroundTruth {
            index,
            reason: "prompt is empty",
        });
    }
    if gt.last() != Some(&eos) {
        return Err(PairError::BadGroundTruth {
            index,
            reason: "ground truth does not end with EOS",
        });
    }
    Ok(())
}

/// Model-sampled rejections: chosen ≡ ground truth, rejected drawn from
/// the policy at temperature 1.0, top-p 1.0. Deterministic given `seed`.
pub fn build_lppc(
    dataset: &[(Vec<Token>, Vec<Token>)],
    sft_policy: &impl Policy,
    seed: u64,
) -> Result<(Vec<PreferencePair>, PairStats), PairError> {
    let eos = sft_policy.vocab().eos();
    let mut pairs = Vec::new();
    let mut stats = PairStats {
        sentences: dataset.len(),
        ..PairStats::default()
    };

    for (i, (prompt, gt)) in dataset.iter().enumerate() {
        check_ground_truth(i, prompt, gt, eos)?;
        let cfg = SampleConfig {
            temperature: 1.0,
            top_p: 1.0,
            max_len: sample_cap(gt.len()),
        };
        let prompt_seed = derive_seed(seed, "lppc", i as u64);
        let mut emitted = false;
        for attempt in 0..LPPC_RETRY_BUDGET {
            let attempt_seed = derive_seed(prompt_seed, "attempt", attempt as u64);
            let drawn = sample(sft_policy, prompt, &cfg, attempt_seed)?;
            if drawn.truncated {
                stats.dropped_truncated += 1;
                continue;
            }
            if drawn.tokens == *gt {
                stats.dropped_identical += 1;
                continue;
            }
            pairs.push(PreferencePair {
                prompt: prompt.clone(),
                chosen: gt.clone(),
                rejected: drawn.tokens,
                source: PairSource::Lppc,
                meta: PairMeta::Lppc {
                    seed: attempt_seed,
                    attempt,
                    temperature: cfg.temperature,
                    top_p: cfg.top_p,
                },
            });
            emitted = true;
            break;
        }
        if !emitted {
            stats.prompts_skipped += 1;
        }
    }
    stats.emitted = pairs.len();
    Ok((pairs, stats))
}

/// Three independent candidates per prompt, each paired with the ground
/// truth; identical-to-chosen draws and duplicate pairs are dropped.
pub fn triple_candidates(
    dataset: &[(Vec<Token>, Vec<Token>)],
    sft_policy: &impl Policy,
    seed: u64,
) -> Result<(Vec<PreferencePair>, PairStats), PairError> {
    let eos = sft_policy.vocab().eos();
    let mut pairs = Vec::new();
    let mut stats = PairStats {
        sentences: dataset.len(),
        ..PairStats::default()
    };

    for (i, (prompt, gt)) in dataset.iter().enumerate() {
        check_ground_truth(i, prompt, gt, eos)?;
        let cfg = SampleConfig {
            temperature: 1.0,
            top_p: 1.0,
            max_len: sample_cap(gt.len()),
        };
        let prompt_seed = derive_seed(seed, "triple", i as u64);
        let mut seen: Vec<Vec<Token>> = Vec::new();
        let mut emitted = false;
        for candidate in 0..TRIPLE_CANDIDATES {
            let cand_seed = derive_seed(prompt_seed, "candidate", candidate as u64);
            let drawn = sample(sft_policy, prompt, &cfg, cand_seed)?;
            if drawn.truncated {
                stats.dropped_truncated += 1;
                continue;
            }
            if drawn.tokens == *gt {
                stats.dropped_identical += 1;
                continue;
            }
            if seen.contains(&drawn.tokens) {
                stats.dropped_duplicate += 1;
                continue;
            }
            seen.push(drawn.tokens.clone());
            pairs.push(PreferencePair {
                prompt: prompt.clone(),
                chosen: gt.clone(),
                rejected: drawn.tokens,
                source: PairSource::Lppc,
                meta: PairMeta::Lppc {
                    seed: cand_seed,
                    attempt: candidate,
                    temperature: cfg.temperature,
                    top_p: cfg.top_p,
                },
            });
            emitted = true;
        }
        if !emitted {
            stats.prompts_skipped += 1;
        }
    }
    stats.emitted = pairs.len();
    Ok((pairs, stats))
}

fn sample_cap(gt_len: usize) -> usize {
    4 * gt_len + 16
}

/// Perturbation-based rejections over a token vocabulary.
///
/// Per sentence, the edit count is the sum of independent per-position
/// Bernoulli(η) draws over the content tokens (mean η × length). Each edit
/// picks an operator by weight and applies it to the current sentence:
/// insertion places a random non-EOS token at a random slot, deletion
/// removes a random content token, repetition duplicates one in place. The
/// trailing EOS is never touched.
pub fn build_perturbed(
    dataset: &[(Vec<Token>, Vec<Token>)],
    vocab: &crate::policy::Vocab,
    config: &PerturbationConfig,
) -> Result<(Vec<PreferencePair>, PairStats), PairError> {
    config.validate()?;
    let eos = vocab.eos();
    let mut pairs = Vec::new();
    let mut stats = PairStats {
        sentences: dataset.len(),
        ..PairStats::default()
    };

    for (i, (prompt, gt)) in dataset.iter().enumerate() {
        check_ground_truth(i, prompt, gt, eos)?;
        if gt.len() < 2 {
            return Err(PairError::BadGroundTruth {
                index: i,
                reason: "sentence needs at least one content token",
            });
        }
        let sentence_seed = derive_seed(config.seed, "perturb", i as u64);
        let mut rng = SplitMix64::new(sentence_seed);
        let content = &gt[..gt.len() - 1];

        let mut edit_count = 0usize;
        for _ in 0..content.len() {
            if rng.bernoulli(config.eta) {
                edit_count += 1;
            }
        }

        let mut out: Vec<Token> = content.to_vec();
        let mut edits: Vec<Edit> = Vec::with_capacity(edit_count);
        for _ in 0..edit_count {
            let op = pick_operator(&config.weights, &mut rng);
            match op {
                EditOp::Insertion => {
                    let position = rng.next_below(out.len() + 1);
                    let token = rng.next_below(vocab.size() - 1) as Token;
                    out.insert(position, token);
                    edits.push(Edit {
                        op,
                        position,
                        token: Some(token),
                    });
                }
                EditOp::Deletion => {
                    if out.is_empty() {
                        continue;
                    }
                    let position = rng.next_below(out.len());
                    out.remove(position);
                    edits.push(Edit {
                        op,
                        position,
                        token: None,
                    });
                }
                EditOp::Repetition => {
                    if out.is_empty() {
                        continue;
                    }
                    let position = rng.next_below(out.len());
                    let token = out[position];
                    out.insert(position + 1, token);
                    edits.push(Edit {
                        op,
                        position,
                        token: None,
                    });
                }
            }
        }
        stats.total_edits += edits.len();

        out.push(eos);
        if out == *gt {
            stats.dropped_identical += 1;
            stats.prompts_skipped += 1;
            continue;
        }
        pairs.push(PreferencePair {
            prompt: prompt.clone(),
            chosen: gt.clone(),
            rejected: out,
            source: PairSource::Perturbation,
            meta: PairMeta::Perturbation {
                seed: sentence_seed,
                eta: config.eta,
                edits,
            },
        });
    }
    stats.emitted = pairs.len();
    Ok((pairs, stats))
}

fn pick_operator(weights: &[f64; 3], rng: &mut SplitMix64) -> EditOp {
    let u = rng.next_f64();
    if u < weights[0] {
        EditOp::Insertion
    } else if u < weights[0] + weights[1] {
        EditOp::Deletion
    } else {
        EditOp::Repetition
    }
}

/// Replays the recorded edits of a perturbation pair onto its chosen
/// sequence; used to verify provenance completeness.
pub fn replay_edits(chosen: &[Token], edits: &[Edit], eos: Token) -> Vec<Token> {
    let mut out: Vec<Token> = chosen[..chosen.len() - 1].to_vec();
    for e in edits {
        match e.op {
            EditOp::Insertion => out.insert(e.position, e.token.expect("insertion records token")),
            EditOp::Deletion => {
                out.remove(e.position);
            }
            EditOp::Repetition => {
                let t = out[e.position];
                out.insert(e.position + 1, t);
            }
        }
    }
    out.push(eos);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{TabularPolicy, Vocab};

    fn corpus(n: usize, len: usize, vocab: &Vocab, seed: u64) -> Vec<(Vec<Token>, Vec<Token>)> {
        let mut rng = SplitMix64::new(seed);
        let content = vocab.size() - 1;
        (0..n)
            .map(|_| {
                let prompt = alloc::vec![rng.next_below(content) as Token];
                let mut gt: Vec<Token> =
                    (0..len).map(|_| rng.next_below(content) as Token).collect();
                gt.push(vocab.eos());
                (prompt, gt)
            })
            .collect()
    }

    #[test]
    fn lppc_chosen_is_ground_truth() {
        let vocab = Vocab::with_size(5);
        let policy = TabularPolicy::new(vocab.clone(), 2);
        let data = corpus(20, 4, &vocab, 1);
        let (pairs, stats) = build_lppc(&data, &policy, 42).unwrap();
        assert!(pairs.len() <= 20);
        assert_eq!(stats.emitted, pairs.len());
        for (pair, (prompt, gt)) in pairs.iter().zip(&data) {
            assert_eq!(&pair.chosen, gt);
            assert_eq!(&pair.prompt, prompt);
            assert_ne!(pair.chosen, pair.rejected);
            assert_eq!(pair.rejected.last(), Some(&vocab.eos()));
        }
    }

    #[test]
    fn lppc_is_seed_deterministic() {
        let vocab = Vocab::with_size(5);
        let policy = TabularPolicy::new(vocab.clone(), 2);
        let data = corpus(10, 4, &vocab, 2);
        let (a, _) = build_lppc(&data, &policy, 7).unwrap();
        let (b, _) = build_lppc(&data, &policy, 7).unwrap();
        assert_eq!(a, b);
        let (c, _) = build_lppc(&data, &policy, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn lppc_degenerate_policy_emits_nothing() {
        // A policy that deterministically reproduces the ground truth:
        // every draw is identical to chosen, so dedupe removes all pairs.
        let vocab = Vocab::with_size(4);
        let mut policy = TabularPolicy::new(vocab.clone(), 2);
        let gt = alloc::vec![1u32, 2, 3];
        let prompt = alloc::vec![0u32];
        let mut seq = prompt.clone();
        for &t in &gt {
            let win = policy.window(&seq).to_vec();
            let mut row = alloc::vec![-80.0; 4];
            row[t as usize] = 80.0;
            policy.set_logits(&win, row);
            seq.push(t);
        }
        let (pairs, stats) = build_lppc(&[(prompt, gt)], &policy, 3).unwrap();
        assert!(pairs.is_empty());
        assert_eq!(stats.prompts_skipped, 1);
        assert_eq!(stats.dropped_identical, LPPC_RETRY_BUDGET as usize);
    }

    #[test]
    fn triple_emits_up_to_three_distinct() {
        let vocab = Vocab::with_size(6);
        let policy = TabularPolicy::new(vocab.clone(), 2);
        // Distinct prompts so pairs group back to their dataset entry.
        let mut data = corpus(8, 3, &vocab, 5);
        for (i, (prompt, _)) in data.iter_mut().enumerate() {
            *prompt = alloc::vec![(i % 5) as Token, (i / 5) as Token];
        }
        let (pairs, stats) = triple_candidates(&data, &policy, 11).unwrap();
        assert!(stats.emitted <= 3 * data.len());
        for (prompt, _) in &data {
            let mine: Vec<_> = pairs.iter().filter(|p| &p.prompt == prompt).collect();
            assert!(mine.len() <= 3);
            for (i, p) in mine.iter().enumerate() {
                for q in &mine[..i] {
                    assert_ne!(p.rejected, q.rejected, "duplicates must be dropped");
                }
            }
        }
    }

    #[test]
    fn perturb_repetition_example() {
        // Weights (0,0,1) force repetition; sentence [a,b,EOS] with one
        // edit at position 0 becomes [a,a,b,EOS].
        let out = replay_edits(
            &[0, 1, 3],
            &[Edit {
                op: EditOp::Repetition,
                position: 0,
                token: None,
            }],
            3,
        );
        assert_eq!(out, alloc::vec![0, 0, 1, 3]);
    }

    #[test]
    fn perturb_mean_edit_rate() {
        let vocab = Vocab::with_size(8);
        let data = corpus(2000, 10, &vocab, 9);
        let cfg = PerturbationConfig::new(0.1, 13);
        let (_, stats) = build_perturbed(&data, &vocab, &cfg).unwrap();
        let mean = stats.mean_edits();
        assert!((0.85..1.15).contains(&mean), "mean edits {mean}");
    }

    #[test]
    fn perturb_never_touches_eos_and_never_equals_chosen() {
        let vocab = Vocab::with_size(6);
        let data = corpus(300, 6, &vocab, 21);
        let cfg = PerturbationConfig::new(0.3, 22);
        let (pairs, _) = build_perturbed(&data, &vocab, &cfg).unwrap();
        for p in &pairs {
            assert_ne!(p.chosen, p.rejected);
            assert_eq!(p.rejected.last(), Some(&vocab.eos()));
            assert_eq!(
                p.rejected.iter().filter(|&&t| t == vocab.eos()).count(),
                1,
                "exactly one EOS, at the end"
            );
        }
    }

    #[test]
    fn perturb_meta_replays_to_rejected() {
        let vocab = Vocab::with_size(6);
        let data = corpus(100, 5, &vocab, 31);
        let cfg = PerturbationConfig::new(0.25, 32);
        let (pairs, _) = build_perturbed(&data, &vocab, &cfg).unwrap();
        assert!(!pairs.is_empty());
        for p in &pairs {
            let PairMeta::Perturbation { ref edits, .. } = p.meta else {
                panic!("wrong meta variant");
            };
            assert_eq!(replay_edits(&p.chosen, edits, vocab.eos()), p.rejected);
        }
    }

    #[test]
    fn perturb_zero_edsince_dropped() {
        // η so small that most sentences draw zero edits and are dropped.
        let vocab = Vocab::with_size(6);
        let data = corpus(50, 3, &vocab, 41);
        let cfg = PerturbationConfig::new(0.001, 42);
        let (pairs, stats) = build_perturbed(&data, &vocab, &cfg).unwrap();
        assert!(stats.dropped_identical > 0);
        assert_eq!(stats.emitted + stats.dropped_identical, 50);
        for p in &pairs {
            assert_ne!(p.chosen, p.rejected);
        }
    }

    #[test]
    fn perturb_config_validation() {
        let vocab = Vocab::with_size(4);
        let data = corpus(1, 3, &vocab, 1);
        for eta in [0.0, -0.5, 1.5] {
            let cfg = PerturbationConfig::new(eta, 1);
            assert!(build_perturbed(&data, &vocab, &cfg).is_err(), "eta={eta}");
        }
        let cfg = PerturbationConfig {
            weights: [0.5, 0.2, 0.2],
            ..PerturbationConfig::new(0.1, 1)
        };
        assert!(matches!(
            build_perturbed(&data, &vocab, &cfg),
            Err(PairError::BadConfig(_))
        ));
    }

    #[test]
    fn malformed_ground_truth_is_rejected() {
        let vocab = Vocab::with_size(4);
        let policy = TabularPolicy::new(vocab.clone(), 1);
        // Missing EOS.
        let bad = alloc::vec![(alloc::vec![0u32], alloc::vec![1u32, 2])];
        assert!(build_lppc(&bad, &policy, 1).is_err());
        // Empty prompt.
        let bad = alloc::vec![(alloc::vec![], alloc::vec![1u32, 3])];
        assert!(build_lppc(&bad, &policy, 1).is_err());
    }
}

//! End-to-end preference-optimization training.
//!
//! [`train`] binds a differentiable policy, a frozen reference policy, a
//! pair dataset, and one loss from the zoo: per batch it computes the
//! length-normalized margins from sequence log-probabilities on the
//! autodiff tape, evaluates the configured loss, and applies plain
//! gradient descent. The reference policy is only ever read.
//!
//! Diagnostics per epoch ([`EpochMetrics`]) track the mean margins, mean
//! loss, preference accuracy (fraction of pairs with x1 > x2), and the
//! drift of the mean normalized chosen log-probability against its value
//! before training. A per-step [`TrajectoryTrace`] of full-dataset margin
//! means is recorded alongside, which is what exposes the regime where
//! both margins sink together under DPO.
//!
//! Shuffling is seeded per epoch from one root seed, and the visit order
//! is digested so that runs differing only in the loss can prove they saw
//! identical data.

use alloc::vec::Vec;

use crate::dynamics::{TracePoint, TrajectoryTrace};
use crate::losses::{self, LossKind, LossParams, MarginPair, SteWeighting};
use crate::pairs::PreferencePair;
use crate::policy::{
    param_gradients, sequence_logprob, sequence_logprob_vars, DiffPolicy, ParamBinding, Policy,
};
use crate::rng::{derive_seed, fnv1a, SplitMix64};
use crate::Tape;

/// Errors from training.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    BadConfig(&'static str),
    #[error("no training pairs")]
    EmptyDataset,
    #[error("pair {index} is invalid: {reason}")]
    BadPair { index: usize, reason: &'static str },
    #[error("policy and reference vocabularies differ")]
    VocabMismatch,
    /// Loss went non-finite; reports the optimizer step.
    #[error("non-finite loss at step {step}")]
    NonFinite { step: usize },
    #[error(transparent)]
    Policy(#[from] crate::policy::PolicyError),
    #[error(transparent)]
    Loss(#[from] losses::LossError),
}

/// Training controls.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub loss: LossKind,
    pub params: LossParams,
    pub ste_weighting: SteWeighting,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Epoch interval between metric evaluations (the final epoch is
    /// always evaluated).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    /// LPO defaults with a toy-scale learning rate.
    fn default() -> Self {
        Self {
            loss: LossKind::Lpo,
            params: LossParams::default(),
            ste_weighting: SteWeighting::default(),
            lr: 1e-2,
            batch_size: 4,
            epochs: 5,
            seed: 42,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.params.validate()?;
        if self.lr < 0.0 || !self.lr.is_finite() {
            return Err(TrainError::BadConfig("lr must be finite and >= 0"));
        }
        if self.batch_size == 0 {
            return Err(TrainError::BadConfig("batch_size must be >= 1"));
        }
        if self.epochs == 0 {
            return Err(TrainError::BadConfig("epochs must be >= 1"));
        }
        if self.eval_every == 0 {
            return Err(TrainError::BadConfig("eval_every must be >= 1"));
        }
        Ok(())
    }
}

/// Per-epoch diagnostics. Epoch 0 is the pre-training baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_x1: f64,
    pub mean_x2: f64,
    pub mean_loss: f64,
    /// Fraction of pairs with x1 > x2.
    pub pref_accuracy: f64,
    /// Mean normalized chosen log-probability minus its epoch-0 value.
    pub chosen_logprob_delta: f64,
}

/// Everything [`train`] produces besides the updated policy.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub metrics: Vec<EpochMetrics>,
    /// Full-dataset margin means per optimizer step.
    pub trace: TrajectoryTrace,
    /// FNV-1a digest of the shuffled visit order across all epochs.
    pub data_order_digest: u64,
    pub steps: usize,
}

/// Dataset-level means used both for metrics rows and trace points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetEval {
    pub mean_x1: f64,
    pub mean_x2: f64,
    pub mean_loss: f64,
    pub pref_accuracy: f64,
    pub mean_chosen_logprob: f64,
}

/// Margins of one pair under (policy, reference), by value.
pub fn pair_margins(
    policy: &impl Policy,
    reference: &impl Policy,
    pair: &PreferencePair,
) -> Result<MarginPair, TrainError> {
    let (pw, lw) = sequence_logprob(policy, &pair.prompt, &pair.chosen)?;
    let (rw, _) = sequence_logprob(reference, &pair.prompt, &pair.chosen)?;
    let (pl, ll) = sequence_logprob(policy, &pair.prompt, &pair.rejected)?;
    let (rl, _) = sequence_logprob(reference, &pair.prompt, &pair.rejected)?;
    Ok(losses::length_normalized_margins(pw, rw, lw, pl, rl, ll)?)
}

/// Evaluates dataset-level means under the current policy.
pub fn evaluate(
    policy: &impl Policy,
    reference: &impl Policy,
    pairs: &[PreferencePair],
    loss: LossKind,
    params: &LossParams,
    weighting: SteWeighting,
) -> Result<DatasetEval, TrainError> {
    let n = pairs.len() as f64;
    let mut sum_x1 = 0.0;
    let mut sum_x2 = 0.0;
    let mut sum_loss = 0.0;
    let mut correct = 0usize;
    let mut sum_chosen = 0.0;
    for pair in pairs {
        let m = pair_margins(policy, reference, pair)?;
        sum_x1 += m.x1;
        sum_x2 += m.x2;
        sum_loss += losses::loss_weighted(loss, m, params, weighting).total;
        if m.x1 > m.x2 {
            correct += 1;
        }
        let (pw, lw) = sequence_logprob(policy, &pair.prompt, &pair.chosen)?;
        sum_chosen += pw / lw as f64;
    }
    Ok(DatasetEval {
        mean_x1: sum_x1 / n,
        mean_x2: sum_x2 / n,
        mean_loss: sum_loss / n,
        pref_accuracy: correct as f64 / n,
        mean_chosen_logprob: sum_chosen / n,
    })
}

/// Trains `policy` against the frozen `reference` on `pairs`.
///
/// Deterministic given the config: the shuffle order is derived from
/// (seed, epoch) only.
pub fn train<P: DiffPolicy>(
    policy: &mut P,
    reference: &P,
    pairs: &[PreferencePair],
    cfg: &TrainConfig,
) -> Result<TrainResult, TrainError> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if policy.vocab() != reference.vocab() {
        return Err(TrainError::VocabMismatch);
    }
    validate_pairs(policy, pairs)?;

    let sequences: Vec<(&[crate::policy::Token], &[crate::policy::Token])> = pairs
        .iter()
        .flat_map(|p| {
            [
                (p.prompt.as_slice(), p.chosen.as_slice()),
                (p.prompt.as_slice(), p.rejected.as_slice()),
            ]
        })
        .collect();
    policy.prepare(&sequences);

    let baseline = evaluate(
        policy,
        reference,
        pairs,
        cfg.loss,
        &cfg.params,
        cfg.ste_weighting,
    )?;
    let mut metrics = Vec::with_capacity(cfg.epochs + 1);
    metrics.push(EpochMetrics {
        epoch: 0,
        mean_x1: baseline.mean_x1,
        mean_x2: baseline.mean_x2,
        mean_loss: baseline.mean_loss,
        pref_accuracy: baseline.pref_accuracy,
        chosen_logprob_delta: 0.0,
    });

    let mut trace_points = Vec::new();
    trace_points.push(TracePoint {
        step: 0,
        x1: baseline.mean_x1,
        x2: baseline.mean_x2,
        loss: baseline.mean_loss,
    });

    let mut digest: u64 = fnv1a(b"data-order");
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut step = 0usize;

    for epoch in 1..=cfg.epochs {
        let mut rng = SplitMix64::new(derive_seed(cfg.seed, "shuffle", epoch as u64));
        for (i, slot) in order.iter_mut().enumerate() {
            *slot = i;
        }
        rng.shuffle(&mut order);
        for &i in &order {
            digest = digest.wrapping_mul(0x0000_0100_0000_01B3) ^ (i as u64);
        }

        for batch in order.chunks(cfg.batch_size) {
            step += 1;
            let tape = Tape::new();
            let mut binding = ParamBinding::new(&tape);
            let mut per_pair = Vec::with_capacity(batch.len());
            for &i in batch {
                let pair = &pairs[i];
                let (pw_var, lw) =
                    sequence_logprob_vars(policy, &mut binding, &pair.prompt, &pair.chosen)?;
                let (pl_var, ll) =
                    sequence_logprob_vars(policy, &mut binding, &pair.prompt, &pair.rejected)?;
                let (rw, _) = sequence_logprob(reference, &pair.prompt, &pair.chosen)?;
                let (rl, _) = sequence_logprob(reference, &pair.prompt, &pair.rejected)?;
                let x1 = pw_var.sub_const(rw).mul_const(1.0 / lw as f64);
                let x2 = pl_var.sub_const(rl).mul_const(1.0 / ll as f64);
                per_pair.push(losses::loss_graph(
                    cfg.loss,
                    &x1,
                    &x2,
                    &cfg.params,
                    cfg.ste_weighting,
                ));
            }
            let batch_loss = crate::autodiff::sum(&per_pair).mul_const(1.0 / batch.len() as f64);
            if !batch_loss.value().is_finite() {
                return Err(TrainError::NonFinite { step });
            }
            let grads = param_gradients(&binding, &batch_loss);
            policy.apply_grads(&grads, cfg.lr);

            let eval = evaluate(
                policy,
                reference,
                pairs,
                cfg.loss,
                &cfg.params,
                cfg.ste_weighting,
            )?;
            trace_points.push(TracePoint {
                step,
                x1: eval.mean_x1,
                x2: eval.mean_x2,
                loss: eval.mean_loss,
            });
        }

        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let eval = evaluate(
                policy,
                reference,
                pairs,
                cfg.loss,
                &cfg.params,
                cfg.ste_weighting,
            )?;
            metrics.push(EpochMetrics {
                epoch,
                mean_x1: eval.mean_x1,
                mean_x2: eval.mean_x2,
                mean_loss: eval.mean_loss,
                pref_accuracy: eval.pref_accuracy,
                chosen_logprob_delta: eval.mean_chosen_logprob - baseline.mean_chosen_logprob,
            });
        }
    }

    Ok(TrainResult {
        metrics,
        trace: TrajectoryTrace::from_points(trace_points),
        data_order_digest: digest,
        steps: step,
    })
}

fn validate_pairs<P: Policy>(policy: &P, pairs: &[PreferencePair]) -> Result<(), TrainError> {
    let vocab = policy.vocab();
    for (index, pair) in pairs.iter().enumerate() {
        if pair.prompt.is_empty() {
            return Err(TrainError::BadPair {
                index,
                reason: "empty prompt",
            });
        }
        if pair.chosen == pair.rejected {
            return Err(TrainError::BadPair {
                index,
                reason: "chosen equals rejected",
            });
        }
        for tokens in [&pair.prompt, &pair.chosen, &pair.rejected] {
            if tokens.iter().any(|&t| !vocab.contains(t)) {
                return Err(TrainError::BadPair {
                    index,
                    reason: "token outside vocabulary",
                });
            }
        }
        for response in [&pair.chosen, &pair.rejected] {
            if response.last() != Some(&vocab.eos()) {
                return Err(TrainError::BadPair {
                    index,
                    reason: "response does not end with EOS",
                });
            }
        }
    }
    Ok(())
}

/// Trains one clone of `policy` per epoch budget in `epoch_counts`,
/// sharing data and seed.
pub fn epoch_sweep<P: DiffPolicy + Clone>(
    policy: &P,
    reference: &P,
    pairs: &[PreferencePair],
    base: &TrainConfig,
    epoch_counts: &[usize],
) -> Result<Vec<(usize, TrainResult)>, TrainError> {
    let mut out = Vec::with_capacity(epoch_counts.len());
    for &epochs in epoch_counts {
        let cfg = TrainConfig {
            epochs,
            ..base.clone()
        };
        let mut p = policy.clone();
        let result = train(&mut p, reference, pairs, &cfg)?;
        out.push((epochs, result));
    }
    Ok(out)
}

/// Trains one clone of `policy` per r2 value, sharing data and seed.
pub fn r2_train_sweep<P: DiffPolicy + Clone>(
    policy: &P,
    reference: &P,
    pairs: &[PreferencePair],
    base: &TrainConfig,
    r2_values: &[f64],
) -> Result<Vec<(f64, TrainResult)>, TrainError> {
    let mut out = Vec::with_capacity(r2_values.len());
    for &r2 in r2_values {
        let cfg = TrainConfig {
            params: base.params.with_r2(r2),
            ..base.clone()
        };
        let mut p = policy.clone();
        let result = train(&mut p, reference, pairs, &cfg)?;
        out.push((r2, result));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pairs::{PairMeta, PairSource};
    use crate::policy::{TabularPolicy, Token, Vocab};

    fn mk_pair(prompt: &[Token], chosen: &[Token], rejected: &[Token]) -> PreferencePair {
        PreferencePair {
            prompt: prompt.to_vec(),
            chosen: chosen.to_vec(),
            rejected: rejected.to_vec(),
            source: PairSource::Lppc,
            meta: PairMeta::Lppc {
                seed: 0,
                attempt: 0,
                temperature: 1.0,
                top_p: 1.0,
            },
        }
    }

    fn fixture() -> (TabularPolicy, TabularPolicy, Vec<PreferencePair>) {
        let vocab = Vocab::with_size(5);
        let eos = vocab.eos();
        let mut policy = TabularPolicy::new(vocab, 2);
        let pairs = alloc::vec![
            mk_pair(&[0], &[1, 2, eos], &[1, 1, 1, eos]),
            mk_pair(&[2], &[0, eos], &[3, 3, eos]),
            mk_pair(&[1], &[2, 0, eos], &[2, 2, eos]),
        ];
        let seqs: Vec<(&[Token], &[Token])> = pairs
            .iter()
            .flat_map(|p| {
                [
                    (p.prompt.as_slice(), p.chosen.as_slice()),
                    (p.prompt.as_slice(), p.rejected.as_slice()),
                ]
            })
            .collect();
        policy.prepare(&seqs);
        let mut rng = SplitMix64::new(derive_seed(5, "trainer-fixture", 0));
        policy.randomize(&mut rng, 0.7);
        let reference = policy.clone();
        (policy, reference, pairs)
    }

    #[test]
    fn zero_lr_changes_nothing() {
        let (mut policy, reference, pairs) = fixture();
        let before = policy.clone();
        let cfg = TrainConfig {
            lr: 0.0,
            epochs: 3,
            ..TrainConfig::default()
        };
        let result = train(&mut policy, &reference, &pairs, &cfg).unwrap();
        assert_eq!(policy, before);
        for w in result.metrics.windows(2) {
            assert_eq!(w[0].mean_x1, w[1].mean_x1);
            assert_eq!(w[0].pref_accuracy, w[1].pref_accuracy);
        }
    }

    #[test]
    fn reference_is_never_touched() {
        let (mut policy, reference, pairs) = fixture();
        let ref_before = reference.clone();
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        train(&mut policy, &reference, &pairs, &cfg).unwrap();
        assert_eq!(reference, ref_before);
        assert_ne!(policy, ref_before, "policy must actually move");
    }

    #[test]
    fn determinism_and_digest() {
        let (policy0, reference, pairs) = fixture();
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let mut a = policy0.clone();
        let ra = train(&mut a, &reference, &pairs, &cfg).unwrap();
        let mut b = policy0.clone();
        let rb = train(&mut b, &reference, &pairs, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);

        // Swapping the loss keeps the data order byte-identical.
        let mut c = policy0.clone();
        let rc = train(
            &mut c,
            &reference,
            &pairs,
            &TrainConfig {
                loss: LossKind::Dpo,
                params: LossParams::dpo_baseline(),
                ..cfg.clone()
            },
        )
        .unwrap();
        assert_eq!(ra.data_order_digest, rc.data_order_digest);

        // A different seed shuffles differently.
        let mut d = policy0.clone();
        let rd = train(
            &mut d,
            &reference,
            &pairs,
            &TrainConfig { seed: 777, ..cfg },
        )
        .unwrap();
        assert_ne!(ra.data_order_digest, rd.data_order_digest);
    }

    #[test]
    fn margins_start_at_zero_against_identical_reference() {
        let (policy, reference, pairs) = fixture();
        let eval = evaluate(
            &policy,
            &reference,
            &pairs,
            LossKind::Lpo,
            &LossParams::default(),
            SteWeighting::Quadratic,
        )
        .unwrap();
        assert_eq!(eval.mean_x1, 0.0);
        assert_eq!(eval.mean_x2, 0.0);
    }

    #[test]
    fn lpo_training_raises_margin_gap() {
        let (mut policy, reference, pairs) = fixture();
        let cfg = TrainConfig {
            epochs: 4,
            lr: 0.05,
            ..TrainConfig::default()
        };
        let result = train(&mut policy, &reference, &pairs, &cfg).unwrap();
        let last = result.metrics.last().unwrap();
        assert!(last.mean_x1 > last.mean_x2, "gap must open");
        assert!(last.pref_accuracy > 0.5);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (mut policy, reference, pairs) = fixture();
        let cfg = TrainConfig::default();
        assert!(matches!(
            train(&mut policy, &reference, &[], &cfg),
            Err(TrainError::EmptyDataset)
        ));

        let other_ref = TabularPolicy::new(Vocab::with_size(7), 2);
        assert!(matches!(
            train(&mut policy, &other_ref, &pairs, &cfg),
            Err(TrainError::VocabMismatch)
        ));

        let mut bad = pairs.clone();
        bad[0].rejected = bad[0].chosen.clone();
        assert!(matches!(
            train(&mut policy, &reference, &bad, &cfg),
            Err(TrainError::BadPair { index: 0, .. })
        ));

        let mut bad = pairs.clone();
        bad[1].chosen = alloc::vec![1, 2];
        assert!(matches!(
            train(&mut policy, &reference, &bad, &cfg),
            Err(TrainError::BadPair { index: 1, .. })
        ));

        let bad_cfg = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(train(&mut policy, &reference, &pairs, &bad_cfg).is_err());
    }

    #[test]
    fn r2_sweep_shares_data_and_orders_rejected_margin() {
        let (policy, reference, pairs) = fixture();
        let base = TrainConfig {
            loss: LossKind::LpoSte,
            epochs: 3,
            lr: 0.05,
            ..TrainConfig::default()
        };
        let results =
            r2_train_sweep(&policy, &reference, &pairs, &base, &[0.1, 0.2, 1.0, 2.0]).unwrap();
        let digests: Vec<u64> = results.iter().map(|(_, r)| r.data_order_digest).collect();
        assert!(digests.windows(2).all(|w| w[0] == w[1]));
        let terminal_x2: Vec<f64> = results
            .iter()
            .map(|(_, r)| r.metrics.last().unwrap().mean_x2)
            .collect();
        assert!(
            terminal_x2.windows(2).all(|w| w[1] < w[0]),
            "terminal mean_x2 {terminal_x2:?} must decrease with r2"
        );
    }

    #[test]
    fn lpo_caps_gap_where_dpo_exceeds_it() {
        // Two pairs with disjoint token support so the gaps grow cleanly.
        let vocab = Vocab::with_size(7);
        let eos = vocab.eos();
        let pairs = alloc::vec![
            mk_pair(&[0], &[1, 1, eos], &[2, 2, eos]),
            mk_pair(&[3], &[4, 4, eos], &[5, 5, eos]),
        ];
        let mut policy = TabularPolicy::new(vocab, 2);
        let seqs: Vec<(&[Token], &[Token])> = pairs
            .iter()
            .flat_map(|p| {
                [
                    (p.prompt.as_slice(), p.chosen.as_slice()),
                    (p.prompt.as_slice(), p.rejected.as_slice()),
                ]
            })
            .collect();
        policy.prepare(&seqs);
        let reference = policy.clone();

        // lr small enough that LPO's per-step kick stays inside the 0.1
        // tolerance band around the offset; epochs long enough that DPO's
        // unbounded gap clears it.
        let base = TrainConfig {
            lr: 0.2,
            batch_size: 2,
            epochs: 600,
            eval_every: 600,
            params: LossParams {
                beta: 0.2,
                lambda: 10.0,
                r1: 1.0,
                r2: 1.0,
            },
            ..TrainConfig::default()
        };
        let offset = base.params.offset();

        let mut lpo = policy.clone();
        let lr = train(
            &mut lpo,
            &reference,
            &pairs,
            &TrainConfig {
                loss: LossKind::Lpo,
                ..base.clone()
            },
        )
        .unwrap();
        let last = lr.metrics.last().unwrap();
        let lpo_gap = last.mean_x1 - last.mean_x2;
        assert!(
            lpo_gap <= offset + 0.1,
            "LPO gap {lpo_gap} exceeds {} + 0.1",
            offset
        );

        let mut dpo = policy.clone();
        let dr = train(
            &mut dpo,
            &reference,
            &pairs,
            &TrainConfig {
                loss: LossKind::Dpo,
                ..base
            },
        )
        .unwrap();
        let last = dr.metrics.last().unwrap();
        let dpo_gap = last.mean_x1 - last.mean_x2;
        assert!(
            dpo_gap > offset + 0.1,
            "DPO gap {dpo_gap} stayed within the LPO bound"
        );
    }

    #[test]
    fn epoch_sweep_is_prefix_consistent() {
        let (policy, reference, pairs) = fixture();
        let base = TrainConfig {
            epochs: 4,
            ..TrainConfig::default()
        };
        let results = epoch_sweep(&policy, &reference, &pairs, &base, &[2, 4]).unwrap();
        let (_, short) = &results[0];
        let (_, long) = &results[1];
        // Same seed ⇒ the longer run's early epochs replay the short run.
        assert_eq!(short.metrics[1], long.metrics[1]);
        assert_eq!(short.metrics[2], long.metrics[2]);
    }
}

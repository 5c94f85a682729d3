//! Single-hidden-layer neural language model.

use alloc::vec;
use alloc::vec::Vec;

use super::{ParamBinding, ParamId, Policy, Token, Vocab};
use crate::autodiff::{sum, Var};
use crate::math;
use crate::rng::SplitMix64;

/// A minimal neural next-token model conditioned on the previous token:
///
/// logits = Pᵀ · tanh(W · E\[prev\])
///
/// with embedding table E (V × d), hidden weights W (d × d), and output
/// projection P (d × V), all row-major. At the very start of a sequence
/// the EOS embedding stands in for the missing previous token.
///
/// Parameter ids are flat offsets into [E | W | P].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpPolicy {
    vocab: Vocab,
    dim: usize,
    embed: Vec<f64>,
    hidden: Vec<f64>,
    out: Vec<f64>,
}

impl MlpPolicy {
    /// Seeded initialization with uniform weights in [−1/√d, 1/√d).
    pub fn new(vocab: Vocab, dim: usize, seed: u64) -> Self {
        assert!(dim >= 1, "hidden dim must be >= 1");
        let v = vocab.size();
        let mut rng = SplitMix64::new(seed);
        let scale = 1.0 / libm::sqrt(dim as f64);
        let mut init =
            |n: usize| -> Vec<f64> { (0..n).map(|_| rng.next_range(-scale, scale)).collect() };
        Self {
            vocab,
            dim,
            embed: init(v * dim),
            hidden: init(dim * dim),
            out: init(dim * v),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// (embedding, hidden, output) parameter blocks, row-major.
    pub fn parts(&self) -> (&[f64], &[f64], &[f64]) {
        (&self.embed, &self.hidden, &self.out)
    }

    /// Rebuilds a policy from its parameter blocks.
    pub fn from_parts(
        vocab: Vocab,
        dim: usize,
        embed: Vec<f64>,
        hidden: Vec<f64>,
        out: Vec<f64>,
    ) -> Self {
        let v = vocab.size();
        assert_eq!(embed.len(), v * dim, "embedding block size");
        assert_eq!(hidden.len(), dim * dim, "hidden block size");
        assert_eq!(out.len(), dim * v, "output block size");
        Self {
            vocab,
            dim,
            embed,
            hidden,
            out,
        }
    }

    fn prev_token(&self, ctx: &[Token]) -> usize {
        ctx.last()
            .map(|&t| t as usize)
            .unwrap_or(self.vocab.eos() as usize)
    }
}

impl Policy for MlpPolicy {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn next_logits(&self, ctx: &[Token]) -> Vec<f64> {
        let d = self.dim;
        let v = self.vocab.size();
        let e = &self.embed[self.prev_token(ctx) * d..][..d];
        let mut h = vec![0.0; d];
        for (i, hi) in h.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, ej) in e.iter().enumerate() {
                acc += self.hidden[i * d + j] * ej;
            }
            *hi = math::tanh(acc);
        }
        let mut logits = vec![0.0; v];
        for (i, &hi) in h.iter().enumerate() {
            for (t, logit) in logits.iter_mut().enumerate() {
                *logit += self.out[i * v + t] * hi;
            }
        }
        logits
    }
}

impl super::DiffPolicy for MlpPolicy {
    fn next_logits_vars(&self, binding: &mut ParamBinding, ctx: &[Token]) -> Vec<Var> {
        let d = self.dim;
        let v = self.vocab.size();
        let prev = self.prev_token(ctx);
        let e_base = prev * d;
        let w_base = self.embed.len();
        let p_base = w_base + self.hidden.len();

        let e: Vec<Var> = (0..d)
            .map(|j| binding.var((e_base + j) as ParamId, self.embed[e_base + j]))
            .collect();
        let h: Vec<Var> = (0..d)
            .map(|i| {
                let terms: Vec<Var> = (0..d)
                    .map(|j| {
                        let w =
                            binding.var((w_base + i * d + j) as ParamId, self.hidden[i * d + j]);
                        &w * &e[j]
                    })
                    .collect();
                sum(&terms).tanh()
            })
            .collect();
        (0..v)
            .map(|t| {
                let terms: Vec<Var> = (0..d)
                    .map(|i| {
                        let p = binding.var((p_base + i * v + t) as ParamId, self.out[i * v + t]);
                        &p * &h[i]
                    })
                    .collect();
                sum(&terms)
            })
            .collect()
    }

    fn param_value(&self, id: ParamId) -> f64 {
        let id = id as usize;
        let w_base = self.embed.len();
        let p_base = w_base + self.hidden.len();
        if id < w_base {
            self.embed[id]
        } else if id < p_base {
            self.hidden[id - w_base]
        } else {
            self.out[id - p_base]
        }
    }

    fn param_add(&mut self, id: ParamId, delta: f64) {
        let id = id as usize;
        let w_base = self.embed.len();
        let p_base = w_base + self.hidden.len();
        if id < w_base {
            self.embed[id] += delta;
        } else if id < p_base {
            self.hidden[id - w_base] += delta;
        } else {
            self.out[id - p_base] += delta;
        }
    }

    fn param_ids(&self) -> Vec<ParamId> {
        (0..(self.embed.len() + self.hidden.len() + self.out.len()) as ParamId).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{sequence_logprob, sequence_logprob_vars, DiffPolicy, ParamBinding};
    use crate::Tape;

    fn policy() -> MlpPolicy {
        MlpPolicy::new(Vocab::with_size(5), 4, 99)
    }

    #[test]
    fn distribution_normalizes() {
        let p = policy();
        for ctx in [&[0u32][..], &[1, 2], &[]] {
            let logits = p.next_logits(ctx);
            let mut m = f64::NEG_INFINITY;
            for &l in &logits {
                if l > m {
                    m = l;
                }
            }
            let z: f64 = logits.iter().map(|&l| math::exp(l - m)).sum();
            let total: f64 = logits.iter().map(|&l| math::exp(l - m) / z).sum();
            assert!((total - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn graph_forward_matches_plain_forward() {
        let p = policy();
        let prompt = [0u32, 3];
        let response = [1u32, 2, 4];
        let (plain, _) = sequence_logprob(&p, &prompt, &response).unwrap();
        let tape = Tape::new();
        let mut binding = ParamBinding::new(&tape);
        let (var, _) = sequence_logprob_vars(&p, &mut binding, &prompt, &response).unwrap();
        assert!((plain - var.value()).abs() < 1e-12);
    }

    #[test]
    fn param_blocks_roundtrip() {
        let p = policy();
        let (e, w, o) = p.parts();
        let rebuilt = MlpPolicy::from_parts(
            p.vocab().clone(),
            p.dim(),
            e.to_vec(),
            w.to_vec(),
            o.to_vec(),
        );
        assert_eq!(p, rebuilt);
    }

    #[test]
    fn param_id_addressing_covers_all_blocks() {
        let mut p = policy();
        let ids = p.param_ids();
        assert_eq!(ids.len(), 5 * 4 + 4 * 4 + 4 * 5);
        let before = p.param_value(ids[0]);
        p.param_add(ids[0], 0.125);
        assert_eq!(p.param_value(ids[0]), before + 0.125);
        // Last id lands in the output block.
        let last = *ids.last().unwrap();
        let before = p.param_value(last);
        p.param_add(last, -0.25);
        assert_eq!(p.param_value(last), before - 0.25);
    }

    #[test]
    fn empty_context_uses_eos_embedding() {
        let p = policy();
        let eos_ctx = [p.vocab().eos()];
        assert_eq!(p.next_logits(&[]), p.next_logits(&eos_ctx));
    }
}

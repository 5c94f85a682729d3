//! Tabular softmax policy over k-token context windows.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use super::{ParamBinding, ParamId, Policy, Token, Vocab};
use crate::autodiff::Var;
use crate::rng::SplitMix64;

/// A k-th order tabular language model: one logit row per observed window
/// of up to `order` preceding tokens.
///
/// Rows materialize on demand ([`ensure_contexts`](Self::ensure_contexts))
/// and start at zero, i.e. a uniform next-token distribution; contexts
/// without a row behave as uniform without allocating. Because rows are
/// shared by every sequence position that reaches the same window, the
/// chosen and rejected responses of a pair can couple through common
/// parameters, which is exactly the regime where preference training can
/// drag both margins down.
///
/// Parameter ids encode (row index, column): `id = row << 32 | column`.
#[derive(Debug, Clone)]
pub struct TabularPolicy {
    vocab: Vocab,
    order: usize,
    contexts: BTreeMap<Vec<Token>, u32>,
    rows: Vec<Vec<f64>>,
}

/// Policies compare by their window → logits mapping; the internal row
/// numbering (which follows materialization order) is not observable.
impl PartialEq for TabularPolicy {
    fn eq(&self, other: &Self) -> bool {
        self.vocab == other.vocab
            && self.order == other.order
            && self.contexts.len() == other.contexts.len()
            && self.rows().eq(other.rows())
    }
}

impl TabularPolicy {
    /// An empty (uniform) policy with the given context order.
    pub fn new(vocab: Vocab, order: usize) -> Self {
        Self {
            vocab,
            order,
            contexts: BTreeMap::new(),
            rows: Vec::new(),
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// The window key for a full preceding sequence: its last `order`
    /// tokens (shorter near the start of a sequence).
    pub fn window<'a>(&self, ctx: &'a [Token]) -> &'a [Token] {
        let start = ctx.len().saturating_sub(self.order);
        &ctx[start..]
    }

    /// Row index for a window, materializing a zero row if absent.
    fn row_for(&mut self, window: &[Token]) -> u32 {
        if let Some(&r) = self.contexts.get(window) {
            return r;
        }
        let r = self.rows.len() as u32;
        self.rows.push(vec![0.0; self.vocab.size()]);
        self.contexts.insert(window.to_vec(), r);
        r
    }

    /// Materializes every window touched when scoring `response` after
    /// `prompt`, so graph building later finds trainable rows.
    pub fn ensure_contexts(&mut self, prompt: &[Token], response: &[Token]) {
        let mut seq = prompt.to_vec();
        for &t in response {
            let w = {
                let win = self.window(&seq);
                win.to_vec()
            };
            self.row_for(&w);
            seq.push(t);
        }
    }

    /// Materializes every window of length 0..=order over the vocabulary.
    /// Intended for small fixtures and tests.
    pub fn materialize_all_contexts(&mut self) {
        let v = self.vocab.size();
        let mut keys: Vec<Vec<Token>> = vec![Vec::new()];
        self.row_for(&[]);
        for _ in 0..self.order {
            let mut next = Vec::with_capacity(keys.len() * v);
            for key in &keys {
                for t in 0..v as Token {
                    let mut k = key.clone();
                    k.push(t);
                    self.row_for(&k);
                    next.push(k);
                }
            }
            keys = next;
        }
    }

    /// Fills every materialized row with uniform logits in [−scale, scale).
    pub fn randomize(&mut self, rng: &mut SplitMix64, scale: f64) {
        for row in &mut self.rows {
            for logit in row.iter_mut() {
                *logit = rng.next_range(-scale, scale);
            }
        }
    }

    /// Sets the logits row for a window (materializing it).
    pub fn set_logits(&mut self, window: &[Token], logits: Vec<f64>) {
        assert_eq!(
            logits.len(),
            self.vocab.size(),
            "row width must match vocab"
        );
        let r = self.row_for(window);
        self.rows[r as usize] = logits;
    }

    /// Materialized rows in deterministic (window-sorted) order.
    pub fn rows(&self) -> impl Iterator<Item = (&[Token], &[f64])> {
        self.contexts
            .iter()
            .map(|(k, &r)| (k.as_slice(), self.rows[r as usize].as_slice()))
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Rebuilds a policy from (window, logits row) pairs.
    pub fn from_rows(
        vocab: Vocab,
        order: usize,
        rows: impl IntoIterator<Item = (Vec<Token>, Vec<f64>)>,
    ) -> Self {
        let mut policy = Self::new(vocab, order);
        for (window, logits) in rows {
            policy.set_logits(&window, logits);
        }
        policy
    }
}

impl Policy for TabularPolicy {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn next_logits(&self, ctx: &[Token]) -> Vec<f64> {
        let window = self.window(ctx);
        match self.contexts.get(window) {
            Some(&r) => self.rows[r as usize].clone(),
            None => vec![0.0; self.vocab.size()],
        }
    }
}

impl super::DiffPolicy for TabularPolicy {
    fn next_logits_vars(&self, binding: &mut ParamBinding, ctx: &[Token]) -> Vec<Var> {
        let window = self.window(ctx);
        match self.contexts.get(window) {
            Some(&r) => {
                let row = &self.rows[r as usize];
                row.iter()
                    .enumerate()
                    .map(|(c, &v)| binding.var(encode(r, c as u32), v))
                    .collect()
            }
            // An unmaterialized window stays a constant uniform row; call
            // `prepare`/`ensure_contexts` first to make it trainable.
            None => (0..self.vocab.size())
                .map(|_| binding.tape().constant(0.0))
                .collect(),
        }
    }

    fn param_value(&self, id: ParamId) -> f64 {
        let (r, c) = decode(id);
        self.rows[r as usize][c as usize]
    }

    fn param_add(&mut self, id: ParamId, delta: f64) {
        let (r, c) = decode(id);
        self.rows[r as usize][c as usize] += delta;
    }

    fn param_ids(&self) -> Vec<ParamId> {
        let width = self.vocab.size() as u32;
        (0..self.rows.len() as u32)
            .flat_map(|r| (0..width).map(move |c| encode(r, c)))
            .collect()
    }

    fn prepare(&mut self, sequences: &[(&[Token], &[Token])]) {
        for (prompt, response) in sequences {
            self.ensure_contexts(prompt, response);
        }
    }
}

fn encode(row: u32, col: u32) -> ParamId {
    ((row as u64) << 32) | col as u64
}

fn decode(id: ParamId) -> (u32, u32) {
    ((id >> 32) as u32, id as u32)
}

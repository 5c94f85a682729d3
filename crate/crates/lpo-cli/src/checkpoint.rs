//! Versioned textual policy checkpoints.
//!
//! Line-oriented, UTF-8, with explicit field ordering: header, kind,
//! vocabulary, shapes, then row-major parameters. Floats are written with
//! Rust's shortest round-trip formatting, so save → load reproduces every
//! parameter bit-exactly and identical policies serialize to identical
//! bytes.
//!
//! ```text
//! lpo-policy v1
//! kind tabular
//! vocab 3
//! t0
//! t1
//! </s>
//! order 2
//! rows 14
//! row 1 0 0.25 -0.5 1.75
//! ...
//! ```
//!
//! A `row` line carries the window length, the window tokens, then one
//! logit per vocabulary symbol. MLP checkpoints replace `order`/`rows`
//! with `dim` and the three parameter blocks, one line per matrix row.

use std::fmt::Write as _;
use std::path::Path;

use lpo_core::policy::{MlpPolicy, TabularPolicy, Token, Vocab};

use crate::{CliError, Result};

const HEADER: &str = "lpo-policy v1";

/// Either policy kind, as stored in a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Tabular(TabularPolicy),
    Mlp(MlpPolicy),
}

impl Checkpoint {
    pub fn vocab(&self) -> &Vocab {
        match self {
            Checkpoint::Tabular(p) => p.vocab(),
            Checkpoint::Mlp(p) => p.vocab(),
        }
    }
}

use lpo_core::policy::Policy as _;

/// Serializes a tabular policy.
pub fn encode_tabular(policy: &TabularPolicy) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{HEADER}");
    let _ = writeln!(out, "kind tabular");
    encode_vocab(&mut out, policy.vocab());
    let _ = writeln!(out, "order {}", policy.order());
    let _ = writeln!(out, "rows {}", policy.num_rows());
    for (window, logits) in policy.rows() {
        let _ = write!(out, "row {}", window.len());
        for t in window {
            let _ = write!(out, " {t}");
        }
        for v in logits {
            let _ = write!(out, " {v}");
        }
        let _ = writeln!(out);
    }
    out
}

/// Serializes an MLP policy.
pub fn encode_mlp(policy: &MlpPolicy) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{HEADER}");
    let _ = writeln!(out, "kind mlp");
    encode_vocab(&mut out, policy.vocab());
    let _ = writeln!(out, "dim {}", policy.dim());
    let v = policy.vocab().size();
    let d = policy.dim();
    let (embed, hidden, proj) = policy.parts();
    encode_block(&mut out, "embed", embed, v, d);
    encode_block(&mut out, "hidden", hidden, d, d);
    encode_block(&mut out, "out", proj, d, v);
    out
}

pub fn encode(checkpoint: &Checkpoint) -> String {
    match checkpoint {
        Checkpoint::Tabular(p) => encode_tabular(p),
        Checkpoint::Mlp(p) => encode_mlp(p),
    }
}

fn encode_vocab(out: &mut String, vocab: &Vocab) {
    let _ = writeln!(out, "vocab {}", vocab.size());
    for s in vocab.symbols() {
        let _ = writeln!(out, "{s}");
    }
}

fn encode_block(out: &mut String, name: &str, data: &[f64], rows: usize, cols: usize) {
    let _ = writeln!(out, "{name} {rows} {cols}");
    for r in 0..rows {
        let mut first = true;
        for c in 0..cols {
            if !first {
                out.push(' ');
            }
            let _ = write!(out, "{}", data[r * cols + c]);
            first = false;
        }
        out.push('\n');
    }
}

/// Parses a checkpoint of either kind.
pub fn decode(text: &str) -> Result<Checkpoint> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != HEADER {
        return Err(CliError::runtime(format!(
            "not a policy checkpoint (expected `{HEADER}`, found `{header}`)"
        )));
    }
    let kind = expect_field(lines.next(), "kind")?;
    let vocab = decode_vocab(&mut lines)?;
    match kind.as_str() {
        "tabular" => decode_tabular(vocab, &mut lines),
        "mlp" => decode_mlp(vocab, &mut lines),
        other => Err(CliError::runtime(format!("unknown policy kind `{other}`"))),
    }
}

fn decode_tabular<'a>(
    vocab: Vocab,
    lines: &mut impl Iterator<Item = &'a str>,
) -> Result<Checkpoint> {
    let order: usize = parse_num(&expect_field(lines.next(), "order")?)?;
    let count: usize = parse_num(&expect_field(lines.next(), "rows")?)?;
    let v = vocab.size();
    let mut rows = Vec::with_capacity(count);
    for i in 0..count {
        let line = lines
            .next()
            .ok_or_else(|| CliError::runtime(format!("checkpoint truncated at row {i}")))?;
        let mut fields = line.split_whitespace();
        if fields.next() != Some("row") {
            return Err(CliError::runtime(format!("malformed row line {i}")));
        }
        let window_len: usize = parse_num(fields.next().unwrap_or_default())?;
        let mut window = Vec::with_capacity(window_len);
        for _ in 0..window_len {
            window.push(parse_num::<Token>(fields.next().unwrap_or_default())?);
        }
        let mut logits = Vec::with_capacity(v);
        for _ in 0..v {
            logits.push(parse_num::<f64>(fields.next().unwrap_or_default())?);
        }
        if fields.next().is_some() {
            return Err(CliError::runtime(format!(
                "trailing fields on row line {i}"
            )));
        }
        rows.push((window, logits));
    }
    Ok(Checkpoint::Tabular(TabularPolicy::from_rows(
        vocab, order, rows,
    )))
}

fn decode_mlp<'a>(vocab: Vocab, lines: &mut impl Iterator<Item = &'a str>) -> Result<Checkpoint> {
    let dim: usize = parse_num(&expect_field(lines.next(), "dim")?)?;
    let v = vocab.size();
    let embed = decode_block(lines, "embed", v, dim)?;
    let hidden = decode_block(lines, "hidden", dim, dim)?;
    let out = decode_block(lines, "out", dim, v)?;
    Ok(Checkpoint::Mlp(MlpPolicy::from_parts(
        vocab, dim, embed, hidden, out,
    )))
}

fn decode_block<'a>(
    lines: &mut impl Iterator<Item = &'a str>,
    name: &str,
    rows: usize,
    cols: usize,
) -> Result<Vec<f64>> {
    let head = lines
        .next()
        .ok_or_else(|| CliError::runtime(format!("missing `{name}` block")))?;
    let expected = format!("{name} {rows} {cols}");
    if head != expected {
        return Err(CliError::runtime(format!(
            "bad block header: expected `{expected}`, found `{head}`"
        )));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let line = lines
            .next()
            .ok_or_else(|| CliError::runtime(format!("`{name}` truncated at row {r}")))?;
        let mut n = 0;
        for field in line.split_whitespace() {
            data.push(parse_num::<f64>(field)?);
            n += 1;
        }
        if n != cols {
            return Err(CliError::runtime(format!(
                "`{name}` row {r} has {n} values, expected {cols}"
            )));
        }
    }
    Ok(data)
}

fn decode_vocab<'a>(lines: &mut impl Iterator<Item = &'a str>) -> Result<Vocab> {
    let size: usize = parse_num(&expect_field(lines.next(), "vocab")?)?;
    let mut symbols = Vec::with_capacity(size);
    for i in 0..size {
        let line = lines
            .next()
            .ok_or_else(|| CliError::runtime(format!("vocab truncated at symbol {i}")))?;
        symbols.push(line.to_string());
    }
    Vocab::new(symbols).map_err(|e| CliError::runtime(format!("bad checkpoint vocab: {e}")))
}

fn expect_field(line: Option<&str>, key: &str) -> Result<String> {
    let line = line.ok_or_else(|| CliError::runtime(format!("missing `{key}` line")))?;
    line.strip_prefix(key)
        .map(|rest| rest.trim().to_string())
        .ok_or_else(|| CliError::runtime(format!("expected `{key} …`, found `{line}`")))
}

fn parse_num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| CliError::runtime(format!("bad numeric field `{s}` in checkpoint")))
}

/// Writes a checkpoint file.
pub fn save(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode(checkpoint))?;
    Ok(())
}

/// Reads a checkpoint file.
pub fn load(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::runtime(format!("cannot read checkpoint {}: {e}", path.display()))
    })?;
    decode(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use lpo_core::policy::DiffPolicy;
    use lpo_core::rng::SplitMix64;

    fn sample_tabular() -> TabularPolicy {
        let mut p = TabularPolicy::new(Vocab::with_size(4), 2);
        p.ensure_contexts(&[0], &[1, 2, 3]);
        let mut rng = SplitMix64::new(99);
        p.randomize(&mut rng, 1.0);
        p
    }

    #[test]
    fn tabular_roundtrip_is_exact() {
        let p = sample_tabular();
        let text = encode_tabular(&p);
        let Checkpoint::Tabular(q) = decode(&text).unwrap() else {
            panic!("wrong kind");
        };
        assert_eq!(p, q);
        assert_eq!(encode_tabular(&q), text, "re-encode is byte-identical");
    }

    #[test]
    fn mlp_roundtrip_is_exact() {
        let p = MlpPolicy::new(Vocab::with_size(5), 3, 1234);
        let text = encode_mlp(&p);
        let Checkpoint::Mlp(q) = decode(&text).unwrap() else {
            panic!("wrong kind");
        };
        assert_eq!(p, q);
        assert_eq!(encode_mlp(&q), text);
    }

    #[test]
    fn parameter_edits_survive_roundtrip() {
        let mut p = sample_tabular();
        let ids = p.param_ids();
        p.param_add(ids[3], 0.1 + 0.2); // a value with no short decimal
        let text = encode_tabular(&p);
        let Checkpoint::Tabular(q) = decode(&text).unwrap() else {
            panic!("wrong kind");
        };
        assert_eq!(p.param_value(ids[3]), q.param_value(ids[3]));
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode("not a checkpoint").is_err());
        assert!(decode("lpo-policy v1\nkind nonsense\nvocab 2\na\nb\n").is_err());
        let p = sample_tabular();
        let text = encode_tabular(&p);
        let truncated = &text[..text.len() / 2];
        assert!(decode(truncated).is_err());
    }
}

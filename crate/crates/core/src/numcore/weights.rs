//! Plain-text weight files.
//!
//! ```text
//! <layer count>
//! <in> <out> <activation>
//! <out lines of in+1 numbers: weight row, then bias>
//! ...
//! ```
//! Numbers use Rust's shortest round-trip formatting, so a write/read cycle
//! reproduces every `f64` bit for bit.

use crate::error::{Error, Result};
use crate::numcore::{Activation, DenseLayer, Mlp};
use std::fmt::Write as _;
use std::path::Path;

pub fn mlp_to_text(net: &Mlp) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", net.layers().len());
    for layer in net.layers() {
        let _ = writeln!(
            out,
            "{} {} {}",
            layer.in_dim(),
            layer.out_dim(),
            layer.activation()
        );
        for (row, b) in layer
            .weights()
            .chunks_exact(layer.in_dim())
            .zip(layer.biases())
        {
            let mut first = true;
            for v in row.iter().chain(std::iter::once(b)) {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{v:?}");
            }
            out.push('\n');
        }
    }
    out
}

fn parse_f64(tok: &str, line_no: usize) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|e| Error::Parse(format!("line {line_no}: bad number '{tok}': {e}")))
}

/// Parses one network from `lines`, leaving any trailing lines unconsumed.
pub fn mlp_from_lines<'a, I>(lines: &mut I) -> Result<Mlp>
where
    I: Iterator<Item = (usize, &'a str)>,
{
    let mut next = |what: &str| {
        lines
            .find(|(_, l)| !l.trim().is_empty())
            .ok_or_else(|| Error::Parse(format!("unexpected end of file, expected {what}")))
    };
    let (n0, head) = next("layer count")?;
    let count: usize = head
        .trim()
        .parse()
        .map_err(|e| Error::Parse(format!("line {n0}: bad layer count: {e}")))?;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let (ln, spec) = next("layer header")?;
        let toks: Vec<&str> = spec.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(Error::Parse(format!("line {ln}: expected 'in out activation'")));
        }
        let in_dim: usize = toks[0]
            .parse()
            .map_err(|e| Error::Parse(format!("line {ln}: {e}")))?;
        let out_dim: usize = toks[1]
            .parse()
            .map_err(|e| Error::Parse(format!("line {ln}: {e}")))?;
        let act: Activation = toks[2].parse()?;
        let mut weights = Vec::with_capacity(in_dim * out_dim);
        let mut biases = Vec::with_capacity(out_dim);
        for _ in 0..out_dim {
            let (rn, row) = next("weight row")?;
            let vals = row
                .split_whitespace()
                .map(|t| parse_f64(t, rn))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != in_dim + 1 {
                return Err(Error::Parse(format!(
                    "line {rn}: expected {} values, found {}",
                    in_dim + 1,
                    vals.len()
                )));
            }
            weights.extend_from_slice(&vals[..in_dim]);
            biases.push(vals[in_dim]);
        }
        layers.push(DenseLayer::from_parts(in_dim, out_dim, weights, biases, act)?);
    }
    Mlp::new(layers)
}

pub fn mlp_from_text(text: &str) -> Result<Mlp> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    mlp_from_lines(&mut lines)
}

pub fn save_mlp(net: &Mlp, path: &Path) -> Result<()> {
    std::fs::write(path, mlp_to_text(net))?;
    Ok(())
}

pub fn load_mlp(path: &Path) -> Result<Mlp> {
    mlp_from_text(&std::fs::read_to_string(path)?)
}

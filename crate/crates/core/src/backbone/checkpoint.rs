//! Plain-text model checkpoints.
//!
//! ```text
//! ptta-checkpoint 1
//! input_dim 16
//! hidden_dims 64 32
//! num_classes 8
//! block 0
//! weight <rows> <cols> v...
//! bias v...
//! gamma v...        (likewise beta mu_g sigma2_g mu_s sigma2_s)
//! alpha v
//! eps v
//! momentum v
//! source_batches n
//! head_weight <rows> <cols> v...
//! head_bias v...
//! ```
//!
//! Floats are written in shortest round-trip exponent form, so loading a
//! saved model reproduces it bit for bit.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{Block, Linear, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::gprerbn::GpreRbnState;
use crate::numerics::Matrix;

const MAGIC: &str = "ptta-checkpoint 1";

fn floats(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ")
}

pub fn write_checkpoint<W: Write>(model: &Model, mut w: W) -> Result<()> {
    let cfg = model.config();
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "input_dim {}", cfg.input_dim)?;
    let dims: Vec<String> = cfg.hidden_dims.iter().map(|d| d.to_string()).collect();
    writeln!(w, "hidden_dims {}", dims.join(" "))?;
    writeln!(w, "num_classes {}", cfg.num_classes)?;
    for (k, block) in model.blocks.iter().enumerate() {
        let bn = &block.bn;
        writeln!(w, "block {k}")?;
        let wt = &block.linear.weight;
        writeln!(w, "weight {} {} {}", wt.rows(), wt.cols(), floats(wt.as_slice()))?;
        writeln!(w, "bias {}", floats(&block.linear.bias))?;
        for (name, v) in [
            ("gamma", &bn.gamma),
            ("beta", &bn.beta),
            ("mu_g", &bn.mu_g),
            ("sigma2_g", &bn.sigma2_g),
            ("mu_s", &bn.mu_s),
            ("sigma2_s", &bn.sigma2_s),
        ] {
            writeln!(w, "{name} {}", floats(v))?;
        }
        writeln!(w, "alpha {:e}", bn.alpha)?;
        writeln!(w, "eps {:e}", bn.eps)?;
        writeln!(w, "momentum {:e}", bn.momentum)?;
        writeln!(w, "source_batches {}", bn.source_batches)?;
    }
    let hw = &model.head.weight;
    writeln!(w, "head_weight {} {} {}", hw.rows(), hw.cols(), floats(hw.as_slice()))?;
    writeln!(w, "head_bias {}", floats(&model.head.bias))?;
    Ok(())
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    if !path.exists() {
        return Err(Error::CheckpointMissing(path.to_path_buf()));
    }
    read_checkpoint(fs::File::open(path)?)
}

struct Lines<R> {
    inner: std::io::Lines<BufReader<R>>,
    line: usize,
}

impl<R: Read> Lines<R> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse { line: self.line, message: message.into() }
    }

    /// Next line, which must begin with `key`; returns the remaining fields.
    fn expect(&mut self, key: &str) -> Result<Vec<String>> {
        let text = match self.inner.next() {
            Some(line) => line?,
            None => return Err(Error::Parse { line: self.line + 1, message: format!("missing `{key}`") }),
        };
        self.line += 1;
        let mut fields = text.split_whitespace();
        if fields.next() != Some(key) {
            return Err(self.err(format!("expected `{key}`, found {text:?}")));
        }
        Ok(fields.map(str::to_owned).collect())
    }

    fn parse<T: std::str::FromStr>(&self, s: &str) -> Result<T> {
        s.parse().map_err(|_| self.err(format!("cannot parse {s:?}")))
    }

    fn vector(&mut self, key: &str, len: usize) -> Result<Vec<f64>> {
        let fields = self.expect(key)?;
        if fields.len() != len {
            return Err(self.err(format!("`{key}` has {} values, expected {len}", fields.len())));
        }
        fields.iter().map(|f| self.parse(f)).collect()
    }

    fn scalar<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let fields = self.expect(key)?;
        if fields.len() != 1 {
            return Err(self.err(format!("`{key}` takes one value")));
        }
        self.parse(&fields[0])
    }

    fn matrix(&mut self, key: &str, rows: usize, cols: usize) -> Result<Matrix> {
        let fields = self.expect(key)?;
        if fields.len() < 2 {
            return Err(self.err(format!("`{key}` is missing its shape")));
        }
        let (r, c): (usize, usize) = (self.parse(&fields[0])?, self.parse(&fields[1])?);
        if (r, c) != (rows, cols) || fields.len() != 2 + r * c {
            return Err(self.err(format!("`{key}` should be {rows}x{cols}")));
        }
        let data = fields[2..].iter().map(|f| self.parse(f)).collect::<Result<Vec<f64>>>()?;
        Matrix::from_vec(r, c, data)
    }
}

pub fn read_checkpoint<R: Read>(reader: R) -> Result<Model> {
    let mut lines = Lines { inner: BufReader::new(reader).lines(), line: 0 };
    match lines.inner.next() {
        Some(Ok(first)) if first.trim() == MAGIC => lines.line = 1,
        _ => return Err(Error::Parse { line: 1, message: "not a ptta checkpoint".into() }),
    }
    let input_dim: usize = lines.scalar("input_dim")?;
    let hidden_dims = lines.expect("hidden_dims")?.iter().map(|f| lines.parse(f)).collect::<Result<Vec<usize>>>()?;
    let num_classes: usize = lines.scalar("num_classes")?;
    let config = ModelConfig { input_dim, hidden_dims: hidden_dims.clone(), num_classes };
    config.validate()?;

    let mut blocks = Vec::with_capacity(hidden_dims.len());
    let mut fan_in = input_dim;
    for (k, &width) in hidden_dims.iter().enumerate() {
        let index: usize = lines.scalar("block")?;
        if index != k {
            return Err(lines.err(format!("expected block {k}, found {index}")));
        }
        let weight = lines.matrix("weight", fan_in, width)?;
        let bias = lines.vector("bias", width)?;
        let mut bn = GpreRbnState::new(width);
        bn.gamma = lines.vector("gamma", width)?;
        bn.beta = lines.vector("beta", width)?;
        bn.mu_g = lines.vector("mu_g", width)?;
        bn.sigma2_g = lines.vector("sigma2_g", width)?;
        bn.mu_s = lines.vector("mu_s", width)?;
        bn.sigma2_s = lines.vector("sigma2_s", width)?;
        bn.alpha = lines.scalar("alpha")?;
        bn.eps = lines.scalar("eps")?;
        bn.momentum = lines.scalar("momentum")?;
        bn.source_batches = lines.scalar("source_batches")?;
        blocks.push(Block { linear: Linear { weight, bias }, bn });
        fan_in = width;
    }
    let weight = lines.matrix("head_weight", fan_in, num_classes)?;
    let bias = lines.vector("head_bias", num_classes)?;
    Model::from_parts(config, blocks, Linear { weight, bias })
}

//! Plain-text checkpoint format.
//!
//! ```text
//! # mdn-checkpoint v1
//! k=<K>
//! n=<N>
//! m=<M>
//! hidden=<h1>,<h2>,...
//! activation=<tanh|relu>
//! covariance_mode=<full|diagonal>
//! seed=<u64>
//! weights <out> <in>      one line per output row, <in> values each
//! bias <out>              one line with <out> values
//! ...                     weights/bias pairs repeat per layer, head last
//! ```
//!
//! Values are space separated and written with 17 significant digits, so a
//! reload reproduces every `f64` weight exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Layer, Mdn, MdnConfig, NetworkParams};
use crate::error::{MdnError, Result};
use crate::scalar::Real;

const MAGIC: &str = "# mdn-checkpoint v1";
const KEYS: [&str; 7] = ["k", "n", "m", "hidden", "activation", "covariance_mode", "seed"];

fn join<T: Real>(values: &[T]) -> String {
    values
        .iter()
        .map(|v| format!("{:.16e}", v.to_f64_lossy()))
        .collect::<Vec<_>>()
        .join(" ")
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> Lines<R> {
    fn next_line(&mut self, what: &str) -> Result<(usize, String)> {
        self.line += 1;
        match self.inner.next() {
            Some(l) => Ok((self.line, l?)),
            None => Err(MdnError::parse(self.line, format!("unexpected end of file, expected {what}"))),
        }
    }

    fn value(&mut self, key: &str) -> Result<(usize, String)> {
        let (line, text) = self.next_line(key)?;
        match text.split_once('=') {
            Some((k, v)) if k.trim() == key => Ok((line, v.trim().to_string())),
            _ => Err(MdnError::parse(line, format!("expected `{key}=...`, found `{text}`"))),
        }
    }

    fn numbers<T: Real>(&mut self, count: usize, what: &str) -> Result<Vec<T>> {
        let (line, text) = self.next_line(what)?;
        let vals = text
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .ok()
                    .and_then(T::from_f64)
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| MdnError::parse(line, format!("`{tok}` is not a finite number")))
            })
            .collect::<Result<Vec<T>>>()?;
        if vals.len() != count {
            return Err(MdnError::parse(line, format!("{what}: expected {count} values, found {}", vals.len())));
        }
        Ok(vals)
    }

    fn block_header(&mut self, tag: &str, dims: &[usize]) -> Result<()> {
        let (line, text) = self.next_line(tag)?;
        let mut toks = text.split_whitespace();
        let ok = toks.next() == Some(tag)
            && dims.iter().all(|&d| toks.next().and_then(|t| t.parse::<usize>().ok()) == Some(d))
            && toks.next().is_none();
        if !ok {
            let want: Vec<String> = dims.iter().map(ToString::to_string).collect();
            return Err(MdnError::parse(
                line,
                format!("expected `{tag} {}`, found `{text}`", want.join(" ")),
            ));
        }
        Ok(())
    }
}

fn parse_field<V: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<V> {
    v.parse()
        .map_err(|_| MdnError::parse(line, format!("invalid value `{v}` for `{key}`")))
}

impl<T: Real> Mdn<T> {
    pub fn write_checkpoint<W: Write>(&self, out: W) -> Result<()> {
        let c = &self.config;
        let mut w = BufWriter::new(out);
        writeln!(w, "{MAGIC}")?;
        writeln!(w, "k={}", c.k)?;
        writeln!(w, "n={}", c.n)?;
        writeln!(w, "m={}", c.m)?;
        let hidden: Vec<String> = c.hidden.iter().map(ToString::to_string).collect();
        writeln!(w, "hidden={}", hidden.join(","))?;
        writeln!(w, "activation={}", c.activation)?;
        writeln!(w, "covariance_mode={}", c.covariance_mode)?;
        writeln!(w, "seed={}", self.seed)?;
        for layer in &self.params.layers {
            writeln!(w, "weights {} {}", layer.outputs, layer.inputs)?;
            for row in layer.weights.chunks(layer.inputs) {
                writeln!(w, "{}", join(row))?;
            }
            writeln!(w, "bias {}", layer.outputs)?;
            writeln!(w, "{}", join(&layer.bias))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(input: R) -> Result<Self> {
        let mut lines = Lines {
            inner: BufReader::new(input).lines(),
            line: 0,
        };
        let (line, magic) = lines.next_line("header")?;
        if magic.trim_end() != MAGIC {
            return Err(MdnError::parse(line, format!("not a checkpoint (expected `{MAGIC}`)")));
        }
        let mut fields = Vec::with_capacity(KEYS.len());
        for key in KEYS {
            fields.push(lines.value(key)?);
        }
        let hidden = fields[3]
            .1
            .split(',')
            .map(|h| parse_field(fields[3].0, "hidden", h.trim()))
            .collect::<Result<Vec<usize>>>()?;
        let config = MdnConfig {
            k: parse_field(fields[0].0, "k", &fields[0].1)?,
            n: parse_field(fields[1].0, "n", &fields[1].1)?,
            m: parse_field(fields[2].0, "m", &fields[2].1)?,
            hidden,
            activation: parse_field(fields[4].0, "activation", &fields[4].1)?,
            covariance_mode: parse_field(fields[5].0, "covariance_mode", &fields[5].1)?,
        };
        let seed = parse_field(fields[6].0, "seed", &fields[6].1)?;
        config.validate()?;

        let mut layers = Vec::new();
        for (inputs, outputs) in config.layer_shapes() {
            lines.block_header("weights", &[outputs, inputs])?;
            let mut weights = Vec::with_capacity(inputs * outputs);
            for _ in 0..outputs {
                weights.extend(lines.numbers::<T>(inputs, "weight row")?);
            }
            lines.block_header("bias", &[outputs])?;
            let bias = lines.numbers(outputs, "bias")?;
            layers.push(Layer::new(inputs, outputs, weights, bias));
        }
        while let Some(rest) = lines.inner.next() {
            lines.line += 1;
            if !rest?.trim().is_empty() {
                return Err(MdnError::parse(lines.line, "trailing content after last layer"));
            }
        }
        Ok(Self {
            config,
            params: NetworkParams { layers },
            seed,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_checkpoint(File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_checkpoint(File::open(path)?)
    }
}

//! Text checkpoints for one or more named networks.
//!
//! ```text
//! grouplift-ckpt v1
//! seed 7
//! config-hash 3f9a...
//! meta attribute.0 Male
//! network trunk input 8 layers 2
//! layer 0 in 8 out 32 activation relu frozen 0
//! w <out*in values, row-major>
//! b <out values>
//! ...
//! end
//! ```
//!
//! Floats are written with 17 significant digits so that every `f64`
//! survives a save/load cycle unchanged.

use std::fmt::Write as _;
use std::path::Path;

use super::matrix::Matrix;
use super::network::{Activation, DenseLayer, DenseNetwork};
use crate::error::{Error, Result};

pub const CHECKPOINT_HEADER: &str = "grouplift-ckpt v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub config_hash: String,
    /// Free-form key/value pairs; keys contain no whitespace.
    pub metadata: Vec<(String, String)>,
    pub networks: Vec<(String, DenseNetwork)>,
}

pub(crate) fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl Checkpoint {
    pub fn new(seed: u64, config_hash: impl Into<String>) -> Self {
        Self {
            seed,
            config_hash: config_hash.into(),
            metadata: Vec::new(),
            networks: Vec::new(),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn network(&self, name: &str) -> Option<&DenseNetwork> {
        self.networks.iter().find(|(n, _)| n == name).map(|(_, net)| net)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{CHECKPOINT_HEADER}");
        let _ = writeln!(s, "seed {}", self.seed);
        let _ = writeln!(s, "config-hash {}", self.config_hash);
        for (k, v) in &self.metadata {
            let _ = writeln!(s, "meta {k} {v}");
        }
        for (name, net) in &self.networks {
            let _ = writeln!(s, "network {name} input {} layers {}", net.input_dim(), net.len());
            for (i, l) in net.layers().iter().enumerate() {
                let _ = writeln!(
                    s,
                    "layer {i} in {} out {} activation {} frozen {}",
                    l.in_dim(),
                    l.out_dim(),
                    l.activation().name(),
                    u8::from(l.is_frozen())
                );
                let w: Vec<String> = l.weights().data().iter().map(|&v| format_f64(v)).collect();
                let _ = writeln!(s, "w {}", w.join(" "));
                let b: Vec<String> = l.bias().iter().map(|&v| format_f64(v)).collect();
                let _ = writeln!(s, "b {}", b.join(" "));
            }
            let _ = writeln!(s, "end");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end()));
        let mut next = |what: &str| -> Result<(usize, &str)> {
            lines
                .next()
                .ok_or_else(|| Error::parse(0, format!("unexpected end of file, expected {what}")))
        };

        let (ln, header) = next("header")?;
        if header != CHECKPOINT_HEADER {
            return Err(Error::parse(ln, format!("expected header `{CHECKPOINT_HEADER}`")));
        }
        let (ln, seed_line) = next("seed")?;
        let seed = seed_line
            .strip_prefix("seed ")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::parse(ln, "expected `seed <integer>`"))?;
        let (ln, hash_line) = next("config-hash")?;
        let config_hash = hash_line
            .strip_prefix("config-hash ")
            .ok_or_else(|| Error::parse(ln, "expected `config-hash <hex>`"))?
            .to_string();

        let mut ckpt = Checkpoint::new(seed, config_hash);
        while let Ok((ln, line)) = next("network") {
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                ckpt.metadata.push((k.to_string(), v.to_string()));
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let (name, input_dim, count) = match fields.as_slice() {
                ["network", name, "input", d, "layers", n] => (
                    name.to_string(),
                    parse_usize(d, ln)?,
                    parse_usize(n, ln)?,
                ),
                _ => return Err(Error::parse(ln, format!("unexpected line `{line}`"))),
            };
            let mut layers = Vec::with_capacity(count);
            for expected in 0..count {
                let (ln, line) = next("layer")?;
                let fields: Vec<&str> = line.split_whitespace().collect();
                let (idx, in_dim, out_dim, act, frozen) = match fields.as_slice() {
                    ["layer", i, "in", a, "out", b, "activation", act, "frozen", f] => (
                        parse_usize(i, ln)?,
                        parse_usize(a, ln)?,
                        parse_usize(b, ln)?,
                        Activation::from_name(act)
                            .ok_or_else(|| Error::parse(ln, format!("unknown activation `{act}`")))?,
                        match *f {
                            "0" => false,
                            "1" => true,
                            _ => return Err(Error::parse(ln, "frozen flag must be 0 or 1")),
                        },
                    ),
                    _ => return Err(Error::parse(ln, "malformed layer line")),
                };
                if idx != expected {
                    return Err(Error::parse(ln, format!("expected layer {expected}, found {idx}")));
                }
                let (ln, wline) = next("weights")?;
                let w = parse_values(wline, "w", in_dim * out_dim, ln)?;
                let (ln, bline) = next("bias")?;
                let b = parse_values(bline, "b", out_dim, ln)?;
                let mut layer = DenseLayer::new(Matrix::from_vec(out_dim, in_dim, w)?, b, act)
                    .map_err(|e| Error::parse(ln, e.to_string()))?;
                layer.set_frozen(frozen);
                layers.push(layer);
            }
            let (ln, end) = next("end")?;
            if end != "end" {
                return Err(Error::parse(ln, "expected `end`"));
            }
            let net = DenseNetwork::from_layers(input_dim, layers).map_err(|e| Error::parse(ln, e.to_string()))?;
            ckpt.networks.push((name, net));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

fn parse_usize(s: &str, line: usize) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::parse(line, format!("expected a count, found `{s}`")))
}

fn parse_values(line: &str, tag: &str, expected: usize, ln: usize) -> Result<Vec<f64>> {
    let mut it = line.split_whitespace();
    if it.next() != Some(tag) {
        return Err(Error::parse(ln, format!("expected `{tag}` line")));
    }
    let values = it
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(ln, format!("bad value `{t}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.len() != expected {
        return Err(Error::parse(
            ln,
            format!("expected {expected} values, found {}", values.len()),
        ));
    }
    Ok(values)
}

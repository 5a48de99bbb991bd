//! Plain-text network checkpoints.
//!
//! ```text
//! eblab-checkpoint v1
//! kind autoencoder
//! attr energy_norm euclidean
//! stack encoder 1
//! layer relu none 0 64 128
//! weight <in*out values>
//! bias <out values>
//! stack decoder 1
//! layer identity none 0 128 64
//! weight ...
//! bias ...
//! ```
//!
//! A layer with batchnorm (`norm` = `beta` or `gamma`) is followed by
//! `beta`, optionally `gamma`, then `running_mean` and `running_var` lines.
//! Values are whitespace separated and printed in shortest round-trip form,
//! so a save/load cycle is lossless.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{
    Activation, AutoEncoderDiscriminator, BatchNorm, Dense, Discriminator, EnergyNorm,
    GeneratorNet, LogisticDiscriminator, Mlp,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &str = "eblab-checkpoint v1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub attrs: BTreeMap<String, String>,
    pub stacks: Vec<(String, Mlp)>,
}

fn push_values(out: &mut String, key: &str, values: &[f64]) {
    out.push_str(key);
    for v in values {
        write!(out, " {v}").unwrap();
    }
    out.push('\n');
}

impl Checkpoint {
    pub fn new(kind: &str) -> Self {
        Checkpoint {
            kind: kind.to_string(),
            attrs: BTreeMap::new(),
            stacks: Vec::new(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC}\nkind {}\n", self.kind);
        for (k, v) in &self.attrs {
            writeln!(out, "attr {k} {v}").unwrap();
        }
        for (name, mlp) in &self.stacks {
            writeln!(out, "stack {name} {}", mlp.layers.len()).unwrap();
            for layer in &mlp.layers {
                let norm = match &layer.norm {
                    None => "none",
                    Some(bn) if bn.gamma.is_some() => "gamma",
                    Some(_) => "beta",
                };
                writeln!(
                    out,
                    "layer {} {norm} {} {} {}",
                    layer.activation.name(),
                    layer.dropout,
                    layer.inputs(),
                    layer.outputs()
                )
                .unwrap();
                push_values(&mut out, "weight", layer.weight.data());
                push_values(&mut out, "bias", layer.bias.data());
                if let Some(bn) = &layer.norm {
                    push_values(&mut out, "beta", bn.beta.data());
                    if let Some(g) = &bn.gamma {
                        push_values(&mut out, "gamma", g.data());
                    }
                    push_values(&mut out, "running_mean", &bn.running_mean);
                    push_values(&mut out, "running_var", &bn.running_var);
                }
            }
        }
        out
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let err = |msg: String| Error::parse(origin, msg);
        let mut lines = text.lines().enumerate().peekable();
        let mut next_line = |what: &str| {
            lines
                .next()
                .map(|(i, l)| (i + 1, l))
                .ok_or_else(|| err(format!("unexpected end of file, expected {what}")))
        };
        let (_, magic) = next_line("header")?;
        if magic.trim() != MAGIC {
            return Err(err(format!("unsupported header {magic:?}")));
        }
        let (_, kind_line) = next_line("kind")?;
        let kind = kind_line
            .strip_prefix("kind ")
            .ok_or_else(|| err("missing kind line".into()))?
            .trim()
            .to_string();
        let mut ckpt = Checkpoint::new(&kind);

        let values = |lineno: usize, line: &str, key: &str, len: usize| -> Result<Vec<f64>> {
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(err(format!("line {lineno}: expected {key}")));
            }
            let vals = parts
                .map(|p| p.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| err(format!("line {lineno}: {e}")))?;
            if vals.len() != len {
                return Err(err(format!(
                    "line {lineno}: {key} has {} values, expected {len}",
                    vals.len()
                )));
            }
            Ok(vals)
        };

        loop {
            let Ok((lineno, line)) = next_line("") else { break };
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                [] => continue,
                ["attr", key, rest @ ..] => {
                    ckpt.attrs.insert(key.to_string(), rest.join(" "));
                }
                ["stack", name, count] => {
                    let count: usize = count
                        .parse()
                        .map_err(|_| err(format!("line {lineno}: bad layer count")))?;
                    let mut layers = Vec::with_capacity(count);
                    for _ in 0..count {
                        let (ln, header) = next_line("layer")?;
                        let h: Vec<&str> = header.split_whitespace().collect();
                        let ["layer", act, norm, dropout, inputs, outputs] = h.as_slice() else {
                            return Err(err(format!("line {ln}: malformed layer header")));
                        };
                        let act = Activation::from_name(act)
                            .ok_or_else(|| err(format!("line {ln}: unknown activation {act}")))?;
                        let parse_usize = |s: &str| {
                            s.parse::<usize>()
                                .map_err(|_| err(format!("line {ln}: bad dimension {s}")))
                        };
                        let (i, o) = (parse_usize(inputs)?, parse_usize(outputs)?);
                        let dropout: f64 = dropout
                            .parse()
                            .map_err(|_| err(format!("line {ln}: bad dropout")))?;
                        let mut layer = Dense::new(i, o, act).with_dropout(dropout);
                        let (ln, l) = next_line("weight")?;
                        layer.weight = Tensor::new(vec![i, o], values(ln, l, "weight", i * o)?)?;
                        let (ln, l) = next_line("bias")?;
                        layer.bias = Tensor::new(vec![o], values(ln, l, "bias", o)?)?;
                        match *norm {
                            "none" => {}
                            "beta" | "gamma" => {
                                let mut bn = BatchNorm::new(o, *norm == "gamma");
                                let (ln, l) = next_line("beta")?;
                                bn.beta = Tensor::new(vec![o], values(ln, l, "beta", o)?)?;
                                if *norm == "gamma" {
                                    let (ln, l) = next_line("gamma")?;
                                    bn.gamma =
                                        Some(Tensor::new(vec![o], values(ln, l, "gamma", o)?)?);
                                }
                                let (ln, l) = next_line("running_mean")?;
                                bn.running_mean = values(ln, l, "running_mean", o)?;
                                let (ln, l) = next_line("running_var")?;
                                bn.running_var = values(ln, l, "running_var", o)?;
                                layer.norm = Some(bn);
                            }
                            other => {
                                return Err(err(format!("line {ln}: unknown norm {other}")));
                            }
                        }
                        layers.push(layer);
                    }
                    if layers.is_empty() {
                        return Err(err(format!("line {lineno}: empty stack")));
                    }
                    ckpt.stacks.push((name.to_string(), Mlp { layers }));
                }
                _ => return Err(err(format!("line {lineno}: unexpected {line:?}"))),
            }
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text, path)
    }

    fn stack(&self, name: &str) -> Result<Mlp> {
        self.stacks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m.clone())
            .ok_or_else(|| Error::invalid(format!("checkpoint has no stack {name:?}")))
    }

    fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::invalid(format!(
                "checkpoint holds a {}, not a {kind}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn from_mlp(kind: &str, mlp: &Mlp) -> Self {
        let mut c = Checkpoint::new(kind);
        c.stacks.push(("net".into(), mlp.clone()));
        c
    }

    pub fn into_mlp(self, kind: &str) -> Result<Mlp> {
        self.expect_kind(kind)?;
        self.stack("net")
    }
}

impl From<&GeneratorNet> for Checkpoint {
    fn from(g: &GeneratorNet) -> Self {
        Checkpoint::from_mlp("generator", &g.net)
    }
}

impl TryFrom<Checkpoint> for GeneratorNet {
    type Error = Error;
    fn try_from(c: Checkpoint) -> Result<Self> {
        Ok(GeneratorNet {
            net: c.into_mlp("generator")?,
        })
    }
}

impl From<&AutoEncoderDiscriminator> for Checkpoint {
    fn from(d: &AutoEncoderDiscriminator) -> Self {
        let mut c = Checkpoint::new("autoencoder");
        c.attrs
            .insert("energy_norm".into(), d.energy_norm.name().into());
        c.stacks.push(("encoder".into(), d.encoder.clone()));
        c.stacks.push(("decoder".into(), d.decoder.clone()));
        c
    }
}

impl TryFrom<Checkpoint> for AutoEncoderDiscriminator {
    type Error = Error;
    fn try_from(c: Checkpoint) -> Result<Self> {
        c.expect_kind("autoencoder")?;
        let norm = c
            .attrs
            .get("energy_norm")
            .and_then(|s| EnergyNorm::parse(s))
            .ok_or_else(|| Error::invalid("missing or unknown energy_norm"))?;
        Ok(AutoEncoderDiscriminator {
            encoder: c.stack("encoder")?,
            decoder: c.stack("decoder")?,
            energy_norm: norm,
        })
    }
}

impl From<&LogisticDiscriminator> for Checkpoint {
    fn from(d: &LogisticDiscriminator) -> Self {
        Checkpoint::from_mlp("logistic", &d.net)
    }
}

impl TryFrom<Checkpoint> for LogisticDiscriminator {
    type Error = Error;
    fn try_from(c: Checkpoint) -> Result<Self> {
        Ok(LogisticDiscriminator {
            net: c.into_mlp("logistic")?,
        })
    }
}

impl From<&Discriminator> for Checkpoint {
    fn from(d: &Discriminator) -> Self {
        match d {
            Discriminator::AutoEncoder(d) => d.into(),
            Discriminator::Logistic(d) => d.into(),
        }
    }
}

impl TryFrom<Checkpoint> for Discriminator {
    type Error = Error;
    fn try_from(c: Checkpoint) -> Result<Self> {
        match c.kind.as_str() {
            "autoencoder" => Ok(Discriminator::AutoEncoder(c.try_into()?)),
            _ => Ok(Discriminator::Logistic(c.try_into()?)),
        }
    }
}

//! Checkpoint file: one tab-separated header line
//!
//! `DNCK  version  backbone  d  L  users  items  mask_hidden  text_dim
//!  head_hidden  mask_init_bias  epoch  best_recall  adam_step  config_hash`
//!
//! followed by little-endian f32 sections: the parameters, then the Adam
//! first and second moments, each in [`Model::tensors`] order.

use std::io::{Read, Write};

use super::{Backbone, Model, ModelConfig};
use crate::error::{Error, Result};

const MAGIC: &str = "DNCK";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Model,
    pub v: Model,
}

impl OptimizerState {
    pub fn new(model: &Model) -> Self {
        Self {
            step: 0,
            m: model.zeros_like(),
            v: model.zeros_like(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: OptimizerState,
    pub epoch: usize,
    pub best_recall: f64,
    pub config_hash: String,
}

impl Checkpoint {
    /// Snapshot with every tensor rounded to f32, the precision stored on
    /// disk, so a reloaded checkpoint is identical to this value.
    pub fn new(model: &Model, optimizer: &OptimizerState, epoch: usize, best_recall: f64, config_hash: &str) -> Self {
        let mut model = model.clone();
        let mut optimizer = optimizer.clone();
        model.round_to_f32();
        optimizer.m.round_to_f32();
        optimizer.v.round_to_f32();
        Self {
            model,
            optimizer,
            epoch,
            best_recall,
            config_hash: config_hash.to_string(),
        }
    }
}

fn write_tensors<W: Write>(w: &mut W, model: &Model) -> Result<()> {
    let mut buf = Vec::with_capacity(model.num_parameters() * 4);
    for (_, t) in model.tensors() {
        for v in t {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_tensors<R: Read>(r: &mut R, model: &mut Model) -> Result<()> {
    for (name, t) in model.tensors_mut() {
        let mut buf = vec![0u8; t.len() * 4];
        r.read_exact(&mut buf)
            .map_err(|e| Error::Artifact(format!("checkpoint tensor {name}: {e}")))?;
        for (v, c) in t.iter_mut().zip(buf.chunks_exact(4)) {
            *v = f32::from_le_bytes(c.try_into().unwrap()) as f64;
        }
    }
    Ok(())
}

pub fn write_checkpoint<W: Write>(w: &mut W, ck: &Checkpoint) -> Result<()> {
    let c = &ck.model.config;
    let header = [
        MAGIC.to_string(),
        VERSION.to_string(),
        c.backbone.name().to_string(),
        c.dim.to_string(),
        c.layers.to_string(),
        ck.model.num_users().to_string(),
        ck.model.num_items().to_string(),
        c.mask_hidden.to_string(),
        c.text_dim.to_string(),
        c.head_hidden.unwrap_or(0).to_string(),
        format!("{:?}", c.mask_init_bias),
        ck.epoch.to_string(),
        format!("{:?}", ck.best_recall),
        ck.optimizer.step.to_string(),
        ck.config_hash.clone(),
    ];
    w.write_all(header.join("\t").as_bytes())?;
    w.write_all(b"\n")?;
    write_tensors(w, &ck.model)?;
    write_tensors(w, &ck.optimizer.m)?;
    write_tensors(w, &ck.optimizer.v)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Checkpoint> {
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        r.read_exact(&mut byte)
            .map_err(|e| Error::Artifact(format!("checkpoint header: {e}")))?;
        if byte[0] == b'\n' {
            break;
        }
        line.push(byte[0]);
        if line.len() > 4096 {
            return Err(Error::Artifact("checkpoint header too long".into()));
        }
    }
    let line = String::from_utf8(line).map_err(|_| Error::Artifact("checkpoint header is not UTF-8".into()))?;
    let f: Vec<&str> = line.split('\t').collect();
    if f.len() != 15 || f[0] != MAGIC {
        return Err(Error::Artifact("not a checkpoint file".into()));
    }
    let bad = |what: &str| Error::Artifact(format!("checkpoint header field {what}"));
    let num = |k: usize, what: &str| f[k].parse::<usize>().map_err(|_| bad(what));
    if f[1] != VERSION.to_string() {
        return Err(Error::Artifact(format!("unsupported checkpoint version {}", f[1])));
    }
    let head_hidden = num(9, "head_hidden")?;
    let config = ModelConfig {
        backbone: Backbone::parse(f[2]).ok_or_else(|| bad("backbone"))?,
        dim: num(3, "d")?,
        layers: num(4, "L")?,
        mask_hidden: num(7, "mask_hidden")?,
        mask_init_bias: f[10].parse().map_err(|_| bad("mask_init_bias"))?,
        text_dim: num(8, "text_dim")?,
        head_hidden: (head_hidden > 0).then_some(head_hidden),
    };
    let shell = Model::zeros(config, num(5, "users")?, num(6, "items")?);
    let mut model = shell.clone();
    read_tensors(r, &mut model)?;
    let mut m = shell.zeros_like();
    read_tensors(r, &mut m)?;
    let mut v = shell.zeros_like();
    read_tensors(r, &mut v)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Artifact("trailing bytes after checkpoint tensors".into()));
    }
    Ok(Checkpoint {
        model,
        optimizer: OptimizerState {
            step: f[13].parse().map_err(|_| bad("adam_step"))?,
            m,
            v,
        },
        epoch: num(11, "epoch")?,
        best_recall: f[12].parse().map_err(|_| bad("best_recall"))?,
        config_hash: f[14].to_string(),
    })
}

//! Binary weight checkpoints.
//!
//! Little-endian: `"ISNW"`, version `u32`, entry count `u32`; per entry:
//! shadow bits `u8`, inference bits `u8`, rank `u8`, `rank` dims as `u32`,
//! then the shadow values as `i32`. Inference weights are not stored; they
//! are regenerated on load. A recurrent net appends its fixed matrix as a
//! final entry with equal shadow and inference widths.

use std::fs;
use std::path::Path;

use crate::config::{NetConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::recurrent::RecurrentWeights;
use crate::tensor::{BitWidth, IntTensor};
use crate::weights::{MixedPrecisionLayerWeights, UpdateParams};

pub const MAGIC: &[u8; 4] = b"ISNW";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointEntry {
    pub shadow_bits: u8,
    pub lp_bits: u8,
    pub shape: Vec<usize>,
    pub values: Vec<i32>,
}

pub fn entries(net: &Network) -> Vec<CheckpointEntry> {
    let mut out: Vec<CheckpointEntry> = net
        .all_weights()
        .iter()
        .map(|w| CheckpointEntry {
            shadow_bits: w.shadow_bits().bits() as u8,
            lp_bits: w.lp_bits().bits() as u8,
            shape: w.shape().to_vec(),
            values: w.shadow().data().to_vec(),
        })
        .collect();
    if let Some(r) = net.recurrent() {
        let bits = r.weights().width().bits() as u8;
        out.push(CheckpointEntry {
            shadow_bits: bits,
            lp_bits: bits,
            shape: r.weights().shape().to_vec(),
            values: r.weights().data().to_vec(),
        });
    }
    out
}

pub fn encode(entries: &[CheckpointEntry]) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&[e.shadow_bits, e.lp_bits, e.shape.len() as u8]);
        for &d in &e.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &e.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = *pos + n;
    if end > bytes.len() {
        return Err(Error::Truncated {
            what: "checkpoint",
            expected: end as u64,
            actual: bytes.len() as u64,
        });
    }
    let s = &bytes[*pos..end];
    *pos = end;
    Ok(s)
}

fn le_u32(bytes: &[u8], pos: &mut usize) -> Result<u32> {
    Ok(u32::from_le_bytes(take(bytes, pos, 4)?.try_into().expect("4 bytes")))
}

pub fn decode(bytes: &[u8]) -> Result<Vec<CheckpointEntry>> {
    let mut pos = 0;
    let magic = take(bytes, &mut pos, 4)?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            what: "checkpoint",
            expected: u32::from_be_bytes(*MAGIC),
            found: u32::from_be_bytes(magic.try_into().expect("4 bytes")),
        });
    }
    let version = le_u32(bytes, &mut pos)?;
    if version != VERSION {
        return Err(Error::BadVersion {
            what: "checkpoint",
            found: version,
        });
    }
    let n = le_u32(bytes, &mut pos)? as usize;
    let mut out = Vec::with_capacity(n.min(64));
    for _ in 0..n {
        let head = take(bytes, &mut pos, 3)?;
        let (shadow_bits, lp_bits, rank) = (head[0], head[1], head[2] as usize);
        let shape = (0..rank)
            .map(|_| le_u32(bytes, &mut pos).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let raw = take(bytes, &mut pos, len * 4)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        out.push(CheckpointEntry {
            shadow_bits,
            lp_bits,
            shape,
            values,
        });
    }
    if pos != bytes.len() {
        return Err(Error::Dataset(format!("checkpoint: {} trailing bytes", bytes.len() - pos)));
    }
    Ok(out)
}

pub fn save(net: &Network, path: &Path) -> Result<()> {
    fs::write(path, encode(&entries(net))).map_err(|e| Error::io(path, e))
}

/// Rebuild a network from checkpoint entries; the configs supply layer
/// parameters and update settings, which must agree with the stored shapes.
pub fn restore(cfg: &NetConfig, train: &TrainConfig, entries: Vec<CheckpointEntry>) -> Result<Network> {
    let trainable = cfg.trainable_layers();
    let recurrent = cfg.architecture == crate::config::Architecture::Recurrent;
    if entries.len() != trainable + recurrent as usize {
        return Err(Error::Config(format!(
            "checkpoint has {} entries, config needs {}",
            entries.len(),
            trainable + recurrent as usize
        )));
    }
    let mut it = entries.into_iter();
    let mut weights = Vec::with_capacity(trainable);
    for (i, e) in it.by_ref().take(trainable).enumerate() {
        let sb = BitWidth::new(e.shadow_bits as u32)?;
        let lb = BitWidth::new(e.lp_bits as u32)?;
        let shadow = IntTensor::from_vec(&e.shape, sb, e.values)?;
        let p = cfg.layers[i];
        let update = UpdateParams {
            eta_shift: p.eta_shift,
            decay_shift: p.decay_shift,
            clip: train.clip,
        };
        weights.push(MixedPrecisionLayerWeights::from_shadow(shadow, lb, update)?);
    }
    let rec = match it.next() {
        Some(e) => {
            let w = BitWidth::new(e.lp_bits as u32)?;
            Some(RecurrentWeights::new(IntTensor::from_vec(&e.shape, w, e.values)?)?)
        }
        None => None,
    };
    Network::from_weights(cfg, weights, rec)
}

pub fn load(cfg: &NetConfig, train: &TrainConfig, path: &Path) -> Result<Network> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    restore(cfg, train, decode(&bytes)?)
}

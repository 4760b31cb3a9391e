//! Spiking Heidelberg Digits in the `SHDB` binary event format.
//!
//! Layout, little-endian: `"SHDB"`, version `u32 = 1`, sample count `u32`;
//! then per sample: label `u32`, event count `u32`, and that many
//! `(time_us u32, channel u16)` pairs.

use std::fs;
use std::path::{Path, PathBuf};

use super::SpikeDataset;
use crate::error::{Error, Result};
use crate::tensor::{BitWidth, IntTensor};

pub const MAGIC: &[u8; 4] = b"SHDB";
pub const VERSION: u32 = 1;
pub const CHANNELS: usize = 700;
pub const CLASSES: usize = 20;
/// Largest grouped count fed to the network (4-bit).
pub const COUNT_CLIP: i32 = 15;

pub const TRAIN_FILE: &str = "shd_train.bin";
pub const TEST_FILE: &str = "shd_test.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub time_us: u32,
    pub channel: u16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventSample {
    pub label: u32,
    pub events: Vec<Event>,
}

impl EventSample {
    /// Latest event time, or 0 without events.
    pub fn duration_us(&self) -> u32 {
        self.events.last().map_or(0, |e| e.time_us)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N]> {
        let end = self.pos + N;
        if end > self.bytes.len() {
            return Err(Error::Truncated {
                what,
                expected: end as u64,
                actual: self.bytes.len() as u64,
            });
        }
        let out = self.bytes[self.pos..end].try_into().expect("N bytes");
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take::<4>(what)?))
    }

    fn u16(&mut self, what: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take::<2>(what)?))
    }
}

/// Parse and validate an `SHDB` buffer.
pub fn parse_shd(bytes: &[u8]) -> Result<Vec<EventSample>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take::<4>("shd header")?;
    if &magic != MAGIC {
        return Err(Error::BadMagic {
            what: "shd",
            expected: u32::from_be_bytes(*MAGIC),
            found: u32::from_be_bytes(magic),
        });
    }
    let version = r.u32("shd header")?;
    if version != VERSION {
        return Err(Error::BadVersion {
            what: "shd",
            found: version,
        });
    }
    let n = r.u32("shd header")? as usize;
    let mut samples = Vec::with_capacity(n.min(1 << 16));
    for sample in 0..n {
        let label = r.u32("shd sample header")?;
        if label as usize >= CLASSES {
            return Err(Error::LabelRange {
                sample,
                label,
                classes: CLASSES as u32,
            });
        }
        let count = r.u32("shd sample header")? as usize;
        let mut events = Vec::with_capacity(count.min(1 << 20));
        for index in 0..count {
            let time_us = r.u32("shd events")?;
            let channel = r.u16("shd events")?;
            if channel as usize >= CHANNELS {
                return Err(Error::ChannelRange {
                    sample,
                    channel: channel as u32,
                    limit: CHANNELS as u32,
                });
            }
            if events.last().is_some_and(|e: &Event| e.time_us > time_us) {
                return Err(Error::UnsortedEvents { sample, index });
            }
            events.push(Event { time_us, channel });
        }
        samples.push(EventSample { label, events });
    }
    if r.pos != bytes.len() {
        return Err(Error::Dataset(format!(
            "shd: {} trailing bytes after {n} samples",
            bytes.len() - r.pos
        )));
    }
    Ok(samples)
}

pub fn encode_shd(samples: &[EventSample]) -> Vec<u8> {
    let events: usize = samples.iter().map(|s| s.events.len()).sum();
    let mut out = Vec::with_capacity(12 + samples.len() * 8 + events * 6);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(samples.len() as u32).to_le_bytes());
    for s in samples {
        out.extend_from_slice(&s.label.to_le_bytes());
        out.extend_from_slice(&(s.events.len() as u32).to_le_bytes());
        for e in &s.events {
            out.extend_from_slice(&e.time_us.to_le_bytes());
            out.extend_from_slice(&e.channel.to_le_bytes());
        }
    }
    out
}

pub fn load_shd_binary(path: &Path) -> Result<Vec<EventSample>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_shd(&bytes)
}

pub fn write_shd_binary(path: &Path, samples: &[EventSample]) -> Result<()> {
    fs::write(path, encode_shd(samples)).map_err(|e| Error::io(path, e))
}

pub fn split_path(dir: &Path, train: bool) -> PathBuf {
    dir.join(if train { TRAIN_FILE } else { TEST_FILE })
}

/// Bin a sample into `t_s` equal frames over `[0, duration]`, count events
/// per channel, and sum channels in groups of `group`.
///
/// Event at time `τ` lands in frame `⌊τ · t_s / (duration + 1)⌋`. With
/// `clip = Some(c)` each grouped count is capped at `c`.
pub fn frame_and_group_raw(sample: &EventSample, timesteps: usize, group: usize, clip: Option<i32>) -> Result<Vec<i32>> {
    if timesteps == 0 || group == 0 || CHANNELS % group != 0 {
        return Err(Error::InvalidParameter(format!(
            "framing needs t_s >= 1 and a group dividing {CHANNELS} (t_s {timesteps}, group {group})"
        )));
    }
    let inputs = CHANNELS / group;
    let mut out = vec![0i32; timesteps * inputs];
    let span = sample.duration_us() as u64 + 1;
    for e in &sample.events {
        if e.channel as usize >= CHANNELS {
            return Err(Error::ChannelRange {
                sample: 0,
                channel: e.channel as u32,
                limit: CHANNELS as u32,
            });
        }
        let frame = (e.time_us as u64 * timesteps as u64 / span) as usize;
        out[frame * inputs + e.channel as usize / group] += 1;
    }
    if let Some(c) = clip {
        out.iter_mut().for_each(|x| *x = (*x).min(c));
    }
    Ok(out)
}

/// [`frame_and_group_raw`] with the default 4-bit clip, as `[t_s, 700/group]`.
pub fn frame_and_group(sample: &EventSample, timesteps: usize, group: usize) -> Result<IntTensor> {
    let data = frame_and_group_raw(sample, timesteps, group, Some(COUNT_CLIP))?;
    IntTensor::from_vec(&[timesteps, CHANNELS / group], BitWidth::W16, data)
}

/// Event samples with a fixed grouping, usable as a training set.
#[derive(Debug, Clone)]
pub struct ShdSet {
    pub samples: Vec<EventSample>,
    pub group: usize,
    pub clip: Option<i32>,
}

impl ShdSet {
    pub fn new(samples: Vec<EventSample>) -> Self {
        ShdSet {
            samples,
            group: 4,
            clip: Some(COUNT_CLIP),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::new(load_shd_binary(path)?))
    }
}

impl SpikeDataset for ShdSet {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn inputs(&self) -> usize {
        CHANNELS / self.group
    }

    fn classes(&self) -> usize {
        CLASSES
    }

    fn input_max(&self) -> u32 {
        self.clip.map_or(u16::MAX as u32, |c| c as u32)
    }

    fn label(&self, idx: usize) -> usize {
        self.samples[idx].label as usize
    }

    fn encode_sample(&self, idx: usize, timesteps: usize, _seed: u64) -> Result<Vec<i32>> {
        frame_and_group_raw(&self.samples[idx], timesteps, self.group, self.clip)
    }
}

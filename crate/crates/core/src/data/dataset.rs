//! `.rdset` trajectory files.
//!
//! Layout: the 6 magic bytes `RDSET1`, a little-endian `u64` header length,
//! a UTF-8 JSON header, then for each trajectory in order its `T×C×H×W`
//! frame values as little-endian `f32`, followed by `H×W` mask bytes
//! (`0`/`1`) when that trajectory's mask flag is set.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Field, Mask, Trajectory};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 6] = b"RDSET1";

/// Which split a file holds. Loading code refuses to mix them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Untagged,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub trajectories: Vec<Trajectory>,
}

/// Trajectories known to come from the training split.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSplit(Vec<Trajectory>);

/// Trajectories known to come from the evaluation split.
#[derive(Clone, Debug, PartialEq)]
pub struct TestSplit(Vec<Trajectory>);

impl TrainSplit {
    pub fn new(trajectories: Vec<Trajectory>) -> Self {
        Self(trajectories)
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.0
    }

    pub fn map(&self, f: impl Fn(&Trajectory) -> Result<Trajectory>) -> Result<Self> {
        Ok(Self(self.0.iter().map(f).collect::<Result<_>>()?))
    }
}

impl TestSplit {
    pub fn new(trajectories: Vec<Trajectory>) -> Self {
        Self(trajectories)
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.0
    }

    pub fn map(&self, f: impl Fn(&Trajectory) -> Result<Trajectory>) -> Result<Self> {
        Ok(Self(self.0.iter().map(f).collect::<Result<_>>()?))
    }
}

impl Dataset {
    pub fn into_train(self) -> Result<TrainSplit> {
        match self.split {
            Split::Train => Ok(TrainSplit(self.trajectories)),
            s => Err(Error::Config(format!("expected a train split, file is tagged {s:?}"))),
        }
    }

    pub fn into_test(self) -> Result<TestSplit> {
        match self.split {
            Split::Test => Ok(TestSplit(self.trajectories)),
            s => Err(Error::Config(format!("expected a test split, file is tagged {s:?}"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    split: Split,
    count: usize,
    channels: usize,
    height: usize,
    width: usize,
    frames: usize,
    dt: Vec<f64>,
    thetas: Vec<f64>,
    masks: Vec<bool>,
}

pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    let first = ds.trajectories.first().ok_or(Error::EmptyDataset)?;
    let (c, h, w) = first
        .shape()
        .ok_or_else(|| Error::Invalid("trajectory has no frames".into()))?;
    let t = first.len();
    for tr in &ds.trajectories {
        tr.validate()?;
        if tr.shape() != Some((c, h, w)) || tr.len() != t {
            return Err(Error::shape(
                "write_dataset",
                "all trajectories in a file must share (T, C, H, W)",
            ));
        }
        if tr.control.is_some() {
            return Err(Error::Invalid("control inputs are not supported".into()));
        }
    }
    let header = Header {
        split: ds.split,
        count: ds.trajectories.len(),
        channels: c,
        height: h,
        width: w,
        frames: t,
        dt: ds.trajectories.iter().map(|t| t.dt).collect(),
        thetas: ds.trajectories.iter().map(|t| t.theta).collect(),
        masks: ds.trajectories.iter().map(|t| t.mask.is_some()).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for tr in &ds.trajectories {
        for f in &tr.frames {
            for &v in f.values() {
                let s = v as f32;
                if s as f64 != v && !v.is_nan() {
                    return Err(Error::Invalid(format!(
                        "value {v} is not representable in f32 storage"
                    )));
                }
                out.extend_from_slice(&s.to_le_bytes());
            }
        }
        if let Some(m) = &tr.mask {
            out.extend(m.cells().iter().map(|&b| b as u8));
        }
    }
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < 6 || &bytes[..6] != DATASET_MAGIC {
        return Err(Error::BadMagic);
    }
    let hlen = bytes
        .get(6..14)
        .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")) as usize)
        .ok_or_else(|| Error::Format("truncated header".into()))?;
    let header: Header = serde_json::from_slice(
        bytes
            .get(14..14 + hlen)
            .ok_or_else(|| Error::Format("truncated header".into()))?,
    )?;
    if header.count == 0 {
        return Err(Error::EmptyDataset);
    }
    if header.dt.len() != header.count
        || header.thetas.len() != header.count
        || header.masks.len() != header.count
    {
        return Err(Error::Format("header lists disagree with count".into()));
    }
    let (c, h, w, t) = (header.channels, header.height, header.width, header.frames);
    let frame_len = c * h * w;
    let mut cursor = 14 + hlen;
    let mut trajectories = Vec::with_capacity(header.count);
    for i in 0..header.count {
        let mut frames = Vec::with_capacity(t);
        for _ in 0..t {
            let end = cursor + frame_len * 4;
            let raw = bytes
                .get(cursor..end)
                .ok_or_else(|| Error::Format("truncated payload".into()))?;
            cursor = end;
            let values = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
                .collect();
            frames.push(Field::new(c, h, w, values)?);
        }
        let mask = if header.masks[i] {
            let raw = bytes
                .get(cursor..cursor + h * w)
                .ok_or_else(|| Error::Format("truncated payload".into()))?;
            cursor += h * w;
            Some(Mask::new(h, w, raw.iter().map(|&b| b != 0).collect())?)
        } else {
            None
        };
        let tr = Trajectory {
            frames,
            dt: header.dt[i],
            theta: header.thetas[i],
            control: None,
            mask,
        };
        tr.validate()?;
        trajectories.push(tr);
    }
    if cursor != bytes.len() {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    Ok(Dataset {
        split: header.split,
        trajectories,
    })
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let bytes = encode_dataset(ds)?;
    crate::fsio::write_atomic(path, &bytes)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{simulate_reaction_diffusion, GrayScottConfig};

    fn small() -> Dataset {
        let cfg = GrayScottConfig {
            burn_in_frames: 0,
            substeps_per_frame: 5,
            ..GrayScottConfig::default()
        };
        let mut tr = simulate_reaction_diffusion((16, 16), 3, 0.25, 3, &cfg).unwrap();
        let mut mask = Mask::empty(16, 16);
        mask.set(3, 4, true);
        tr.mask = Some(mask);
        let tr2 = simulate_reaction_diffusion((16, 16), 3, 0.75, 4, &cfg).unwrap();
        Dataset {
            split: Split::Train,
            trajectories: vec![tr, tr2],
        }
    }

    #[test]
    fn roundtrip_bit_exact() {
        let ds = small();
        let back = decode_dataset(&encode_dataset(&ds).unwrap()).unwrap();
        assert_eq!(back, ds);
        for (a, b) in back.trajectories.iter().zip(&ds.trajectories) {
            assert_eq!(a.theta.to_bits(), b.theta.to_bits());
            assert_eq!(a.dt.to_bits(), b.dt.to_bits());
        }
    }

    #[test]
    fn empty_dataset_rejected() {
        let ds = Dataset {
            split: Split::Train,
            trajectories: vec![],
        };
        let err = encode_dataset(&ds).unwrap_err();
        assert_eq!(err.to_string(), "empty dataset");
    }

    #[test]
    fn mangled_magic_rejected() {
        let mut bytes = encode_dataset(&small()).unwrap();
        bytes[2] = b'Z';
        assert_eq!(decode_dataset(&bytes).unwrap_err().to_string(), "bad magic");
    }

    #[test]
    fn truncated_payload_rejected() {
        let bytes = encode_dataset(&small()).unwrap();
        assert!(matches!(
            decode_dataset(&bytes[..bytes.len() - 10]),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn inconsistent_shapes_rejected() {
        let mut ds = small();
        ds.trajectories[1].frames.pop();
        assert!(matches!(encode_dataset(&ds), Err(Error::Shape { .. })));
    }

    #[test]
    fn split_tags_are_enforced() {
        let ds = small();
        assert!(ds.clone().into_train().is_ok());
        assert!(ds.into_test().is_err());
    }
}

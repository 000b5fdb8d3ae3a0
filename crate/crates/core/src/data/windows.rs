use super::{Field, Trajectory};
use crate::error::{Error, Result};

/// One next-step example borrowed from a trajectory.
#[derive(Clone, Copy, Debug)]
pub struct TrainingExample<'a> {
    /// `k` consecutive frames, oldest first.
    pub context: &'a [Field],
    pub target: &'a Field,
    pub theta: f64,
}

/// Slices a trajectory into its `T − k` next-step examples.
pub fn make_examples(traj: &Trajectory, k: usize) -> Result<Vec<TrainingExample<'_>>> {
    if k == 0 {
        return Err(Error::Invalid("context length must be >= 1".into()));
    }
    let t = traj.len();
    if t < k + 1 {
        return Err(Error::Invalid(format!("trajectory of {t} frames is too short for k = {k}")));
    }
    Ok((0..t - k)
        .map(|i| TrainingExample {
            context: &traj.frames[i..i + k],
            target: &traj.frames[i + k],
            theta: traj.theta,
        })
        .collect())
}

/// Block-mean pooling by `factor` in both spatial directions.
pub fn downsample(field: &Field, factor: usize) -> Result<Field> {
    let (c, h, w) = field.shape();
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::Invalid(format!("factor {factor} does not divide {h}x{w}")));
    }
    if factor == 1 {
        return Ok(field.clone());
    }
    let (oh, ow) = (h / factor, w / factor);
    let inv = 1.0 / (factor * factor) as f64;
    let mut out = Field::zeros(c, oh, ow);
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                // Offsets from the block's first cell keep constant blocks exact.
                let base = field.get(ch, y * factor, x * factor);
                let mut s = 0.0;
                for dy in 0..factor {
                    for dx in 0..factor {
                        s += field.get(ch, y * factor + dy, x * factor + dx) - base;
                    }
                }
                let i = out.index(ch, y, x);
                out.values_mut()[i] = base + s * inv;
            }
        }
    }
    Ok(out)
}

/// Nearest-neighbour replication by `factor`.
pub fn upsample_replicate(field: &Field, factor: usize) -> Field {
    let (c, h, w) = field.shape();
    let mut out = Field::zeros(c, h * factor, w * factor);
    for ch in 0..c {
        for y in 0..h * factor {
            for x in 0..w * factor {
                let i = out.index(ch, y, x);
                out.values_mut()[i] = field.get(ch, y / factor, x / factor);
            }
        }
    }
    out
}

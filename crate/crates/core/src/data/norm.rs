use serde::{Deserialize, Serialize};

use super::{Field, TrainSplit};
use crate::error::{Error, Result};

/// Per-channel mean and standard deviation of the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Fits statistics over every frame of every training trajectory.
///
/// Only a [`TrainSplit`] is accepted, so evaluation data cannot leak in.
pub fn fit_normalization(train: &TrainSplit) -> Result<NormStats> {
    let trs = train.trajectories();
    let channels = trs
        .iter()
        .find_map(|t| t.shape())
        .map(|s| s.0)
        .ok_or_else(|| Error::Invalid("no frames to fit normalization on".into()))?;
    let mut count = 0usize;
    let mut sum = vec![0.0; channels];
    for f in trs.iter().flat_map(|t| &t.frames) {
        if f.channels() != channels {
            return Err(Error::shape("fit_normalization", "channel count differs"));
        }
        for (c, s) in sum.iter_mut().enumerate() {
            *s += f.channel(c).iter().sum::<f64>();
        }
        count += f.height() * f.width();
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let mut sq = vec![0.0; channels];
    for f in trs.iter().flat_map(|t| &t.frames) {
        for (c, s) in sq.iter_mut().enumerate() {
            *s += f.channel(c).iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>();
        }
    }
    let std: Vec<f64> = sq.iter().map(|s| (s / count as f64).sqrt()).collect();
    if let Some(c) = std.iter().position(|&s| !(s > 1e-12)) {
        return Err(Error::Invalid(format!("channel {c} has zero variance")));
    }
    Ok(NormStats { mean, std })
}

impl NormStats {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    fn check(&self, f: &Field) -> Result<()> {
        if f.channels() != self.mean.len() {
            return Err(Error::shape(
                "normalization",
                format!("{} stats vs {} channels", self.mean.len(), f.channels()),
            ));
        }
        Ok(())
    }

    pub fn apply(&self, f: &Field) -> Result<Field> {
        self.check(f)?;
        let mut out = f.clone();
        let n = f.height() * f.width();
        for (i, v) in out.values_mut().iter_mut().enumerate() {
            let c = i / n;
            *v = (*v - self.mean[c]) / self.std[c];
        }
        Ok(out)
    }

    pub fn invert(&self, f: &Field) -> Result<Field> {
        self.check(f)?;
        let mut out = f.clone();
        let n = f.height() * f.width();
        for (i, v) in out.values_mut().iter_mut().enumerate() {
            let c = i / n;
            *v = *v * self.std[c] + self.mean[c];
        }
        Ok(out)
    }
}

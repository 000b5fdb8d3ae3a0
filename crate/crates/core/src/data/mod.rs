//! Fields, trajectories and the synthetic data pipeline.

mod dataset;
mod gray_scott;
mod norm;
mod windows;

pub use dataset::{decode_dataset, encode_dataset, read_dataset, write_dataset, Dataset, Split, TestSplit, TrainSplit, DATASET_MAGIC};
pub use gray_scott::{simulate_reaction_diffusion, GrayScottConfig};
pub use norm::{fit_normalization, NormStats};
pub use windows::{downsample, make_examples, upsample_replicate, TrainingExample};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `C×H×W` snapshot, channel-major then row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Field {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::shape("field", "zero-sized dimension"));
        }
        if values.len() != channels * height * width {
            return Err(Error::shape(
                "field",
                format!(
                    "{channels}x{height}x{width} needs {} values, got {}",
                    channels * height * width,
                    values.len()
                ),
            ));
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            values: vec![0.0; channels * height * width],
        }
    }

    pub fn filled(channels: usize, height: usize, width: usize, v: f64) -> Self {
        Self {
            channels,
            height,
            width,
            values: vec![v; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.values[self.index(c, y, x)]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.values[c * n..(c + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Field) -> bool {
        self.shape() == other.shape()
    }

    /// Stacks fields along the channel axis.
    pub fn stack(fields: &[Field]) -> Result<Field> {
        let first = fields
            .first()
            .ok_or_else(|| Error::shape("stack", "no fields"))?;
        if fields.iter().any(|f| f.height != first.height || f.width != first.width) {
            return Err(Error::shape("stack", "spatial sizes differ"));
        }
        let channels = fields.iter().map(|f| f.channels).sum();
        let values = fields.iter().flat_map(|f| f.values.iter().copied()).collect();
        Field::new(channels, first.height, first.width, values)
    }
}

/// Boolean `H×W` grid; `true` marks an excluded (obstacle) cell.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    height: usize,
    width: usize,
    cells: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != height * width {
            return Err(Error::shape("mask", format!("{height}x{width} vs {}", cells.len())));
        }
        Ok(Self {
            height,
            width,
            cells,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            cells: vec![false; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn is_masked(&self, y: usize, x: usize) -> bool {
        self.cells[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, masked: bool) {
        self.cells[y * self.width + x] = masked;
    }

    pub fn unmasked_count(&self) -> usize {
        self.cells.iter().filter(|m| !**m).count()
    }

    /// A coarse cell is masked when any of its fine cells is.
    pub fn downsample(&self, factor: usize) -> Result<Mask> {
        if factor == 0 || self.height % factor != 0 || self.width % factor != 0 {
            return Err(Error::Invalid(format!(
                "factor {factor} does not divide {}x{}",
                self.height, self.width
            )));
        }
        let (h, w) = (self.height / factor, self.width / factor);
        let mut out = Mask::empty(h, w);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.is_masked(y, x) {
                    out.set(y / factor, x / factor, true);
                }
            }
        }
        Ok(out)
    }
}

/// An ordered run of frames sharing one conditioning parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub frames: Vec<Field>,
    /// Time between consecutive frames.
    pub dt: f64,
    pub theta: f64,
    /// Reserved per-frame control inputs. Unsupported by the model.
    pub control: Option<Vec<Vec<f64>>>,
    pub mask: Option<Mask>,
}

impl Trajectory {
    pub fn new(frames: Vec<Field>, dt: f64, theta: f64) -> Result<Self> {
        let t = Self {
            frames,
            dt,
            theta,
            control: None,
            mask: None,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn shape(&self) -> Option<(usize, usize, usize)> {
        self.frames.first().map(Field::shape)
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self
            .shape()
            .ok_or_else(|| Error::Invalid("trajectory has no frames".into()))?;
        if self.frames.iter().any(|f| f.shape() != shape) {
            return Err(Error::shape("trajectory", "frames differ in shape"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Invalid(format!("frame spacing dt = {} must be > 0", self.dt)));
        }
        if let Some(m) = &self.mask {
            if (m.height(), m.width()) != (shape.1, shape.2) {
                return Err(Error::shape("trajectory", "mask size differs from frames"));
            }
        }
        Ok(())
    }

    /// Mask or an all-clear grid when none is attached.
    pub fn mask_or_empty(&self) -> Mask {
        match (&self.mask, self.shape()) {
            (Some(m), _) => m.clone(),
            (None, Some((_, h, w))) => Mask::empty(h, w),
            (None, None) => Mask::empty(0, 0),
        }
    }

    pub fn downsample(&self, factor: usize) -> Result<Trajectory> {
        let frames = self
            .frames
            .iter()
            .map(|f| downsample(f, factor))
            .collect::<Result<Vec<_>>>()?;
        Ok(Trajectory {
            frames,
            dt: self.dt,
            theta: self.theta,
            control: self.control.clone(),
            mask: self.mask.as_ref().map(|m| m.downsample(factor)).transpose()?,
        })
    }
}

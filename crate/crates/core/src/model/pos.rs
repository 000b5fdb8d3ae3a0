use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Fixed 2D sinusoidal table: the first half of the width encodes the patch
/// row, the second half the patch column.
#[derive(Clone, Debug, PartialEq)]
pub struct PosEmbed {
    table: Tensor,
}

impl PosEmbed {
    pub fn new(grid_h: usize, grid_w: usize, dim: usize) -> Result<Self> {
        if dim % 4 != 0 {
            return Err(Error::Config(format!("token width {dim} must be divisible by 4")));
        }
        let half = dim / 2;
        let quarter = half / 2;
        let omega: Vec<f64> = (0..quarter)
            .map(|i| 1.0 / 10000f64.powf(i as f64 / quarter as f64))
            .collect();
        let mut data = Vec::with_capacity(grid_h * grid_w * dim);
        for gy in 0..grid_h {
            for gx in 0..grid_w {
                for pos in [gy as f64, gx as f64] {
                    data.extend(omega.iter().map(|w| (pos * w).sin()));
                    data.extend(omega.iter().map(|w| (pos * w).cos()));
                }
            }
        }
        Ok(Self {
            table: Tensor::new(vec![grid_h * grid_w, dim], data)?,
        })
    }

    pub fn zeros(tokens: usize, dim: usize) -> Self {
        Self {
            table: Tensor::zeros(vec![tokens, dim]),
        }
    }

    pub fn table(&self) -> &Tensor {
        &self.table
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_distinct_rows() {
        let a = PosEmbed::new(4, 3, 8).unwrap();
        assert_eq!(a, PosEmbed::new(4, 3, 8).unwrap());
        let t = a.table().data();
        for i in 0..12 {
            for j in i + 1..12 {
                assert_ne!(&t[i * 8..(i + 1) * 8], &t[j * 8..(j + 1) * 8]);
            }
        }
        // token 0 sits at the origin: sin terms 0, cos terms 1
        assert_eq!(&t[..8], &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn width_must_split_in_quarters() {
        assert!(PosEmbed::new(2, 2, 6).is_err());
    }
}

//! Patch tokenization.
//!
//! Patches are enumerated row-major over the `(H/P)×(W/P)` patch grid. Within
//! a patch the vector is laid out channel-major, then row-major over the
//! `P×P` cells, so column `(c·P + dy)·P + dx` holds channel `c` at offset
//! `(dy, dx)`.

use crate::data::Field;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_divides(p: usize, h: usize, w: usize) -> Result<()> {
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::shape(
            "patchify",
            format!("patch size {p} must divide {h}x{w}"),
        ));
    }
    Ok(())
}

/// `C×H×W` field to an `N×(C·P²)` matrix.
pub fn patchify(field: &Field, p: usize) -> Result<Tensor> {
    let (c, h, w) = field.shape();
    check_divides(p, h, w)?;
    let (gh, gw) = (h / p, w / p);
    let dim = c * p * p;
    let vals = field.values();
    let mut out = vec![0.0; gh * gw * dim];
    for py in 0..gh {
        for px in 0..gw {
            let row = &mut out[(py * gw + px) * dim..(py * gw + px + 1) * dim];
            for ch in 0..c {
                for dy in 0..p {
                    let src = (ch * h + py * p + dy) * w + px * p;
                    let dst = (ch * p + dy) * p;
                    row[dst..dst + p].copy_from_slice(&vals[src..src + p]);
                }
            }
        }
    }
    Tensor::new(vec![gh * gw, dim], out)
}

/// Inverse of [`patchify`].
pub fn unpatchify(patches: &Tensor, channels: usize, p: usize, h: usize, w: usize) -> Result<Field> {
    check_divides(p, h, w)?;
    let (gh, gw) = (h / p, w / p);
    let dim = channels * p * p;
    let (n, d) = patches.dims2()?;
    if n != gh * gw || d != dim {
        return Err(Error::shape(
            "unpatchify",
            format!("[{n},{d}] does not tile {channels}x{h}x{w} with P={p}"),
        ));
    }
    let src = patches.data();
    let mut vals = vec![0.0; channels * h * w];
    for py in 0..gh {
        for px in 0..gw {
            let row = &src[(py * gw + px) * dim..(py * gw + px + 1) * dim];
            for ch in 0..channels {
                for dy in 0..p {
                    let dst = (ch * h + py * p + dy) * w + px * p;
                    let s = (ch * p + dy) * p;
                    vals[dst..dst + p].copy_from_slice(&row[s..s + p]);
                }
            }
        }
    }
    Field::new(channels, h, w, vals)
}

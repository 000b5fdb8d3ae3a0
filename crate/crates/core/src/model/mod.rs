//! Patch-token transformer that maps a noised next state, its history window
//! and the global `(tau, theta)` condition to a field-shaped output.

mod net;
mod patch;
mod pos;

pub use net::{tau_features, tau_features_lipschitz, BlockIds, Linear, Model, ModelIds, PatchEmbed};
pub use patch::{patchify, unpatchify};
pub use pos::PosEmbed;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    /// Token width `D`.
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    /// History length `k`.
    pub context: usize,
    pub mlp_ratio: usize,
    /// Rank `d′` of the factorized patch embedding, if any.
    #[serde(default)]
    pub bottleneck: Option<usize>,
    /// Number of sinusoidal features fed to the `tau` MLP.
    #[serde(default = "default_tau_features")]
    pub tau_features: usize,
}

fn default_tau_features() -> usize {
    32
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return bad("field dimensions must be positive".into());
        }
        if self.patch == 0 || self.height % self.patch != 0 || self.width % self.patch != 0 {
            return bad(format!(
                "patch size {} must divide {}x{}",
                self.patch, self.height, self.width
            ));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return bad(format!("width {} not divisible by {} heads", self.dim, self.heads));
        }
        if self.dim % 4 != 0 {
            return bad(format!("width {} must be divisible by 4", self.dim));
        }
        if self.depth == 0 || self.mlp_ratio == 0 || self.context == 0 {
            return bad("depth, mlp_ratio and context must be >= 1".into());
        }
        if self.tau_features == 0 || self.tau_features % 2 != 0 {
            return bad("tau_features must be a positive even number".into());
        }
        if let Some(d) = self.bottleneck {
            let limit = self.token_dim().min(self.dim);
            if d == 0 || d >= limit {
                return bad(format!(
                    "bottleneck {d} must satisfy 0 < d' < min(C*P^2, D) = {limit}"
                ));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height / self.patch, self.width / self.patch)
    }

    pub fn tokens(&self) -> usize {
        let (gh, gw) = self.grid();
        gh * gw
    }

    /// Per-token ambient dimension `C·P²`.
    pub fn token_dim(&self) -> usize {
        self.channels * self.patch * self.patch
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

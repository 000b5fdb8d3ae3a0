use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::flow::{LossKind, SamplerConfig, TargetKind, DEFAULT_TAU_MIN};
use crate::metrics::ProbeSpec;
use crate::model::ModelConfig;
use crate::tensor::AdamConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// Linear warmup length in updates.
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    #[serde(default)]
    pub adam: AdamConfig,
}

fn default_lr() -> f64 {
    3e-4
}

fn default_warmup() -> usize {
    500
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: default_lr(),
            warmup: default_warmup(),
            adam: AdamConfig::default(),
        }
    }
}

impl OptimConfig {
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.warmup == 0 {
            self.lr
        } else {
            self.lr * ((step + 1) as f64 / self.warmup as f64).min(1.0)
        }
    }
}

/// One point of the two-resolution protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolutionSetting {
    pub name: String,
    /// Block-mean factor applied to the stored data.
    pub downsample: usize,
    pub patch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub train_data: PathBuf,
    pub test_data: PathBuf,
    /// Block-mean factor applied to both splits on load.
    #[serde(default = "one")]
    pub downsample: usize,
    /// `channels`, `height` and `width` must match the loaded data.
    pub model: ModelConfig,
    #[serde(default = "default_target")]
    pub target: TargetKind,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub optimizer: OptimConfig,
    pub updates: usize,
    pub batch_size: usize,
    /// Rollout horizon `Hr`.
    pub horizon: usize,
    /// Stochastic samples `S` per test trajectory.
    #[serde(default = "default_samples")]
    pub samples: usize,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub probe: Option<ProbeSpec>,
    #[serde(default = "default_tau_min")]
    pub tau_min: f64,
    /// Checkpoint interval in updates; 0 keeps only the final one.
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Per-step MSE cap as a multiple of the reference field variance.
    #[serde(default = "default_cap")]
    pub mse_cap_factor: f64,
    /// First frame of the initial context inside each test trajectory.
    #[serde(default)]
    pub eval_start: usize,
    #[serde(default)]
    pub max_test_trajectories: Option<usize>,
    /// Grid cells to run; all nine when absent.
    #[serde(default)]
    pub cells: Option<Vec<(TargetKind, LossKind)>>,
    #[serde(default)]
    pub resolutions: Vec<ResolutionSetting>,
    #[serde(default)]
    pub bottleneck_dims: Vec<usize>,
    /// Skip training and forecast by persistence (harness checks).
    #[serde(default)]
    pub stub: bool,
    /// Use the signed frame increment in the temporal diagnostic.
    #[serde(default)]
    pub signed_change: bool,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

fn one() -> usize {
    1
}

fn default_target() -> TargetKind {
    TargetKind::X
}

fn default_loss() -> LossKind {
    LossKind::V
}

fn default_samples() -> usize {
    3
}

fn default_tau_min() -> f64 {
    DEFAULT_TAU_MIN
}

fn default_cap() -> f64 {
    100.0
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        // relative data paths are taken from the config's directory
        if let Some(dir) = path.parent() {
            for p in [&mut cfg.train_data, &mut cfg.test_data] {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// Checks that do not need the data.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.name.is_empty() || self.name.contains(|c: char| !(c.is_ascii_alphanumeric() || "-_.".contains(c))) {
            return bad(format!("experiment name {:?} must be [A-Za-z0-9._-]+", self.name));
        }
        self.model.validate()?;
        self.sampler.validate()?;
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.horizon == 0 || self.samples == 0 {
            return bad("horizon and samples must be >= 1".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.downsample == 0 {
            return bad("downsample factor must be >= 1".into());
        }
        if !(self.tau_min > 0.0 && self.tau_min < 0.5) {
            return bad(format!("tau_min {} outside (0, 0.5)", self.tau_min));
        }
        if !(self.optimizer.lr > 0.0) {
            return bad("learning rate must be positive".into());
        }
        if !(self.mse_cap_factor > 0.0) {
            return bad("mse_cap_factor must be positive".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn grid_cells(&self) -> Vec<(TargetKind, LossKind)> {
        self.cells.clone().unwrap_or_else(|| {
            LossKind::ALL
                .iter()
                .flat_map(|&l| TargetKind::ALL.iter().map(move |&t| (t, l)))
                .collect()
        })
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(&self.name)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub fn sample_json() -> &'static str {
        r#"{
            "name": "demo",
            "train_data": "train.rdset",
            "test_data": "test.rdset",
            "model": {"channels": 2, "height": 16, "width": 16, "patch": 4, "dim": 16,
                      "depth": 1, "heads": 2, "context": 2, "mlp_ratio": 2},
            "updates": 3,
            "batch_size": 2,
            "horizon": 4,
            "seeds": [1]
        }"#
    }

    #[test]
    fn defaults_fill_in() {
        let c: ExperimentConfig = serde_json::from_str(sample_json()).unwrap();
        c.validate().unwrap();
        assert_eq!(c.optimizer.lr, 3e-4);
        assert_eq!(c.optimizer.warmup, 500);
        assert_eq!(c.samples, 3);
        assert_eq!((c.target, c.loss), (TargetKind::X, LossKind::V));
        assert_eq!(c.sampler, SamplerConfig::default());
        assert_eq!(c.grid_cells().len(), 9);
        assert_eq!(c.model.tau_features, 32);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = sample_json().replace("\"updates\"", "\"updatez\": 1, \"updates\"");
        assert!(serde_json::from_str::<ExperimentConfig>(&text).is_err());
    }

    #[test]
    fn warmup_schedule() {
        let o = OptimConfig { lr: 1.0, warmup: 4, ..OptimConfig::default() };
        let lrs: Vec<f64> = (0..6).map(|s| o.lr_at(s)).collect();
        assert_eq!(lrs, vec![0.25, 0.5, 0.75, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn hash_tracks_content() {
        let a: ExperimentConfig = serde_json::from_str(sample_json()).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.updates += 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn bad_name_rejected() {
        let mut c: ExperimentConfig = serde_json::from_str(sample_json()).unwrap();
        c.name = "a/b".into();
        assert!(c.validate().is_err());
    }
}

//! Configuration, the seeded training loop and the experiment protocols.

mod config;
mod eval;
mod manifest;
mod protocols;
mod train;

pub use config::{ExperimentConfig, OptimConfig, ResolutionSetting};
pub use eval::{evaluate, EvalRecords, EvalSummary};
pub use manifest::{hash_file, sha256_hex, FileEntry, Phase, RunManifest, RunRecorder};
pub use protocols::{
    check_matched_protocol, median, normalize_test, resolution_config, run_bottleneck_sweep, run_cell,
    run_evaluation, run_resolution_protocol, run_target_loss_grid, run_training, GridCell, GridReport, PreparedData,
    RawData, ResolutionReport, SeedResult, Sinks, SweepRow,
};
pub use train::{checkpoint_meta, moving_average, normalize_split, normalize_trajectory, train, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::data::{simulate_reaction_diffusion, Dataset, GrayScottConfig, Split};
use crate::error::{Error, Result};

/// Inputs of `generate-data`: one trajectory per `(theta, seed)` pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSpec {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub thetas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub split: Split,
    #[serde(default)]
    pub solver: GrayScottConfig,
}

pub fn generate_dataset(spec: &GenerateSpec) -> Result<Dataset> {
    if spec.thetas.is_empty() || spec.seeds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut trajectories = Vec::with_capacity(spec.thetas.len() * spec.seeds.len());
    for &theta in &spec.thetas {
        for &seed in &spec.seeds {
            trajectories.push(simulate_reaction_diffusion(
                (spec.height, spec.width),
                spec.frames,
                theta,
                seed,
                &spec.solver,
            )?);
        }
    }
    Ok(Dataset {
        split: spec.split,
        trajectories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Field, TestSplit, TrainSplit, Trajectory};
    use crate::flow::{LossKind, TargetKind};

    fn traj(theta: f64, t: usize, phase: f64) -> Trajectory {
        let frames = (0..t)
            .map(|i| {
                Field::new(
                    2,
                    8,
                    8,
                    (0..128)
                        .map(|j| ((j % 8) as f64 * 0.8 + phase + i as f64 * 0.3 * (1.0 + theta)).sin() + 0.1 * (j / 64) as f64)
                        .collect(),
                )
                .unwrap()
            })
            .collect();
        Trajectory::new(frames, 0.5, theta).unwrap()
    }

    fn raw() -> RawData {
        RawData {
            train: TrainSplit::new(vec![traj(0.1, 10, 0.0), traj(0.4, 10, 1.0)]),
            test: TestSplit::new(vec![traj(0.3, 12, 2.0)]),
            hashes: Default::default(),
        }
    }

    fn cfg(out: &std::path::Path) -> ExperimentConfig {
        let mut c: ExperimentConfig = serde_json::from_str(config::tests::sample_json()).unwrap();
        c.model.height = 8;
        c.model.width = 8;
        c.model.patch = 2;
        c.model.dim = 8;
        c.model.tau_features = 4;
        c.horizon = 8;
        c.samples = 2;
        c.sampler.steps = 3;
        c.out_dir = out.to_path_buf();
        c
    }

    #[test]
    fn zero_updates_returns_initialization() {
        let c = ExperimentConfig { updates: 0, ..cfg(std::path::Path::new(".")) };
        let data = raw().prepare(1).unwrap();
        let out = train(&c, &data.train, &data.norm, 5, None).unwrap();
        assert_eq!(out.model, crate::model::Model::init(&c.model, 5).unwrap());
        assert!(out.losses.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_checkpoints_resume() {
        let dir = tempfile::tempdir().unwrap();
        let c = ExperimentConfig { updates: 4, checkpoint_every: 2, ..cfg(dir.path()) };
        let data = raw().prepare(1).unwrap();
        let stem = dir.path().join("ck");
        let a = train(&c, &data.train, &data.norm, 9, Some(&stem)).unwrap();
        let b = train(&c, &data.train, &data.norm, 9, None).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.losses, b.losses);
        assert!(a.losses.iter().all(|l| l.is_finite()));
        let ck = crate::tensor::read_checkpoint(&dir.path().join("ck_final.ckpt")).unwrap();
        assert_eq!(&ck.params, a.model.params());
        assert_eq!(ck.opt.unwrap().step, 4);
        assert!(dir.path().join("ck_step2.ckpt").exists());
        let back = crate::model::Model::from_params(&c.model, ck.params).unwrap();
        assert_eq!(back, a.model);
    }

    #[test]
    fn desk_training_reduces_loss() {
        let c = ExperimentConfig {
            updates: 300,
            batch_size: 4,
            optimizer: OptimConfig { lr: 3e-3, warmup: 20, ..OptimConfig::default() },
            ..cfg(std::path::Path::new("."))
        };
        let data = raw().prepare(1).unwrap();
        let out = train(&c, &data.train, &data.norm, 1, None).unwrap();
        let ma = moving_average(&out.losses, 100);
        assert!(ma.last().unwrap() < ma.first().unwrap(), "{ma:?}");
    }

    #[test]
    fn stub_grid_gives_identical_cells() {
        let dir = tempfile::tempdir().unwrap();
        let c = ExperimentConfig { stub: true, ..cfg(dir.path()) };
        let report = run_target_loss_grid(&c, &raw()).unwrap();
        assert_eq!(report.cells.len(), 9);
        let first = report.cells[0].median_mse();
        assert!(first > 0.0);
        assert!(report.cells.iter().all(|cell| cell.median_mse() == first));
        let table = std::fs::read_to_string(dir.path().join("demo/tables/grid.csv")).unwrap();
        assert_eq!(table.lines().count(), 4);
        assert!(table.starts_with("loss,x,eps,v\nx_loss,"));
        let manifest: RunManifest =
            serde_json::from_slice(&std::fs::read(dir.path().join("demo/manifest.json")).unwrap()).unwrap();
        for f in &manifest.files {
            assert!(dir.path().join("demo").join(&f.path).exists(), "{}", f.path);
        }
        assert!(manifest.files.iter().any(|f| f.path == "metrics/mse.csv"));
    }

    #[test]
    fn mismatched_resolutions_fail_before_training() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = cfg(dir.path());
        c.resolutions = vec![
            ResolutionSetting { name: "lo".into(), downsample: 2, patch: 2 },
            ResolutionSetting { name: "hi".into(), downsample: 1, patch: 2 },
        ];
        let err = run_resolution_protocol(&c, &raw()).unwrap_err();
        assert!(err.to_string().contains("token counts differ"), "{err}");
        assert!(!dir.path().join("demo").exists());
    }

    #[test]
    fn matched_resolutions_order_by_token_dim() {
        let mut c = cfg(std::path::Path::new("."));
        c.resolutions = vec![
            ResolutionSetting { name: "large".into(), downsample: 1, patch: 8 },
            ResolutionSetting { name: "small".into(), downsample: 4, patch: 2 },
        ];
        let s = check_matched_protocol(&c, (2, 128, 64)).unwrap();
        assert_eq!(s[0].0.name, "small");
        assert_eq!((s[0].1.model.tokens(), s[1].1.model.tokens()), (128, 128));
        assert_eq!(s[1].1.model.token_dim(), 16 * s[0].1.model.token_dim());
        let mut wide = c.clone();
        wide.resolutions = vec![
            ResolutionSetting { name: "lo".into(), downsample: 4, patch: 4 },
            ResolutionSetting { name: "hi".into(), downsample: 1, patch: 16 },
        ];
        let s = check_matched_protocol(&wide, (2, 256, 128)).unwrap();
        assert_eq!((s[0].1.model.height, s[0].1.model.width), (64, 32));
        assert_eq!((s[0].1.model.tokens(), s[1].1.model.tokens()), (128, 128));
    }

    #[test]
    fn stub_sweep_rows_and_range_check() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = ExperimentConfig { stub: true, ..cfg(dir.path()) };
        c.model.dim = 12; // C*P^2 = 8
        c.model.heads = 2;
        c.bottleneck_dims = vec![1, 2, 4, 6, 7];
        let rows = run_bottleneck_sweep(&c, &raw()).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[0].bottleneck, None);
        let table = std::fs::read_to_string(dir.path().join("demo/tables/bottleneck.csv")).unwrap();
        assert_eq!(table.lines().count(), 7);
        assert!(table.lines().nth(1).unwrap().starts_with("baseline,"));
        c.bottleneck_dims = vec![8];
        assert!(run_bottleneck_sweep(&c, &raw()).is_err());
    }

    #[test]
    fn grid_outputs_reproduce_bytewise() {
        let run = |dir: &std::path::Path| {
            let mut c = ExperimentConfig { updates: 3, ..cfg(dir) };
            c.cells = Some(vec![(TargetKind::X, LossKind::V), (TargetKind::Eps, LossKind::Eps)]);
            run_target_loss_grid(&c, &raw()).unwrap();
            let m: RunManifest =
                serde_json::from_slice(&std::fs::read(dir.join("demo/manifest.json")).unwrap()).unwrap();
            m.files
        };
        let dir = tempfile::tempdir().unwrap();
        let fa = run(dir.path());
        std::fs::remove_dir_all(dir.path().join("demo")).unwrap();
        let fb = run(dir.path());
        assert_eq!(fa, fb);
        assert!(fa.iter().any(|f| f.path.ends_with("_final.ckpt")));
        assert!(fa.iter().any(|f| f.path == "metrics/train_loss.csv"));
    }

    #[test]
    fn generator_spec_builds_one_trajectory_per_pair() {
        let spec = GenerateSpec {
            height: 16,
            width: 16,
            frames: 3,
            thetas: vec![0.1, 0.2],
            seeds: vec![1, 2, 3],
            split: Split::Train,
            solver: GrayScottConfig { burn_in_frames: 1, substeps_per_frame: 2, ..GrayScottConfig::default() },
        };
        let ds = generate_dataset(&spec).unwrap();
        assert_eq!(ds.trajectories.len(), 6);
        assert_eq!(ds.trajectories[3].theta, 0.2);
        assert!(generate_dataset(&GenerateSpec { thetas: vec![], ..spec }).is_err());
    }
}

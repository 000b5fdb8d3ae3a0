use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::ExperimentConfig;
use crate::data::{make_examples, Field, NormStats, TrainSplit, Trajectory};
use crate::error::{Error, Result};
use crate::flow::{clamp_training_tau, training_loss_graph, CouplingSample};
use crate::model::Model;
use crate::tensor::{adam_update, write_checkpoint, Checkpoint, Graph, Grads, OptState, RngState};

/// Stream id of the minibatch / noise generator (model init uses stream 0).
const DATA_STREAM: u64 = 1;

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub opt: OptState,
    /// Mean minibatch loss per update.
    pub losses: Vec<f64>,
    pub rng: RngState,
}

pub fn normalize_split(train: &TrainSplit, norm: &NormStats) -> Result<Vec<Trajectory>> {
    train
        .trajectories()
        .iter()
        .map(|t| normalize_trajectory(t, norm))
        .collect()
}

pub fn normalize_trajectory(t: &Trajectory, norm: &NormStats) -> Result<Trajectory> {
    let frames = t.frames.iter().map(|f| norm.apply(f)).collect::<Result<Vec<_>>>()?;
    Ok(Trajectory {
        frames,
        ..t.clone()
    })
}

fn randn_like(rng: &mut ChaCha8Rng, f: &Field) -> Field {
    let (c, h, w) = f.shape();
    Field::new(c, h, w, (0..c * h * w).map(|_| rng.sample(StandardNormal)).collect()).expect("shape from field")
}

/// Metadata stored alongside every checkpoint.
pub fn checkpoint_meta(cfg: &ExperimentConfig, norm: &NormStats, seed: u64) -> serde_json::Value {
    serde_json::json!({
        "experiment": cfg,
        "norm": norm,
        "seed": seed,
    })
}

/// Runs exactly `cfg.updates` optimizer steps on normalized training data.
///
/// `checkpoint_stem`, when given, receives `<stem>_step<N>.ckpt` files at the
/// configured interval and `<stem>_final.ckpt` at the end.
pub fn train(
    cfg: &ExperimentConfig,
    train: &TrainSplit,
    norm: &NormStats,
    seed: u64,
    checkpoint_stem: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mcfg = &cfg.model;
    let trajs = normalize_split(train, norm)?;
    let mut index = Vec::new();
    for (ti, t) in trajs.iter().enumerate() {
        if t.control.is_some() {
            return Err(Error::Config("control inputs are not supported by the model".into()));
        }
        if t.shape() != Some((mcfg.channels, mcfg.height, mcfg.width)) {
            return Err(Error::Config(format!(
                "training trajectory {ti} has shape {:?}, model expects {:?}",
                t.shape(),
                (mcfg.channels, mcfg.height, mcfg.width)
            )));
        }
        let n = make_examples(t, mcfg.context)?.len();
        index.extend((0..n).map(|i| (ti, i)));
    }
    if index.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut model = Model::init(mcfg, seed)?;
    let mut opt = OptState::new(model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(DATA_STREAM);
    let mut order: Vec<usize> = (0..index.len()).collect();
    let mut cursor = order.len();
    let mut losses = Vec::with_capacity(cfg.updates);
    let mut graph = Graph::new();
    let k = mcfg.context;

    let save = |model: &Model, opt: &OptState, rng: &ChaCha8Rng, name: String| -> Result<()> {
        if let Some(stem) = checkpoint_stem {
            let mut file = stem.as_os_str().to_os_string();
            file.push(name);
            let ck = Checkpoint {
                params: model.params().clone(),
                opt: Some(opt.clone()),
                rng: rng_state(rng, seed),
                meta: checkpoint_meta(cfg, norm, seed),
            };
            write_checkpoint(Path::new(&file), &ck)?;
        }
        Ok(())
    };

    for step in 0..cfg.updates {
        let mut grads = Grads::default();
        let mut total = 0.0;
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let (ti, i) = index[order[cursor]];
            cursor += 1;
            let frames = &trajs[ti].frames;
            let (context, target) = (&frames[i..i + k], &frames[i + k]);
            let theta = trajs[ti].theta;

            let tau = clamp_training_tau(cfg.target, cfg.loss, rng.random::<f64>(), cfg.tau_min);
            let eps = randn_like(&mut rng, target);
            let sample = CouplingSample::new(target.clone(), eps, tau)?;

            graph.clear();
            let y = model.forward_graph(&mut graph, &sample.z, tau, context, theta)?;
            let l = training_loss_graph(&mut graph, cfg.target, cfg.loss, y, &sample, mcfg.patch, cfg.tau_min)?;
            let value = graph.value(l).item();
            if !value.is_finite() {
                return Err(Error::Diverged {
                    step,
                    detail: format!("loss {value} for {} / {}", cfg.target, cfg.loss),
                });
            }
            let g = graph.backward(l).map_err(|e| Error::Diverged {
                step,
                detail: e.to_string(),
            })?;
            grads.accumulate(&g);
            total += value;
        }
        grads.scale(1.0 / cfg.batch_size as f64);
        adam_update(model.params_mut(), &grads, &mut opt, cfg.optimizer.lr_at(step), &cfg.optimizer.adam)
            .map_err(|e| Error::Diverged {
                step,
                detail: e.to_string(),
            })?;
        losses.push(total / cfg.batch_size as f64);
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 && step + 1 < cfg.updates {
            save(&model, &opt, &rng, format!("_step{}.ckpt", step + 1))?;
        }
        if step % 50 == 0 {
            log::debug!("{} seed {seed} step {step} loss {:.5}", cfg.name, total / cfg.batch_size as f64);
        }
    }
    save(&model, &opt, &rng, "_final.ckpt".into())?;
    Ok(TrainOutcome {
        rng: rng_state(&rng, seed),
        model,
        opt,
        losses,
    })
}

fn rng_state(rng: &ChaCha8Rng, seed: u64) -> RngState {
    RngState {
        seed,
        stream: rng.get_stream(),
        word_pos: rng.get_word_pos(),
    }
}

/// Trailing-window mean used to judge whether training made progress.
pub fn moving_average(v: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || v.len() < window {
        return Vec::new();
    }
    v.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
}

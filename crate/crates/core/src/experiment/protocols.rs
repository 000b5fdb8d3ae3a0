use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::eval::{evaluate, EvalRecords, EvalSummary};
use super::manifest::{hash_file, RunRecorder};
use super::train::{normalize_trajectory, train};
use super::{ExperimentConfig, ResolutionSetting};
use crate::data::{fit_normalization, read_dataset, Field, NormStats, TestSplit, TrainSplit, Trajectory};
use crate::error::{Error, Result};
use crate::flow::{LossKind, TargetKind};
use crate::metrics::{envelope_csv, metric_csv, DiffusionForecaster, EnvelopeRow, Forecaster, MetricRow, Persistence};
use crate::model::{Model, ModelConfig};

/// Both splits as stored, before resampling and normalization.
#[derive(Clone, Debug)]
pub struct RawData {
    pub train: TrainSplit,
    pub test: TestSplit,
    /// File name to content hash.
    pub hashes: BTreeMap<String, String>,
}

impl RawData {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let train = read_dataset(&cfg.train_data)?.into_train()?;
        let test = read_dataset(&cfg.test_data)?.into_test()?;
        let mut hashes = BTreeMap::new();
        for p in [&cfg.train_data, &cfg.test_data] {
            let name = p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned());
            hashes.insert(name, hash_file(p)?);
        }
        Ok(Self { train, test, hashes })
    }

    pub fn shape(&self) -> Result<(usize, usize, usize)> {
        self.train
            .trajectories()
            .iter()
            .find_map(|t| t.shape())
            .ok_or(Error::EmptyDataset)
    }

    /// Resamples both splits, fits normalization on the training split only
    /// and normalizes the test split with it.
    pub fn prepare(&self, factor: usize) -> Result<PreparedData> {
        let train = if factor == 1 {
            self.train.clone()
        } else {
            self.train.map(|t| t.downsample(factor))?
        };
        let norm = fit_normalization(&train)?;
        let test = normalize_test(&self.test, factor, &norm)?;
        Ok(PreparedData { train, test, norm })
    }
}

/// Test trajectories downsampled and normalized with training statistics.
pub fn normalize_test(test: &TestSplit, factor: usize, norm: &NormStats) -> Result<Vec<Trajectory>> {
    test.trajectories()
        .iter()
        .map(|t| {
            if t.control.is_some() {
                return Err(Error::Config("control inputs are not supported by the model".into()));
            }
            let t = if factor == 1 { t.clone() } else { t.downsample(factor)? };
            normalize_trajectory(&t, norm)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct PreparedData {
    /// Raw physical units; training normalizes internally.
    pub train: TrainSplit,
    /// Normalized.
    pub test: Vec<Trajectory>,
    pub norm: NormStats,
}

impl PreparedData {
    pub fn check_model(&self, m: &ModelConfig) -> Result<()> {
        let want = (m.channels, m.height, m.width);
        for t in self.train.trajectories().iter().chain(&self.test) {
            if t.shape() != Some(want) {
                return Err(Error::Config(format!(
                    "data shape {:?} does not match model {:?}",
                    t.shape(),
                    want
                )));
            }
        }
        Ok(())
    }
}

/// Forecaster for a cell whose training blew up: every rollout diverges at once.
struct Blown;

impl Forecaster for Blown {
    fn next(&self, _: &[Field], _: f64, _: u64) -> Result<Field> {
        Err(Error::non_finite("training diverged"))
    }
}

/// Row buffers for every metric file of a run.
#[derive(Debug, Default)]
pub struct Sinks {
    mse: Vec<MetricRow>,
    temporal: Vec<MetricRow>,
    spectrum: Vec<MetricRow>,
    envelopes: BTreeMap<&'static str, Vec<(String, String, crate::metrics::SeriesEnvelope)>>,
    loss: String,
}

impl Sinks {
    fn absorb(&mut self, label: &str, rec: EvalRecords) {
        self.mse.extend(rec.mse);
        self.temporal.extend(rec.temporal);
        self.spectrum.extend(rec.spectrum);
        for (file, envs) in [
            ("mse_envelope", rec.mse_envelope),
            ("temporal_envelope", rec.temporal_envelope),
            ("spectrum_envelope", rec.spectrum_envelope),
        ] {
            let slot = self.envelopes.entry(file).or_default();
            slot.extend(envs.into_iter().map(|(src, e)| (label.to_string(), src, e)));
        }
    }

    fn add_losses(&mut self, label: &str, losses: &[f64], cfg: &ExperimentConfig) {
        if self.loss.is_empty() {
            self.loss.push_str("experiment,step,loss,lr\n");
        }
        for (i, l) in losses.iter().enumerate() {
            writeln!(self.loss, "{label},{},{l:e},{:e}", i + 1, cfg.optimizer.lr_at(i)).expect("string write");
        }
    }

    pub fn flush(self, rec: &mut RunRecorder) -> Result<()> {
        rec.write("metrics/mse.csv", metric_csv("t", &self.mse)?.as_bytes())?;
        rec.write("metrics/temporal.csv", metric_csv("t", &self.temporal)?.as_bytes())?;
        if !self.spectrum.is_empty() {
            rec.write("metrics/spectrum.csv", metric_csv("f_m", &self.spectrum)?.as_bytes())?;
        }
        for (file, envs) in &self.envelopes {
            if envs.is_empty() {
                continue;
            }
            let axis = if *file == "spectrum_envelope" { "f_m" } else { "t" };
            let rows: Vec<EnvelopeRow<'_>> = envs
                .iter()
                .map(|(label, src, e)| EnvelopeRow {
                    experiment: label.clone(),
                    source: src.clone(),
                    envelope: e,
                })
                .collect();
            rec.write(&format!("metrics/{file}.csv"), envelope_csv(axis, &rows)?.as_bytes())?;
        }
        if !self.loss.is_empty() {
            rec.write("metrics/train_loss.csv", self.loss.as_bytes())?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub summary: EvalSummary,
    pub training_diverged: bool,
    pub param_count: usize,
}

/// Trains (unless stubbed) and evaluates one configuration for one seed.
pub fn run_cell(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    rec: &mut RunRecorder,
    sinks: &mut Sinks,
    label: &str,
    seed: u64,
) -> Result<SeedResult> {
    cfg.validate()?;
    data.check_model(&cfg.model)?;
    let param_count = Model::init(&cfg.model, seed)?.params().count();
    if cfg.stub {
        let (summary, records) = rec.time(format!("{label}/eval"), |_| evaluate(&Persistence, cfg, &data.test, label, seed))?;
        sinks.absorb(label, records);
        return Ok(SeedResult { seed, summary, training_diverged: false, param_count });
    }
    let stem = format!("checkpoints/{label}");
    let stem_path = rec.path(&stem);
    if let Some(dir) = stem_path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let trained = rec.time(format!("{label}/train"), |_| train(cfg, &data.train, &data.norm, seed, Some(&stem_path)));
    let (summary, records, diverged) = match trained {
        Ok(out) => {
            register_checkpoints(rec, &stem, cfg)?;
            sinks.add_losses(label, &out.losses, cfg);
            let f = DiffusionForecaster {
                model: &out.model,
                target: cfg.target,
                sampler: cfg.sampler,
                tau_min: cfg.tau_min,
            };
            let (s, r) = rec.time(format!("{label}/eval"), |_| evaluate(&f, cfg, &data.test, label, seed))?;
            (s, r, false)
        }
        Err(Error::Diverged { step, detail }) => {
            log::warn!("{label}: training diverged at step {step}: {detail}");
            let (s, r) = evaluate(&Blown, cfg, &data.test, label, seed)?;
            (s, r, true)
        }
        Err(e) => return Err(e),
    };
    sinks.absorb(label, records);
    Ok(SeedResult { seed, summary, training_diverged: diverged, param_count })
}

fn register_checkpoints(rec: &mut RunRecorder, stem: &str, cfg: &ExperimentConfig) -> Result<()> {
    if cfg.checkpoint_every > 0 {
        let mut s = cfg.checkpoint_every;
        while s < cfg.updates {
            rec.register(&format!("{stem}_step{s}.ckpt"))?;
            s += cfg.checkpoint_every;
        }
    }
    rec.register(&format!("{stem}_final.ckpt"))
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridCell {
    pub target: TargetKind,
    pub loss: LossKind,
    pub seeds: Vec<SeedResult>,
}

impl GridCell {
    pub fn median_mse(&self) -> f64 {
        median(&self.seeds.iter().map(|s| s.summary.aggregate_mse).collect::<Vec<_>>())
    }

    pub fn median_total_mse(&self) -> f64 {
        median(&self.seeds.iter().map(|s| s.summary.total_mse()).collect::<Vec<_>>())
    }

    pub fn divergences(&self) -> usize {
        self.seeds.iter().map(|s| s.summary.divergences).sum()
    }

    pub fn training_divergences(&self) -> usize {
        self.seeds.iter().filter(|s| s.training_diverged).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridReport {
    pub cells: Vec<GridCell>,
    pub tokens: usize,
    pub token_dim: usize,
}

impl GridReport {
    pub fn cell(&self, target: TargetKind, loss: LossKind) -> Option<&GridCell> {
        self.cells.iter().find(|c| c.target == target && c.loss == loss)
    }
}

fn compute_block(cfg: &ExperimentConfig, params: &[usize]) -> Result<serde_json::Value> {
    if params.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::Config(format!("parameter counts differ across cells: {params:?}")));
    }
    Ok(serde_json::json!({
        "updates": cfg.updates,
        "batch_size": cfg.batch_size,
        "param_count": params.first(),
        "sampler": cfg.sampler,
        "tokens": cfg.model.tokens(),
        "token_dim": cfg.model.token_dim(),
    }))
}

fn cell_label(prefix: &str, t: TargetKind, l: LossKind, seed: u64) -> String {
    format!("{prefix}{t}-{l}-s{seed}")
}

fn grid_tables(report: &GridReport) -> (String, String, String) {
    let mut table = String::from("loss,x,eps,v\n");
    let mut div = table.clone();
    for l in LossKind::ALL {
        let mut row = l.to_string();
        let mut drow = row.clone();
        for t in TargetKind::ALL {
            match report.cell(t, l) {
                Some(c) => {
                    write!(row, ",{:e}", c.median_mse()).unwrap();
                    write!(drow, ",{}", c.divergences()).unwrap();
                }
                None => {
                    row.push(',');
                    drow.push(',');
                }
            }
        }
        writeln!(table, "{row}").unwrap();
        writeln!(div, "{drow}").unwrap();
    }
    let mut cells = String::from(
        "target,loss,seed,aggregate_mse,surviving_mse,total_mse,rollout_divergences,runs,training_diverged\n",
    );
    for c in &report.cells {
        for s in &c.seeds {
            writeln!(
                cells,
                "{},{},{},{:e},{:e},{:e},{},{},{}",
                c.target,
                c.loss,
                s.seed,
                s.summary.aggregate_mse,
                s.summary.surviving_mse,
                s.summary.total_mse(),
                s.summary.divergences,
                s.summary.runs,
                s.training_diverged
            )
            .unwrap();
        }
    }
    (table, div, cells)
}

fn grid_in(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    rec: &mut RunRecorder,
    sinks: &mut Sinks,
    prefix: &str,
) -> Result<(GridReport, Vec<usize>)> {
    let mut cells = Vec::new();
    let mut params = Vec::new();
    for (t, l) in cfg.grid_cells() {
        let cell_cfg = ExperimentConfig { target: t, loss: l, ..cfg.clone() };
        let mut seeds = Vec::new();
        for &seed in &cfg.seeds {
            let label = cell_label(prefix, t, l, seed);
            log::info!("running {label}");
            let r = run_cell(&cell_cfg, data, rec, sinks, &label, seed)?;
            rec.divergences.insert(label, r.summary.divergences);
            params.push(r.param_count);
            seeds.push(r);
        }
        cells.push(GridCell { target: t, loss: l, seeds });
    }
    let report = GridReport { cells, tokens: cfg.model.tokens(), token_dim: cfg.model.token_dim() };
    let (table, div, per_seed) = grid_tables(&report);
    rec.write(&format!("tables/{prefix}grid.csv"), table.as_bytes())?;
    rec.write(&format!("tables/{prefix}grid_divergences.csv"), div.as_bytes())?;
    rec.write(&format!("tables/{prefix}grid_cells.csv"), per_seed.as_bytes())?;
    Ok((report, params))
}

/// The target × loss design at one resolution.
pub fn run_target_loss_grid(cfg: &ExperimentConfig, raw: &RawData) -> Result<GridReport> {
    cfg.validate()?;
    let data = raw.prepare(cfg.downsample)?;
    data.check_model(&cfg.model)?;
    let mut rec = RunRecorder::new(cfg.run_dir())?;
    rec.datasets = raw.hashes.clone();
    let mut sinks = Sinks::default();
    let (report, params) = grid_in(cfg, &data, &mut rec, &mut sinks, "")?;
    rec.compute = compute_block(cfg, &params)?;
    sinks.flush(&mut rec)?;
    rec.finish(&cfg.name, "grid", &cfg.hash())?;
    Ok(report)
}

/// Model config for one resolution setting, with the grid taken from the data.
pub fn resolution_config(cfg: &ExperimentConfig, setting: &ResolutionSetting, raw_shape: (usize, usize, usize)) -> Result<ExperimentConfig> {
    let (c, h, w) = raw_shape;
    if setting.downsample == 0 || h % setting.downsample != 0 || w % setting.downsample != 0 {
        return Err(Error::Config(format!(
            "setting {}: downsample {} does not divide {h}x{w}",
            setting.name, setting.downsample
        )));
    }
    let mut out = cfg.clone();
    out.downsample = setting.downsample;
    out.model.channels = c;
    out.model.height = h / setting.downsample;
    out.model.width = w / setting.downsample;
    out.model.patch = setting.patch;
    out.model.validate()?;
    Ok(out)
}

/// Settings ordered by per-token dimension, after checking that the token
/// count matches and that nothing but the resolution and patch differ.
pub fn check_matched_protocol(cfg: &ExperimentConfig, raw_shape: (usize, usize, usize)) -> Result<Vec<(ResolutionSetting, ExperimentConfig)>> {
    if cfg.resolutions.len() != 2 {
        return Err(Error::Config(format!("the resolution protocol needs exactly 2 settings, got {}", cfg.resolutions.len())));
    }
    let mut derived = cfg
        .resolutions
        .iter()
        .map(|s| Ok((s.clone(), resolution_config(cfg, s, raw_shape)?)))
        .collect::<Result<Vec<_>>>()?;
    let (a, b) = (&derived[0].1.model, &derived[1].1.model);
    if a.tokens() != b.tokens() {
        return Err(Error::Config(format!(
            "token counts differ between settings: {} ({}) vs {} ({})",
            a.tokens(),
            derived[0].0.name,
            b.tokens(),
            derived[1].0.name
        )));
    }
    if (a.dim, a.depth, a.heads) != (b.dim, b.depth, b.heads) {
        return Err(Error::Config("backbone differs between settings".into()));
    }
    if derived[0].0.name == derived[1].0.name {
        return Err(Error::Config("resolution settings need distinct names".into()));
    }
    derived.sort_by_key(|(_, c)| c.model.token_dim());
    Ok(derived)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResolutionReport {
    /// `(setting name, grid)`, smaller per-token dimension first.
    pub grids: Vec<(String, GridReport)>,
}

impl ResolutionReport {
    pub fn small(&self) -> &GridReport {
        &self.grids[0].1
    }

    pub fn large(&self) -> &GridReport {
        &self.grids[1].1
    }
}

/// Runs the grid at two resolutions with matched token count.
pub fn run_resolution_protocol(cfg: &ExperimentConfig, raw: &RawData) -> Result<ResolutionReport> {
    cfg.validate()?;
    let settings = check_matched_protocol(cfg, raw.shape()?)?;
    let mut rec = RunRecorder::new(cfg.run_dir())?;
    rec.datasets = raw.hashes.clone();
    let mut sinks = Sinks::default();
    let mut grids = Vec::new();
    let mut params = BTreeMap::new();
    for (setting, scfg) in &settings {
        let data = raw.prepare(scfg.downsample)?;
        let (g, p) = grid_in(scfg, &data, &mut rec, &mut sinks, &format!("{}.", setting.name))?;
        params.insert(setting.name.clone(), compute_block(scfg, &p)?);
        grids.push((setting.name.clone(), g));
    }
    let report = ResolutionReport { grids };
    let (small, large) = (report.small(), report.large());
    let mut table = format!(
        "target,loss,{0}_mse,{1}_mse,ratio,{0}_token_dim,{1}_token_dim\n",
        settings[0].0.name, settings[1].0.name
    );
    for c in &small.cells {
        let Some(l) = large.cell(c.target, c.loss) else { continue };
        writeln!(
            table,
            "{},{},{:e},{:e},{:e},{},{}",
            c.target,
            c.loss,
            c.median_mse(),
            l.median_mse(),
            l.median_mse() / c.median_mse(),
            small.token_dim,
            large.token_dim
        )
        .unwrap();
    }
    rec.write("tables/resolution.csv", table.as_bytes())?;
    rec.compute = serde_json::to_value(params)?;
    sinks.flush(&mut rec)?;
    rec.finish(&cfg.name, "resolution", &cfg.hash())?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    /// `None` is the dense baseline.
    pub bottleneck: Option<usize>,
    pub seeds: Vec<SeedResult>,
}

impl SweepRow {
    pub fn median_total_mse(&self) -> f64 {
        median(&self.seeds.iter().map(|s| s.summary.total_mse()).collect::<Vec<_>>())
    }

    pub fn nan_outputs(&self) -> usize {
        self.seeds.iter().map(|s| s.summary.divergences).sum()
    }
}

/// Bottleneck ranks (plus the dense baseline) at the configured target and loss.
pub fn run_bottleneck_sweep(cfg: &ExperimentConfig, raw: &RawData) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    if cfg.bottleneck_dims.is_empty() {
        return Err(Error::Config("bottleneck_dims is empty".into()));
    }
    let mut variants = vec![None];
    for &d in &cfg.bottleneck_dims {
        let m = ModelConfig { bottleneck: Some(d), ..cfg.model.clone() };
        m.validate()?;
        variants.push(Some(d));
    }
    let data = raw.prepare(cfg.downsample)?;
    data.check_model(&cfg.model)?;
    let mut rec = RunRecorder::new(cfg.run_dir())?;
    rec.datasets = raw.hashes.clone();
    let mut sinks = Sinks::default();
    let mut rows = Vec::new();
    let mut compute = BTreeMap::new();
    for b in variants {
        let vcfg = ExperimentConfig { model: ModelConfig { bottleneck: b, ..cfg.model.clone() }, ..cfg.clone() };
        let tag = b.map_or_else(|| "baseline".to_string(), |d| format!("d{d}"));
        let mut seeds = Vec::new();
        let mut params = Vec::new();
        for &seed in &cfg.seeds {
            let label = format!("{tag}-s{seed}");
            log::info!("running {label}");
            let r = run_cell(&vcfg, &data, &mut rec, &mut sinks, &label, seed)?;
            rec.divergences.insert(label, r.summary.divergences);
            params.push(r.param_count);
            seeds.push(r);
        }
        compute.insert(tag, compute_block(&vcfg, &params)?);
        rows.push(SweepRow { bottleneck: b, seeds });
    }
    let mut table = String::from("d_prime,total_mse,divergences\n");
    let mut per_seed = String::from("d_prime,seed,total_mse,aggregate_mse,divergences,training_diverged\n");
    for r in &rows {
        let tag = r.bottleneck.map_or_else(|| "baseline".to_string(), |d| d.to_string());
        writeln!(table, "{tag},{:e},{}", r.median_total_mse(), r.nan_outputs()).unwrap();
        for s in &r.seeds {
            writeln!(
                per_seed,
                "{tag},{},{:e},{:e},{},{}",
                s.seed,
                s.summary.total_mse(),
                s.summary.aggregate_mse,
                s.summary.divergences,
                s.training_diverged
            )
            .unwrap();
        }
    }
    rec.write("tables/bottleneck.csv", table.as_bytes())?;
    rec.write("tables/bottleneck_seeds.csv", per_seed.as_bytes())?;
    rec.compute = serde_json::to_value(compute)?;
    sinks.flush(&mut rec)?;
    rec.finish(&cfg.name, "bottleneck", &cfg.hash())?;
    Ok(rows)
}

/// Trains every configured seed at the configured target and loss.
pub fn run_training(cfg: &ExperimentConfig, raw: &RawData) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let data = raw.prepare(cfg.downsample)?;
    data.check_model(&cfg.model)?;
    let mut rec = RunRecorder::new(cfg.run_dir())?;
    rec.datasets = raw.hashes.clone();
    let mut sinks = Sinks::default();
    let mut all = Vec::new();
    let dir = rec.path("checkpoints");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for &seed in &cfg.seeds {
        let label = cell_label("", cfg.target, cfg.loss, seed);
        let stem = format!("checkpoints/{label}");
        let path = rec.path(&stem);
        let out = rec.time(format!("{label}/train"), |_| train(cfg, &data.train, &data.norm, seed, Some(&path)))?;
        register_checkpoints(&mut rec, &stem, cfg)?;
        sinks.add_losses(&label, &out.losses, cfg);
        all.push(out.losses);
    }
    let count = Model::init(&cfg.model, 0)?.params().count();
    rec.compute = compute_block(cfg, &[count])?;
    sinks.flush(&mut rec)?;
    rec.finish(&cfg.name, "train", &cfg.hash())?;
    Ok(all)
}

/// Evaluates a stored checkpoint on the test split of `cfg`.
///
/// Normalization statistics come from the checkpoint, never from test data.
pub fn run_evaluation(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<EvalSummary> {
    let ck = crate::tensor::read_checkpoint(checkpoint)?;
    let stored: ExperimentConfig = serde_json::from_value(ck.meta["experiment"].clone())
        .map_err(|e| Error::Config(format!("checkpoint metadata: {e}")))?;
    let norm: NormStats = serde_json::from_value(ck.meta["norm"].clone())
        .map_err(|e| Error::Config(format!("checkpoint metadata: {e}")))?;
    let seed = ck.meta["seed"].as_u64().unwrap_or(0);
    let model = Model::from_params(&stored.model, ck.params)?;
    let mut eval_cfg = cfg.clone();
    eval_cfg.model = stored.model.clone();
    eval_cfg.target = stored.target;
    eval_cfg.loss = stored.loss;
    eval_cfg.validate()?;
    let test = read_dataset(&cfg.test_data)?.into_test()?;
    let test = normalize_test(&test, stored.downsample, &norm)?;
    let mut rec = RunRecorder::new(cfg.run_dir())?;
    let test_name = cfg.test_data.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    rec.datasets.insert(test_name, hash_file(&cfg.test_data)?);
    rec.datasets.insert("checkpoint".into(), hash_file(checkpoint)?);
    let mut sinks = Sinks::default();
    let label = cell_label("", stored.target, stored.loss, seed);
    let f = DiffusionForecaster { model: &model, target: stored.target, sampler: eval_cfg.sampler, tau_min: eval_cfg.tau_min };
    let (summary, records) = rec.time("eval", |_| evaluate(&f, &eval_cfg, &test, &label, seed))?;
    sinks.absorb(&label, records);
    rec.divergences.insert(label, summary.divergences);
    rec.compute = serde_json::json!({ "sampler": eval_cfg.sampler, "param_count": model.params().count() });
    sinks.flush(&mut rec)?;
    rec.finish(&cfg.name, "evaluate", &eval_cfg.hash())?;
    Ok(summary)
}

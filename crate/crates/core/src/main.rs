use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use riftcast::data::{write_dataset, GrayScottConfig, Split};
use riftcast::experiment::{
    generate_dataset, run_bottleneck_sweep, run_evaluation, run_resolution_protocol, run_target_loss_grid,
    run_training, ExperimentConfig, GenerateSpec, RawData,
};
use riftcast::flow::SamplerMethod;
use riftcast::Error;

#[derive(Parser)]
#[command(name = "riftcast", version, about = "Rectified-flow forecaster for 2D fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate Gray-Scott trajectories into an .rdset file.
    GenerateData(GenerateArgs),
    /// Train every configured seed at the configured target and loss.
    Train(RunArgs),
    /// Target x loss grid.
    Grid(RunArgs),
    /// Grids at two resolutions with matched token count.
    Resolution(RunArgs),
    /// Patch-embedding bottleneck sweep.
    Bottleneck(RunArgs),
    /// Roll out a stored checkpoint on the test split.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

#[derive(Args)]
struct GenerateArgs {
    /// Solver settings as JSON; defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Grid size as HxW.
    #[arg(long, default_value = "128x64")]
    grid: String,
    #[arg(long, default_value_t = 200)]
    frames: usize,
    /// Comma-separated reaction parameters.
    #[arg(long, value_delimiter = ',', required = true)]
    thetas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    #[arg(long, default_value = "train", value_parser = parse_split)]
    split: Split,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Replaces the configured seed list.
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    /// Output root; the run lands in <out>/<name>.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    sampler: Option<SamplerMethod>,
    #[arg(long)]
    ode_steps: Option<usize>,
    #[arg(long)]
    eps_cut: Option<f64>,
    #[arg(long)]
    updates: Option<usize>,
    /// Forecast by persistence instead of training.
    #[arg(long)]
    stub: bool,
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        _ => Err(format!("unknown split {s:?} (train|test)")),
    }
}

fn parse_grid(s: &str) -> riftcast::Result<(usize, usize)> {
    let bad = || Error::Config(format!("grid {s:?} must look like 128x64"));
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((h.trim().parse().map_err(|_| bad())?, w.trim().parse().map_err(|_| bad())?))
}

impl RunArgs {
    fn load(&self) -> riftcast::Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seeds) = &self.seed {
            cfg.seeds = seeds.clone();
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(m) = self.sampler {
            cfg.sampler.method = m;
        }
        if let Some(n) = self.ode_steps {
            cfg.sampler.steps = n;
        }
        if let Some(e) = self.eps_cut {
            cfg.sampler.eps_cut = e;
        }
        if let Some(u) = self.updates {
            cfg.updates = u;
        }
        cfg.stub |= self.stub;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn generate(args: &GenerateArgs) -> riftcast::Result<()> {
    let solver = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => GrayScottConfig::default(),
    };
    let (height, width) = parse_grid(&args.grid)?;
    let spec = GenerateSpec {
        height,
        width,
        frames: args.frames,
        thetas: args.thetas.clone(),
        seeds: args.seeds.clone(),
        split: args.split,
        solver,
    };
    let ds = generate_dataset(&spec)?;
    write_dataset(&ds, &args.out)?;
    log::info!("wrote {} trajectories to {}", ds.trajectories.len(), args.out.display());
    Ok(())
}

fn report(dir: &Path) {
    println!("outputs in {}", dir.display());
}

fn run(cli: Cli) -> riftcast::Result<()> {
    match cli.command {
        Command::GenerateData(a) => generate(&a),
        Command::Train(a) => {
            let cfg = a.load()?;
            let losses = run_training(&cfg, &RawData::load(&cfg)?)?;
            for (seed, l) in cfg.seeds.iter().zip(&losses) {
                println!("seed {seed}: final loss {:e}", l.last().copied().unwrap_or(f64::NAN));
            }
            report(&cfg.run_dir());
            Ok(())
        }
        Command::Grid(a) => {
            let cfg = a.load()?;
            let r = run_target_loss_grid(&cfg, &RawData::load(&cfg)?)?;
            for c in &r.cells {
                println!("{}-{}: mse {:e} divergences {}", c.target, c.loss, c.median_mse(), c.divergences());
            }
            report(&cfg.run_dir());
            Ok(())
        }
        Command::Resolution(a) => {
            let cfg = a.load()?;
            let r = run_resolution_protocol(&cfg, &RawData::load(&cfg)?)?;
            for (s, l) in r.small().cells.iter().zip(&r.large().cells) {
                println!(
                    "{}-{}: small {:e} large {:e} ratio {:e}",
                    s.target,
                    s.loss,
                    s.median_mse(),
                    l.median_mse(),
                    l.median_mse() / s.median_mse()
                );
            }
            report(&cfg.run_dir());
            Ok(())
        }
        Command::Bottleneck(a) => {
            let cfg = a.load()?;
            let rows = run_bottleneck_sweep(&cfg, &RawData::load(&cfg)?)?;
            for r in &rows {
                let name = r.bottleneck.map_or_else(|| "baseline".to_string(), |d| d.to_string());
                println!("{name}: total mse {:e}", r.median_total_mse());
            }
            report(&cfg.run_dir());
            Ok(())
        }
        Command::Evaluate { run, checkpoint } => {
            let cfg = run.load()?;
            let s = run_evaluation(&cfg, &checkpoint)?;
            println!("mse {:e} divergences {}/{}", s.aggregate_mse, s.divergences, s.runs);
            report(&cfg.run_dir());
            Ok(())
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Diverged { .. } => 3,
        Error::Config(_)
        | Error::Json(_)
        | Error::Invalid(_)
        | Error::Shape { .. }
        | Error::Io { .. }
        | Error::EmptyDataset
        | Error::BadMagic
        | Error::Format(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

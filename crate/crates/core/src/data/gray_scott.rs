//! Two-species Gray–Scott reaction–diffusion on a periodic grid.
//!
//! ```text
//! du/dt = Du ∇²u − u v² + F (1 − u)
//! dv/dt = Dv ∇²v + u v² − (F + k) v
//! ```
//!
//! The conditioning parameter `theta ∈ [0, 1]` interpolates `(F, k)` linearly
//! between two endpoint regimes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Field, Trajectory};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrayScottConfig {
    /// `(F, k)` at `theta = 0`.
    pub feed_kill_lo: (f64, f64),
    /// `(F, k)` at `theta = 1`.
    pub feed_kill_hi: (f64, f64),
    pub diffusion_u: f64,
    pub diffusion_v: f64,
    pub spacing: f64,
    /// Solver step; `None` picks half the explicit stability limit.
    pub dt_solver: Option<f64>,
    pub substeps_per_frame: usize,
    /// Frames simulated and discarded before recording starts.
    pub burn_in_frames: usize,
    /// Scales the initial perturbation; zero leaves the steady state untouched.
    pub perturbation_amplitude: f64,
    /// Number of seeded square seeds placed in the initial condition.
    pub perturbation_spots: usize,
    /// Disables the reaction terms, leaving pure diffusion.
    pub reaction: bool,
    /// Round recorded frames to `f32` so they survive the dataset format exactly.
    pub quantize_f32: bool,
}

impl Default for GrayScottConfig {
    fn default() -> Self {
        Self {
            feed_kill_lo: (0.030, 0.055),
            feed_kill_hi: (0.042, 0.062),
            diffusion_u: 0.16,
            diffusion_v: 0.08,
            spacing: 1.0,
            dt_solver: None,
            substeps_per_frame: 40,
            burn_in_frames: 40,
            perturbation_amplitude: 1.0,
            perturbation_spots: 6,
            reaction: true,
            quantize_f32: true,
        }
    }
}

impl GrayScottConfig {
    pub fn stability_limit(&self) -> f64 {
        self.spacing * self.spacing / (4.0 * self.diffusion_u.max(self.diffusion_v))
    }

    pub fn solver_dt(&self) -> f64 {
        self.dt_solver.unwrap_or(0.5 * self.stability_limit())
    }

    pub fn feed_kill(&self, theta: f64) -> (f64, f64) {
        let (f0, k0) = self.feed_kill_lo;
        let (f1, k1) = self.feed_kill_hi;
        (f0 + theta * (f1 - f0), k0 + theta * (k1 - k0))
    }

    /// Time between recorded frames.
    pub fn frame_dt(&self) -> f64 {
        self.solver_dt() * self.substeps_per_frame as f64
    }
}

/// Simulates `steps` recorded frames on an `H×W` periodic grid.
pub fn simulate_reaction_diffusion(
    grid: (usize, usize),
    steps: usize,
    theta: f64,
    seed: u64,
    cfg: &GrayScottConfig,
) -> Result<Trajectory> {
    let (h, w) = grid;
    if h < 16 || w < 16 {
        return Err(Error::Invalid(format!("grid {h}x{w} smaller than 16x16")));
    }
    if steps == 0 {
        return Err(Error::Invalid("at least one frame required".into()));
    }
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::Invalid(format!("theta = {theta} outside [0, 1]")));
    }
    let dt = cfg.solver_dt();
    let limit = cfg.stability_limit();
    if !(dt > 0.0 && dt <= limit) {
        return Err(Error::Unstable(format!(
            "solver dt {dt} violates the stability bound {limit}"
        )));
    }
    if cfg.substeps_per_frame == 0 {
        return Err(Error::Invalid("substeps_per_frame must be >= 1".into()));
    }

    let (feed, kill) = cfg.feed_kill(theta);
    let n = h * w;
    let mut u = vec![1.0; n];
    let mut v = vec![0.0; n];
    seed_perturbation(&mut u, &mut v, h, w, seed, cfg);

    let mut lap_u = vec![0.0; n];
    let mut lap_v = vec![0.0; n];
    let inv_h2 = 1.0 / (cfg.spacing * cfg.spacing);
    let mut frames = Vec::with_capacity(steps);
    let mut substep = 0usize;

    for frame in 0..cfg.burn_in_frames + steps {
        if frame >= cfg.burn_in_frames {
            frames.push(record(&u, &v, h, w, cfg.quantize_f32));
        }
        if frame + 1 == cfg.burn_in_frames + steps {
            break;
        }
        for _ in 0..cfg.substeps_per_frame {
            laplacian(&u, h, w, inv_h2, &mut lap_u);
            laplacian(&v, h, w, inv_h2, &mut lap_v);
            for i in 0..n {
                let (ui, vi) = (u[i], v[i]);
                let mut du = cfg.diffusion_u * lap_u[i];
                let mut dv = cfg.diffusion_v * lap_v[i];
                if cfg.reaction {
                    let uvv = ui * vi * vi;
                    du += -uvv + feed * (1.0 - ui);
                    dv += uvv - (feed + kill) * vi;
                }
                u[i] = ui + dt * du;
                v[i] = vi + dt * dv;
            }
            substep += 1;
            if !(u.iter().all(|x| x.is_finite()) && v.iter().all(|x| x.is_finite())) {
                return Err(Error::Unstable(format!("non-finite state at solver step {substep}")));
            }
        }
    }
    Trajectory::new(frames, cfg.frame_dt(), theta)
}

fn seed_perturbation(u: &mut [f64], v: &mut [f64], h: usize, w: usize, seed: u64, cfg: &GrayScottConfig) {
    let amp = cfg.perturbation_amplitude;
    if amp == 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = (h.min(w) / 16).max(2);
    for _ in 0..cfg.perturbation_spots {
        let cy = rng.random_range(0..h);
        let cx = rng.random_range(0..w);
        for dy in 0..2 * half {
            for dx in 0..2 * half {
                let y = (cy + dy + h - half) % h;
                let x = (cx + dx + w - half) % w;
                let i = y * w + x;
                let noise_u: f64 = rng.random_range(-0.05..0.05);
                let noise_v: f64 = rng.random_range(-0.05..0.05);
                u[i] = 1.0 - amp * (0.5 + noise_u);
                v[i] = amp * (0.25 + noise_v);
            }
        }
    }
}

fn laplacian(f: &[f64], h: usize, w: usize, inv_h2: f64, out: &mut [f64]) {
    for y in 0..h {
        let up = if y == 0 { h - 1 } else { y - 1 } * w;
        let down = if y + 1 == h { 0 } else { y + 1 } * w;
        let row = y * w;
        for x in 0..w {
            let left = if x == 0 { w - 1 } else { x - 1 };
            let right = if x + 1 == w { 0 } else { x + 1 };
            let c = f[row + x];
            out[row + x] = (f[up + x] + f[down + x] + f[row + left] + f[row + right] - 4.0 * c) * inv_h2;
        }
    }
}

fn record(u: &[f64], v: &[f64], h: usize, w: usize, quantize: bool) -> Field {
    let values = u
        .iter()
        .chain(v)
        .map(|&x| if quantize { x as f32 as f64 } else { x })
        .collect();
    Field::new(2, h, w, values).expect("two channels")
}

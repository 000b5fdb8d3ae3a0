use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{convert, TargetKind};
use crate::data::Field;
use crate::error::{Error, Result};
use crate::model::Model;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerMethod {
    Euler,
    Heun,
}

impl std::str::FromStr for SamplerMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euler" => Ok(SamplerMethod::Euler),
            "heun" => Ok(SamplerMethod::Heun),
            _ => Err(Error::Config(format!("unknown sampler {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub method: SamplerMethod,
    pub steps: usize,
    pub eps_cut: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            method: SamplerMethod::Heun,
            steps: 20,
            eps_cut: 1e-3,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("sampler needs at least one step".into()));
        }
        if !(self.eps_cut > 0.0 && self.eps_cut < 0.5) {
            return Err(Error::Config(format!("eps_cut {} outside (0, 0.5)", self.eps_cut)));
        }
        Ok(())
    }
}

fn axpy(z: &Field, h: f64, v: &Field) -> Result<Field> {
    if !z.same_shape(v) {
        return Err(Error::shape("sample_ode", format!("velocity {:?} vs state {:?}", v.shape(), z.shape())));
    }
    let (c, hh, w) = z.shape();
    Field::new(c, hh, w, z.values().iter().zip(v.values()).map(|(a, b)| a + h * b).collect())
}

/// Integrates `dz/dtau = v(z, tau)` on the uniform grid `0 = tau_0 < … < tau_M = 1 − eps`.
///
/// Heun steps use the trapezoidal correction except the last one, which is a
/// plain Euler step so the oracle is never queried at `tau_M`.
pub fn sample_ode(
    mut oracle: impl FnMut(&Field, f64) -> Result<Field>,
    z0: &Field,
    cfg: &SamplerConfig,
) -> Result<Field> {
    cfg.validate()?;
    let m = cfg.steps;
    let h = (1.0 - cfg.eps_cut) / m as f64;
    let mut z = z0.clone();
    for i in 0..m {
        let tau = i as f64 * h;
        let v1 = oracle(&z, tau)?;
        let pred = axpy(&z, h, &v1)?;
        z = match cfg.method {
            SamplerMethod::Heun if i + 1 < m => {
                let v2 = oracle(&pred, (i + 1) as f64 * h)?;
                let (c, hh, w) = z.shape();
                let vals = z
                    .values()
                    .iter()
                    .zip(v1.values().iter().zip(v2.values()))
                    .map(|(a, (p, q))| a + 0.5 * h * (p + q))
                    .collect();
                Field::new(c, hh, w, vals)?
            }
            _ => pred,
        };
        if !z.is_finite() {
            return Err(Error::non_finite(format!("sampler state at step {i}")));
        }
    }
    Ok(z)
}

/// Anything that maps `(z, tau, context, theta)` to a field-shaped prediction.
pub trait Denoiser {
    fn denoise(&self, z: &Field, tau: f64, context: &[Field], theta: f64) -> Result<Field>;
}

impl Denoiser for Model {
    fn denoise(&self, z: &Field, tau: f64, context: &[Field], theta: f64) -> Result<Field> {
        self.forward(z, tau, context, theta)
    }
}

/// Draws one posterior sample of the next state.
///
/// The conversion to velocity clamps `tau` into the guard band; the network
/// itself always sees the grid value.
pub fn generate_next(
    model: &impl Denoiser,
    target: TargetKind,
    context: &[Field],
    theta: f64,
    cfg: &SamplerConfig,
    seed: u64,
    tau_min: f64,
) -> Result<Field> {
    let last = context
        .last()
        .ok_or_else(|| Error::Invalid("empty context".into()))?;
    let (c, h, w) = last.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z0 = Field::new(c, h, w, (0..c * h * w).map(|_| rng.sample(StandardNormal)).collect())?;
    sample_ode(
        |z, tau| {
            let y = model.denoise(z, tau, context, theta)?;
            convert(&y, target, TargetKind::V, z, tau.clamp(tau_min, 1.0 - tau_min), tau_min)
        },
        &z0,
        cfg,
    )
}

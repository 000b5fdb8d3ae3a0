//! Rectified-flow coupling, the three target parameterizations and the
//! conversions between them, regression losses and fixed-step samplers.

mod sampler;

pub use sampler::{generate_next, sample_ode, Denoiser, SamplerConfig, SamplerMethod};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Field;
use crate::error::{Error, Result};
use crate::model::patchify;
use crate::tensor::{Graph, NodeId, Tensor};

pub const DEFAULT_TAU_MIN: f64 = 1e-3;

/// What the network outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    X,
    V,
    Eps,
}

/// Space in which the regression residual is measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    X,
    V,
    Eps,
}

impl TargetKind {
    pub const ALL: [TargetKind; 3] = [TargetKind::X, TargetKind::Eps, TargetKind::V];
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::X, LossKind::Eps, LossKind::V];

    /// The parameterization whose space this loss lives in.
    pub fn space(self) -> TargetKind {
        match self {
            LossKind::X => TargetKind::X,
            LossKind::V => TargetKind::V,
            LossKind::Eps => TargetKind::Eps,
        }
    }
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TargetKind::X => "x",
            TargetKind::V => "v",
            TargetKind::Eps => "eps",
        })
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_loss", self.space())
    }
}

impl FromStr for TargetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "x" => Ok(TargetKind::X),
            "v" => Ok(TargetKind::V),
            "eps" | "epsilon" => Ok(TargetKind::Eps),
            _ => Err(Error::Config(format!("unknown target kind {s:?}"))),
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let base = s.strip_suffix("_loss").unwrap_or(s);
        Ok(match base.parse::<TargetKind>()? {
            TargetKind::X => LossKind::X,
            TargetKind::V => LossKind::V,
            TargetKind::Eps => LossKind::Eps,
        })
    }
}

fn zip_map(a: &Field, b: &Field, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
    if !a.same_shape(b) {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let (c, h, w) = a.shape();
    let vals = a.values().iter().zip(b.values()).map(|(&p, &q)| f(p, q)).collect();
    Field::new(c, h, w, vals)
}

/// `z = tau·x + (1 − tau)·eps`
pub fn couple(x: &Field, eps: &Field, tau: f64) -> Result<Field> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Invalid(format!("tau = {tau} outside [0, 1]")));
    }
    zip_map(x, eps, "couple", |x, e| tau * x + (1.0 - tau) * e)
}

/// `v⋆ = x − eps`
pub fn target_velocity(x: &Field, eps: &Field) -> Result<Field> {
    zip_map(x, eps, "target_velocity", |x, e| x - e)
}

/// `v⋆ = (x − z) / (1 − tau)`
pub fn target_velocity_from_state(x: &Field, z: &Field, tau: f64) -> Result<Field> {
    if tau >= 1.0 {
        return Err(Error::Invalid("target velocity from state needs tau < 1".into()));
    }
    zip_map(x, z, "target_velocity", |x, z| (x - z) / (1.0 - tau))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CouplingSample {
    pub x: Field,
    pub eps: Field,
    pub tau: f64,
    pub z: Field,
}

impl CouplingSample {
    pub fn new(x: Field, eps: Field, tau: f64) -> Result<Self> {
        let z = couple(&x, &eps, tau)?;
        Ok(Self { x, eps, tau, z })
    }

    /// Ground truth expressed in the given parameterization.
    pub fn truth(&self, kind: TargetKind) -> Field {
        match kind {
            TargetKind::X => self.x.clone(),
            TargetKind::Eps => self.eps.clone(),
            TargetKind::V => target_velocity(&self.x, &self.eps).expect("shapes checked at construction"),
        }
    }
}

/// Whether converting `from → to` divides by `tau` or `1 − tau`.
pub fn conversion_divides(from: TargetKind, to: TargetKind) -> bool {
    use TargetKind::*;
    matches!((from, to), (X, V) | (X, Eps) | (Eps, X) | (Eps, V))
}

/// Coefficients `(a, b)` with `to = a·from + b·z`.
///
/// Division-bearing pairs require `tau ∈ [tau_min, 1 − tau_min]`.
pub fn conversion_coeffs(from: TargetKind, to: TargetKind, tau: f64, tau_min: f64) -> Result<(f64, f64)> {
    use TargetKind::*;
    if conversion_divides(from, to) && !(tau >= tau_min && tau <= 1.0 - tau_min) {
        return Err(Error::GuardBand {
            tau,
            lo: tau_min,
            hi: 1.0 - tau_min,
            what: "convert",
        });
    }
    let s = 1.0 - tau;
    Ok(match (from, to) {
        (a, b) if a == b => (1.0, 0.0),
        (X, V) => (1.0 / s, -1.0 / s),
        (X, Eps) => (-tau / s, 1.0 / s),
        (V, X) => (s, 1.0),
        (V, Eps) => (-tau, 1.0),
        (Eps, X) => (-s / tau, 1.0 / tau),
        (Eps, V) => (-1.0 / tau, 1.0 / tau),
        _ => unreachable!(),
    })
}

pub fn convert(pred: &Field, from: TargetKind, to: TargetKind, z: &Field, tau: f64, tau_min: f64) -> Result<Field> {
    if from == to {
        return Ok(pred.clone());
    }
    let (a, b) = conversion_coeffs(from, to, tau, tau_min)?;
    zip_map(pred, z, "convert", |y, z| a * y + b * z)
}

/// Mean squared residual in the `loss` space of a prediction `y` of kind `target`.
pub fn training_loss(target: TargetKind, loss: LossKind, y: &Field, sample: &CouplingSample, tau_min: f64) -> Result<f64> {
    let space = loss.space();
    let pred = convert(y, target, space, &sample.z, sample.tau, tau_min)?;
    let truth = sample.truth(space);
    let n = pred.values().len() as f64;
    let l = pred
        .values()
        .iter()
        .zip(truth.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if !l.is_finite() {
        return Err(Error::non_finite("training loss"));
    }
    Ok(l)
}

/// Graph version of [`training_loss`]. `y` is the network output in patch
/// space (`N×(C·P²)`); the residual mean is permutation invariant, so the
/// comparison happens there without unpatchifying.
pub fn training_loss_graph(
    g: &mut Graph,
    target: TargetKind,
    loss: LossKind,
    y: NodeId,
    sample: &CouplingSample,
    patch: usize,
    tau_min: f64,
) -> Result<NodeId> {
    let space = loss.space();
    let truth = patchify(&sample.truth(space), patch)?;
    let pred = if target == space {
        y
    } else {
        let (a, b) = conversion_coeffs(target, space, sample.tau, tau_min)?;
        let zp = patchify(&sample.z, patch)?;
        let bz = Tensor::new(zp.shape().to_vec(), zp.data().iter().map(|v| b * v).collect())?;
        let ay = g.scale(y, a);
        let bz = g.constant(bz);
        g.add(ay, bz)?
    };
    g.mse(pred, truth)
}

/// Keeps `tau` inside the guard band when the `(target, loss)` cell needs it.
pub fn clamp_training_tau(target: TargetKind, loss: LossKind, tau: f64, tau_min: f64) -> f64 {
    if conversion_divides(target, loss.space()) {
        tau.clamp(tau_min, 1.0 - tau_min)
    } else {
        tau
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn cell(v: f64) -> Field {
        Field::new(1, 1, 1, vec![v]).unwrap()
    }

    fn randn(rng: &mut ChaCha8Rng, n: usize) -> Field {
        Field::new(1, 1, n, (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
    }

    #[test]
    fn coupling_endpoints_and_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (x, e) = (randn(&mut rng, 16), randn(&mut rng, 16));
        assert_eq!(couple(&x, &e, 1.0).unwrap(), x);
        assert_eq!(couple(&x, &e, 0.0).unwrap(), e);
        assert_eq!(couple(&cell(2.0), &cell(-1.0), 0.5).unwrap(), cell(0.5));
        assert!(couple(&x, &cell(1.0), 0.5).is_err());
    }

    #[test]
    fn target_velocity_forms() {
        assert_eq!(target_velocity(&cell(2.0), &cell(-1.0)).unwrap(), cell(3.0));
        assert_eq!(target_velocity(&cell(0.7), &cell(0.7)).unwrap(), cell(0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (x, e) = (randn(&mut rng, 64), randn(&mut rng, 64));
        let z = couple(&x, &e, 0.3).unwrap();
        let a = target_velocity_from_state(&x, &z, 0.3).unwrap();
        let b = target_velocity(&x, &e).unwrap();
        for (p, q) in a.values().iter().zip(b.values()) {
            assert!((p - q).abs() < 1e-12);
        }
        assert!(target_velocity_from_state(&x, &z, 1.0).is_err());
    }

    #[test]
    fn conversion_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (x, e) = (randn(&mut rng, 32), randn(&mut rng, 32));
        let s = CouplingSample::new(x.clone(), e.clone(), 0.5).unwrap();
        let v = convert(&x, TargetKind::X, TargetKind::V, &s.z, 0.5, DEFAULT_TAU_MIN).unwrap();
        for (p, q) in v.values().iter().zip(s.truth(TargetKind::V).values()) {
            assert!((p - q).abs() < 1e-12);
        }
        let xh = convert(&e, TargetKind::Eps, TargetKind::X, &s.z, 0.5, DEFAULT_TAU_MIN).unwrap();
        let eb = convert(&xh, TargetKind::X, TargetKind::Eps, &s.z, 0.5, DEFAULT_TAU_MIN).unwrap();
        for (p, q) in eb.values().iter().zip(e.values()) {
            assert!((p - q).abs() < 1e-10);
        }
        let xv = convert(&s.truth(TargetKind::V), TargetKind::V, TargetKind::X, &s.z, 0.5, DEFAULT_TAU_MIN).unwrap();
        for (p, q) in xv.values().iter().zip(x.values()) {
            assert!((p - q).abs() < 1e-12);
        }
        assert_eq!(convert(&x, TargetKind::Eps, TargetKind::Eps, &s.z, 0.0, DEFAULT_TAU_MIN).unwrap(), x);
    }

    #[test]
    fn guard_band_applies_only_to_divisions() {
        let f = cell(1.0);
        assert!(matches!(
            convert(&f, TargetKind::Eps, TargetKind::X, &f, 1e-4, DEFAULT_TAU_MIN),
            Err(Error::GuardBand { .. })
        ));
        assert!(convert(&f, TargetKind::X, TargetKind::V, &f, 1.0 - 1e-4, DEFAULT_TAU_MIN).is_err());
        assert!(convert(&f, TargetKind::V, TargetKind::X, &f, 0.0, DEFAULT_TAU_MIN).is_ok());
        assert!(convert(&f, TargetKind::V, TargetKind::Eps, &f, 1.0, DEFAULT_TAU_MIN).is_ok());
    }

    #[test]
    fn closure_x_v_eps_x() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let tau = rng.random_range(1e-3..1.0 - 1e-3);
            let (x, e) = (randn(&mut rng, 4), randn(&mut rng, 4));
            let z = couple(&x, &e, tau).unwrap();
            let v = convert(&x, TargetKind::X, TargetKind::V, &z, tau, DEFAULT_TAU_MIN).unwrap();
            let ep = convert(&v, TargetKind::V, TargetKind::Eps, &z, tau, DEFAULT_TAU_MIN).unwrap();
            let xb = convert(&ep, TargetKind::Eps, TargetKind::X, &z, tau, DEFAULT_TAU_MIN).unwrap();
            for (p, q) in xb.values().iter().zip(x.values()) {
                assert!((p - q).abs() < 1e-9, "tau {tau}: {p} vs {q}");
            }
        }
    }

    #[test]
    fn perfect_prediction_has_zero_loss_everywhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = CouplingSample::new(randn(&mut rng, 64), randn(&mut rng, 64), 0.37).unwrap();
        for t in TargetKind::ALL {
            for l in LossKind::ALL {
                let loss = training_loss(t, l, &s.truth(t), &s, DEFAULT_TAU_MIN).unwrap();
                assert!(loss < 1e-24, "{t} {l}: {loss}");
            }
        }
    }

    #[test]
    fn x_target_under_v_loss_is_reweighted() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = CouplingSample::new(randn(&mut rng, 64), randn(&mut rng, 64), 0.5).unwrap();
        let delta = 0.3;
        let y = Field::new(1, 1, 64, s.x.values().iter().map(|v| v + delta).collect()).unwrap();
        let l = training_loss(TargetKind::X, LossKind::V, &y, &s, DEFAULT_TAU_MIN).unwrap();
        assert!((l - 4.0 * delta * delta).abs() < 1e-12);
    }

    #[test]
    fn eps_loss_of_zero_prediction_is_unit_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = CouplingSample::new(randn(&mut rng, 10_000), randn(&mut rng, 10_000), 0.4).unwrap();
        let l = training_loss(TargetKind::Eps, LossKind::Eps, &Field::zeros(1, 1, 10_000), &s, DEFAULT_TAU_MIN).unwrap();
        assert!((l - 1.0).abs() < 0.05, "{l}");
    }

    #[test]
    fn graph_loss_matches_value_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rf = |rng: &mut ChaCha8Rng| {
            Field::new(2, 4, 4, (0..32).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
        };
        let s = CouplingSample::new(rf(&mut rng), rf(&mut rng), 0.42).unwrap();
        let y = rf(&mut rng);
        for t in TargetKind::ALL {
            for l in LossKind::ALL {
                let mut g = Graph::new();
                let yn = g.constant(patchify(&y, 2).unwrap());
                let node = training_loss_graph(&mut g, t, l, yn, &s, 2, DEFAULT_TAU_MIN).unwrap();
                let want = training_loss(t, l, &y, &s, DEFAULT_TAU_MIN).unwrap();
                assert!((g.value(node).item() - want).abs() < 1e-12 * want.max(1.0));
            }
        }
    }

    /// Solves the least-squares problem `min |A w − b|²` via normal equations.
    fn lstsq(a: &[[f64; 3]], b: &[f64]) -> [f64; 3] {
        let mut m = [[0.0; 4]; 3];
        for (row, &t) in a.iter().zip(b) {
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] += row[i] * row[j];
                }
                m[i][3] += row[i] * t;
            }
        }
        for c in 0..3 {
            let p = (c..3).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
            m.swap(c, p);
            for r in 0..3 {
                if r != c {
                    let f = m[r][c] / m[c][c];
                    for k in 0..4 {
                        m[r][k] -= f * m[c][k];
                    }
                }
            }
        }
        [m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]]
    }

    #[test]
    fn all_grid_cells_share_the_least_squares_minimizer() {
        // Per-cell linear model y = w0·c + w1·z + w2 at a fixed tau, with
        // x = 1.5·c − 0.3 + noise. The class is closed under the affine
        // conversions, so every cell must land on the same x-space fit.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let tau = 0.35;
        let n = 400;
        let c = randn(&mut rng, n);
        let x = Field::new(1, 1, n, c.values().iter().map(|v| 1.5 * v - 0.3 + 0.2 * rng.sample::<f64, _>(StandardNormal)).collect()).unwrap();
        let s = CouplingSample::new(x, randn(&mut rng, n), tau).unwrap();
        let feats: Vec<[f64; 3]> = (0..n).map(|i| [c.values()[i], s.z.values()[i], 1.0]).collect();
        let mut fits = Vec::new();
        for t in TargetKind::ALL {
            for l in LossKind::ALL {
                let (a, b) = conversion_coeffs(t, l.space(), tau, DEFAULT_TAU_MIN).unwrap();
                let truth = s.truth(l.space());
                let design: Vec<[f64; 3]> = feats.iter().map(|f| [a * f[0], a * f[1], a * f[2]]).collect();
                let rhs: Vec<f64> = (0..n).map(|i| truth.values()[i] - b * s.z.values()[i]).collect();
                let w = lstsq(&design, &rhs);
                let y = Field::new(1, 1, n, feats.iter().map(|f| w[0] * f[0] + w[1] * f[1] + w[2] * f[2]).collect()).unwrap();
                fits.push(convert(&y, t, TargetKind::X, &s.z, tau, DEFAULT_TAU_MIN).unwrap());
            }
        }
        for f in &fits[1..] {
            for (p, q) in f.values().iter().zip(fits[0].values()) {
                assert!((p - q).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn kind_names_roundtrip() {
        for t in TargetKind::ALL {
            assert_eq!(t.to_string().parse::<TargetKind>().unwrap(), t);
        }
        for l in LossKind::ALL {
            assert_eq!(l.to_string().parse::<LossKind>().unwrap(), l);
        }
        assert_eq!("v".parse::<LossKind>().unwrap(), LossKind::V);
        assert!("w".parse::<TargetKind>().is_err());
    }

    #[test]
    fn training_tau_clamp_only_where_needed() {
        assert_eq!(clamp_training_tau(TargetKind::X, LossKind::V, 1.0, 1e-3), 1.0 - 1e-3);
        assert_eq!(clamp_training_tau(TargetKind::V, LossKind::V, 1.0, 1e-3), 1.0);
        assert_eq!(clamp_training_tau(TargetKind::Eps, LossKind::X, 0.0, 1e-3), 1e-3);
    }
}

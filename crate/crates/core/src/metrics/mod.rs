//! Free-running rollouts and the evaluation axes: masked MSE, temporal
//! change and probe-point spectra, with mean/min/max envelopes.

mod csv;

pub use csv::{envelope_csv, metric_csv, EnvelopeRow, MetricRow};

use crate::data::{Field, Mask};
use crate::error::{Error, Result};
use crate::flow::{generate_next, Denoiser, SamplerConfig, TargetKind};

/// One-step stochastic next-state model.
pub trait Forecaster {
    fn next(&self, context: &[Field], theta: f64, seed: u64) -> Result<Field>;
}

/// Diffusion model plus the sampler that turns it into a forecaster.
pub struct DiffusionForecaster<'a, D> {
    pub model: &'a D,
    pub target: TargetKind,
    pub sampler: SamplerConfig,
    pub tau_min: f64,
}

impl<D: Denoiser> Forecaster for DiffusionForecaster<'_, D> {
    fn next(&self, context: &[Field], theta: f64, seed: u64) -> Result<Field> {
        generate_next(self.model, self.target, context, theta, &self.sampler, seed, self.tau_min)
    }
}

/// Repeats the most recent context frame.
pub struct Persistence;

impl Forecaster for Persistence {
    fn next(&self, context: &[Field], _: f64, _: u64) -> Result<Field> {
        context
            .last()
            .cloned()
            .ok_or_else(|| Error::Invalid("empty context".into()))
    }
}

/// Seed for generation step `step` of sample `s` on simulation `q`.
pub fn stream_seed(base: u64, q: usize, s: usize, step: usize) -> u64 {
    let mut h = base;
    for v in [q as u64, s as u64, step as u64] {
        h = splitmix(h ^ splitmix(v.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutResult {
    pub q: usize,
    pub s: usize,
    /// Generated frames; shorter than the horizon when the run diverged.
    pub frames: Vec<Field>,
    pub dt: f64,
    pub theta: f64,
    /// Index of the generation step that produced a non-finite state.
    pub diverged_at: Option<usize>,
}

impl RolloutResult {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }
}

#[allow(clippy::too_many_arguments)]
pub fn rollout(
    model: &impl Forecaster,
    init_context: &[Field],
    theta: f64,
    dt: f64,
    horizon: usize,
    seed: u64,
    q: usize,
    s: usize,
) -> Result<RolloutResult> {
    if horizon == 0 {
        return Err(Error::Invalid("rollout horizon must be >= 1".into()));
    }
    if init_context.is_empty() {
        return Err(Error::Invalid("empty initial context".into()));
    }
    let mut window = init_context.to_vec();
    let mut frames = Vec::with_capacity(horizon);
    let mut diverged_at = None;
    for step in 0..horizon {
        match model.next(&window, theta, stream_seed(seed, q, s, step)) {
            Ok(f) if f.is_finite() => {
                window.remove(0);
                window.push(f.clone());
                frames.push(f);
            }
            Ok(_) | Err(Error::NonFinite { .. }) => {
                diverged_at = Some(step);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(RolloutResult {
        q,
        s,
        frames,
        dt,
        theta,
        diverged_at,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MseReport {
    pub per_step: Vec<f64>,
    /// `per_channel[c][t]`
    pub per_channel: Vec<Vec<f64>>,
    pub aggregate: f64,
}

impl MseReport {
    pub fn channel_aggregates(&self) -> Vec<f64> {
        self.per_channel.iter().map(|c| mean(c)).collect()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Per-step MSE over unmasked cells, with per-channel breakdown.
pub fn masked_mse(pred: &[Field], reference: &[Field], mask: &Mask) -> Result<MseReport> {
    if pred.len() != reference.len() || pred.is_empty() {
        return Err(Error::shape(
            "masked_mse",
            format!("{} predicted vs {} reference frames", pred.len(), reference.len()),
        ));
    }
    let cells = mask.unmasked_count();
    if cells == 0 {
        return Err(Error::Invalid("mask excludes every cell".into()));
    }
    let (c, h, w) = reference[0].shape();
    if (mask.height(), mask.width()) != (h, w) {
        return Err(Error::shape("masked_mse", "mask does not match field"));
    }
    let mut per_channel = vec![Vec::with_capacity(pred.len()); c];
    let mut per_step = Vec::with_capacity(pred.len());
    for (p, r) in pred.iter().zip(reference) {
        if !p.same_shape(r) || r.shape() != (c, h, w) {
            return Err(Error::shape("masked_mse", format!("{:?} vs {:?}", p.shape(), r.shape())));
        }
        let mut total = 0.0;
        for (ch, out) in per_channel.iter_mut().enumerate() {
            let mut acc = 0.0;
            for y in 0..h {
                for x in 0..w {
                    if !mask.is_masked(y, x) {
                        let d = p.get(ch, y, x) - r.get(ch, y, x);
                        acc += d * d;
                    }
                }
            }
            out.push(acc / cells as f64);
            total += acc;
        }
        per_step.push(total / (cells * c) as f64);
    }
    Ok(MseReport {
        aggregate: mean(&per_step),
        per_step,
        per_channel,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ChangeMode {
    /// Mean of `|x_t − x_{t−1}|`.
    #[default]
    Absolute,
    /// Mean of the signed increment.
    Signed,
}

/// `d_t` for `t = 1..T−1`.
pub fn temporal_change(frames: &[Field], dt: f64, mode: ChangeMode) -> Result<Vec<f64>> {
    if dt <= 0.0 || dt.is_nan() {
        return Err(Error::Invalid(format!("frame spacing {dt} must be positive")));
    }
    if frames.len() < 2 {
        return Err(Error::Invalid("temporal change needs at least two frames".into()));
    }
    frames
        .windows(2)
        .map(|pair| {
            let (a, b) = (&pair[0], &pair[1]);
            if !a.same_shape(b) {
                return Err(Error::shape("temporal_change", "frames differ in shape"));
            }
            let n = a.values().len() as f64;
            let s: f64 = a
                .values()
                .iter()
                .zip(b.values())
                .map(|(p, q)| match mode {
                    ChangeMode::Absolute => (q - p).abs(),
                    ChangeMode::Signed => q - p,
                })
                .sum();
            Ok(s / n / dt)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeriesEnvelope {
    pub abscissa: Vec<f64>,
    pub mean: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub count: usize,
}

/// Pointwise mean, min and max over equally long series, folded in input order.
pub fn aggregate_envelope(abscissa: &[f64], series: &[Vec<f64>]) -> Result<SeriesEnvelope> {
    let first = series.first().ok_or_else(|| Error::Invalid("no series to aggregate".into()))?;
    if first.len() != abscissa.len() || series.iter().any(|s| s.len() != first.len()) {
        return Err(Error::shape("aggregate_envelope", "series lengths differ"));
    }
    let n = first.len();
    let mut env = SeriesEnvelope {
        abscissa: abscissa.to_vec(),
        mean: vec![0.0; n],
        min: first.clone(),
        max: first.clone(),
        count: series.len(),
    };
    for s in series {
        for i in 0..n {
            env.mean[i] += s[i];
            env.min[i] = env.min[i].min(s[i]);
            env.max[i] = env.max[i].max(s[i]);
        }
    }
    for (i, m) in env.mean.iter_mut().enumerate() {
        // keep min <= mean <= max despite rounding
        *m = (*m / series.len() as f64).clamp(env.min[i], env.max[i]);
    }
    Ok(env)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ProbeSpec {
    pub channel: usize,
    pub y: usize,
    pub x: usize,
}

impl ProbeSpec {
    /// `(H/2, 3W/4)` in the given channel.
    pub fn default_for(channel: usize, height: usize, width: usize) -> Self {
        Self {
            channel,
            y: height / 2,
            x: 3 * width / 4,
        }
    }

    pub fn validate(&self, shape: (usize, usize, usize), mask: &Mask) -> Result<()> {
        let (c, h, w) = shape;
        if self.channel >= c || self.y >= h || self.x >= w {
            return Err(Error::Invalid(format!("probe {self:?} outside {c}x{h}x{w}")));
        }
        if mask.is_masked(self.y, self.x) {
            return Err(Error::Invalid(format!("probe {self:?} sits on a masked cell")));
        }
        Ok(())
    }

    pub fn series(&self, frames: &[Field]) -> Vec<f64> {
        frames.iter().map(|f| f.get(self.channel, self.y, self.x)).collect()
    }
}

/// `|ŝ(m)|²` for every bin `m = 0..T`, by direct transform.
pub fn dft_power(signal: &[f64]) -> Vec<f64> {
    let t = signal.len();
    (0..t)
        .map(|m| {
            let (mut re, mut im) = (0.0, 0.0);
            for (k, &s) in signal.iter().enumerate() {
                let ang = 2.0 * std::f64::consts::PI * ((m * k) % t) as f64 / t as f64;
                re += s * ang.cos();
                im -= s * ang.sin();
            }
            re * re + im * im
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    /// `f_m = m / (T·dt)` for `m = 1..⌊T/2⌋−1`.
    pub freqs: Vec<f64>,
    pub power: Vec<f64>,
    /// `f_m²·P(f_m)`
    pub weighted: Vec<f64>,
}

pub fn probe_spectrum(signal: &[f64], dt: f64) -> Result<Spectrum> {
    let t = signal.len();
    if t < 8 {
        return Err(Error::Invalid(format!("probe spectrum needs T >= 8, got {t}")));
    }
    if dt <= 0.0 || dt.is_nan() {
        return Err(Error::Invalid(format!("frame spacing {dt} must be positive")));
    }
    let full = dft_power(signal);
    let bins = 1..t / 2;
    let freqs: Vec<f64> = bins.clone().map(|m| m as f64 / (t as f64 * dt)).collect();
    let power: Vec<f64> = bins.map(|m| full[m]).collect();
    let weighted = freqs.iter().zip(&power).map(|(f, p)| f * f * p).collect();
    Ok(Spectrum {
        freqs,
        power,
        weighted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn const_field(v: f64) -> Field {
        Field::filled(2, 4, 4, v)
    }

    #[test]
    fn persistence_rollout_repeats_last_frame() {
        let ctx = vec![const_field(1.0), const_field(2.0)];
        let r = rollout(&Persistence, &ctx, 0.3, 0.5, 5, 0, 0, 0).unwrap();
        assert_eq!(r.frames.len(), 5);
        assert!(r.frames.iter().all(|f| *f == ctx[1]));
        assert!(!r.diverged());
    }

    struct Shift;

    impl Forecaster for Shift {
        fn next(&self, context: &[Field], _: f64, seed: u64) -> Result<Field> {
            let l = context.last().unwrap();
            Ok(Field::filled(2, 4, 4, l.values()[0] + (seed % 7) as f64))
        }
    }

    #[test]
    fn single_step_rollout_is_one_generation() {
        let ctx = vec![const_field(0.0), const_field(1.0)];
        let r = rollout(&Shift, &ctx, 0.0, 1.0, 1, 9, 2, 1).unwrap();
        assert_eq!(r.frames, vec![Shift.next(&ctx, 0.0, stream_seed(9, 2, 1, 0)).unwrap()]);
        let a = rollout(&Shift, &ctx, 0.0, 1.0, 6, 9, 0, 0).unwrap();
        let b = rollout(&Shift, &ctx, 0.0, 1.0, 6, 9, 0, 1).unwrap();
        assert_ne!(a.frames, b.frames);
        assert_eq!(a, rollout(&Shift, &ctx, 0.0, 1.0, 6, 9, 0, 0).unwrap());
    }

    struct Blowup;

    impl Forecaster for Blowup {
        fn next(&self, context: &[Field], _: f64, _: u64) -> Result<Field> {
            let v = context.last().unwrap().values()[0] * 1e200;
            Ok(Field::filled(2, 4, 4, v))
        }
    }

    #[test]
    fn divergence_truncates_and_flags() {
        let ctx = vec![const_field(1.0), const_field(1.0)];
        let r = rollout(&Blowup, &ctx, 0.0, 1.0, 10, 0, 0, 0).unwrap();
        assert_eq!(r.diverged_at, Some(1));
        assert_eq!(r.frames.len(), 1);
    }

    #[test]
    fn mse_examples() {
        let mask = Mask::empty(4, 4);
        let a = vec![const_field(0.3); 3];
        assert!(masked_mse(&a, &a, &mask).unwrap().per_step.iter().all(|&v| v == 0.0));
        let b = vec![const_field(0.4); 3];
        let r = masked_mse(&b, &a, &mask).unwrap();
        assert!(r.per_step.iter().all(|v| (v - 0.01).abs() < 1e-15));
        assert!((r.aggregate - 0.01).abs() < 1e-15);

        let mut half = Mask::empty(4, 4);
        let mut p = const_field(0.0);
        for y in 0..2 {
            for x in 0..4 {
                half.set(y, x, true);
                for c in 0..2 {
                    let i = p.index(c, y, x);
                    p.values_mut()[i] = 5.0;
                }
            }
        }
        let r = masked_mse(&[p], &[const_field(0.0)], &half).unwrap();
        assert_eq!(r.aggregate, 0.0);

        let all = Mask::new(4, 4, vec![true; 16]).unwrap();
        assert!(masked_mse(&b, &a, &all).is_err());
        assert!(masked_mse(&b[..2], &a, &mask).is_err());
    }

    #[test]
    fn temporal_change_examples() {
        let dt = 0.25;
        let flat = vec![const_field(1.5); 6];
        assert!(temporal_change(&flat, dt, ChangeMode::Absolute).unwrap().iter().all(|&d| d == 0.0));

        let ramp: Vec<Field> = (0..6).map(|t| const_field(2.0 * t as f64 * dt)).collect();
        for d in temporal_change(&ramp, dt, ChangeMode::Absolute).unwrap() {
            assert!((d - 2.0).abs() < 1e-12);
        }

        let a = Field::new(1, 1, 4, vec![0.0, 1.0, -2.0, 0.5]).unwrap();
        let b = Field::new(1, 1, 4, vec![1.0, 1.0, 2.0, 0.0]).unwrap();
        let alt = vec![a.clone(), b.clone(), a, b];
        let want = (1.0 + 0.0 + 4.0 + 0.5) / 4.0 / dt;
        for d in temporal_change(&alt, dt, ChangeMode::Absolute).unwrap() {
            assert!((d - want).abs() < 1e-12);
        }
        let signed = temporal_change(&alt, dt, ChangeMode::Signed).unwrap();
        assert!((signed[0] + signed[1]).abs() < 1e-12);
        assert!(temporal_change(&alt, 0.0, ChangeMode::Absolute).is_err());
    }

    #[test]
    fn envelope_examples() {
        let x = [0.0, 1.0, 2.0];
        let e = aggregate_envelope(&x, &[vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(e.mean, e.min);
        assert_eq!(e.max, e.min);
        let e = aggregate_envelope(&x, &[vec![1.0; 3], vec![3.0; 3]]).unwrap();
        assert_eq!((e.mean[0], e.min[0], e.max[0]), (2.0, 1.0, 3.0));
        assert!(aggregate_envelope(&x, &[]).is_err());
    }

    #[test]
    fn on_bin_sinusoid() {
        let (t, dt, m0) = (64usize, 0.5, 5usize);
        let f0 = m0 as f64 / (t as f64 * dt);
        let s: Vec<f64> = (0..t).map(|k| (2.0 * std::f64::consts::PI * f0 * k as f64 * dt).sin()).collect();
        let sp = probe_spectrum(&s, dt).unwrap();
        assert_eq!(sp.freqs.len(), t / 2 - 1);
        let peak = (0..sp.power.len()).max_by(|&a, &b| sp.power[a].total_cmp(&sp.power[b])).unwrap();
        assert_eq!(peak + 1, m0);
        let tt = (t * t) as f64;
        assert!((sp.power[peak] - tt / 4.0).abs() < 1e-9 * tt);
        for (i, p) in sp.power.iter().enumerate() {
            if i != peak {
                assert!(*p < 1e-9 * tt);
            }
        }
        for (i, f) in sp.freqs.iter().enumerate() {
            assert_eq!(*f, (i + 1) as f64 / (t as f64 * dt));
            assert!((sp.weighted[i] - f * f * sp.power[i]).abs() <= 1e-15 * sp.weighted[i].abs().max(1.0));
        }
    }

    #[test]
    fn constant_signal_has_no_reported_power() {
        let sp = probe_spectrum(&[3.0; 16], 1.0).unwrap();
        assert!(sp.power.iter().all(|&p| p < 1e-20));
        assert!(probe_spectrum(&[1.0; 7], 1.0).is_err());
    }

    #[test]
    fn probe_validation() {
        let mut mask = Mask::empty(8, 8);
        let p = ProbeSpec::default_for(1, 8, 8);
        assert_eq!((p.y, p.x), (4, 6));
        assert!(p.validate((2, 8, 8), &mask).is_ok());
        mask.set(4, 6, true);
        assert!(p.validate((2, 8, 8), &mask).is_err());
        assert!(ProbeSpec { channel: 2, y: 0, x: 0 }.validate((2, 8, 8), &Mask::empty(8, 8)).is_err());
    }

    proptest! {
        #[test]
        fn parseval(sig in prop::collection::vec(-10.0f64..10.0, 8..80)) {
            let energy: f64 = sig.iter().map(|s| s * s).sum();
            let spec: f64 = dft_power(&sig).iter().sum::<f64>() / sig.len() as f64;
            prop_assert!((spec - energy).abs() <= 1e-9 * energy.max(1e-300));
        }

        #[test]
        fn spectrum_ignores_offsets(sig in prop::collection::vec(-1.0f64..1.0, 8..40), c in -5.0f64..5.0) {
            let a = probe_spectrum(&sig, 1.0).unwrap();
            let shifted: Vec<f64> = sig.iter().map(|s| s + c).collect();
            let b = probe_spectrum(&shifted, 1.0).unwrap();
            for (p, q) in a.power.iter().zip(&b.power) {
                prop_assert!((p - q).abs() < 1e-9 * (1.0 + p.abs()));
            }
        }

        #[test]
        fn envelope_is_permutation_invariant(rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 5), 1..6)) {
            let x: Vec<f64> = (0..5).map(f64::from).collect();
            let a = aggregate_envelope(&x, &rows).unwrap();
            let mut rev = rows.clone();
            rev.reverse();
            let b = aggregate_envelope(&x, &rev).unwrap();
            prop_assert_eq!(&a.min, &b.min);
            prop_assert_eq!(&a.max, &b.max);
            for (p, q) in a.mean.iter().zip(&b.mean) {
                prop_assert!((p - q).abs() < 1e-12);
            }
            for i in 0..5 {
                prop_assert!(a.min[i] <= a.mean[i] && a.mean[i] <= a.max[i]);
            }
        }

        #[test]
        fn change_and_mse_are_nonnegative(v in prop::collection::vec(-2.0f64..2.0, 32..=32), w in prop::collection::vec(-2.0f64..2.0, 32..=32)) {
            let a = Field::new(2, 4, 4, v).unwrap();
            let b = Field::new(2, 4, 4, w).unwrap();
            let d = temporal_change(&[a.clone(), b.clone()], 1.0, ChangeMode::Absolute).unwrap();
            prop_assert!(d[0] >= 0.0);
            let m = masked_mse(&[a], &[b], &Mask::empty(4, 4)).unwrap();
            prop_assert!(m.aggregate >= 0.0);
        }
    }
}

use super::ExperimentConfig;
use crate::data::{Field, Trajectory};
use crate::error::{Error, Result};
use crate::metrics::{
    aggregate_envelope, masked_mse, probe_spectrum, rollout, temporal_change, ChangeMode, Forecaster, MetricRow,
    ProbeSpec, SeriesEnvelope,
};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    /// Mean over runs of the per-step MSE, capped and padded after divergence.
    pub aggregate_mse: f64,
    /// Mean per-step MSE over the steps that did not diverge.
    pub surviving_mse: f64,
    /// Capped aggregate per channel.
    pub channel_mse: Vec<f64>,
    pub divergences: usize,
    pub runs: usize,
}

impl EvalSummary {
    /// Sum over channels of the capped aggregate MSE.
    pub fn total_mse(&self) -> f64 {
        self.channel_mse.iter().sum()
    }
}

/// Rows and envelopes ready for the CSV emitters.
#[derive(Clone, Debug, Default)]
pub struct EvalRecords {
    pub mse: Vec<MetricRow>,
    pub temporal: Vec<MetricRow>,
    pub spectrum: Vec<MetricRow>,
    /// `(source, envelope)` with source `model` or `reference`.
    pub mse_envelope: Vec<(String, SeriesEnvelope)>,
    pub temporal_envelope: Vec<(String, SeriesEnvelope)>,
    pub spectrum_envelope: Vec<(String, SeriesEnvelope)>,
}

fn variance(frames: &[Field], channel: Option<usize>) -> f64 {
    let vals: Vec<f64> = frames
        .iter()
        .flat_map(|f| match channel {
            Some(c) => f.channel(c).to_vec(),
            None => f.values().to_vec(),
        })
        .collect();
    let n = vals.len() as f64;
    let m = vals.iter().sum::<f64>() / n;
    vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n
}

fn capped(series: &[f64], horizon: usize, cap: f64) -> Vec<f64> {
    (0..horizon).map(|t| series.get(t).map_or(cap, |v| v.min(cap))).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Rolls out `forecaster` on every test trajectory (already normalized) and
/// computes MSE, temporal change and probe spectra against the ground truth.
pub fn evaluate(
    forecaster: &impl Forecaster,
    cfg: &ExperimentConfig,
    test: &[Trajectory],
    label: &str,
    seed: u64,
) -> Result<(EvalSummary, EvalRecords)> {
    let k = cfg.model.context;
    let hr = cfg.horizon;
    let start = cfg.eval_start;
    let take = cfg.max_test_trajectories.unwrap_or(test.len()).min(test.len());
    if take == 0 {
        return Err(Error::EmptyDataset);
    }
    let mode = if cfg.signed_change {
        ChangeMode::Signed
    } else {
        ChangeMode::Absolute
    };
    let channels = cfg.model.channels;
    let mut rec = EvalRecords::default();
    let mut run_series = Vec::new();
    let mut run_aggregates = Vec::new();
    let mut channel_aggregates = vec![Vec::new(); channels];
    let mut surviving = Vec::new();
    let mut divergences = 0;
    let mut d_model = Vec::new();
    let mut d_ref = Vec::new();
    let mut sp_model = Vec::new();
    let mut sp_ref = Vec::new();
    let mut freqs = Vec::new();
    let with_spectrum = hr >= 8;

    for (q, traj) in test.iter().take(take).enumerate() {
        if traj.len() < start + k + hr {
            return Err(Error::Config(format!(
                "test trajectory {q} has {} frames, evaluation needs {}",
                traj.len(),
                start + k + hr
            )));
        }
        let context = &traj.frames[start..start + k];
        let reference = &traj.frames[start + k..start + k + hr];
        let mask = traj.mask_or_empty();
        let probe = cfg.probe.unwrap_or_else(|| {
            let (_, h, w) = reference[0].shape();
            ProbeSpec::default_for(channels.saturating_sub(1).min(1), h, w)
        });
        probe.validate(reference[0].shape(), &mask)?;
        let cap = cfg.mse_cap_factor * variance(reference, None);
        let channel_caps: Vec<f64> = (0..channels).map(|c| cfg.mse_cap_factor * variance(reference, Some(c))).collect();

        // ground truth through the same code paths
        let last_ctx = context[k - 1].clone();
        let with_anchor = |frames: &[Field]| -> Vec<Field> {
            std::iter::once(last_ctx.clone()).chain(frames.iter().cloned()).collect()
        };
        let dref = temporal_change(&with_anchor(reference), traj.dt, mode)?;
        for (t, v) in dref.iter().enumerate() {
            rec.temporal.push(MetricRow { experiment: label.into(), q, s: None, x: (t + 1) as f64, value: *v });
        }
        d_ref.push(dref);
        if with_spectrum {
            let sp = probe_spectrum(&probe.series(reference), traj.dt)?;
            for (f, v) in sp.freqs.iter().zip(&sp.weighted) {
                rec.spectrum.push(MetricRow { experiment: label.into(), q, s: None, x: *f, value: *v });
            }
            freqs = sp.freqs.clone();
            sp_ref.push(sp.weighted);
        }

        for s in 0..cfg.samples {
            let r = rollout(forecaster, context, traj.theta, traj.dt, hr, seed, q, s)?;
            let n = r.frames.len();
            let (per_step, per_channel) = if n > 0 {
                let m = masked_mse(&r.frames, &reference[..n], &mask)?;
                (m.per_step, m.per_channel)
            } else {
                (Vec::new(), vec![Vec::new(); channels])
            };
            surviving.extend_from_slice(&per_step);
            let series = capped(&per_step, hr, cap);
            for (t, v) in series.iter().enumerate() {
                rec.mse.push(MetricRow { experiment: label.into(), q, s: Some(s), x: (t + 1) as f64, value: *v });
            }
            run_aggregates.push(mean(&series));
            run_series.push(series);
            for (c, pc) in per_channel.iter().enumerate() {
                channel_aggregates[c].push(mean(&capped(pc, hr, channel_caps[c])));
            }
            if r.diverged() {
                divergences += 1;
                log::info!("{label}: rollout q={q} s={s} diverged at step {}", n);
                continue;
            }
            let d = temporal_change(&with_anchor(&r.frames), r.dt, mode)?;
            for (t, v) in d.iter().enumerate() {
                rec.temporal.push(MetricRow { experiment: label.into(), q, s: Some(s), x: (t + 1) as f64, value: *v });
            }
            d_model.push(d);
            if with_spectrum {
                let sp = probe_spectrum(&probe.series(&r.frames), r.dt)?;
                for (f, v) in sp.freqs.iter().zip(&sp.weighted) {
                    rec.spectrum.push(MetricRow { experiment: label.into(), q, s: Some(s), x: *f, value: *v });
                }
                sp_model.push(sp.weighted);
            }
        }
    }

    let steps: Vec<f64> = (1..=hr).map(|t| t as f64).collect();
    rec.mse_envelope.push(("model".into(), aggregate_envelope(&steps, &run_series)?));
    rec.temporal_envelope.push(("reference".into(), aggregate_envelope(&steps, &d_ref)?));
    if !d_model.is_empty() {
        rec.temporal_envelope.push(("model".into(), aggregate_envelope(&steps, &d_model)?));
    }
    if with_spectrum {
        rec.spectrum_envelope.push(("reference".into(), aggregate_envelope(&freqs, &sp_ref)?));
        if !sp_model.is_empty() {
            rec.spectrum_envelope.push(("model".into(), aggregate_envelope(&freqs, &sp_model)?));
        }
    }
    let summary = EvalSummary {
        aggregate_mse: mean(&run_aggregates),
        surviving_mse: if surviving.is_empty() { f64::NAN } else { mean(&surviving) },
        channel_mse: channel_aggregates.iter().map(|c| mean(c)).collect(),
        divergences,
        runs: run_aggregates.len(),
    };
    Ok((summary, rec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Persistence;

    pub(crate) fn wave_trajectory(t: usize, theta: f64) -> Trajectory {
        let frames = (0..t)
            .map(|i| {
                Field::new(
                    2,
                    8,
                    8,
                    (0..128).map(|j| ((j as f64) * 0.3 + i as f64 * 0.7 * (1.0 + theta)).sin()).collect(),
                )
                .unwrap()
            })
            .collect();
        Trajectory::new(frames, 0.5, theta).unwrap()
    }

    fn cfg(horizon: usize, samples: usize) -> ExperimentConfig {
        let mut c: ExperimentConfig = serde_json::from_str(super::super::config::tests::sample_json()).unwrap();
        c.model.height = 8;
        c.model.width = 8;
        c.model.patch = 2;
        c.horizon = horizon;
        c.samples = samples;
        c
    }

    struct Oracle<'a>(&'a Trajectory);

    impl Forecaster for Oracle<'_> {
        fn next(&self, context: &[Field], _: f64, _: u64) -> Result<Field> {
            let i = self.0.frames.iter().position(|f| f == context.last().unwrap()).unwrap();
            Ok(self.0.frames[i + 1].clone())
        }
    }

    #[test]
    fn ground_truth_against_itself() {
        let traj = wave_trajectory(14, 0.2);
        let c = cfg(10, 1);
        let (sum, rec) = evaluate(&Oracle(&traj), &c, std::slice::from_ref(&traj), "gt", 0).unwrap();
        assert_eq!(sum.aggregate_mse, 0.0);
        assert_eq!(sum.divergences, 0);
        let model: Vec<f64> = rec.temporal.iter().filter(|r| r.s.is_some()).map(|r| r.value).collect();
        let refr: Vec<f64> = rec.temporal.iter().filter(|r| r.s.is_none()).map(|r| r.value).collect();
        assert_eq!(model, refr);
        let env = &rec.mse_envelope[0].1;
        assert_eq!(env.min, env.max);
        for r in rec.spectrum.iter().take(4) {
            let m = (r.x * 10.0 * 0.5).round();
            assert_eq!(r.x, m / (10.0 * 0.5));
        }
    }

    #[test]
    fn single_sample_envelope_is_degenerate() {
        let traj = wave_trajectory(12, 0.4);
        let (_, rec) = evaluate(&Persistence, &cfg(8, 1), std::slice::from_ref(&traj), "p", 0).unwrap();
        for (_, e) in rec.temporal_envelope.iter().chain(&rec.spectrum_envelope).chain(&rec.mse_envelope) {
            assert_eq!(e.min, e.mean);
            assert_eq!(e.max, e.mean);
        }
    }

    struct Nan;

    impl Forecaster for Nan {
        fn next(&self, context: &[Field], _: f64, _: u64) -> Result<Field> {
            let (c, h, w) = context[0].shape();
            Ok(Field::filled(c, h, w, f64::NAN))
        }
    }

    #[test]
    fn diverged_runs_are_capped_and_counted() {
        let traj = wave_trajectory(12, 0.4);
        let c = cfg(8, 2);
        let (sum, rec) = evaluate(&Nan, &c, std::slice::from_ref(&traj), "nan", 0).unwrap();
        assert_eq!((sum.divergences, sum.runs), (2, 2));
        let cap = 100.0 * variance(&traj.frames[2..10], None);
        assert!((sum.aggregate_mse - cap).abs() < 1e-12 * cap);
        assert!(sum.surviving_mse.is_nan());
        assert_eq!(rec.temporal_envelope.len(), 1);
    }

    #[test]
    fn persistence_error_grows() {
        let traj = wave_trajectory(12, 0.1);
        let (sum, rec) = evaluate(&Persistence, &cfg(8, 1), std::slice::from_ref(&traj), "p", 0).unwrap();
        assert!(sum.aggregate_mse > 0.0);
        assert_eq!(rec.mse.len(), 8);
        assert!((sum.total_mse() - sum.channel_mse.iter().sum::<f64>()).abs() == 0.0);
        assert!(evaluate(&Persistence, &cfg(11, 1), std::slice::from_ref(&traj), "p", 0).is_err());
    }
}

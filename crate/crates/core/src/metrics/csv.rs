//! Long-format CSV emitters.
//!
//! Numbers are printed with Rust's shortest round-trip exponent form
//! (`{:e}`, e.g. `1.25e-3`), so equal values always yield equal bytes.
//! Rows appear in the order given; lines end with `\n`.

use std::fmt::Write;

use super::SeriesEnvelope;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub experiment: String,
    pub q: usize,
    /// `None` marks a ground-truth reference row (printed as `ref`).
    pub s: Option<usize>,
    pub x: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvelopeRow<'a> {
    pub experiment: String,
    pub source: String,
    pub envelope: &'a SeriesEnvelope,
}

fn check_label(s: &str) -> Result<()> {
    if s.is_empty() || s.contains([',', '"', '\n', '\r']) {
        return Err(Error::Invalid(format!("label {s:?} is not a plain CSV token")));
    }
    Ok(())
}

/// Columns `experiment,q,s,<axis>,value`.
pub fn metric_csv(axis: &str, rows: &[MetricRow]) -> Result<String> {
    check_label(axis)?;
    let mut out = format!("experiment,q,s,{axis},value\n");
    for r in rows {
        check_label(&r.experiment)?;
        let s = r.s.map_or_else(|| "ref".to_string(), |s| s.to_string());
        writeln!(out, "{},{},{},{:e},{:e}", r.experiment, r.q, s, r.x, r.value).expect("string write");
    }
    Ok(out)
}

/// Columns `experiment,source,<axis>,mean,min,max,count`.
pub fn envelope_csv(axis: &str, rows: &[EnvelopeRow<'_>]) -> Result<String> {
    check_label(axis)?;
    let mut out = format!("experiment,source,{axis},mean,min,max,count\n");
    for r in rows {
        check_label(&r.experiment)?;
        check_label(&r.source)?;
        let e = r.envelope;
        for i in 0..e.abscissa.len() {
            writeln!(
                out,
                "{},{},{:e},{:e},{:e},{:e},{}",
                r.experiment, r.source, e.abscissa[i], e.mean[i], e.min[i], e.max[i], e.count
            )
            .expect("string write");
        }
    }
    Ok(out)
}

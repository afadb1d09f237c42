//! CSV and JSON report emission. Every artifact carries the hash of the
//! configuration that produced it.

use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::cav::TcavSummary;
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::shapley::{AttributionResult, Method};

/// First 16 hex digits of the SHA-256 of the value's JSON encoding.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let digest = Sha256::digest(serde_json::to_vec(value)?);
    Ok(digest[..8].iter().map(|b| format!("{:02x}", b)).collect())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Data(format!("csv: {:?}", other)),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[derive(Serialize)]
struct MetricRow<'a> {
    method: &'a str,
    f1: f64,
    comp: f64,
    comp_ci: f64,
    suff: f64,
    suff_ci: f64,
    n: usize,
    config_hash: &'a str,
}

pub fn write_metrics_csv(path: &Path, reports: &[MetricReport], config_hash: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for r in reports {
        w.serialize(MetricRow {
            method: r.method.name(),
            f1: r.f1,
            comp: r.comprehensiveness,
            comp_ci: r.comp_ci,
            suff: r.sufficiency,
            suff_ci: r.suff_ci,
            n: r.n,
            config_hash,
        })
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Failure {
    method: Method,
    error: String,
}

#[derive(Serialize)]
struct MetricsDoc<'a> {
    config_hash: &'a str,
    reports: &'a [MetricReport],
    failures: Vec<Failure>,
}

/// JSON mirror of the CSV. Methods that failed are listed with their error
/// instead of a row.
pub fn write_metrics_json(
    path: &Path,
    reports: &[MetricReport],
    failures: &[(Method, Error)],
    config_hash: &str,
) -> Result<()> {
    let failures = failures.iter().map(|(m, e)| Failure { method: *m, error: e.to_string() }).collect();
    write_json(path, &MetricsDoc { config_hash, reports, failures })
}

#[derive(Serialize)]
struct AttributionRecord<'a> {
    input_id: &'a str,
    #[serde(flatten)]
    result: &'a AttributionResult,
}

#[derive(Serialize)]
struct AttributionDoc<'a> {
    config_hash: &'a str,
    records: Vec<AttributionRecord<'a>>,
}

pub fn write_attributions(path: &Path, records: &[(String, AttributionResult)], config_hash: &str) -> Result<()> {
    let records = records.iter().map(|(id, r)| AttributionRecord { input_id: id, result: r }).collect();
    write_json(path, &AttributionDoc { config_hash, records })
}

#[derive(Serialize)]
struct TcavRow<'a> {
    concept: &'a str,
    class: usize,
    layer: usize,
    variant: &'a str,
    cav: usize,
    score: f64,
    n_positive: usize,
    n_inputs: usize,
    config_hash: &'a str,
}

/// One row per CAV, ready for a bar chart of score by layer and concept.
pub fn write_tcav_csv(path: &Path, summaries: &[TcavSummary], config_hash: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for s in summaries {
        for (i, r) in s.reports().iter().enumerate() {
            w.serialize(TcavRow {
                concept: &r.concept,
                class: r.class,
                layer: r.layer,
                variant: r.variant.name(),
                cav: i,
                score: r.score,
                n_positive: r.n_positive,
                n_inputs: r.n_inputs,
                config_hash,
            })
            .map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct TcavDoc<'a> {
    config_hash: &'a str,
    summaries: &'a [TcavSummary],
}

pub fn write_tcav_json(path: &Path, summaries: &[TcavSummary], config_hash: &str) -> Result<()> {
    write_json(path, &TcavDoc { config_hash, summaries })
}

/// Writes any serializable document as pretty JSON.
pub fn write_document<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_json(path, value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = config_hash(&serde_json::json!({"seed": 1})).unwrap();
        let b = config_hash(&serde_json::json!({"seed": 1})).unwrap();
        let c = config_hash(&serde_json::json!({"seed": 2})).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 16);
    }

    #[test]
    fn metrics_csv_has_expected_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let r = MetricReport {
            method: Method::ALL[0],
            dataset: "d".into(),
            f1: 0.5,
            comprehensiveness: 0.25,
            comp_ci: 0.01,
            sufficiency: 0.125,
            suff_ci: 0.02,
            n: 4,
        };
        write_metrics_csv(&path, &[r], "abc").unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "method,f1,comp,comp_ci,suff,suff_ci,n,config_hash");
        assert!(lines.next().unwrap().ends_with(",0.5,0.25,0.01,0.125,0.02,4,abc"));
    }
}

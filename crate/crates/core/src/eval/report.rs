use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use super::protocol::{run_skip_protocol, Method, Predictor, SequenceReport};
use crate::align::AlignConfig;
use crate::error::{Error, Result};
use crate::net::Model;
use crate::par;
use crate::scene::Sequence;

/// Per-sequence metrics of one method at one skip value, with their means.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub method: String,
    pub k: usize,
    pub sequences: Vec<SequenceReport>,
    pub mean: Aggregate,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub abs_rel: f64,
    pub delta_1_25: f64,
    pub ate: f64,
    pub rte: f64,
    pub rre: f64,
}

impl MetricsReport {
    pub fn new(method: &str, k: usize, sequences: Vec<SequenceReport>) -> Result<Self> {
        if sequences.is_empty() {
            return Err(Error::InvalidInput("report over no sequences".into()));
        }
        let n = sequences.len() as f64;
        let mean = |f: fn(&SequenceReport) -> f64| sequences.iter().map(f).sum::<f64>() / n;
        let mean = Aggregate {
            abs_rel: mean(|s| s.abs_rel),
            delta_1_25: mean(|s| s.delta_1_25),
            ate: mean(|s| s.ate),
            rte: mean(|s| s.rte),
            rre: mean(|s| s.rre),
        };
        Ok(Self {
            method: method.to_string(),
            k,
            sequences,
            mean,
        })
    }

    /// Mean Abs Rel per target time across sequences.
    pub fn per_tau(&self) -> BTreeMap<String, f64> {
        let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for s in &self.sequences {
            for t in &s.per_tau {
                let e = acc.entry(format!("{:.4}", t.tau)).or_default();
                e.0 += t.abs_rel;
                e.1 += 1;
            }
        }
        acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
    }
}

#[derive(Serialize)]
struct CsvRow<'a> {
    method: &'a str,
    k: usize,
    sequence: &'a str,
    abs_rel: f64,
    delta_1_25: f64,
    ate: f64,
    rte: f64,
    rre: f64,
}

/// Pretty JSON of `value` with a trailing newline.
pub fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidInput(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One CSV row per sequence and one `mean` row per report.
pub fn write_csv(path: impl AsRef<Path>, reports: &[MetricsReport]) -> Result<()> {
    let path = path.as_ref();
    let err = |e: csv::Error| Error::io(path, e.into());
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in reports {
        for s in &r.sequences {
            w.serialize(CsvRow {
                method: &r.method,
                k: r.k,
                sequence: &s.sequence,
                abs_rel: s.abs_rel,
                delta_1_25: s.delta_1_25,
                ate: s.ate,
                rte: s.rte,
                rre: s.rre,
            })
            .map_err(err)?;
        }
        w.serialize(CsvRow {
            method: &r.method,
            k: r.k,
            sequence: "mean",
            abs_rel: r.mean.abs_rel,
            delta_1_25: r.mean.delta_1_25,
            ate: r.mean.ate,
            rte: r.mean.rte,
            rre: r.mean.rre,
        })
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Runs the skip protocol for one method over named sequences, in
/// parallel across sequences, reporting in input order.
pub fn evaluate_method(
    sequences: &[(String, Sequence)],
    k: usize,
    predictor: &Predictor<'_>,
    config: &AlignConfig,
) -> Result<MetricsReport> {
    let reports = par::map(sequences, |(name, seq)| {
        run_skip_protocol(seq, name, k, predictor, config).map(|(r, _)| r)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    MetricsReport::new(predictor.method.name(), k, reports)
}

/// Side-by-side comparison of methods over skip values. Abs Rel deltas
/// are taken against `full` when it is present.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationReport {
    pub reports: Vec<MetricsReport>,
    pub rows: Vec<AblationRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub method: String,
    pub k: usize,
    pub abs_rel: f64,
    pub delta_1_25: f64,
    pub ate: f64,
    pub abs_rel_vs_full: Option<f64>,
}

/// Models by method; `GroundTruth` needs none, `OracleSource` and
/// `CopyNearest` use the full model.
pub fn run_ablation(
    sequences: &[(String, Sequence)],
    ks: &[usize],
    methods: &[Method],
    models: &BTreeMap<Method, Model<f32>>,
    oracle_sigma: f64,
    seed: u64,
    config: &AlignConfig,
) -> Result<AblationReport> {
    let mut reports = Vec::new();
    for &k in ks {
        for &m in methods {
            let key = match m {
                Method::OracleSource | Method::CopyNearest => Method::Full,
                other => other,
            };
            let model = if m.needs_model() {
                Some(models.get(&key).ok_or_else(|| {
                    Error::Missing(format!(
                        "checkpoint for variant {} (needed by {})",
                        key.name(),
                        m.name()
                    ))
                })?)
            } else {
                None
            };
            let predictor = Predictor {
                method: m,
                model,
                oracle_sigma,
                seed,
            };
            reports.push(evaluate_method(sequences, k, &predictor, config)?);
        }
    }
    let rows = reports
        .iter()
        .map(|r| {
            let full = reports
                .iter()
                .find(|f| f.k == r.k && f.method == Method::Full.name())
                .map(|f| r.mean.abs_rel - f.mean.abs_rel);
            AblationRow {
                method: r.method.clone(),
                k: r.k,
                abs_rel: r.mean.abs_rel,
                delta_1_25: r.mean.delta_1_25,
                ate: r.mean.ate,
                abs_rel_vs_full: full,
            }
        })
        .collect();
    Ok(AblationReport { reports, rows })
}

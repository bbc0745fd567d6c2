//! Accuracy, prior divergence and training-history serialization.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::distributions::{argmax, ClassPrior, PRIOR_FLOOR};
use crate::engine::EpochRecord;
use crate::error::{Error, Result};
use crate::model::{logits, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub top1: f64,
    pub per_class: Vec<f64>,
    pub kl_pi_u: f64,
    pub kl_phi: f64,
    pub mask_rate: f64,
}

/// `KL(p || q)` after flooring both arguments at `1e-8` and renormalizing.
pub fn kl(p: &ClassPrior, q: &ClassPrior) -> f64 {
    let (p, q) = (p.floored(PRIOR_FLOOR), q.floored(PRIOR_FLOOR));
    p.probs()
        .iter()
        .zip(q.probs())
        .map(|(a, b)| a * (a / b).ln())
        .sum::<f64>()
        .max(0.0)
}

/// Top-1 and per-class accuracy from precomputed class scores.
pub fn accuracy_from_scores(scores: &[Vec<f64>], labels: &[usize], k: usize) -> (f64, Vec<f64>) {
    let mut hits = vec![0u64; k];
    let mut totals = vec![0u64; k];
    for (s, &y) in scores.iter().zip(labels) {
        totals[y] += 1;
        if argmax(s) == y {
            hits[y] += 1;
        }
    }
    let n: u64 = totals.iter().sum();
    let top1 = if n == 0 {
        0.0
    } else {
        hits.iter().sum::<u64>() as f64 / n as f64
    };
    let per_class = hits
        .iter()
        .zip(&totals)
        .map(|(&h, &t)| if t == 0 { 0.0 } else { h as f64 / t as f64 })
        .collect();
    (top1, per_class)
}

/// Accuracy under the uniform-prior decision rule `argmax_y f(x, y)`.
pub fn top1(params: &ModelParams, dataset: &Dataset) -> Result<(f64, Vec<f64>)> {
    top1_with_prior(params, dataset, None)
}

/// Accuracy under `argmax_y prior_y exp(f(x, y))`; `None` means the uniform rule.
pub fn top1_with_prior(
    params: &ModelParams,
    dataset: &Dataset,
    prior: Option<&ClassPrior>,
) -> Result<(f64, Vec<f64>)> {
    let labels = dataset
        .labels()
        .ok_or_else(|| Error::invalid("dataset", "accuracy needs a labeled split"))?;
    let shift = match prior {
        Some(p) => p.floored(PRIOR_FLOOR).ln()?,
        None => vec![0.0; params.k()],
    };
    let scores = dataset
        .rows()
        .map(|x| {
            logits(params, x).map(|f| f.iter().zip(&shift).map(|(a, b)| a + b).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(accuracy_from_scores(&scores, labels, params.k()))
}

pub const HISTORY_HEADER: [&str; 7] = [
    "epoch", "loss_l", "loss_u", "mask_rate", "top1", "kl_pi_u", "kl_phi",
];

/// One CSV row of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub loss_l: f64,
    pub loss_u: f64,
    pub mask_rate: f64,
    pub top1: f64,
    pub kl_pi_u: Option<f64>,
    pub kl_phi: Option<f64>,
}

impl From<&EpochRecord> for HistoryRow {
    fn from(r: &EpochRecord) -> Self {
        Self {
            epoch: r.epoch,
            loss_l: r.loss_l,
            loss_u: r.loss_u,
            mask_rate: r.mask_rate,
            top1: r.top1,
            kl_pi_u: r.kl_pi_u,
            kl_phi: r.kl_phi,
        }
    }
}

/// JSON companion of the history CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistorySummary {
    pub epochs: usize,
    pub final_epoch: Option<HistoryRow>,
    pub final_pi_u: Option<Vec<f64>>,
    pub final_phi: Option<Vec<f64>>,
    pub config: serde_json::Value,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the per-epoch CSV and a JSON summary echoing `config`.
pub fn write_history(
    records: &[EpochRecord],
    path_csv: &Path,
    path_json: &Path,
    config: &serde_json::Value,
) -> Result<()> {
    let file = File::create(path_csv).map_err(|e| Error::io(path_csv, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path_csv, e);
    writeln!(w, "{}", HISTORY_HEADER.join(",")).map_err(io)?;
    for r in records {
        let row = HistoryRow::from(r);
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            row.epoch,
            row.loss_l,
            row.loss_u,
            row.mask_rate,
            row.top1,
            fmt_opt(row.kl_pi_u),
            fmt_opt(row.kl_phi)
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)?;

    let last = records.last();
    let summary = HistorySummary {
        epochs: records.len(),
        final_epoch: last.map(HistoryRow::from),
        final_pi_u: last.map(|r| r.pi_u.probs().to_vec()),
        final_phi: last.map(|r| r.phi.probs().to_vec()),
        config: config.clone(),
    };
    let text = serde_json::to_string_pretty(&summary)?;
    std::fs::write(path_json, text + "\n").map_err(|e| Error::io(path_json, e))
}

/// Parses a history CSV written by [`write_history`].
pub fn read_history_csv(path: &Path) -> Result<Vec<HistoryRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let parse_err = |line: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line: line as u64 + 1,
        reason,
    };
    match lines.next() {
        Some((_, h)) if h == HISTORY_HEADER.join(",") => {}
        _ => return Err(parse_err(0, "missing or unexpected header".into())),
    }
    lines
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != HISTORY_HEADER.len() {
                return Err(parse_err(i, format!("expected 7 fields, got {}", f.len())));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse().map_err(|_| parse_err(i, format!("not a number: {s:?}")))
            };
            let opt = |s: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    num(s).map(Some)
                }
            };
            Ok(HistoryRow {
                epoch: f[0]
                    .parse()
                    .map_err(|_| parse_err(i, format!("bad epoch {:?}", f[0])))?,
                loss_l: num(f[1])?,
                loss_u: num(f[2])?,
                mask_rate: num(f[3])?,
                top1: num(f[4])?,
                kl_pi_u: opt(f[5])?,
                kl_phi: opt(f[6])?,
            })
        })
        .collect()
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

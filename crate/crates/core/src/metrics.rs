//! Classification metrics, per-device tables and the group-size sweep.
//!
//! Precision, recall and F1 are macro-averaged over the classes present in
//! the truth labels. Classes that only occur among predictions still get a
//! row and column in the confusion matrix and are reported as warnings.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::{self, Write};
use std::num::NonZeroUsize;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{aggregate, AggregationConfig, AggregationError};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{truth} truth labels but {predicted} predictions")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// Sorted union of truth and predicted labels; indexes `confusion`.
    pub labels: Vec<String>,
    /// Rows are truth, columns are predictions.
    pub confusion: Vec<Vec<u64>>,
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub total: u64,
    /// Labels predicted but never true; excluded from macro averages.
    pub prediction_only: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alg_t: Option<f64>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn check_lengths(truth: usize, predicted: usize) -> Result<(), MetricsError> {
    if truth != predicted {
        return Err(MetricsError::LengthMismatch { truth, predicted });
    }
    if truth == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

pub fn evaluate<S: AsRef<str>>(truth: &[S], predicted: &[S]) -> Result<EvaluationReport, MetricsError> {
    check_lengths(truth.len(), predicted.len())?;
    let labels: Vec<String> =
        truth.iter().chain(predicted).map(|s| s.as_ref()).collect::<BTreeSet<_>>().into_iter().map(String::from).collect();
    let idx = |s: &str| labels.binary_search_by(|l| l.as_str().cmp(s)).expect("label collected above");
    let k = labels.len();
    let mut confusion = vec![vec![0u64; k]; k];
    for (t, p) in truth.iter().zip(predicted) {
        confusion[idx(t.as_ref())][idx(p.as_ref())] += 1;
    }
    Ok(report_from_confusion(labels, confusion))
}

pub fn report_from_confusion(labels: Vec<String>, confusion: Vec<Vec<u64>>) -> EvaluationReport {
    let k = labels.len();
    let total: u64 = confusion.iter().flatten().sum();
    let trace: u64 = (0..k).map(|i| confusion[i][i]).sum();
    let mut per_class = Vec::with_capacity(k);
    let mut prediction_only = Vec::new();
    let (mut sp, mut sr, mut sf, mut present) = (0.0, 0.0, 0.0, 0usize);
    for (i, label) in labels.iter().enumerate() {
        let tp = confusion[i][i];
        let support: u64 = confusion[i].iter().sum();
        let predicted: u64 = confusion.iter().map(|row| row[i]).sum();
        let (p, r) = (ratio(tp, predicted), ratio(tp, support));
        let f = f1(p, r);
        if support > 0 {
            sp += p;
            sr += r;
            sf += f;
            present += 1;
        } else {
            prediction_only.push(label.clone());
        }
        per_class.push(ClassMetrics { label: label.clone(), precision: p, recall: r, f1: f, support });
    }
    let n = present.max(1) as f64;
    EvaluationReport {
        labels,
        confusion,
        per_class,
        macro_precision: sp / n,
        macro_recall: sr / n,
        macro_f1: sf / n,
        accuracy: ratio(trace, total),
        total,
        prediction_only,
        test_t: None,
        alg_t: None,
    }
}

/// Macro-F1 over class indices, averaging over classes present in `truth`.
pub fn macro_f1_indices(truth: &[usize], predicted: &[usize], n_classes: usize) -> f64 {
    let mut tp = vec![0u64; n_classes];
    let mut support = vec![0u64; n_classes];
    let mut pred = vec![0u64; n_classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        support[t] += 1;
        pred[p] += 1;
        if t == p {
            tp[t] += 1;
        }
    }
    let (sum, present) = (0..n_classes)
        .filter(|&c| support[c] > 0)
        .fold((0.0, 0usize), |(s, n), c| (s + f1(ratio(tp[c], pred[c]), ratio(tp[c], support[c])), n + 1));
    if present == 0 {
        0.0
    } else {
        sum / present as f64
    }
}

impl EvaluationReport {
    /// `label,precision,recall,f1,support` per class, then a `macro` row and
    /// an `accuracy` row.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "label,precision,recall,f1,support")?;
        for c in &self.per_class {
            writeln!(out, "{},{},{},{},{}", c.label, c.precision, c.recall, c.f1, c.support)?;
        }
        let present = self.per_class.iter().filter(|c| c.support > 0).count();
        writeln!(out, "macro,{},{},{},{}", self.macro_precision, self.macro_recall, self.macro_f1, present)?;
        writeln!(out, "accuracy,,,{},{}", self.accuracy, self.total)
    }

    pub fn write_confusion_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let mut line = String::from("truth\\predicted");
        for l in &self.labels {
            write!(line, ",{l}").expect("writing to a String");
        }
        writeln!(out, "{line}")?;
        for (l, row) in self.labels.iter().zip(&self.confusion) {
            line.clear();
            line.push_str(l);
            for v in row {
                write!(line, ",{v}").expect("writing to a String");
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serialisable") + "\n"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceRow {
    pub label: String,
    pub support: u64,
    /// Share of all evaluated packets, in percent.
    pub percent: f64,
    /// F1 per method, in the order the methods were supplied.
    pub f1: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceTable {
    pub methods: Vec<String>,
    pub rows: Vec<DeviceRow>,
}

/// One row per true label with its support and the F1 of each method.
pub fn evaluate_by_device<S: AsRef<str>>(truth: &[S], methods: &[(&str, &[S])]) -> Result<DeviceTable, MetricsError> {
    let reports = methods
        .iter()
        .map(|(_, pred)| evaluate(truth, pred))
        .collect::<Result<Vec<_>, _>>()?;
    let truth_labels: BTreeSet<&str> = truth.iter().map(|s| s.as_ref()).collect();
    let total = truth.len() as f64;
    let rows = truth_labels
        .into_iter()
        .map(|label| {
            let support = truth.iter().filter(|t| t.as_ref() == label).count() as u64;
            let f1 = reports
                .iter()
                .map(|r| r.per_class.iter().find(|c| c.label == label).map_or(0.0, |c| c.f1))
                .collect();
            DeviceRow { label: label.to_string(), support, percent: 100.0 * support as f64 / total, f1 }
        })
        .collect();
    Ok(DeviceTable { methods: methods.iter().map(|(m, _)| m.to_string()).collect(), rows })
}

impl DeviceTable {
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "device,packets,percent,{}", self.methods.join(","))?;
        for r in &self.rows {
            let f1: Vec<String> = r.f1.iter().map(|v| format!("{v:.3}")).collect();
            writeln!(out, "{},{},{:.3},{}", r.label, r.support, r.percent, f1.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub g: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// Aggregates `predicted` at every group size in `g_range` and scores it
/// against `truth`.
pub fn sweep_group_size<K, S>(
    macs: &[K],
    predicted: &[S],
    truth: &[S],
    g_range: impl IntoIterator<Item = NonZeroUsize>,
    base: &AggregationConfig,
) -> Result<Vec<SweepRow>, MetricsError>
where
    K: Ord + Clone + Sync,
    S: AsRef<str> + Clone + PartialEq + Sync + Send,
{
    check_lengths(truth.len(), predicted.len())?;
    let gs: Vec<NonZeroUsize> = g_range.into_iter().collect();
    gs.par_iter()
        .map(|&g| {
            let result = aggregate(macs, predicted, &AggregationConfig { g, ..*base })?;
            let report = evaluate(truth, &result.new_labels)?;
            Ok(SweepRow { g: g.get(), accuracy: report.accuracy, macro_f1: report.macro_f1 })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> io::Result<()> {
    writeln!(out, "g,accuracy,macro_f1")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.g, r.accuracy, r.macro_f1)?;
    }
    Ok(())
}

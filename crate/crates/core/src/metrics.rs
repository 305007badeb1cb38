//! Evaluation protocol and analysis reports.
//!
//! Accuracy-matrix metrics (average accuracy, test-size weighted accuracy,
//! forgetting), prediction-entropy interval histograms, and per-class
//! gradient magnitude versus accuracy tables with their Spearman rank
//! correlation.

use std::collections::{BTreeMap, BTreeSet};

use crate::dataset::{LabeledSample, TaskDataset};
use crate::model::{self, ClassifierState, ModelError};
use crate::trainer::{self, DiagRow, RunRecord, TrainError};

pub const DEFAULT_INTERVALS: usize = 27;

/// Conventions written at the top of every `report.csv`.
pub const REPORT_CONVENTIONS: &str =
    "# forgetting: mean over past tasks of max(0, best earlier accuracy - current accuracy)\n\
# weighted_acc: task weights are test-sample counts\n";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("row {0} of the accuracy matrix is not available")]
    IncompleteRow(usize),
    #[error("malformed accuracy matrix: {0}")]
    Malformed(String),
    #[error("total task weight is zero")]
    ZeroWeight,
    #[error("no test samples")]
    EmptyTestSet,
    #[error("interval count must be >= 1")]
    NoIntervals,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Lower-triangular accuracy matrix: `row(k)[t]` is the test accuracy on
/// task `t` after training through task `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyMatrix {
    rows: Vec<Vec<f64>>,
    task_weights: Vec<f64>,
}

impl AccuracyMatrix {
    pub fn new(rows: Vec<Vec<f64>>, task_weights: Vec<f64>) -> Result<Self, MetricsError> {
        for (k, row) in rows.iter().enumerate() {
            if row.len() != k + 1 {
                return Err(MetricsError::Malformed(format!("row {k} has {} entries", row.len())));
            }
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(MetricsError::Malformed(format!("entry {v} outside [0, 1]")));
            }
        }
        if task_weights.len() < rows.len() {
            return Err(MetricsError::Malformed("fewer weights than tasks".into()));
        }
        if task_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(MetricsError::Malformed("weights must be finite and >= 0".into()));
        }
        Ok(Self { rows, task_weights })
    }

    /// Evaluates every checkpoint of `record` on the test splits of `tasks`.
    pub fn from_run(record: &RunRecord, tasks: &[TaskDataset]) -> Result<Self, TrainError> {
        let rows = (0..record.checkpoints.len())
            .map(|k| trainer::evaluate_all(record, tasks, k))
            .collect::<Result<Vec<_>, _>>()?;
        let weights = tasks.iter().map(|t| t.test.len() as f64).collect();
        Ok(Self {
            rows,
            task_weights: weights,
        })
    }

    pub fn num_tasks(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, k: usize) -> Result<&[f64], MetricsError> {
        self.rows
            .get(k)
            .map(Vec::as_slice)
            .ok_or(MetricsError::IncompleteRow(k))
    }

    pub fn task_weights(&self) -> &[f64] {
        &self.task_weights
    }
}

pub fn avg_acc(r: &AccuracyMatrix, k: usize) -> Result<f64, MetricsError> {
    let row = r.row(k)?;
    Ok(row.iter().sum::<f64>() / row.len() as f64)
}

pub fn weighted_acc(r: &AccuracyMatrix, k: usize) -> Result<f64, MetricsError> {
    let row = r.row(k)?;
    let weights = &r.task_weights[..row.len()];
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(MetricsError::ZeroWeight);
    }
    Ok(row.iter().zip(weights).map(|(a, w)| a * w).sum::<f64>() / total)
}

/// Mean over tasks `t < k` of how far task `t` has fallen below its best
/// earlier accuracy. Tasks that improved contribute 0.
pub fn forgetting(r: &AccuracyMatrix, k: usize) -> Result<f64, MetricsError> {
    let current = r.row(k)?;
    if k == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (t, &now) in current.iter().enumerate().take(k) {
        let best = (t..k).map(|j| r.rows[j][t]).fold(f64::NEG_INFINITY, f64::max);
        total += (best - now).max(0.0);
    }
    Ok(total / k as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalStats {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub ratio: f64,
    /// Mean cross-entropy of the samples in the interval.
    pub mean_loss: Option<f64>,
    pub mean_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyProfile {
    pub intervals: Vec<IntervalStats>,
    pub mean: f64,
    pub variance: f64,
}

impl EntropyProfile {
    pub fn edges(&self) -> Vec<f64> {
        let mut e: Vec<f64> = self.intervals.iter().map(|i| i.lo).collect();
        if let Some(last) = self.intervals.last() {
            e.push(last.hi);
        }
        e
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# mean={} variance={}\ninterval_lo,interval_hi,ratio,mean_loss,mean_acc\n",
            self.mean, self.variance
        );
        for i in &self.intervals {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                i.lo,
                i.hi,
                i.ratio,
                opt(i.mean_loss),
                opt(i.mean_acc)
            ));
        }
        out
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Bins per-sample prediction entropy into `num_intervals` equal-width
/// intervals over `[0, log C]` (`C` seen classes; `[0, 1]` when `C = 1`).
pub fn entropy_profile(
    state: &ClassifierState,
    test_samples: &[LabeledSample],
    num_intervals: usize,
) -> Result<EntropyProfile, MetricsError> {
    if num_intervals == 0 {
        return Err(MetricsError::NoIntervals);
    }
    if test_samples.is_empty() {
        return Err(MetricsError::EmptyTestSet);
    }
    let log_c = (state.num_classes() as f64).ln();
    let upper = if log_c > 0.0 { log_c } else { 1.0 };
    let width = upper / num_intervals as f64;

    let mut counts = vec![0usize; num_intervals];
    let mut loss_sum = vec![0.0; num_intervals];
    let mut hit_sum = vec![0usize; num_intervals];
    let mut entropies = Vec::with_capacity(test_samples.len());
    for s in test_samples {
        let p = model::forward(state, &s.features)?;
        let h = model::pde(&p);
        // samples whose label has no row count as misclassified with the
        // floored loss
        let loss = model::loss_ce(&p, s.class_id).unwrap_or(-model::PROB_FLOOR.ln());
        let hit = state.predict(&s.features)? == s.class_id;
        let bin = ((h / width) as usize).min(num_intervals - 1);
        counts[bin] += 1;
        loss_sum[bin] += loss;
        hit_sum[bin] += usize::from(hit);
        entropies.push(h);
    }
    let n = test_samples.len() as f64;
    let mean = entropies.iter().sum::<f64>() / n;
    let variance = entropies.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / n;
    let intervals = (0..num_intervals)
        .map(|i| {
            let c = counts[i];
            IntervalStats {
                lo: i as f64 * width,
                hi: if i + 1 == num_intervals {
                    upper
                } else {
                    (i + 1) as f64 * width
                },
                count: c,
                ratio: c as f64 / n,
                mean_loss: (c > 0).then(|| loss_sum[i] / c as f64),
                mean_acc: (c > 0).then(|| hit_sum[i] as f64 / c as f64),
            }
        })
        .collect();
    Ok(EntropyProfile {
        intervals,
        mean,
        variance,
    })
}

/// Per-class test accuracy.
pub fn per_class_accuracy(
    state: &ClassifierState,
    samples: &[LabeledSample],
) -> Result<BTreeMap<usize, f64>, ModelError> {
    let mut tally: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for s in samples {
        let e = tally.entry(s.class_id).or_default();
        e.1 += 1;
        if state.predict(&s.features)? == s.class_id {
            e.0 += 1;
        }
    }
    Ok(tally
        .into_iter()
        .map(|(c, (hit, n))| (c, hit as f64 / n as f64))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassProfileRow {
    pub class_id: usize,
    pub n_train: usize,
    /// Mean of the logged `mag_pre` values; `None` if the class never
    /// appears in the diagnostics.
    pub mean_mag: Option<f64>,
    pub final_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassGradientProfile {
    /// Rows sorted by ascending training-sample count, then class id.
    pub rows: Vec<ClassProfileRow>,
    /// Spearman correlation between mean magnitude and accuracy; `None` when
    /// fewer than two classes have both or either ranking is constant.
    pub spearman: Option<f64>,
}

impl ClassGradientProfile {
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# spearman={}\nclass_id,n_train,mean_mag,final_acc\n",
            self.spearman.map(|s| s.to_string()).unwrap_or_else(|| "null".into())
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.class_id,
                r.n_train,
                opt(r.mean_mag),
                opt(r.final_acc)
            ));
        }
        out
    }
}

pub fn class_gradient_profile(
    diag: &[DiagRow],
    final_acc: &BTreeMap<usize, f64>,
    histogram: &BTreeMap<usize, usize>,
) -> ClassGradientProfile {
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for d in diag {
        let e = sums.entry(d.class_id).or_default();
        e.0 += d.mag_pre;
        e.1 += 1;
    }
    let classes: BTreeSet<usize> = final_acc
        .keys()
        .chain(histogram.keys())
        .chain(sums.keys())
        .copied()
        .collect();
    let mut rows: Vec<ClassProfileRow> = classes
        .into_iter()
        .map(|c| ClassProfileRow {
            class_id: c,
            n_train: histogram.get(&c).copied().unwrap_or(0),
            mean_mag: sums.get(&c).map(|(s, n)| s / *n as f64),
            final_acc: final_acc.get(&c).copied(),
        })
        .collect();
    rows.sort_by_key(|r| (r.n_train, r.class_id));
    let (mags, accs): (Vec<f64>, Vec<f64>) = rows.iter().filter_map(|r| Some((r.mean_mag?, r.final_acc?))).unzip();
    ClassGradientProfile {
        spearman: spearman(&mags, &accs),
        rows,
    }
}

/// Average ranks (1-based), ties sharing the mean of their positions.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Final-task summary values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinalMetrics {
    pub avg_acc: f64,
    pub weighted_acc: f64,
    pub forgetting: f64,
}

pub fn final_metrics(r: &AccuracyMatrix) -> Result<FinalMetrics, MetricsError> {
    let k = r.num_tasks().checked_sub(1).ok_or(MetricsError::IncompleteRow(0))?;
    Ok(FinalMetrics {
        avg_acc: avg_acc(r, k)?,
        weighted_acc: weighted_acc(r, k)?,
        forgetting: forgetting(r, k)?,
    })
}

/// `report.csv`: accuracy matrix entries (`acc_task_<t>` at row `k`) and the
/// three summary metrics for every `k`.
pub fn report_csv(r: &AccuracyMatrix) -> Result<String, MetricsError> {
    let mut out = String::from(REPORT_CONVENTIONS);
    out.push_str("metric,task_index,value\n");
    for k in 0..r.num_tasks() {
        for (t, a) in r.row(k)?.iter().enumerate() {
            out.push_str(&format!("acc_task_{t},{k},{a}\n"));
        }
        out.push_str(&format!("avg_acc,{k},{}\n", avg_acc(r, k)?));
        out.push_str(&format!("weighted_acc,{k},{}\n", weighted_acc(r, k)?));
        out.push_str(&format!("forgetting,{k},{}\n", forgetting(r, k)?));
    }
    Ok(out)
}

/// Reads the final-task summary back from `report.csv`.
pub fn parse_report_final(text: &str) -> Option<FinalMetrics> {
    let mut last: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for line in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let mut f = line.split(',');
        let (m, k, v) = (f.next()?, f.next()?.parse().ok()?, f.next()?.parse().ok()?);
        if matches!(m, "avg_acc" | "weighted_acc" | "forgetting") && last.get(m).is_none_or(|(pk, _)| k >= *pk) {
            last.insert(m, (k, v));
        }
    }
    Some(FinalMetrics {
        avg_acc: last.get("avg_acc")?.1,
        weighted_acc: last.get("weighted_acc")?.1,
        forgetting: last.get("forgetting")?.1,
    })
}

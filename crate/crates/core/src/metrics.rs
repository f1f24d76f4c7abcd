//! Binary classification metrics over prediction files, and mean ± sample
//! standard deviation across seeds.
//!
//! ROC-AUC is rank based: the probability that a random positive outscores
//! a random negative, ties counting one half. PR-AUC is average precision
//! over a ranking sorted by descending score, ties broken by ascending id.
//! Precision and recall without a defined denominator are `None`, never 0.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::label::Label;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const PREDICTION_HEADER: [&str; 3] = ["item_id", "label", "score"];
pub const METRIC_NAMES: [&str; 5] = ["accuracy", "precision", "recall", "roc_auc", "pr_auc"];

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("metrics: score {0} is outside [0, 1]")]
    OutOfRange(f64),
    #[error("metrics: no predictions")]
    Empty,
    #[error("metrics: only one class present")]
    SingleClass,
    #[error("metrics: no positive labels")]
    NoPositives,
    #[error("metrics: precision undefined without predicted positives")]
    UndefinedPrecision,
    #[error("metrics: recall undefined without actual positives")]
    UndefinedRecall,
    #[error("metrics: prediction file must start with header item_id,label,score")]
    MissingHeader,
    #[error("metrics: line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("metrics: duplicate item id {0}")]
    DuplicateId(String),
    #[error("metrics: nothing to aggregate")]
    NoReports,
    #[error("metrics: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub item_id: String,
    pub label: Label,
    pub score: f64,
}

impl PredictionRecord {
    pub fn new(item_id: impl Into<String>, label: Label, score: f64) -> Self {
        Self {
            item_id: item_id.into(),
            label,
            score,
        }
    }
}

fn check_score(score: f64) -> Result<()> {
    if (0.0..=1.0).contains(&score) {
        Ok(())
    } else {
        Err(MetricsError::OutOfRange(score))
    }
}

fn check_records(preds: &[PredictionRecord]) -> Result<()> {
    if preds.is_empty() {
        return Err(MetricsError::Empty);
    }
    preds.iter().try_for_each(|p| check_score(p.score))
}

/// 1 iff `score >= threshold`.
pub fn classify(score: f64, threshold: f64) -> Result<Label> {
    check_score(score)?;
    Ok(Label::from(score >= threshold))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub confusion: Confusion,
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

impl ThresholdMetrics {
    pub fn precision_value(&self) -> Result<f64> {
        self.precision.ok_or(MetricsError::UndefinedPrecision)
    }

    pub fn recall_value(&self) -> Result<f64> {
        self.recall.ok_or(MetricsError::UndefinedRecall)
    }
}

pub fn threshold_metrics(preds: &[PredictionRecord], threshold: f64) -> Result<ThresholdMetrics> {
    check_records(preds)?;
    let mut c = Confusion::default();
    for p in preds {
        match (classify(p.score, threshold)?, p.label) {
            (Label::Success, Label::Success) => c.tp += 1,
            (Label::Success, Label::Failure) => c.fp += 1,
            (Label::Failure, Label::Failure) => c.tn += 1,
            (Label::Failure, Label::Success) => c.fn_ += 1,
        }
    }
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    Ok(ThresholdMetrics {
        confusion: c,
        accuracy: (c.tp + c.tn) as f64 / c.total() as f64,
        precision: ratio(c.tp, c.tp + c.fp),
        recall: ratio(c.tp, c.tp + c.fn_),
    })
}

/// Area under the ROC curve via the Mann-Whitney statistic with average
/// ranks for ties.
pub fn roc_auc(preds: &[PredictionRecord]) -> Result<f64> {
    check_records(preds)?;
    let positives = preds.iter().filter(|p| p.label.is_success()).count();
    let negatives = preds.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::SingleClass);
    }
    let mut order: Vec<&PredictionRecord> = preds.iter().collect();
    order.sort_by(|a, b| a.score.total_cmp(&b.score));

    let mut positive_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && order[j + 1].score == order[i].score {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let avg_rank = (i + j + 2) as f64 / 2.0;
        let tied_positives = order[i..=j].iter().filter(|p| p.label.is_success()).count();
        positive_rank_sum += avg_rank * tied_positives as f64;
        i = j + 1;
    }
    let p = positives as f64;
    let u = positive_rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * negatives as f64))
}

/// Average precision: mean over positives of the precision at each
/// positive's rank.
pub fn pr_auc(preds: &[PredictionRecord]) -> Result<f64> {
    check_records(preds)?;
    let positives = preds.iter().filter(|p| p.label.is_success()).count();
    if positives == 0 {
        return Err(MetricsError::NoPositives);
    }
    let mut order: Vec<&PredictionRecord> = preds.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.item_id.cmp(&b.item_id)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, p) in order.iter().enumerate() {
        if p.label.is_success() {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

/// All five metrics for one run. Undefined values are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub seed: Option<u64>,
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub roc_auc: Option<f64>,
    pub pr_auc: Option<f64>,
}

impl EvalReport {
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "accuracy" => Some(self.accuracy),
            "precision" => self.precision,
            "recall" => self.recall,
            "roc_auc" => self.roc_auc,
            "pr_auc" => self.pr_auc,
            _ => None,
        }
    }
}

pub fn evaluate(preds: &[PredictionRecord], threshold: f64, seed: Option<u64>) -> Result<EvalReport> {
    let t = threshold_metrics(preds, threshold)?;
    let undefined_ok = |r: Result<f64>| match r {
        Ok(v) => Ok(Some(v)),
        Err(MetricsError::SingleClass | MetricsError::NoPositives) => Ok(None),
        Err(e) => Err(e),
    };
    Ok(EvalReport {
        n: preds.len(),
        seed,
        accuracy: t.accuracy,
        precision: t.precision,
        recall: t.recall,
        roc_auc: undefined_ok(roc_auc(preds))?,
        pr_auc: undefined_ok(pr_auc(preds))?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

/// Arithmetic mean and sample (n − 1) standard deviation; 0 for one value.
pub fn mean_std(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Some(Summary { mean, std })
}

/// Per-metric summaries; a metric undefined in any run is undefined overall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub run_count: usize,
    pub accuracy: Summary,
    pub precision: Option<Summary>,
    pub recall: Option<Summary>,
    pub roc_auc: Option<Summary>,
    pub pr_auc: Option<Summary>,
}

impl AggregateReport {
    pub fn metric(&self, name: &str) -> Option<Summary> {
        match name {
            "accuracy" => Some(self.accuracy),
            "precision" => self.precision,
            "recall" => self.recall,
            "roc_auc" => self.roc_auc,
            "pr_auc" => self.pr_auc,
            _ => None,
        }
    }
}

pub fn aggregate(reports: &[EvalReport]) -> Result<AggregateReport> {
    if reports.is_empty() {
        return Err(MetricsError::NoReports);
    }
    let summarize = |name: &str| -> Option<Summary> {
        let values: Option<Vec<f64>> = reports.iter().map(|r| r.metric(name)).collect();
        mean_std(&values?)
    };
    Ok(AggregateReport {
        run_count: reports.len(),
        accuracy: summarize("accuracy").expect("accuracy always defined"),
        precision: summarize("precision"),
        recall: summarize("recall"),
        roc_auc: summarize("roc_auc"),
        pr_auc: summarize("pr_auc"),
    })
}

/// Parse a prediction CSV with the mandatory `item_id,label,score` header.
pub fn parse_predictions<R: Read>(input: R) -> Result<Vec<PredictionRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut rows = reader.records();
    let header = match rows.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => {
            return Err(MetricsError::MalformedRow {
                line: 1,
                reason: e.to_string(),
            })
        }
        None => return Err(MetricsError::MissingHeader),
    };
    if header.iter().collect::<Vec<_>>() != PREDICTION_HEADER {
        return Err(MetricsError::MissingHeader);
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for row in rows {
        let row = row.map_err(|e| MetricsError::MalformedRow {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let bad = |reason: String| MetricsError::MalformedRow { line, reason };
        if row.len() != 3 {
            return Err(bad(format!("expected 3 fields, got {}", row.len())));
        }
        let label = row[1]
            .parse::<u8>()
            .ok()
            .and_then(|v| Label::try_from(v).ok())
            .ok_or_else(|| bad(format!("label {:?} is not 0 or 1", &row[1])))?;
        let score: f64 = row[2]
            .parse()
            .map_err(|_| bad(format!("score {:?} is not a number", &row[2])))?;
        check_score(score)?;
        if !seen.insert(row[0].to_string()) {
            return Err(MetricsError::DuplicateId(row[0].to_string()));
        }
        out.push(PredictionRecord::new(&row[0], label, score));
    }
    Ok(out)
}

pub fn load_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let file = File::open(path).map_err(|source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_predictions(file)
}

pub fn write_predictions<W: Write>(preds: &[PredictionRecord], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PREDICTION_HEADER)?;
    for p in preds {
        w.write_record([p.item_id.as_str(), &p.label.as_u8().to_string(), &p.score.to_string()])?;
    }
    w.flush()
}

/// Header of the aggregate report CSV.
pub fn report_header() -> Vec<String> {
    let mut h = vec!["fine_tuning".to_string()];
    for m in METRIC_NAMES {
        h.push(format!("{m}_mean"));
        h.push(format!("{m}_std"));
    }
    h
}

/// One row per fine-tuning configuration; undefined metrics print as `NA`.
pub fn write_report_csv<W: Write>(rows: &[(String, AggregateReport)], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(report_header())?;
    for (name, report) in rows {
        let mut record = vec![name.clone()];
        for m in METRIC_NAMES {
            match report.metric(m) {
                Some(s) => {
                    record.push(format!("{:.4}", s.mean));
                    record.push(format!("{:.4}", s.std));
                }
                None => {
                    record.push("NA".into());
                    record.push("NA".into());
                }
            }
        }
        w.write_record(&record)?;
    }
    w.flush()
}

//! Mini-batch training, evaluation with a confusion matrix, and the history
//! and report files.

use crate::corpus::Dataset;
use crate::nn::{
    model_backward, model_forward, predict, softmax_cross_entropy, ModelConfig, ModelParams,
    NnError, Optimizer, OptimizerKind,
};
use crate::numerics::{shuffle, Tensor};
use serde::Serialize;
use serde_json::value::RawValue;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("history line {line}: {reason}")]
    HistoryParse { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Reductions in this crate always run in a fixed order, so this only
    /// records the caller's intent.
    pub deterministic: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            batch_size: 15,
            epochs: 12,
            learning_rate: 0.001,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            deterministic: false,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size < 1 {
            return Err(TrainError::InvalidHyperparams("batch_size must be at least 1".into()));
        }
        if self.epochs < 1 {
            return Err(TrainError::InvalidHyperparams("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidHyperparams(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    /// Mean cross-entropy over the evaluated samples.
    pub loss: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    /// `None` for classes with no samples.
    pub per_class_recall: Vec<Option<f64>>,
    pub labels: Vec<String>,
}

impl EvalReport {
    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn stack_batch(d: &Dataset, indices: &[usize]) -> (Tensor, Vec<usize>) {
    let parts: Vec<&Tensor> = indices.iter().map(|&i| &d.samples[i].tensor).collect();
    let labels = indices.iter().map(|&i| d.samples[i].class_index).collect();
    (Tensor::stack(&parts).expect("samples share one shape"), labels)
}

fn count_correct(logits: &Tensor, labels: &[usize]) -> usize {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count()
}

const EVAL_CHUNK: usize = 64;

pub fn evaluate(config: &ModelConfig, params: &ModelParams, d: &Dataset) -> Result<EvalReport, TrainError> {
    if d.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let k = config.num_classes;
    let mut confusion = vec![vec![0u64; k]; k];
    let mut loss_sum = 0.0f64;
    let all: Vec<usize> = (0..d.len()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let (x, y) = stack_batch(d, chunk);
        let logits = predict(config, params, &x)?;
        loss_sum += softmax_cross_entropy(&logits, &y)?.loss * chunk.len() as f64;
        for (row, &t) in logits.data().chunks(k).zip(&y) {
            confusion[t][argmax(row)] += 1;
        }
    }
    let total = d.len() as u64;
    let trace: u64 = (0..k).map(|i| confusion[i][i]).sum();
    let per_class_recall = confusion
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let n: u64 = row.iter().sum();
            (n > 0).then(|| row[i] as f64 / n as f64)
        })
        .collect();
    let labels = (0..k)
        .map(|i| d.labels.get(i).map_or_else(|| i.to_string(), |e| e.ascii_name.clone()))
        .collect();
    Ok(EvalReport {
        accuracy: trace as f64 / total as f64,
        loss: loss_sum / total as f64,
        confusion,
        per_class_recall,
        labels,
    })
}

/// Train in place for `h.epochs` epochs, calling `on_epoch` after each one.
///
/// Train loss and accuracy are averaged over the epoch's batches weighted by
/// batch size, measured on the forward pass that precedes each update.
pub fn train_observed(
    config: &ModelConfig,
    mut params: ModelParams,
    train_set: &Dataset,
    test_set: &Dataset,
    h: &Hyperparams,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ModelParams, TrainHistory), TrainError> {
    h.validate()?;
    if train_set.is_empty() || test_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    params.check_against(config)?;
    let mut optimizer = Optimizer::new(h.optimizer, config);
    let lr = h.learning_rate as f32;
    let mut history = TrainHistory::default();
    for epoch in 1..=h.epochs {
        let order = shuffle((0..train_set.len()).collect::<Vec<_>>(), h.seed ^ epoch as u64);
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for batch in order.chunks(h.batch_size) {
            let (x, y) = stack_batch(train_set, batch);
            let (logits, cache) = model_forward(config, &params, &x)?;
            let xent = softmax_cross_entropy(&logits, &y)?;
            loss_sum += xent.loss * batch.len() as f64;
            correct += count_correct(&logits, &y);
            let grads = model_backward(config, &params, cache, xent.grad_logits)?;
            optimizer.step(&mut params, &grads, lr)?;
        }
        let test = evaluate(config, &params, test_set)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy: correct as f64 / train_set.len() as f64,
            test_loss: test.loss,
            test_accuracy: test.accuracy,
        };
        on_epoch(&record);
        history.records.push(record);
    }
    Ok((params, history))
}

pub fn train(
    config: &ModelConfig,
    params: ModelParams,
    train_set: &Dataset,
    test_set: &Dataset,
    h: &Hyperparams,
) -> Result<(ModelParams, TrainHistory), TrainError> {
    train_observed(config, params, train_set, test_set, h, |_| {})
}

/// Optimizer steps one epoch takes.
pub fn steps_per_epoch(train_len: usize, batch_size: usize) -> usize {
    train_len.div_ceil(batch_size)
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,train_acc,test_loss,test_acc";

pub fn history_csv(history: &TrainHistory) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in &history.records {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6}\n",
            r.epoch, r.train_loss, r.train_accuracy, r.test_loss, r.test_accuracy
        ));
    }
    out
}

pub fn parse_history(text: &str) -> Result<TrainHistory, TrainError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(HISTORY_HEADER) => {}
        other => {
            return Err(TrainError::HistoryParse {
                line: 1,
                reason: format!("expected header {HISTORY_HEADER:?}, got {other:?}"),
            })
        }
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let err = |reason: String| TrainError::HistoryParse { line: i + 2, reason };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(err(format!("expected 5 fields, got {}", fields.len())));
        }
        let real = |s: &str| s.parse::<f64>().map_err(|e| err(format!("{s:?}: {e}")));
        records.push(EpochRecord {
            epoch: fields[0].parse().map_err(|e| err(format!("{:?}: {e}", fields[0])))?,
            train_loss: real(fields[1])?,
            train_accuracy: real(fields[2])?,
            test_loss: real(fields[3])?,
            test_accuracy: real(fields[4])?,
        });
    }
    Ok(TrainHistory { records })
}

fn write_file(path: &Path, contents: &str) -> Result<(), TrainError> {
    std::fs::write(path, contents).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_history(history: &TrainHistory, path: &Path) -> Result<(), TrainError> {
    write_file(path, &history_csv(history))
}

/// A JSON number with exactly six decimals, or `null` when not finite.
pub(crate) fn fixed6(x: f64) -> Box<RawValue> {
    let s = if x.is_finite() { format!("{x:.6}") } else { "null".into() };
    RawValue::from_string(s).expect("valid JSON number")
}

#[derive(Serialize)]
struct ReportJson<'a> {
    accuracy: Box<RawValue>,
    loss: Box<RawValue>,
    total: u64,
    labels: &'a [String],
    confusion: &'a [Vec<u64>],
    per_class_recall: Vec<Box<RawValue>>,
}

pub fn report_json(report: &EvalReport) -> String {
    let doc = ReportJson {
        accuracy: fixed6(report.accuracy),
        loss: fixed6(report.loss),
        total: report.total(),
        labels: &report.labels,
        confusion: &report.confusion,
        per_class_recall: report
            .per_class_recall
            .iter()
            .map(|r| r.map_or_else(|| fixed6(f64::NAN), fixed6))
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
    s.push('\n');
    s
}

pub fn write_report(report: &EvalReport, path: &Path) -> Result<(), TrainError> {
    write_file(path, &report_json(report))
}

//! Reading order and sign transcription.

use crate::corpus::{extract_characters, CharBox, CorpusError, LabelSet, SignAnnotation};
use crate::imaging::RasterImage;
use crate::nn::{predict, softmax, ModelConfig, ModelParams, NnError};
use crate::numerics::Tensor;
use crate::train::argmax;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum TranscribeError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("model predicts {model} classes but the label set has {labels}")]
    ClassCountMismatch { model: usize, labels: usize },
}

/// Boxes whose vertical centers differ by less than this many median box
/// heights share a line.
pub const LINE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CharPrediction {
    #[serde(rename = "box")]
    pub bbox: CharBox,
    pub label: String,
    /// Softmax probability of the predicted class.
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TranscriptionResult {
    pub text: String,
    /// Indices into `chars`, one list per line, in reading order.
    pub lines: Vec<Vec<usize>>,
    /// In annotation box order.
    pub chars: Vec<CharPrediction>,
}

impl TranscriptionResult {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("transcription serializes");
        s.push('\n');
        s
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Group boxes into lines top to bottom, each line left to right.
pub fn order_boxes(boxes: &[CharBox]) -> Vec<Vec<usize>> {
    order_boxes_with(boxes, LINE_THRESHOLD)
}

/// Two boxes are linked when their vertical centers differ by less than
/// `threshold · median height`; lines are the connected components.
pub fn order_boxes_with(boxes: &[CharBox], threshold: f64) -> Vec<Vec<usize>> {
    if boxes.is_empty() {
        return Vec::new();
    }
    let mut heights: Vec<f64> = boxes.iter().map(|b| f64::from(b.h)).collect();
    heights.sort_by(f64::total_cmp);
    let gap = threshold * median(&heights);

    // Sorting by center turns the components into runs of small gaps.
    let mut by_center: Vec<usize> = (0..boxes.len()).collect();
    by_center.sort_by(|&a, &b| boxes[a].center_y().total_cmp(&boxes[b].center_y()).then(a.cmp(&b)));
    let mut lines: Vec<Vec<usize>> = vec![vec![by_center[0]]];
    for w in by_center.windows(2) {
        if boxes[w[1]].center_y() - boxes[w[0]].center_y() < gap {
            lines.last_mut().expect("non-empty").push(w[1]);
        } else {
            lines.push(vec![w[1]]);
        }
    }
    for line in &mut lines {
        line.sort_by_key(|&i| (boxes[i].x, boxes[i].y, boxes[i].w, boxes[i].h, i));
    }
    let mean_center = |line: &[usize]| line.iter().map(|&i| boxes[i].center_y()).sum::<f64>() / line.len() as f64;
    lines.sort_by(|a, b| mean_center(a).total_cmp(&mean_center(b)));
    lines
}

pub fn label_to_unicode<'a>(name: &str, labels: &'a LabelSet) -> Result<&'a [char], CorpusError> {
    labels
        .index_of(name)
        .and_then(|i| labels.get(i))
        .map(|e| e.codepoints.as_slice())
        .ok_or_else(|| CorpusError::UnknownLabel(name.to_string()))
}

pub fn transcribe_sign(
    img: &RasterImage,
    ann: &SignAnnotation,
    labels: &LabelSet,
    config: &ModelConfig,
    params: &ModelParams,
) -> Result<TranscriptionResult, TranscribeError> {
    if config.num_classes != labels.len() {
        return Err(TranscribeError::ClassCountMismatch {
            model: config.num_classes,
            labels: labels.len(),
        });
    }
    let samples = extract_characters(img, ann, labels)?;
    let mut chars = Vec::with_capacity(samples.len());
    if !samples.is_empty() {
        let parts: Vec<&Tensor> = samples.iter().map(|s| &s.tensor).collect();
        let batch = Tensor::stack(&parts).expect("samples share one shape");
        let probs = softmax(&predict(config, params, &batch)?)?;
        for (row, b) in probs.data().chunks(config.num_classes).zip(&ann.boxes) {
            let k = argmax(row);
            chars.push(CharPrediction {
                bbox: b.clone(),
                label: labels.name(k).to_string(),
                confidence: f64::from(row[k]).clamp(0.0, 1.0),
            });
        }
    }
    let lines = order_boxes(&ann.boxes);
    let text = lines
        .iter()
        .map(|line| {
            line.iter()
                .map(|&i| label_to_unicode(&chars[i].label, labels).map(|cs| cs.iter().collect::<String>()))
                .collect::<Result<String, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?
        .join("\n");
    Ok(TranscriptionResult { text, lines, chars })
}

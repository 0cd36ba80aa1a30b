//! WA/UA metrics, confusion matrices, and per-corpus / per-language
//! evaluation reports.
//!
//! WA is overall accuracy (trace over total); UA is macro recall — the mean
//! over non-empty classes of per-class recall.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::FeatureCacheEntry;
use crate::mat::Matrix;
use crate::model::{Checkpoint, ModelError};
use crate::training::{self, Standardizer, TrainError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("predictions ({predictions}) and targets ({targets}) differ in length")]
    LengthMismatch { predictions: usize, targets: usize },
    #[error("class value {value} out of range for {classes} classes")]
    ClassOutOfRange { value: usize, classes: usize },
    #[error("confusion matrix holds no samples")]
    EmptyMatrix,
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<TrainError> for EvalError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::DimensionMismatch { expected, got } => {
                EvalError::DimensionMismatch { expected, got }
            }
            TrainError::Model(m) => EvalError::Model(m),
            other => EvalError::Model(ModelError::ShapeMismatch(other.to_string())),
        }
    }
}

/// Counts with rows = true class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_counts(rows: &[Vec<u64>]) -> Self {
        let classes = rows.len();
        let mut counts = Vec::with_capacity(classes * classes);
        for r in rows {
            assert_eq!(r.len(), classes, "confusion matrix must be square");
            counts.extend_from_slice(r);
        }
        Self { classes, counts }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.classes + predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.counts[truth * self.classes..(truth + 1) * self.classes]
            .iter()
            .sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.get(i, i)).sum()
    }

    /// Merges shard counts by addition.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.classes, other.classes);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }
}

pub fn confusion_matrix(
    predictions: &[usize],
    targets: &[usize],
    classes: usize,
) -> Result<ConfusionMatrix, EvalError> {
    if predictions.len() != targets.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            targets: targets.len(),
        });
    }
    let mut cm = ConfusionMatrix::zeros(classes);
    for (&p, &t) in predictions.iter().zip(targets) {
        for v in [p, t] {
            if v >= classes {
                return Err(EvalError::ClassOutOfRange { value: v, classes });
            }
        }
        cm.add(t, p);
    }
    Ok(cm)
}

/// WA/UA scores; `empty_classes` counts classes with no test samples, which
/// are excluded from the UA mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WaUa {
    pub wa: f64,
    pub ua: f64,
    pub empty_classes: usize,
}

pub fn compute_wa_ua(cm: &ConfusionMatrix) -> Result<WaUa, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let wa = cm.trace() as f64 / total as f64;
    let mut recall_sum = 0.0;
    let mut non_empty = 0usize;
    for i in 0..cm.classes() {
        let row = cm.row_sum(i);
        if row > 0 {
            recall_sum += cm.get(i, i) as f64 / row as f64;
            non_empty += 1;
        }
    }
    Ok(WaUa {
        wa,
        ua: recall_sum / non_empty as f64,
        empty_classes: cm.classes() - non_empty,
    })
}

/// Metrics plus confusion for one group of samples.
#[derive(Debug, Clone, Serialize)]
pub struct GroupReport {
    pub samples: u64,
    pub wa: f64,
    pub ua: f64,
    pub empty_classes: usize,
    pub confusion: Vec<Vec<u64>>,
}

fn group_report(cm: &ConfusionMatrix) -> Result<GroupReport, EvalError> {
    let scores = compute_wa_ua(cm)?;
    let confusion = (0..cm.classes())
        .map(|i| (0..cm.classes()).map(|j| cm.get(i, j)).collect())
        .collect();
    Ok(GroupReport {
        samples: cm.total(),
        wa: scores.wa,
        ua: scores.ua,
        empty_classes: scores.empty_classes,
        confusion,
    })
}

/// Full evaluation output: global metrics plus per-corpus and per-language
/// breakdowns.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub overall: GroupReport,
    pub per_corpus: BTreeMap<String, GroupReport>,
    pub per_language: BTreeMap<String, GroupReport>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Key-value text rendering, one table per grouping.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let line = |out: &mut String, name: &str, r: &GroupReport| {
            out.push_str(&format!(
                "{name:<24} n={:<6} WA={:.4} UA={:.4}{}\n",
                r.samples,
                r.wa,
                r.ua,
                if r.empty_classes > 0 {
                    format!(" (empty classes: {})", r.empty_classes)
                } else {
                    String::new()
                }
            ));
        };
        line(&mut out, "overall", &self.overall);
        if !self.per_corpus.is_empty() {
            out.push_str("by corpus:\n");
            for (name, r) in &self.per_corpus {
                line(&mut out, &format!("  {name}"), r);
            }
        }
        if !self.per_language.is_empty() {
            out.push_str("by language:\n");
            for (name, r) in &self.per_language {
                line(&mut out, &format!("  {name}"), r);
            }
        }
        out.push_str("confusion (rows = truth):\n");
        out.push_str(&format!("{:>12}", ""));
        for name in &self.class_names {
            out.push_str(&format!("{name:>10}"));
        }
        out.push('\n');
        for (i, name) in self.class_names.iter().enumerate() {
            out.push_str(&format!("{name:>12}"));
            for j in 0..self.class_names.len() {
                out.push_str(&format!("{:>10}", self.overall.confusion[i][j]));
            }
            out.push('\n');
        }
        out
    }
}

/// Evaluates a checkpoint over cached features: argmax per utterance (ties to
/// the lower class index), metrics globally and per corpus/language. Applies
/// the checkpoint's standardization statistics when present.
pub fn evaluate(
    checkpoint: &Checkpoint,
    test_set: &[FeatureCacheEntry],
    class_names: &[String],
    batch_size: usize,
) -> Result<EvalReport, EvalError> {
    let config = &checkpoint.config;
    for e in test_set {
        if e.features.cols() != config.d_in {
            return Err(EvalError::DimensionMismatch {
                expected: config.d_in,
                got: e.features.cols(),
            });
        }
    }
    let standardizer = match (&checkpoint.feature_mean, &checkpoint.feature_std) {
        (Some(mean), Some(std)) => Some(Standardizer::from_checkpoint(mean, std)),
        _ => None,
    };
    let data: Vec<(Matrix, usize)> = test_set
        .iter()
        .map(|e| {
            let f = match &standardizer {
                Some(s) => s.apply(&e.features),
                None => e.features.clone(),
            };
            (f, e.label_index)
        })
        .collect();
    let predictions = training::predict_labels(&checkpoint.params, config, &data, batch_size)?;
    let targets: Vec<usize> = test_set.iter().map(|e| e.label_index).collect();

    let overall_cm = confusion_matrix(&predictions, &targets, config.n_classes)?;
    let mut corpus_cms: BTreeMap<String, ConfusionMatrix> = BTreeMap::new();
    let mut language_cms: BTreeMap<String, ConfusionMatrix> = BTreeMap::new();
    for (i, e) in test_set.iter().enumerate() {
        corpus_cms
            .entry(e.corpus.clone())
            .or_insert_with(|| ConfusionMatrix::zeros(config.n_classes))
            .add(targets[i], predictions[i]);
        language_cms
            .entry(e.language.clone())
            .or_insert_with(|| ConfusionMatrix::zeros(config.n_classes))
            .add(targets[i], predictions[i]);
    }

    let overall = group_report(&overall_cm)?;
    let mut per_corpus = BTreeMap::new();
    for (name, cm) in corpus_cms {
        per_corpus.insert(name, group_report(&cm)?);
    }
    let mut per_language = BTreeMap::new();
    for (name, cm) in language_cms {
        per_language.insert(name, group_report(&cm)?);
    }

    Ok(EvalReport {
        class_names: class_names.to_vec(),
        overall,
        per_corpus,
        per_language,
    })
}

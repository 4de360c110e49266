//! Scoring a model on one split and writing the report files.

use std::path::Path;

use distillfuse_eval::{compute_metrics, emit_report, roc_auc, EvalError, MetricsReport, RocCurve};

use crate::checkpoint::Model;
use crate::dataset::Split;
use crate::error::Result;
use crate::prepare::PreparedData;
use crate::train::{audio_probs, labels_of, student_probs, text_probs};

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub curve: RocCurve,
    /// Extra `key=value` lines for the metrics file.
    pub extra: Vec<(String, String)>,
    /// Predicted class per example, in split order.
    pub predictions: Vec<usize>,
}

impl Evaluation {
    pub fn write(&self, dir: &Path) -> Result<()> {
        emit_report(&self.report, &self.curve, dir, &self.extra)?;
        Ok(())
    }
}

/// Class-1 probabilities and (for attention students) mean modality
/// weights.
fn scores(model: &Model, data: &PreparedData, idx: &[usize]) -> Result<(Vec<[f64; 2]>, Vec<(String, String)>)> {
    let mut extra = vec![];
    let probs = match model {
        Model::TextTeacher(m) => text_probs(m, data, idx)?,
        Model::AudioTeacher(m) => audio_probs(m, data, idx)?,
        Model::QuantizedAudioTeacher(m) => {
            extra.push(("storage_bytes".into(), m.lstm.storage_bytes().to_string()));
            extra.push(("float_storage_bytes".into(), m.lstm.float_storage_bytes().to_string()));
            audio_probs(&m.dequantized(), data, idx)?
        }
        Model::Student(m) => {
            let (p, w) = student_probs(m, data, idx)?;
            if let Some(w) = w.filter(|w| !w.is_empty()) {
                let n = w.len() as f64;
                extra.push(("attention_text_mean".into(), (w.iter().map(|r| r[0]).sum::<f64>() / n).to_string()));
                extra.push(("attention_audio_mean".into(), (w.iter().map(|r| r[1]).sum::<f64>() / n).to_string()));
            }
            p
        }
    };
    Ok((probs, extra))
}

pub fn evaluate_model(model: &Model, data: &PreparedData, split: Split) -> Result<Evaluation> {
    let idx = data.indices(split);
    let (probs, mut extra) = scores(model, data, &idx)?;
    let labels = labels_of(data, &idx);
    let predictions: Vec<usize> = probs.iter().map(|p| usize::from(p[1] > p[0])).collect();
    let mut report = compute_metrics(&predictions, &labels)?;
    let s: Vec<f64> = probs.iter().map(|p| p[1]).collect();
    let curve = match roc_auc(&s, &labels) {
        Ok((curve, auc)) => {
            report.auc = Some(auc);
            curve
        }
        Err(EvalError::UndefinedAuc) => RocCurve { points: vec![] },
        Err(e) => return Err(e.into()),
    };
    extra.insert(0, ("split".into(), split.to_string()));
    Ok(Evaluation {
        report,
        curve,
        extra,
        predictions,
    })
}

use crate::error::{EvalError, Result};

/// Confusion counts with class 1 as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision_weighted: f64,
    pub recall_weighted: f64,
    pub f1_weighted: f64,
    /// Indexed by class.
    pub per_class: [ClassMetrics; 2],
    pub confusion: ConfusionCounts,
    pub auc: Option<f64>,
    /// Set when some ratio was 0/0 and reported as 0.
    pub zero_division: bool,
}

fn ratio(num: usize, den: usize, flag: &mut bool) -> f64 {
    if den == 0 {
        *flag = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64, flag: &mut bool) -> f64 {
    if p + r == 0.0 {
        *flag = true;
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn confusion(preds: &[usize], labels: &[usize]) -> Result<ConfusionCounts> {
    if preds.is_empty() {
        return Err(EvalError::Contract("no predictions to evaluate".into()));
    }
    if preds.len() != labels.len() {
        return Err(EvalError::Contract(format!(
            "{} predictions but {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &y) in preds.iter().zip(labels) {
        match (p, y) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 0) => c.tn += 1,
            (0, 1) => c.fn_ += 1,
            _ => {
                return Err(EvalError::Contract(format!(
                    "class indices must be 0 or 1 (got prediction {p}, label {y})"
                )))
            }
        }
    }
    Ok(c)
}

/// Accuracy plus per-class and support-weighted precision, recall and F1.
/// Any 0/0 is reported as 0 and sets `zero_division`.
pub fn compute_metrics(preds: &[usize], labels: &[usize]) -> Result<MetricsReport> {
    let c = confusion(preds, labels)?;
    let n = c.total();
    let mut flag = false;
    let p1 = ratio(c.tp, c.tp + c.fp, &mut flag);
    let r1 = ratio(c.tp, c.tp + c.fn_, &mut flag);
    let p0 = ratio(c.tn, c.tn + c.fn_, &mut flag);
    let r0 = ratio(c.tn, c.tn + c.fp, &mut flag);
    let per_class = [
        ClassMetrics {
            precision: p0,
            recall: r0,
            f1: harmonic(p0, r0, &mut flag),
            support: c.tn + c.fp,
        },
        ClassMetrics {
            precision: p1,
            recall: r1,
            f1: harmonic(p1, r1, &mut flag),
            support: c.tp + c.fn_,
        },
    ];
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        per_class.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / n as f64
    };
    Ok(MetricsReport {
        accuracy: (c.tp + c.tn) as f64 / n as f64,
        precision_weighted: weighted(|m| m.precision),
        recall_weighted: weighted(|m| m.recall),
        f1_weighted: weighted(|m| m.f1),
        per_class,
        confusion: c,
        auc: None,
        zero_division: flag,
    })
}

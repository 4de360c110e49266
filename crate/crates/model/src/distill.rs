//! Weighted KL + cross-entropy distillation against two teachers.

use distillfuse_core::{Error, Graph, Result, Tensor, Var};

use crate::head::NUM_CLASSES;

pub const PROB_EPS: f64 = 1e-12;
const NORM_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetSource {
    Text,
    Audio,
    Mixed,
}

/// A teacher's class distribution for one example.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SoftTargets {
    pub probs: [f64; NUM_CLASSES],
    pub source: TargetSource,
}

impl SoftTargets {
    pub fn new(probs: [f64; NUM_CLASSES], source: TargetSource) -> Result<Self> {
        check_distribution("soft targets", &probs)?;
        Ok(Self { probs, source })
    }

    /// `softmax(logits / temperature)`.
    pub fn from_logits(logits: &[f64], temperature: f64, source: TargetSource) -> Result<Self> {
        if logits.len() != NUM_CLASSES {
            return Err(Error::Dimension {
                op: "soft_targets",
                lhs: vec![NUM_CLASSES],
                rhs: vec![logits.len()],
            });
        }
        let t = Tensor::vector(logits.iter().map(|z| z / temperature).collect()).softmax(0)?;
        Self::new([t.data()[0], t.data()[1]], source)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistillConfig {
    pub alpha: f64,
    pub teacher_mix_beta: f64,
    pub temperature: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            teacher_mix_beta: 0.5,
            temperature: 1.0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) || !(0.0..=1.0).contains(&self.teacher_mix_beta) {
            return Err(Error::Contract(format!(
                "alpha {} and teacher_mix_beta {} must lie in [0, 1]",
                self.alpha, self.teacher_mix_beta
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Contract(format!("temperature {} must be positive", self.temperature)));
        }
        Ok(())
    }

    /// Multiplier on the KL term: `T^2` when a temperature other than 1 is
    /// in use, otherwise exactly 1.
    pub fn kl_weight(&self) -> f64 {
        if self.temperature == 1.0 {
            1.0
        } else {
            self.temperature * self.temperature
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub kl_term: f64,
    pub ce_term: f64,
    pub total: f64,
}

fn check_distribution(what: &str, p: &[f64]) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if p.iter().any(|v| !(0.0..=1.0 + NORM_TOL).contains(v)) || (sum - 1.0).abs() > NORM_TOL {
        return Err(Error::Contract(format!("{what} {p:?} is not a probability distribution")));
    }
    Ok(())
}

/// `sum P ln(P / max(Q, eps))`, with `0 ln 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dimension {
            op: "kl_divergence",
            lhs: vec![p.len()],
            rhs: vec![q.len()],
        });
    }
    check_distribution("P", p)?;
    check_distribution("Q", q)?;
    Ok(p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi.ln() - qi.max(PROB_EPS).ln()))
        .sum())
}

fn check_one_hot(y: &[f64]) -> Result<usize> {
    let hot: Vec<usize> = (0..y.len()).filter(|&i| y[i] == 1.0).collect();
    if hot.len() != 1 || y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Contract(format!("label {y:?} is not one-hot")));
    }
    Ok(hot[0])
}

/// `-sum y ln(max(p, eps))` for a one-hot `y`.
pub fn cross_entropy(y: &[f64], p: &[f64]) -> Result<f64> {
    if y.len() != p.len() {
        return Err(Error::Dimension {
            op: "cross_entropy",
            lhs: vec![y.len()],
            rhs: vec![p.len()],
        });
    }
    let k = check_one_hot(y)?;
    check_distribution("p", p)?;
    Ok(-p[k].max(PROB_EPS).ln())
}

pub fn one_hot(label: usize) -> [f64; NUM_CLASSES] {
    let mut y = [0.0; NUM_CLASSES];
    y[label] = 1.0;
    y
}

/// `beta * P_text + (1 - beta) * P_audio`.
pub fn combine_teacher_targets(p_text: &SoftTargets, p_audio: &SoftTargets, beta: f64) -> Result<SoftTargets> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Contract(format!("beta {beta} outside [0, 1]")));
    }
    let mut probs = [0.0; NUM_CLASSES];
    for (k, p) in probs.iter_mut().enumerate() {
        *p = beta * p_text.probs[k] + (1.0 - beta) * p_audio.probs[k];
    }
    Ok(SoftTargets {
        probs,
        source: TargetSource::Mixed,
    })
}

fn combine(kl: f64, ce: f64, alpha: f64) -> LossBreakdown {
    LossBreakdown {
        kl_term: kl,
        ce_term: ce,
        total: alpha * kl + (1.0 - alpha) * ce,
    }
}

/// Loss for one example given the student's distribution `q` (temperature
/// 1 only; use [`total_loss`] with logits otherwise).
pub fn total_loss_probs(p: &SoftTargets, q: &[f64], y: &[f64], cfg: &DistillConfig) -> Result<LossBreakdown> {
    cfg.validate()?;
    if cfg.temperature != 1.0 {
        return Err(Error::Contract(
            "probability form needs temperature 1; pass logits instead".into(),
        ));
    }
    Ok(combine(kl_divergence(&p.probs, q)?, cross_entropy(y, q)?, cfg.alpha))
}

/// Loss for one example from student logits. The KL term compares against
/// `softmax(logits / T)` and is scaled by `T^2` when `T != 1`; the
/// cross-entropy term always uses `softmax(logits)`.
pub fn total_loss(p: &SoftTargets, logits: &[f64], y: &[f64], cfg: &DistillConfig) -> Result<LossBreakdown> {
    cfg.validate()?;
    let z = Tensor::vector(logits.to_vec());
    let q = z.softmax(0)?;
    let q_t = if cfg.temperature == 1.0 {
        q.clone()
    } else {
        z.scale(1.0 / cfg.temperature).softmax(0)?
    };
    let kl = cfg.kl_weight() * kl_divergence(&p.probs, q_t.data())?;
    Ok(combine(kl, cross_entropy(y, q.data())?, cfg.alpha))
}

/// Batch-mean loss on the tape from `B x 2` student logits. Returns the
/// differentiable total and the numeric breakdown.
pub fn distill_loss(
    g: &Graph,
    logits: Var,
    targets: &[SoftTargets],
    labels: &[usize],
    cfg: &DistillConfig,
) -> Result<(Var, LossBreakdown)> {
    cfg.validate()?;
    let b = g.value(logits).rows();
    if targets.len() != b || labels.len() != b {
        return Err(Error::Contract(format!(
            "{b} logit rows, {} targets, {} labels",
            targets.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= NUM_CLASSES) {
        return Err(Error::Contract(format!("label {bad} is not a class index")));
    }
    let p_data: Vec<f64> = targets.iter().flat_map(|t| t.probs).collect();
    let plogp: f64 = p_data.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum();
    let y_data: Vec<f64> = labels.iter().flat_map(|&y| one_hot(y)).collect();

    let log_q = |z: Var| -> Result<Var> { g.log(g.clamp_min(g.softmax(z, 1)?, PROB_EPS)) };
    let log_q1 = log_q(logits)?;
    let log_qt = if cfg.temperature == 1.0 {
        log_q1
    } else {
        log_q(g.scale(logits, 1.0 / cfg.temperature))?
    };
    let p = g.constant(Tensor::matrix(b, NUM_CLASSES, p_data)?);
    let y = g.constant(Tensor::matrix(b, NUM_CLASSES, y_data)?);
    let cross_p = g.sum(g.mul(p, log_qt)?);
    let kl = g.scale(
        g.sub(g.constant(Tensor::scalar(plogp)), cross_p)?,
        cfg.kl_weight() / b as f64,
    );
    let ce = g.scale(g.sum(g.mul(y, log_q1)?), -1.0 / b as f64);
    let total = g.add(g.scale(kl, cfg.alpha), g.scale(ce, 1.0 - cfg.alpha))?;
    let item = |v: Var| g.value(v).data()[0];
    Ok((
        total,
        LossBreakdown {
            kl_term: item(kl),
            ce_term: item(ce),
            total: item(total),
        },
    ))
}

/// Batch-mean cross-entropy of `B x 2` logits against hard labels.
pub fn ce_loss(g: &Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let b = g.value(logits).rows();
    if labels.len() != b {
        return Err(Error::Contract(format!("{b} logit rows but {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= NUM_CLASSES) {
        return Err(Error::Contract(format!("label {bad} is not a class index")));
    }
    let y_data: Vec<f64> = labels.iter().flat_map(|&y| one_hot(y)).collect();
    let y = g.constant(Tensor::matrix(b, NUM_CLASSES, y_data)?);
    let log_q = g.log(g.clamp_min(g.softmax(logits, 1)?, PROB_EPS))?;
    Ok(g.scale(g.sum(g.mul(y, log_q)?), -1.0 / b as f64))
}

//! SGD, Adam and AdamW over the parameters of a [`Module`].

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::param::{Module, ParamId};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
    AdamW,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::AdamW => "adamw",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            "adamw" => Ok(Self::AdamW),
            other => Err(Error::Contract(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn adam(lr: f64) -> Self {
        Self::new(OptimizerKind::Adam, lr)
    }

    pub fn adamw(lr: f64, weight_decay: f64) -> Self {
        Self {
            weight_decay,
            ..Self::new(OptimizerKind::AdamW, lr)
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) {
            return Err(Error::Contract(format!("learning rate {} must be >= 0", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Contract(format!("{name}={b} outside [0, 1)")));
            }
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Contract("weight_decay must be nonnegative".into()));
        }
        Ok(())
    }
}

struct Moments {
    m: Tensor,
    v: Tensor,
}

/// Optimizer state: hyperparameters, step count and per-parameter moment
/// buffers (created lazily with the parameter's shape).
pub struct Optimizer {
    config: OptimizerConfig,
    step_count: u64,
    moments: HashMap<ParamId, Moments>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step_count: 0,
            moments: HashMap::new(),
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }

    /// Learning rates of zero are allowed; they leave parameters unchanged.
    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update to every trainable parameter of `module`.
    pub fn step<M: Module + ?Sized>(&mut self, module: &mut M) -> Result<()> {
        let mut params = module.named_params_mut();
        params.retain(|(_, p)| p.trainable);
        if let Some((name, _)) = params.iter().find(|(_, p)| p.grad().is_none()) {
            return Err(Error::Contract(format!(
                "optimizer step before backward: parameter {name} has no gradient"
            )));
        }
        self.step_count += 1;
        let c = self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);

        for (_, p) in params {
            let grad = p.grad().expect("checked above").clone();
            if grad.shape() != p.value.shape() {
                return Err(Error::Dimension {
                    op: "optimizer_step",
                    lhs: p.value.shape().to_vec(),
                    rhs: grad.shape().to_vec(),
                });
            }
            match c.kind {
                OptimizerKind::Sgd => {
                    for (w, g) in p.value.data_mut().iter_mut().zip(grad.data()) {
                        *w -= c.lr * g;
                    }
                }
                OptimizerKind::Adam | OptimizerKind::AdamW => {
                    let st = self.moments.entry(p.id()).or_insert_with(|| Moments {
                        m: Tensor::zeros(grad.shape()),
                        v: Tensor::zeros(grad.shape()),
                    });
                    let decay = if c.kind == OptimizerKind::AdamW {
                        1.0 - c.lr * c.weight_decay
                    } else {
                        1.0
                    };
                    let w = p.value.data_mut();
                    let m = st.m.data_mut();
                    let v = st.v.data_mut();
                    for i in 0..w.len() {
                        let g = grad.data()[i];
                        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        // Decoupled decay on the pre-update weight; a factor of
                        // exactly 1.0 leaves Adam unchanged bit for bit.
                        w[i] *= decay;
                        w[i] -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::Parameter;

    struct One(Parameter);

    impl Module for One {
        fn named_params(&self) -> Vec<(String, &Parameter)> {
            vec![("p".into(), &self.0)]
        }
        fn named_params_mut(&mut self) -> Vec<(String, &mut Parameter)> {
            vec![("p".into(), &mut self.0)]
        }
    }

    fn with_grad(v: f64, g: f64) -> One {
        let mut p = Parameter::new(Tensor::vector(vec![v]));
        p.accumulate_grad(&Tensor::vector(vec![g])).unwrap();
        One(p)
    }

    #[test]
    fn sgd_one_step() {
        let mut m = with_grad(1.0, 1.0);
        Optimizer::new(OptimizerConfig::sgd(0.1)).unwrap().step(&mut m).unwrap();
        assert!((m.0.value.data()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut m = with_grad(0.0, 1.0);
        Optimizer::new(OptimizerConfig::adam(0.1)).unwrap().step(&mut m).unwrap();
        // m_hat = 1, v_hat = 1 at t = 1, so the update is lr / (1 + eps).
        assert!((m.0.value.data()[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn step_without_backward_is_contract_error() {
        let mut m = One(Parameter::new(Tensor::vector(vec![1.0])));
        let err = Optimizer::new(OptimizerConfig::sgd(0.1)).unwrap().step(&mut m);
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn frozen_parameters_are_skipped() {
        let mut m = One(Parameter::new(Tensor::vector(vec![1.0])).frozen());
        Optimizer::new(OptimizerConfig::sgd(0.1)).unwrap().step(&mut m).unwrap();
        assert_eq!(m.0.value.data()[0], 1.0);
    }

    #[test]
    fn invalid_betas_rejected() {
        let mut c = OptimizerConfig::adam(0.1);
        c.beta2 = 1.0;
        assert!(Optimizer::new(c).is_err());
    }
}

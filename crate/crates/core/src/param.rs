use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Process-unique identity of a [`Parameter`], used to route gradients and
/// optimizer state. Cloning a parameter assigns a fresh id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(u64);

impl ParamId {
    fn fresh() -> Self {
        ParamId(NEXT_ID.fetch_add(1, Ordering::Relaxed))
    }
}

#[derive(Debug)]
pub struct Parameter {
    id: ParamId,
    pub value: Tensor,
    grad: Option<Tensor>,
    pub trainable: bool,
}

impl Clone for Parameter {
    fn clone(&self) -> Self {
        Self {
            id: ParamId::fresh(),
            value: self.value.clone(),
            grad: self.grad.clone(),
            trainable: self.trainable,
        }
    }
}

impl Parameter {
    pub fn new(value: Tensor) -> Self {
        Self {
            id: ParamId::fresh(),
            value,
            grad: None,
            trainable: true,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(Tensor::zeros(shape))
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::new(Tensor::full(shape, 1.0))
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
        Self::new(Tensor::new(shape.to_vec(), data).expect("shape checked by caller"))
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    pub fn frozen(mut self) -> Self {
        self.trainable = false;
        self
    }

    pub fn grad(&self) -> Option<&Tensor> {
        self.grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = Some(Tensor::zeros(self.value.shape()));
    }

    pub fn accumulate_grad(&mut self, g: &Tensor) -> Result<()> {
        match &mut self.grad {
            Some(existing) => existing.add_assign(g),
            None => {
                if g.shape() != self.value.shape() {
                    return Err(Error::Dimension {
                        op: "accumulate_grad",
                        lhs: self.value.shape().to_vec(),
                        rhs: g.shape().to_vec(),
                    });
                }
                self.grad = Some(g.clone());
                Ok(())
            }
        }
    }
}

/// A collection of named parameters. Names are stable and ordered; they
/// drive checkpoint layout and optimizer traversal.
pub trait Module {
    fn named_params(&self) -> Vec<(String, &Parameter)>;
    fn named_params_mut(&mut self) -> Vec<(String, &mut Parameter)>;

    fn zero_grad(&mut self) {
        for (_, p) in self.named_params_mut() {
            p.zero_grad();
        }
    }

    fn set_trainable(&mut self, trainable: bool) {
        for (_, p) in self.named_params_mut() {
            p.trainable = trainable;
        }
    }

    fn num_params(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.value.numel()).sum()
    }
}

/// Prefixes child parameter names with `prefix.`.
pub fn prefixed<'a>(prefix: &str, v: Vec<(String, &'a Parameter)>) -> Vec<(String, &'a Parameter)> {
    v.into_iter().map(|(n, p)| (format!("{prefix}.{n}"), p)).collect()
}

pub fn prefixed_mut<'a>(
    prefix: &str,
    v: Vec<(String, &'a mut Parameter)>,
) -> Vec<(String, &'a mut Parameter)> {
    v.into_iter().map(|(n, p)| (format!("{prefix}.{n}"), p)).collect()
}

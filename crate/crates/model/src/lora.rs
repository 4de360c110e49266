use distillfuse_core::{Error, Graph, Module, Parameter, Result, Tensor, Var};
use rand::Rng;

pub const DEFAULT_RANK: usize = 8;
pub const DEFAULT_ALPHA: f64 = 32.0;

/// Low-rank update `(alpha / r) * B * A` for a frozen `d_out x d_in` weight.
#[derive(Clone, Debug)]
pub struct LoraAdapter {
    /// `r x d_in`
    pub a: Parameter,
    /// `d_out x r`
    pub b: Parameter,
    pub alpha: f64,
}

impl LoraAdapter {
    /// `A` uniform in `±1/sqrt(d_in)`, `B` zero, so the adapted weight starts
    /// equal to the base weight.
    pub fn new<R: Rng + ?Sized>(d_out: usize, d_in: usize, rank: usize, alpha: f64, rng: &mut R) -> Result<Self> {
        if rank == 0 {
            return Err(Error::Contract("LoRA rank must be at least 1".into()));
        }
        Ok(Self {
            a: Parameter::uniform(&[rank, d_in], d_in, rng),
            b: Parameter::zeros(&[d_out, rank]),
            alpha,
        })
    }

    pub fn rank(&self) -> usize {
        self.a.value.shape()[0]
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank() as f64
    }

    /// Adapted weight on the tape: `w0 + scale * B * A`.
    pub fn apply(&self, g: &Graph, w0: Var) -> Result<Var> {
        let ba = g.matmul(g.param(&self.b), g.param(&self.a))?;
        g.add(w0, g.scale(ba, self.scale()))
    }
}

impl Module for LoraAdapter {
    fn named_params(&self) -> Vec<(String, &Parameter)> {
        vec![("lora_a".into(), &self.a), ("lora_b".into(), &self.b)]
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Parameter)> {
        vec![("lora_a".into(), &mut self.a), ("lora_b".into(), &mut self.b)]
    }
}

/// `W0 + (alpha / r) * B * A`. `W0` is not modified.
pub fn lora_effective_weight(w0: &Tensor, adapter: &LoraAdapter) -> Result<Tensor> {
    let ba = adapter.b.value.matmul(&adapter.a.value)?;
    w0.add(&ba.scale(adapter.scale()))
        .map_err(|_| Error::Dimension {
            op: "lora_effective_weight",
            lhs: w0.shape().to_vec(),
            rhs: ba.shape().to_vec(),
        })
}

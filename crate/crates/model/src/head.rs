use distillfuse_core::{Graph, Module, Parameter, Result, Tensor, Var};
use rand::Rng;

pub const NUM_CLASSES: usize = 2;

/// Linear map to two logits (0 = not depressed, 1 = depressed).
#[derive(Clone, Debug)]
pub struct ClassifierHead {
    /// `2 x d_in`
    pub w: Parameter,
    pub b: Parameter,
}

impl ClassifierHead {
    pub fn new<R: Rng + ?Sized>(d_in: usize, rng: &mut R) -> Self {
        Self {
            w: Parameter::uniform(&[NUM_CLASSES, d_in], d_in, rng),
            b: Parameter::zeros(&[NUM_CLASSES]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.value.shape()[1]
    }

    /// `B x 2` logits.
    pub fn forward(&self, g: &Graph, x: Var) -> Result<Var> {
        g.linear(x, g.param(&self.w), g.param(&self.b))
    }

    /// Logits and softmax probabilities for one feature vector.
    pub fn classify(&self, features: &Tensor) -> Result<(Tensor, Tensor)> {
        let x = features.reshape(vec![1, features.numel()])?;
        let logits = x.matmul_t(&self.w.value, false, true)?.add_row(&self.b.value)?;
        let probs = logits.softmax(1)?;
        Ok((logits.reshape(vec![NUM_CLASSES])?, probs.reshape(vec![NUM_CLASSES])?))
    }
}

impl Module for ClassifierHead {
    fn named_params(&self) -> Vec<(String, &Parameter)> {
        vec![("w".into(), &self.w), ("b".into(), &self.b)]
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Parameter)> {
        vec![("w".into(), &mut self.w), ("b".into(), &mut self.b)]
    }
}

/// Index of the larger of two logits or probabilities; ties go to class 0.
pub fn argmax2(row: &[f64]) -> usize {
    usize::from(row[1] > row[0])
}

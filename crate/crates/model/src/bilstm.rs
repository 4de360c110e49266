//! Bidirectional LSTM over fixed-length feature sequences.
//!
//! Gate layout inside every `4H` block is `[i, f, g, o]`.

use distillfuse_core::{prefixed, prefixed_mut, Error, Graph, Module, Parameter, Result, Tensor, Var};
use rand::Rng;

/// Binds a weight matrix into a graph. The default is [`Graph::param`];
/// quantization-aware training substitutes a fake-quantized view.
pub type WeightFn<'a> = &'a dyn Fn(&Graph, &Parameter) -> Result<Var>;

pub fn plain_weight(g: &Graph, p: &Parameter) -> Result<Var> {
    Ok(g.param(p))
}

#[derive(Clone, Debug)]
pub struct LstmCell {
    /// `4H x I`
    pub w_ih: Parameter,
    /// `4H x H`
    pub w_hh: Parameter,
    /// `4H`
    pub b: Parameter,
}

impl LstmCell {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            w_ih: Parameter::uniform(&[4 * hidden, input_dim], input_dim, rng),
            w_hh: Parameter::uniform(&[4 * hidden, hidden], hidden, rng),
            b: Parameter::zeros(&[4 * hidden]),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hh.value.shape()[1]
    }
}

impl Module for LstmCell {
    fn named_params(&self) -> Vec<(String, &Parameter)> {
        vec![("w_ih".into(), &self.w_ih), ("w_hh".into(), &self.w_hh), ("b".into(), &self.b)]
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Parameter)> {
        vec![
            ("w_ih".into(), &mut self.w_ih),
            ("w_hh".into(), &mut self.w_hh),
            ("b".into(), &mut self.b),
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pooling {
    /// `[h_forward_last, h_backward_last]`
    Last,
    /// Mean over time of the per-step `[h_forward_t, h_backward_t]`.
    Mean,
}

#[derive(Clone, Debug)]
pub struct BiLstm {
    pub fwd: LstmCell,
    pub bwd: LstmCell,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl BiLstm {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        Self {
            fwd: LstmCell::new(input_dim, hidden_dim, rng),
            bwd: LstmCell::new(input_dim, hidden_dim, rng),
            input_dim,
            hidden_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden_dim
    }

    /// Stacks `B` sequences of shape `T x I` into a time-major `(T*B) x I`
    /// matrix (row `t * B + b`).
    fn stack(&self, batch: &[&Tensor]) -> Result<(Tensor, usize)> {
        let first = batch
            .first()
            .ok_or_else(|| Error::Contract("empty BiLSTM batch".into()))?;
        let t_len = first.rows();
        for s in batch {
            if s.shape().len() != 2 || s.cols() != self.input_dim || s.rows() != t_len {
                return Err(Error::Dimension {
                    op: "bilstm_forward",
                    lhs: vec![t_len, self.input_dim],
                    rhs: s.shape().to_vec(),
                });
            }
        }
        if t_len == 0 {
            return Err(Error::Contract("BiLSTM input has no frames".into()));
        }
        let b = batch.len();
        let mut data = Vec::with_capacity(t_len * b * self.input_dim);
        for t in 0..t_len {
            for s in batch {
                data.extend_from_slice(s.row_slice(t));
            }
        }
        Ok((Tensor::matrix(t_len * b, self.input_dim, data)?, t_len))
    }

    /// Runs one direction; returns per-step hidden states in processing
    /// order.
    fn direction(
        g: &Graph,
        cell: &LstmCell,
        x: Var,
        t_len: usize,
        b: usize,
        reverse: bool,
        wf: WeightFn,
    ) -> Result<Vec<Var>> {
        let h_dim = cell.hidden_dim();
        let xw = g.add_row(g.matmul_t(x, wf(g, &cell.w_ih)?, false, true)?, g.param(&cell.b))?;
        let w_hh = wf(g, &cell.w_hh)?;
        let mut states = Vec::with_capacity(t_len);
        let mut hc: Option<(Var, Var)> = None;
        for step in 0..t_len {
            let t = if reverse { t_len - 1 - step } else { step };
            let mut z = g.slice(xw, 0, t * b, b)?;
            if let Some((h, _)) = hc {
                z = g.add(z, g.matmul_t(h, w_hh, false, true)?)?;
            }
            let sig = g.sigmoid(z);
            let i = g.slice(sig, 1, 0, h_dim)?;
            let f = g.slice(sig, 1, h_dim, h_dim)?;
            let o = g.slice(sig, 1, 3 * h_dim, h_dim)?;
            let cand = g.tanh(g.slice(z, 1, 2 * h_dim, h_dim)?);
            let ig = g.mul(i, cand)?;
            let c = match hc {
                Some((_, c_prev)) => g.add(g.mul(f, c_prev)?, ig)?,
                None => ig,
            };
            let h = g.mul(o, g.tanh(c))?;
            states.push(h);
            hc = Some((h, c));
        }
        Ok(states)
    }

    /// `B x 2H` features for a batch of equal-length sequences.
    pub fn forward_with(&self, g: &Graph, batch: &[&Tensor], pooling: Pooling, wf: WeightFn) -> Result<Var> {
        let (stacked, t_len) = self.stack(batch)?;
        let b = batch.len();
        let x = g.constant(stacked);
        let hf = Self::direction(g, &self.fwd, x, t_len, b, false, wf)?;
        let hb = Self::direction(g, &self.bwd, x, t_len, b, true, wf)?;
        match pooling {
            Pooling::Last => g.concat(&[hf[t_len - 1], hb[t_len - 1]], 1),
            Pooling::Mean => {
                let mean = |hs: &[Var]| -> Result<Var> {
                    let mut acc = hs[0];
                    for &h in &hs[1..] {
                        acc = g.add(acc, h)?;
                    }
                    Ok(g.scale(acc, 1.0 / hs.len() as f64))
                };
                g.concat(&[mean(&hf)?, mean(&hb)?], 1)
            }
        }
    }

    pub fn forward(&self, g: &Graph, batch: &[&Tensor], pooling: Pooling) -> Result<Var> {
        self.forward_with(g, batch, pooling, &plain_weight)
    }

    /// `[h_forward_last, h_backward_last]` for a single `T x I` sequence.
    pub fn bilstm_forward(&self, seq: &Tensor) -> Result<Tensor> {
        let g = Graph::new();
        let v = self.forward(&g, &[seq], Pooling::Last)?;
        Ok(g.value(v).as_ref().clone())
    }

    /// Names of the weight matrices (biases excluded).
    pub fn weight_matrix_names() -> [&'static str; 4] {
        ["fwd.w_ih", "fwd.w_hh", "bwd.w_ih", "bwd.w_hh"]
    }
}

impl Module for BiLstm {
    fn named_params(&self) -> Vec<(String, &Parameter)> {
        let mut v = prefixed("fwd", self.fwd.named_params());
        v.extend(prefixed("bwd", self.bwd.named_params()));
        v
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Parameter)> {
        let mut v = prefixed_mut("fwd", self.fwd.named_params_mut());
        v.extend(prefixed_mut("bwd", self.bwd.named_params_mut()));
        v
    }
}

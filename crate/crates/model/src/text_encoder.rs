//! Post-norm transformer encoder over word ids with `[CLS]` pooling.

use distillfuse_core::{prefixed, prefixed_mut, Error, Graph, Module, Parameter, Result, Tensor, Var};
use distillfuse_text::TokenSequence;
use rand::Rng;

use crate::lora::LoraAdapter;

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TextEncoderConfig {
    pub vocab_size: usize,
    pub max_len: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
}

impl TextEncoderConfig {
    pub fn new(vocab_size: usize, max_len: usize) -> Self {
        Self {
            vocab_size,
            max_len,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Contract(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size == 0 || self.max_len == 0 || self.d_ff == 0 {
            return Err(Error::Contract("vocab_size, max_len and d_ff must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub wq: Parameter,
    pub bq: Parameter,
    pub wk: Parameter,
    pub bk: Parameter,
    pub wv: Parameter,
    pub bv: Parameter,
    pub wo: Parameter,
    pub bo: Parameter,
    pub ff1_w: Parameter,
    pub ff1_b: Parameter,
    pub ff2_w: Parameter,
    pub ff2_b: Parameter,
    pub ln1_g: Parameter,
    pub ln1_b: Parameter,
    pub ln2_g: Parameter,
    pub ln2_b: Parameter,
    pub lora_q: Option<LoraAdapter>,
    pub lora_v: Option<LoraAdapter>,
}

impl EncoderLayer {
    fn new<R: Rng + ?Sized>(d: usize, d_ff: usize, rng: &mut R) -> Self {
        Self {
            wq: Parameter::uniform(&[d, d], d, rng),
            bq: Parameter::zeros(&[d]),
            wk: Parameter::uniform(&[d, d], d, rng),
            bk: Parameter::zeros(&[d]),
            wv: Parameter::uniform(&[d, d], d, rng),
            bv: Parameter::zeros(&[d]),
            wo: Parameter::uniform(&[d, d], d, rng),
            bo: Parameter::zeros(&[d]),
            ff1_w: Parameter::uniform(&[d_ff, d], d, rng),
            ff1_b: Parameter::zeros(&[d_ff]),
            ff2_w: Parameter::uniform(&[d, d_ff], d_ff, rng),
            ff2_b: Parameter::zeros(&[d]),
            ln1_g: Parameter::ones(&[d]),
            ln1_b: Parameter::zeros(&[d]),
            ln2_g: Parameter::ones(&[d]),
            ln2_b: Parameter::zeros(&[d]),
            lora_q: None,
            lora_v: None,
        }
    }

    fn projection(g: &Graph, w: &Parameter, lora: &Option<LoraAdapter>) -> Result<Var> {
        let base = g.param(w);
        match lora {
            Some(ad) => ad.apply(g, base),
            None => Ok(base),
        }
    }

    /// One block. Queries come from `x` itself, or only from its first row
    /// when `cls_only` (the remaining rows would be discarded by pooling).
    fn forward(&self, g: &Graph, x: Var, n_heads: usize, cls_only: bool) -> Result<Var> {
        let d = g.value(x).cols();
        let dk = d / n_heads;
        let q_src = if cls_only { g.slice(x, 0, 0, 1)? } else { x };
        let wq = Self::projection(g, &self.wq, &self.lora_q)?;
        let wv = Self::projection(g, &self.wv, &self.lora_v)?;
        let q = g.linear(q_src, wq, g.param(&self.bq))?;
        let k = g.linear(x, g.param(&self.wk), g.param(&self.bk))?;
        let v = g.linear(x, wv, g.param(&self.bv))?;
        let inv_sqrt = 1.0 / (dk as f64).sqrt();
        let mut heads = Vec::with_capacity(n_heads);
        for h in 0..n_heads {
            let qh = g.slice(q, 1, h * dk, dk)?;
            let kh = g.slice(k, 1, h * dk, dk)?;
            let vh = g.slice(v, 1, h * dk, dk)?;
            let scores = g.scale(g.matmul_t(qh, kh, false, true)?, inv_sqrt);
            let attn = g.softmax(scores, 1)?;
            heads.push(g.matmul(attn, vh)?);
        }
        let cat = if n_heads == 1 { heads[0] } else { g.concat(&heads, 1)? };
        let attn_out = g.linear(cat, g.param(&self.wo), g.param(&self.bo))?;
        let x1 = g.layer_norm(
            g.add(q_src, attn_out)?,
            g.param(&self.ln1_g),
            g.param(&self.ln1_b),
            LN_EPS,
        )?;
        let hidden = g.gelu(g.linear(x1, g.param(&self.ff1_w), g.param(&self.ff1_b))?);
        let ff = g.linear(hidden, g.param(&self.ff2_w), g.param(&self.ff2_b))?;
        g.layer_norm(g.add(x1, ff)?, g.param(&self.ln2_g), g.param(&self.ln2_b), LN_EPS)
    }
}

impl Module for EncoderLayer {
    fn named_params(&self) -> Vec<(String, &Parameter)> {
        let mut v: Vec<(String, &Parameter)> = vec![
            ("wq".into(), &self.wq),
            ("bq".into(), &self.bq),
            ("wk".into(), &self.wk),
            ("bk".into(), &self.bk),
            ("wv".into(), &self.wv),
            ("bv".into(), &self.bv),
            ("wo".into(), &self.wo),
            ("bo".into(), &self.bo),
            ("ff1_w".into(), &self.ff1_w),
            ("ff1_b".into(), &self.ff1_b),
            ("ff2_w".into(), &self.ff2_w),
            ("ff2_b".into(), &self.ff2_b),
            ("ln1_g".into(), &self.ln1_g),
            ("ln1_b".into(), &self.ln1_b),
            ("ln2_g".into(), &self.ln2_g),
            ("ln2_b".into(), &self.ln2_b),
        ];
        if let Some(ad) = &self.lora_q {
            v.extend(prefixed("lora_q", ad.named_params()));
        }
        if let Some(ad) = &self.lora_v {
            v.extend(prefixed("lora_v", ad.named_params()));
        }
        v
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Parameter)> {
        let mut v: Vec<(String, &mut Parameter)> = vec![
            ("wq".into(), &mut self.wq),
            ("bq".into(), &mut self.bq),
            ("wk".into(), &mut self.wk),
            ("bk".into(), &mut self.bk),
            ("wv".into(), &mut self.wv),
            ("bv".into(), &mut self.bv),
            ("wo".into(), &mut self.wo),
            ("bo".into(), &mut self.bo),
            ("ff1_w".into(), &mut self.ff1_w),
            ("ff1_b".into(), &mut self.ff1_b),
            ("ff2_w".into(), &mut self.ff2_w),
            ("ff2_b".into(), &mut self.ff2_b),
            ("ln1_g".into(), &mut self.ln1_g),
            ("ln1_b".into(), &mut self.ln1_b),
            ("ln2_g".into(), &mut self.ln2_g),
            ("ln2_b".into(), &mut self.ln2_b),
        ];
        if let Some(ad) = &mut self.lora_q {
            v.extend(prefixed_mut("lora_q", ad.named_params_mut()));
        }
        if let Some(ad) = &mut self.lora_v {
            v.extend(prefixed_mut("lora_v", ad.named_params_mut()));
        }
        v
    }
}

#[derive(Clone, Debug)]
pub struct TextEncoder {
    pub cfg: TextEncoderConfig,
    pub tok_emb: Parameter,
    pub pos_emb: Parameter,
    pub layers: Vec<EncoderLayer>,
}

impl TextEncoder {
    pub fn new<R: Rng + ?Sized>(cfg: TextEncoderConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        Ok(Self {
            cfg,
            tok_emb: Parameter::uniform(&[cfg.vocab_size, d], d, rng),
            pos_emb: Parameter::uniform(&[cfg.max_len, d], d, rng),
            layers: (0..cfg.n_layers).map(|_| EncoderLayer::new(d, cfg.d_ff, rng)).collect(),
        })
    }

    pub fn output_dim(&self) -> usize {
        self.cfg.d_model
    }

    /// Freezes every base weight and attaches trainable adapters to the
    /// query and value projections of each layer.
    pub fn attach_lora<R: Rng + ?Sized>(&mut self, rank: usize, alpha: f64, rng: &mut R) -> Result<()> {
        self.set_trainable(false);
        let d = self.cfg.d_model;
        for layer in &mut self.layers {
            layer.lora_q = Some(LoraAdapter::new(d, d, rank, alpha, rng)?);
            layer.lora_v = Some(LoraAdapter::new(d, d, rank, alpha, rng)?);
        }
        Ok(())
    }

    fn check(&self, seq: &TokenSequence) -> Result<Vec<usize>> {
        if seq.ids.len() != self.cfg.max_len || seq.attention_mask.len() != self.cfg.max_len {
            return Err(Error::Contract(format!(
                "token sequence of length {} (mask {}) but encoder expects {}",
                seq.ids.len(),
                seq.attention_mask.len(),
                self.cfg.max_len
            )));
        }
        if let Some(&bad) = seq.ids.iter().find(|&&id| id >= self.cfg.vocab_size) {
            return Err(Error::Index {
                op: "token embedding",
                index: bad,
                bound: self.cfg.vocab_size,
            });
        }
        if seq.attention_mask[0] != 1 {
            return Err(Error::Contract("position 0 ([CLS]) must be unmasked".into()));
        }
        Ok((0..seq.ids.len()).filter(|&i| seq.attention_mask[i] == 1).collect())
    }

    /// Pooled `1 x d_model` hidden state at position 0.
    ///
    /// Masked positions are dropped before attention. Since only position 0
    /// is read out, this equals scoring masked keys at minus infinity.
    pub fn forward(&self, g: &Graph, seq: &TokenSequence) -> Result<Var> {
        let positions = self.check(seq)?;
        let ids: Vec<usize> = positions.iter().map(|&p| seq.ids[p]).collect();
        let tok = g.gather_rows(g.param(&self.tok_emb), &ids)?;
        let pos = g.gather_rows(g.param(&self.pos_emb), &positions)?;
        let mut x = g.add(tok, pos)?;
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(g, x, self.cfg.n_heads, i + 1 == n)?;
        }
        if n == 0 {
            x = g.slice(x, 0, 0, 1)?;
        }
        Ok(x)
    }

    /// `B x d_model` pooled states.
    pub fn forward_batch(&self, g: &Graph, seqs: &[&TokenSequence]) -> Result<Var> {
        let rows = seqs
            .iter()
            .map(|s| self.forward(g, s))
            .collect::<Result<Vec<_>>>()?;
        if rows.len() == 1 {
            Ok(rows[0])
        } else {
            g.concat(&rows, 0)
        }
    }

    pub fn text_forward(&self, seq: &TokenSequence) -> Result<Tensor> {
        let g = Graph::new();
        let v = self.forward(&g, seq)?;
        Ok(g.value(v).as_ref().clone())
    }
}

impl Module for TextEncoder {
    fn named_params(&self) -> Vec<(String, &Parameter)> {
        let mut v = vec![("tok_emb".to_string(), &self.tok_emb), ("pos_emb".to_string(), &self.pos_emb)];
        for (i, l) in self.layers.iter().enumerate() {
            v.extend(prefixed(&format!("layers.{i}"), l.named_params()));
        }
        v
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Parameter)> {
        let mut v = vec![
            ("tok_emb".to_string(), &mut self.tok_emb),
            ("pos_emb".to_string(), &mut self.pos_emb),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            v.extend(prefixed_mut(&format!("layers.{i}"), l.named_params_mut()));
        }
        v
    }
}

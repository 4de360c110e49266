//! Attention fusion of a text vector and an audio vector.
//!
//! Both inputs are projected to a shared width `d_h`, each projection gets a
//! scalar score from `W_e`, and the fused vector is the softmax-weighted sum
//! of the two projections.

use std::fmt;
use std::str::FromStr;

use distillfuse_core::{prefixed, prefixed_mut, Error, Graph, Module, Parameter, Result, Tensor, Var};
use rand::Rng;

#[derive(Clone, Debug)]
pub struct FusionParams {
    /// `d_h x d_t`
    pub w_t: Parameter,
    pub b_t: Parameter,
    /// `d_h x d_a`
    pub w_a: Parameter,
    pub b_a: Parameter,
    /// `1 x d_h`
    pub w_e: Parameter,
    /// `[1]`
    pub b_e: Parameter,
}

/// Fused features (`B x d_h`) and per-example modality weights (`B x 2`,
/// text first).
#[derive(Clone, Copy, Debug)]
pub struct FusionOutput {
    pub h_f: Var,
    pub weights: Option<Var>,
}

impl FusionParams {
    pub fn new<R: Rng + ?Sized>(d_t: usize, d_a: usize, d_h: usize, rng: &mut R) -> Self {
        Self {
            w_t: Parameter::uniform(&[d_h, d_t], d_t, rng),
            b_t: Parameter::zeros(&[d_h]),
            w_a: Parameter::uniform(&[d_h, d_a], d_a, rng),
            b_a: Parameter::zeros(&[d_h]),
            w_e: Parameter::uniform(&[1, d_h], d_h, rng),
            b_e: Parameter::zeros(&[1]),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.w_t.value.shape()[0]
    }

    pub fn forward(&self, g: &Graph, x_t: Var, x_a: Var) -> Result<(Var, Var)> {
        let h_t = g.linear(x_t, g.param(&self.w_t), g.param(&self.b_t))?;
        let h_a = g.linear(x_a, g.param(&self.w_a), g.param(&self.b_a))?;
        let (w_e, b_e) = (g.param(&self.w_e), g.param(&self.b_e));
        let e_t = g.linear(h_t, w_e, b_e)?;
        let e_a = g.linear(h_a, w_e, b_e)?;
        let weights = g.softmax(g.concat(&[e_t, e_a], 1)?, 1)?;
        let h_f = g.add(
            g.mul_col(h_t, g.slice(weights, 1, 0, 1)?)?,
            g.mul_col(h_a, g.slice(weights, 1, 1, 1)?)?,
        )?;
        Ok((h_f, weights))
    }
}

impl Module for FusionParams {
    fn named_params(&self) -> Vec<(String, &Parameter)> {
        vec![
            ("w_t".into(), &self.w_t),
            ("b_t".into(), &self.b_t),
            ("w_a".into(), &self.w_a),
            ("b_a".into(), &self.b_a),
            ("w_e".into(), &self.w_e),
            ("b_e".into(), &self.b_e),
        ]
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Parameter)> {
        vec![
            ("w_t".into(), &mut self.w_t),
            ("b_t".into(), &mut self.b_t),
            ("w_a".into(), &mut self.w_a),
            ("b_a".into(), &mut self.b_a),
            ("w_e".into(), &mut self.w_e),
            ("b_e".into(), &mut self.b_e),
        ]
    }
}

/// `H` independent fusion blocks, concatenated and projected back to `d_h`.
#[derive(Clone, Debug)]
pub struct MultiHeadFusion {
    pub heads: Vec<FusionParams>,
    /// `d_h x (H * d_h)`
    pub w_out: Parameter,
    pub b_out: Parameter,
}

impl MultiHeadFusion {
    pub fn new<R: Rng + ?Sized>(d_t: usize, d_a: usize, d_h: usize, n_heads: usize, rng: &mut R) -> Result<Self> {
        if n_heads == 0 {
            return Err(Error::Contract("multi-head fusion needs at least one head".into()));
        }
        let heads = (0..n_heads).map(|_| FusionParams::new(d_t, d_a, d_h, rng)).collect();
        Ok(Self {
            heads,
            w_out: Parameter::uniform(&[d_h, n_heads * d_h], n_heads * d_h, rng),
            b_out: Parameter::zeros(&[d_h]),
        })
    }

    /// Fused features and the head-averaged modality weights.
    pub fn forward(&self, g: &Graph, x_t: Var, x_a: Var) -> Result<(Var, Var)> {
        let mut outs = Vec::with_capacity(self.heads.len());
        let mut weight_sum: Option<Var> = None;
        for head in &self.heads {
            let (h, w) = head.forward(g, x_t, x_a)?;
            outs.push(h);
            weight_sum = Some(match weight_sum {
                Some(acc) => g.add(acc, w)?,
                None => w,
            });
        }
        let cat = if outs.len() == 1 { outs[0] } else { g.concat(&outs, 1)? };
        let h_f = g.linear(cat, g.param(&self.w_out), g.param(&self.b_out))?;
        let weights = g.scale(weight_sum.expect("at least one head"), 1.0 / self.heads.len() as f64);
        Ok((h_f, weights))
    }
}

impl Module for MultiHeadFusion {
    fn named_params(&self) -> Vec<(String, &Parameter)> {
        let mut v = vec![];
        for (i, h) in self.heads.iter().enumerate() {
            v.extend(prefixed(&format!("heads.{i}"), h.named_params()));
        }
        v.push(("w_out".into(), &self.w_out));
        v.push(("b_out".into(), &self.b_out));
        v
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Parameter)> {
        let mut v = vec![];
        for (i, h) in self.heads.iter_mut().enumerate() {
            v.extend(prefixed_mut(&format!("heads.{i}"), h.named_params_mut()));
        }
        v.push(("w_out".into(), &mut self.w_out));
        v.push(("b_out".into(), &mut self.b_out));
        v
    }
}

/// Baseline without attention: `W [x_t; x_a] + b`.
#[derive(Clone, Debug)]
pub struct ConcatFusion {
    pub w: Parameter,
    pub b: Parameter,
}

impl ConcatFusion {
    pub fn new<R: Rng + ?Sized>(d_t: usize, d_a: usize, d_h: usize, rng: &mut R) -> Self {
        Self {
            w: Parameter::uniform(&[d_h, d_t + d_a], d_t + d_a, rng),
            b: Parameter::zeros(&[d_h]),
        }
    }

    pub fn forward(&self, g: &Graph, x_t: Var, x_a: Var) -> Result<Var> {
        g.linear(g.concat(&[x_t, x_a], 1)?, g.param(&self.w), g.param(&self.b))
    }
}

impl Module for ConcatFusion {
    fn named_params(&self) -> Vec<(String, &Parameter)> {
        vec![("w".into(), &self.w), ("b".into(), &self.b)]
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Parameter)> {
        vec![("w".into(), &mut self.w), ("b".into(), &mut self.b)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionKind {
    Attention,
    MultiHead,
    Concat,
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionKind::Attention => "attention",
            FusionKind::MultiHead => "multihead",
            FusionKind::Concat => "concat",
        })
    }
}

impl FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "attention" | "single" => Ok(FusionKind::Attention),
            "multihead" | "multi-head" => Ok(FusionKind::MultiHead),
            "concat" => Ok(FusionKind::Concat),
            other => Err(Error::Contract(format!("unknown fusion kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub enum Fusion {
    Attention(FusionParams),
    MultiHead(MultiHeadFusion),
    Concat(ConcatFusion),
}

impl Fusion {
    pub fn new<R: Rng + ?Sized>(
        kind: FusionKind,
        d_t: usize,
        d_a: usize,
        d_h: usize,
        n_heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(match kind {
            FusionKind::Attention => Fusion::Attention(FusionParams::new(d_t, d_a, d_h, rng)),
            FusionKind::MultiHead => Fusion::MultiHead(MultiHeadFusion::new(d_t, d_a, d_h, n_heads, rng)?),
            FusionKind::Concat => Fusion::Concat(ConcatFusion::new(d_t, d_a, d_h, rng)),
        })
    }

    pub fn kind(&self) -> FusionKind {
        match self {
            Fusion::Attention(_) => FusionKind::Attention,
            Fusion::MultiHead(_) => FusionKind::MultiHead,
            Fusion::Concat(_) => FusionKind::Concat,
        }
    }

    /// Number of attention blocks (1 unless multi-head).
    pub fn n_heads(&self) -> usize {
        match self {
            Fusion::MultiHead(p) => p.heads.len(),
            _ => 1,
        }
    }

    pub fn forward(&self, g: &Graph, x_t: Var, x_a: Var) -> Result<FusionOutput> {
        Ok(match self {
            Fusion::Attention(p) => {
                let (h_f, w) = p.forward(g, x_t, x_a)?;
                FusionOutput { h_f, weights: Some(w) }
            }
            Fusion::MultiHead(p) => {
                let (h_f, w) = p.forward(g, x_t, x_a)?;
                FusionOutput { h_f, weights: Some(w) }
            }
            Fusion::Concat(p) => FusionOutput {
                h_f: p.forward(g, x_t, x_a)?,
                weights: None,
            },
        })
    }
}

impl Module for Fusion {
    fn named_params(&self) -> Vec<(String, &Parameter)> {
        match self {
            Fusion::Attention(p) => p.named_params(),
            Fusion::MultiHead(p) => p.named_params(),
            Fusion::Concat(p) => p.named_params(),
        }
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Parameter)> {
        match self {
            Fusion::Attention(p) => p.named_params_mut(),
            Fusion::MultiHead(p) => p.named_params_mut(),
            Fusion::Concat(p) => p.named_params_mut(),
        }
    }
}

fn as_row(g: &Graph, x: &Tensor) -> Result<Var> {
    Ok(g.constant(x.reshape(vec![1, x.numel()])?))
}

fn check_dim(op: &'static str, x: &Tensor, w: &Parameter) -> Result<()> {
    let want = w.value.shape()[1];
    if x.numel() != want {
        return Err(Error::Dimension {
            op,
            lhs: w.value.shape().to_vec(),
            rhs: x.shape().to_vec(),
        });
    }
    Ok(())
}

/// Single-example fusion: returns `h_f` (length `d_h`) and the two modality
/// weights.
pub fn fuse_attention(x_t: &Tensor, x_a: &Tensor, p: &FusionParams) -> Result<(Tensor, Tensor)> {
    check_dim("fuse_attention", x_t, &p.w_t)?;
    check_dim("fuse_attention", x_a, &p.w_a)?;
    let g = Graph::new();
    let (h, w) = p.forward(&g, as_row(&g, x_t)?, as_row(&g, x_a)?)?;
    let h = g.value(h).reshape(vec![p.latent_dim()])?;
    let w = g.value(w).reshape(vec![2])?;
    Ok((h, w))
}

pub fn multi_head_fuse(x_t: &Tensor, x_a: &Tensor, mp: &MultiHeadFusion) -> Result<Tensor> {
    for head in &mp.heads {
        check_dim("multi_head_fuse", x_t, &head.w_t)?;
        check_dim("multi_head_fuse", x_a, &head.w_a)?;
    }
    let g = Graph::new();
    let (h, _) = mp.forward(&g, as_row(&g, x_t)?, as_row(&g, x_a)?)?;
    let v = g.value(h);
    v.reshape(vec![v.numel()])
}

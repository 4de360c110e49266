//! 8-bit per-matrix weight quantization and fake-quant for QAT.

use std::fmt;
use std::str::FromStr;

use distillfuse_core::{Error, Graph, Module, Parameter, Result, Tensor, Var};

use crate::bilstm::BiLstm;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuantScheme {
    /// Codes in `[-127, 127]`, zero point 0.
    Symmetric,
    /// Codes in `[0, 255]` with a zero point.
    Asymmetric,
}

impl QuantScheme {
    pub fn range(self) -> (i32, i32) {
        match self {
            QuantScheme::Symmetric => (-127, 127),
            QuantScheme::Asymmetric => (0, 255),
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            QuantScheme::Symmetric => 0,
            QuantScheme::Asymmetric => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(QuantScheme::Symmetric),
            1 => Some(QuantScheme::Asymmetric),
            _ => None,
        }
    }
}

impl fmt::Display for QuantScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QuantScheme::Symmetric => "symmetric",
            QuantScheme::Asymmetric => "asymmetric",
        })
    }
}

impl FromStr for QuantScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "symmetric" => Ok(QuantScheme::Symmetric),
            "asymmetric" => Ok(QuantScheme::Asymmetric),
            other => Err(Error::Contract(format!("unknown quantization scheme {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantParams {
    pub scale: f64,
    pub zero_point: i32,
    pub bits: u8,
    pub scheme: QuantScheme,
}

impl QuantParams {
    /// Unclamped integer code for `w`.
    fn raw_code(&self, w: f64) -> f64 {
        (w / self.scale).round_ties_even() + self.zero_point as f64
    }

    pub fn code(&self, w: f64) -> i32 {
        let (lo, hi) = self.scheme.range();
        self.raw_code(w).clamp(lo as f64, hi as f64) as i32
    }

    pub fn value(&self, q: i32) -> f64 {
        (q - self.zero_point) as f64 * self.scale
    }

    /// Whether `w` quantizes without clipping.
    pub fn in_range(&self, w: f64) -> bool {
        let (lo, hi) = self.scheme.range();
        let c = self.raw_code(w);
        c >= lo as f64 && c <= hi as f64
    }
}

/// Per-matrix range calibration. The asymmetric range is widened to
/// contain zero.
pub fn calibrate(weights: &Tensor, scheme: QuantScheme) -> Result<QuantParams> {
    if weights.numel() == 0 {
        return Err(Error::Contract("cannot calibrate an empty tensor".into()));
    }
    if !weights.is_finite() {
        return Err(Error::Contract("cannot calibrate non-finite weights".into()));
    }
    let d = weights.data();
    let (scale, zero_point) = match scheme {
        QuantScheme::Symmetric => {
            let m = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            (if m == 0.0 { 1.0 } else { m / 127.0 }, 0)
        }
        QuantScheme::Asymmetric => {
            let lo = d.iter().cloned().fold(0.0f64, f64::min);
            let hi = d.iter().cloned().fold(0.0f64, f64::max);
            if hi == lo {
                (1.0, 0)
            } else {
                let s = (hi - lo) / 255.0;
                (s, ((-lo / s).round_ties_even() as i32).clamp(0, 255))
            }
        }
    };
    Ok(QuantParams {
        scale,
        zero_point,
        bits: 8,
        scheme,
    })
}

/// Integer codes stored one byte each: two's complement for the symmetric
/// scheme, unsigned for the asymmetric one.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedMatrix {
    pub shape: Vec<usize>,
    pub bytes: Vec<u8>,
    pub params: QuantParams,
}

impl QuantizedMatrix {
    pub fn code(&self, i: usize) -> i32 {
        match self.params.scheme {
            QuantScheme::Symmetric => self.bytes[i] as i8 as i32,
            QuantScheme::Asymmetric => self.bytes[i] as i32,
        }
    }

    pub fn codes(&self) -> Vec<i32> {
        (0..self.bytes.len()).map(|i| self.code(i)).collect()
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }
}

pub fn quantize(w: &Tensor, p: &QuantParams) -> QuantizedMatrix {
    let bytes = w
        .data()
        .iter()
        .map(|&v| {
            let q = p.code(v);
            match p.scheme {
                QuantScheme::Symmetric => q as i8 as u8,
                QuantScheme::Asymmetric => q as u8,
            }
        })
        .collect();
    QuantizedMatrix {
        shape: w.shape().to_vec(),
        bytes,
        params: *p,
    }
}

pub fn dequantize(q: &QuantizedMatrix) -> Tensor {
    let data = (0..q.len()).map(|i| q.params.value(q.code(i))).collect();
    Tensor::new(q.shape.clone(), data).expect("shape recorded at quantization")
}

/// `dequantize(quantize(w))` forward, straight-through gradient inside the
/// representable range and zero gradient for clipped elements.
pub fn fake_quant(g: &Graph, w: Var, p: &QuantParams) -> Result<Var> {
    let v = g.value(w);
    let value = dequantize(&quantize(&v, p));
    let pass = v.data().iter().map(|&x| p.in_range(x)).collect();
    g.straight_through(w, value, pass)
}

/// Binds `param` through [`fake_quant`] with parameters calibrated from its
/// current value.
pub fn fake_quant_forward(g: &Graph, param: &Parameter, scheme: QuantScheme) -> Result<Var> {
    let p = calibrate(&param.value, scheme)?;
    fake_quant(g, g.param(param), &p)
}

/// BiLSTM with int8 weight matrices; biases stay in 64-bit floats.
#[derive(Clone, Debug)]
pub struct QuantizedBiLstm {
    pub matrices: Vec<(String, QuantizedMatrix)>,
    pub base: BiLstm,
}

/// Bytes of per-matrix metadata: `scale` as f64 plus zero point as i64.
pub const QUANT_META_BYTES: usize = 16;

pub fn quantize_model(model: &BiLstm, scheme: QuantScheme) -> Result<QuantizedBiLstm> {
    let names = BiLstm::weight_matrix_names();
    let mut matrices = vec![];
    for (name, p) in model.named_params() {
        if names.contains(&name.as_str()) {
            let qp = calibrate(&p.value, scheme)?;
            matrices.push((name, quantize(&p.value, &qp)));
        }
    }
    Ok(QuantizedBiLstm {
        matrices,
        base: model.clone(),
    })
}

impl QuantizedBiLstm {
    /// Float model with every weight matrix replaced by its dequantized
    /// value; used for inference.
    pub fn dequantized(&self) -> BiLstm {
        let mut m = self.base.clone();
        for (name, p) in m.named_params_mut() {
            if let Some((_, q)) = self.matrices.iter().find(|(n, _)| *n == name) {
                p.value = dequantize(q);
            }
        }
        m
    }

    fn bias_count(&self) -> usize {
        let names = BiLstm::weight_matrix_names();
        self.base
            .named_params()
            .iter()
            .filter(|(n, _)| !names.contains(&n.as_str()))
            .map(|(_, p)| p.value.numel())
            .sum()
    }

    /// int8 codes, per-matrix metadata and float biases.
    pub fn storage_bytes(&self) -> usize {
        let codes: usize = self.matrices.iter().map(|(_, q)| q.len()).sum();
        codes + QUANT_META_BYTES * self.matrices.len() + 8 * self.bias_count()
    }

    /// The same model stored entirely as 64-bit floats.
    pub fn float_storage_bytes(&self) -> usize {
        8 * self.base.num_params()
    }
}

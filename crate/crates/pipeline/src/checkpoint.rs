//! Binary model checkpoints.
//!
//! Layout (little-endian): magic `DFCK`, version `u32`, model kind `u8`,
//! block count `u32`, then blocks. A block is a `u32`-length-prefixed UTF-8
//! name, a payload flag `u8`, a `u32` rank followed by `u32` dimensions, and
//! the payload: `f64` values (flag 0) or, for int8 blocks (flag 1 symmetric,
//! 2 asymmetric), an `f64` scale, an `i64` zero point and one byte per
//! value. The first block, `__arch__`, holds the hyperparameters needed to
//! rebuild the model.

use std::path::Path;

use distillfuse_core::{Module, Parameter, Tensor};
use distillfuse_model::{
    AudioClassifier, BiLstm, ClassifierHead, FusionKind, QuantParams, QuantScheme, QuantizedBiLstm, QuantizedMatrix,
    StudentConfig, StudentModel, TextClassifier, TextEncoderConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{IoContext, PipelineError, Result};

pub const MAGIC: &[u8; 4] = b"DFCK";
pub const VERSION: u32 = 1;
pub const ARCH_BLOCK: &str = "__arch__";

const FLAG_F64: u8 = 0;
const FLAG_INT8_SYM: u8 = 1;
const FLAG_INT8_ASYM: u8 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    TextTeacher,
    AudioTeacher,
    Student,
    QuantizedAudioTeacher,
}

impl ModelKind {
    pub fn tag(self) -> u8 {
        match self {
            ModelKind::TextTeacher => 1,
            ModelKind::AudioTeacher => 2,
            ModelKind::Student => 3,
            ModelKind::QuantizedAudioTeacher => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        [
            ModelKind::TextTeacher,
            ModelKind::AudioTeacher,
            ModelKind::Student,
            ModelKind::QuantizedAudioTeacher,
        ]
        .into_iter()
        .find(|k| k.tag() == tag)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    F64(Vec<f64>),
    Int8 { params: QuantParams, bytes: Vec<u8> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub name: String,
    pub shape: Vec<usize>,
    pub payload: Payload,
}

impl Block {
    fn f64(name: impl Into<String>, t: &Tensor) -> Self {
        Self {
            name: name.into(),
            shape: t.shape().to_vec(),
            payload: Payload::F64(t.data().to_vec()),
        }
    }

    /// Bytes taken by the values (plus int8 metadata), excluding the header.
    pub fn payload_bytes(&self) -> usize {
        match &self.payload {
            Payload::F64(v) => 8 * v.len(),
            Payload::Int8 { bytes, .. } => 16 + bytes.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub blocks: Vec<Block>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.kind.tag());
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for b in &self.blocks {
            out.extend_from_slice(&(b.name.len() as u32).to_le_bytes());
            out.extend_from_slice(b.name.as_bytes());
            out.push(match &b.payload {
                Payload::F64(_) => FLAG_F64,
                Payload::Int8 { params, .. } => match params.scheme {
                    QuantScheme::Symmetric => FLAG_INT8_SYM,
                    QuantScheme::Asymmetric => FLAG_INT8_ASYM,
                },
            });
            out.extend_from_slice(&(b.shape.len() as u32).to_le_bytes());
            for &d in &b.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            match &b.payload {
                Payload::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Payload::Int8 { params, bytes } => {
                    out.extend_from_slice(&params.scale.to_le_bytes());
                    out.extend_from_slice(&(params.zero_point as i64).to_le_bytes());
                    out.extend_from_slice(bytes);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(4)? != MAGIC {
            return Err(r.corrupt_at(0, "bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.corrupt_at(4, &format!("unsupported version {version} (expected {VERSION})")));
        }
        let tag = r.u8()?;
        let kind = ModelKind::from_tag(tag).ok_or_else(|| r.corrupt_at(8, &format!("unknown model kind {tag}")))?;
        let n = r.u32()? as usize;
        let mut blocks = Vec::new();
        for _ in 0..n {
            let name_len = r.u32()? as usize;
            let at = r.pos;
            let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| r.corrupt_at(at, "name is not UTF-8"))?;
            let at = r.pos;
            let flag = r.u8()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| r.corrupt_at(at, "shape overflows"))?;
            let payload = match flag {
                FLAG_F64 => {
                    let raw = r.take(numel.checked_mul(8).ok_or_else(|| r.corrupt_at(at, "shape overflows"))?)?;
                    Payload::F64(
                        raw.chunks_exact(8)
                            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                            .collect(),
                    )
                }
                FLAG_INT8_SYM | FLAG_INT8_ASYM => {
                    let scheme = if flag == FLAG_INT8_SYM {
                        QuantScheme::Symmetric
                    } else {
                        QuantScheme::Asymmetric
                    };
                    let scale = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
                    let zp_at = r.pos;
                    let zero_point = i64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
                    let zero_point =
                        i32::try_from(zero_point).map_err(|_| r.corrupt_at(zp_at, "zero point out of range"))?;
                    Payload::Int8 {
                        params: QuantParams {
                            scale,
                            zero_point,
                            bits: 8,
                            scheme,
                        },
                        bytes: r.take(numel)?.to_vec(),
                    }
                }
                other => return Err(r.corrupt_at(at, &format!("unknown block flag {other}"))),
            };
            blocks.push(Block { name, shape, payload });
        }
        if r.pos != bytes.len() {
            return Err(r.corrupt_at(r.pos, "trailing bytes"));
        }
        Ok(Self { kind, blocks })
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).at(path)
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).at(path)?, path)
    }

    fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn corrupt_at(&self, offset: usize, detail: &str) -> PipelineError {
        PipelineError::CorruptCheckpoint {
            path: self.path.to_path_buf(),
            offset,
            detail: detail.to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        match self.pos.checked_add(n) {
            Some(end) if end <= self.bytes.len() => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            _ => Err(self.corrupt_at(
                self.pos,
                &format!("truncated: needed {n} bytes, {} left", self.bytes.len() - self.pos),
            )),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Audio teacher whose BiLSTM weight matrices are stored as int8.
#[derive(Clone, Debug)]
pub struct QuantizedAudioTeacher {
    pub lstm: QuantizedBiLstm,
    pub head: ClassifierHead,
}

impl QuantizedAudioTeacher {
    /// Float classifier running on the dequantized matrices.
    pub fn dequantized(&self) -> AudioClassifier {
        AudioClassifier {
            lstm: self.lstm.dequantized(),
            head: self.head.clone(),
        }
    }
}

#[derive(Clone, Debug)]
pub enum Model {
    TextTeacher(TextClassifier),
    AudioTeacher(AudioClassifier),
    Student(StudentModel),
    QuantizedAudioTeacher(QuantizedAudioTeacher),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::TextTeacher(_) => ModelKind::TextTeacher,
            Model::AudioTeacher(_) => ModelKind::AudioTeacher,
            Model::Student(_) => ModelKind::Student,
            Model::QuantizedAudioTeacher(_) => ModelKind::QuantizedAudioTeacher,
        }
    }
}

fn fusion_code(k: FusionKind) -> f64 {
    match k {
        FusionKind::Attention => 0.0,
        FusionKind::MultiHead => 1.0,
        FusionKind::Concat => 2.0,
    }
}

fn text_arch(cfg: &TextEncoderConfig, lora: Option<(usize, f64)>) -> Vec<f64> {
    let (rank, alpha) = lora.unwrap_or((0, 0.0));
    vec![
        cfg.vocab_size as f64,
        cfg.max_len as f64,
        cfg.d_model as f64,
        cfg.n_layers as f64,
        cfg.n_heads as f64,
        cfg.d_ff as f64,
        rank as f64,
        alpha,
    ]
}

fn lora_of(m: &TextClassifier) -> Option<(usize, f64)> {
    let l = m.encoder.layers.first()?.lora_q.as_ref()?;
    Some((l.rank(), l.alpha))
}

fn arch(model: &Model) -> Vec<f64> {
    match model {
        Model::TextTeacher(m) => text_arch(&m.encoder.cfg, lora_of(m)),
        Model::AudioTeacher(m) => vec![m.lstm.input_dim as f64, m.lstm.hidden_dim as f64],
        Model::QuantizedAudioTeacher(m) => vec![m.lstm.base.input_dim as f64, m.lstm.base.hidden_dim as f64],
        Model::Student(m) => {
            let mut v = text_arch(&m.text.cfg, None);
            v.extend([
                m.audio.input_dim as f64,
                m.audio.hidden_dim as f64,
                fusion_code(m.fusion.kind()),
                m.fusion.n_heads() as f64,
                m.head.input_dim() as f64,
            ]);
            v
        }
    }
}

fn float_blocks<M: Module>(prefix: &str, m: &M) -> Vec<Block> {
    m.named_params()
        .into_iter()
        .map(|(n, p)| Block::f64(format!("{prefix}{n}"), &p.value))
        .collect()
}

pub fn to_checkpoint(model: &Model) -> Checkpoint {
    let a = arch(model);
    let mut blocks = vec![Block {
        name: ARCH_BLOCK.into(),
        shape: vec![a.len()],
        payload: Payload::F64(a),
    }];
    match model {
        Model::TextTeacher(m) => blocks.extend(float_blocks("", m)),
        Model::AudioTeacher(m) => blocks.extend(float_blocks("", m)),
        Model::Student(m) => blocks.extend(float_blocks("", m)),
        Model::QuantizedAudioTeacher(m) => {
            for (name, p) in m.lstm.base.named_params() {
                let full = format!("lstm.{name}");
                match m.lstm.matrices.iter().find(|(n, _)| *n == name) {
                    Some((_, q)) => blocks.push(Block {
                        name: full,
                        shape: q.shape.clone(),
                        payload: Payload::Int8 {
                            params: q.params,
                            bytes: q.bytes.clone(),
                        },
                    }),
                    None => blocks.push(Block::f64(full, &p.value)),
                }
            }
            blocks.extend(float_blocks("head.", &m.head));
        }
    }
    Checkpoint {
        kind: model.kind(),
        blocks,
    }
}

fn bad(path: &Path, detail: String) -> PipelineError {
    PipelineError::CorruptCheckpoint {
        path: path.to_path_buf(),
        offset: 0,
        detail,
    }
}

fn arch_values(ck: &Checkpoint, path: &Path, len: usize) -> Result<Vec<usize>> {
    let vals = match ck.block(ARCH_BLOCK).map(|b| &b.payload) {
        Some(Payload::F64(v)) if v.len() == len => v.clone(),
        _ => return Err(bad(path, format!("missing or malformed {ARCH_BLOCK} block"))),
    };
    vals.iter()
        .enumerate()
        .map(|(i, &v)| {
            // Index 7 of a text architecture is the (fractional) LoRA alpha.
            if v >= 0.0 && (v.fract() == 0.0 || i == 7) {
                Ok(v as usize)
            } else {
                Err(bad(path, format!("architecture value {v} is not a size")))
            }
        })
        .collect()
}

fn text_cfg(a: &[usize]) -> TextEncoderConfig {
    TextEncoderConfig {
        vocab_size: a[0],
        max_len: a[1],
        d_model: a[2],
        n_layers: a[3],
        n_heads: a[4],
        d_ff: a[5],
    }
}

/// Copies every float block into the module, checking names and shapes.
fn fill<M: Module>(m: &mut M, ck: &Checkpoint, prefix: &str, path: &Path) -> Result<usize> {
    let mut used = 0;
    for (name, p) in m.named_params_mut() {
        let full = format!("{prefix}{name}");
        let block = ck
            .block(&full)
            .ok_or_else(|| bad(path, format!("missing parameter block {full}")))?;
        set_param(p, block, path)?;
        used += 1;
    }
    Ok(used)
}

fn set_param(p: &mut Parameter, block: &Block, path: &Path) -> Result<()> {
    if block.shape != p.value.shape() {
        return Err(bad(
            path,
            format!("block {} has shape {:?}, model expects {:?}", block.name, block.shape, p.value.shape()),
        ));
    }
    match &block.payload {
        Payload::F64(v) => {
            p.value = Tensor::new(block.shape.clone(), v.clone())?;
            Ok(())
        }
        Payload::Int8 { .. } => Err(bad(path, format!("block {} is int8 but a float was expected", block.name))),
    }
}

pub fn from_checkpoint(ck: &Checkpoint, path: &Path) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (model, used) = match ck.kind {
        ModelKind::TextTeacher => {
            let a = arch_values(ck, path, 8)?;
            let mut m = TextClassifier::new(text_cfg(&a), &mut rng)?;
            if a[6] > 0 {
                let alpha = match &ck.block(ARCH_BLOCK).expect("checked").payload {
                    Payload::F64(v) => v[7],
                    Payload::Int8 { .. } => unreachable!(),
                };
                m.encoder.attach_lora(a[6], alpha, &mut rng)?;
            }
            let used = fill(&mut m, ck, "", path)?;
            (Model::TextTeacher(m), used)
        }
        ModelKind::AudioTeacher => {
            let a = arch_values(ck, path, 2)?;
            let mut m = AudioClassifier::new(a[0], a[1], &mut rng);
            let used = fill(&mut m, ck, "", path)?;
            (Model::AudioTeacher(m), used)
        }
        ModelKind::Student => {
            let a = arch_values(ck, path, 13)?;
            let fusion = match a[10] {
                0 => FusionKind::Attention,
                1 => FusionKind::MultiHead,
                2 => FusionKind::Concat,
                k => return Err(bad(path, format!("unknown fusion code {k}"))),
            };
            let cfg = StudentConfig {
                text: text_cfg(&a),
                audio_input_dim: a[8],
                audio_hidden_dim: a[9],
                fusion,
                fusion_heads: a[11],
                latent_dim: a[12],
            };
            let mut m = StudentModel::new(&cfg, &mut rng)?;
            let used = fill(&mut m, ck, "", path)?;
            (Model::Student(m), used)
        }
        ModelKind::QuantizedAudioTeacher => {
            let a = arch_values(ck, path, 2)?;
            let mut base = BiLstm::new(a[0], a[1], &mut rng);
            let names = BiLstm::weight_matrix_names();
            let mut matrices = vec![];
            let mut used = 0;
            for (name, p) in base.named_params_mut() {
                let full = format!("lstm.{name}");
                let block = ck
                    .block(&full)
                    .ok_or_else(|| bad(path, format!("missing parameter block {full}")))?;
                used += 1;
                match (&block.payload, names.contains(&name.as_str())) {
                    (Payload::Int8 { params, bytes }, true) => {
                        if block.shape != p.value.shape() {
                            return Err(bad(path, format!("block {full} has shape {:?}", block.shape)));
                        }
                        let q = QuantizedMatrix {
                            shape: block.shape.clone(),
                            bytes: bytes.clone(),
                            params: *params,
                        };
                        p.value = distillfuse_model::dequantize(&q);
                        matrices.push((name, q));
                    }
                    (Payload::F64(_), false) => set_param(p, block, path)?,
                    _ => return Err(bad(path, format!("block {full} has the wrong payload type"))),
                }
            }
            let mut head = ClassifierHead::new(2 * a[1], &mut rng);
            used += fill(&mut head, ck, "head.", path)?;
            let m = QuantizedAudioTeacher {
                lstm: QuantizedBiLstm { matrices, base },
                head,
            };
            (Model::QuantizedAudioTeacher(m), used)
        }
    };
    if used + 1 != ck.blocks.len() {
        return Err(bad(
            path,
            format!("{} blocks but the model has {} parameters", ck.blocks.len() - 1, used),
        ));
    }
    Ok(model)
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    to_checkpoint(model).write_file(path)
}

pub fn load_model(path: &Path) -> Result<Model> {
    from_checkpoint(&Checkpoint::read_file(path)?, path)
}

//! Teachers, the fused student, and their training steps.

use distillfuse_core::{prefixed, prefixed_mut, Error, Graph, Module, Optimizer, Parameter, Result, Tensor, Var};
use distillfuse_text::TokenSequence;
use rand::Rng;

use crate::bilstm::{plain_weight, BiLstm, Pooling, WeightFn};
use crate::distill::{combine_teacher_targets, distill_loss, DistillConfig, LossBreakdown, SoftTargets, TargetSource};
use crate::fusion::{Fusion, FusionKind};
use crate::head::ClassifierHead;
use crate::text_encoder::{TextEncoder, TextEncoderConfig};

/// Text encoder plus linear head.
#[derive(Clone, Debug)]
pub struct TextClassifier {
    pub encoder: TextEncoder,
    pub head: ClassifierHead,
}

impl TextClassifier {
    pub fn new<R: Rng + ?Sized>(cfg: TextEncoderConfig, rng: &mut R) -> Result<Self> {
        let encoder = TextEncoder::new(cfg, rng)?;
        let head = ClassifierHead::new(cfg.d_model, rng);
        Ok(Self { encoder, head })
    }

    pub fn forward(&self, g: &Graph, seqs: &[&TokenSequence]) -> Result<Var> {
        let x = self.encoder.forward_batch(g, seqs)?;
        self.head.forward(g, x)
    }

    /// `B x 2` logits without recording gradients anywhere.
    pub fn logits(&self, seqs: &[&TokenSequence]) -> Result<Tensor> {
        let g = Graph::new();
        let v = self.forward(&g, seqs)?;
        Ok(g.value(v).as_ref().clone())
    }
}

impl Module for TextClassifier {
    fn named_params(&self) -> Vec<(String, &Parameter)> {
        let mut v = prefixed("encoder", self.encoder.named_params());
        v.extend(prefixed("head", self.head.named_params()));
        v
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Parameter)> {
        let mut v = prefixed_mut("encoder", self.encoder.named_params_mut());
        v.extend(prefixed_mut("head", self.head.named_params_mut()));
        v
    }
}

/// BiLSTM (last-state pooling) plus linear head.
#[derive(Clone, Debug)]
pub struct AudioClassifier {
    pub lstm: BiLstm,
    pub head: ClassifierHead,
}

impl AudioClassifier {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let lstm = BiLstm::new(input_dim, hidden_dim, rng);
        let head = ClassifierHead::new(lstm.output_dim(), rng);
        Self { lstm, head }
    }

    pub fn forward_with(&self, g: &Graph, batch: &[&Tensor], wf: WeightFn) -> Result<Var> {
        let x = self.lstm.forward_with(g, batch, Pooling::Last, wf)?;
        self.head.forward(g, x)
    }

    pub fn forward(&self, g: &Graph, batch: &[&Tensor]) -> Result<Var> {
        self.forward_with(g, batch, &plain_weight)
    }

    pub fn logits(&self, batch: &[&Tensor]) -> Result<Tensor> {
        let g = Graph::new();
        let v = self.forward(&g, batch)?;
        Ok(g.value(v).as_ref().clone())
    }
}

impl Module for AudioClassifier {
    fn named_params(&self) -> Vec<(String, &Parameter)> {
        let mut v = prefixed("lstm", self.lstm.named_params());
        v.extend(prefixed("head", self.head.named_params()));
        v
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Parameter)> {
        let mut v = prefixed_mut("lstm", self.lstm.named_params_mut());
        v.extend(prefixed_mut("head", self.head.named_params_mut()));
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StudentConfig {
    pub text: TextEncoderConfig,
    pub audio_input_dim: usize,
    pub audio_hidden_dim: usize,
    pub fusion: FusionKind,
    pub fusion_heads: usize,
    pub latent_dim: usize,
}

/// Text branch, audio branch (time-mean pooled BiLSTM), fusion and head.
#[derive(Clone, Debug)]
pub struct StudentModel {
    pub text: TextEncoder,
    pub audio: BiLstm,
    pub fusion: Fusion,
    pub head: ClassifierHead,
}

#[derive(Clone, Copy, Debug)]
pub struct StudentOutput {
    pub logits: Var,
    /// `B x 2` modality weights (text, audio); absent for concat fusion.
    pub weights: Option<Var>,
}

impl StudentModel {
    pub fn new<R: Rng + ?Sized>(cfg: &StudentConfig, rng: &mut R) -> Result<Self> {
        let text = TextEncoder::new(cfg.text, rng)?;
        let audio = BiLstm::new(cfg.audio_input_dim, cfg.audio_hidden_dim, rng);
        let fusion = Fusion::new(
            cfg.fusion,
            text.output_dim(),
            audio.output_dim(),
            cfg.latent_dim,
            cfg.fusion_heads,
            rng,
        )?;
        let head = ClassifierHead::new(cfg.latent_dim, rng);
        Ok(Self {
            text,
            audio,
            fusion,
            head,
        })
    }

    pub fn forward(&self, g: &Graph, tokens: &[&TokenSequence], audio: &[&Tensor]) -> Result<StudentOutput> {
        if tokens.len() != audio.len() {
            return Err(Error::Contract(format!(
                "{} text examples but {} audio examples",
                tokens.len(),
                audio.len()
            )));
        }
        let x_t = self.text.forward_batch(g, tokens)?;
        let x_a = self.audio.forward(g, audio, Pooling::Mean)?;
        let fused = self.fusion.forward(g, x_t, x_a)?;
        Ok(StudentOutput {
            logits: self.head.forward(g, fused.h_f)?,
            weights: fused.weights,
        })
    }

    /// Logits and modality weights without recording gradients.
    pub fn predict(&self, tokens: &[&TokenSequence], audio: &[&Tensor]) -> Result<(Tensor, Option<Tensor>)> {
        let g = Graph::new();
        let out = self.forward(&g, tokens, audio)?;
        let w = out.weights.map(|w| g.value(w).as_ref().clone());
        Ok((g.value(out.logits).as_ref().clone(), w))
    }
}

impl Module for StudentModel {
    fn named_params(&self) -> Vec<(String, &Parameter)> {
        let mut v = prefixed("text", self.text.named_params());
        v.extend(prefixed("audio", self.audio.named_params()));
        v.extend(prefixed("fusion", self.fusion.named_params()));
        v.extend(prefixed("head", self.head.named_params()));
        v
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Parameter)> {
        let mut v = prefixed_mut("text", self.text.named_params_mut());
        v.extend(prefixed_mut("audio", self.audio.named_params_mut()));
        v.extend(prefixed_mut("fusion", self.fusion.named_params_mut()));
        v.extend(prefixed_mut("head", self.head.named_params_mut()));
        v
    }
}

/// Paired examples for one student update.
#[derive(Clone, Copy, Debug)]
pub struct Batch<'a> {
    pub tokens: &'a [&'a TokenSequence],
    pub audio: &'a [&'a Tensor],
    pub labels: &'a [usize],
}

impl Batch<'_> {
    pub fn validate(&self) -> Result<usize> {
        let n = self.labels.len();
        if self.tokens.len() != n || self.audio.len() != n || n == 0 {
            return Err(Error::Contract(format!(
                "batch has {} text, {} audio and {} labels",
                self.tokens.len(),
                self.audio.len(),
                n
            )));
        }
        Ok(n)
    }
}

pub struct Teachers<'a> {
    pub text: &'a TextClassifier,
    pub audio: &'a AudioClassifier,
}

impl Teachers<'_> {
    /// Mixed soft targets for every example in the batch.
    pub fn targets(&self, batch: &Batch, cfg: &DistillConfig) -> Result<Vec<SoftTargets>> {
        batch.validate()?;
        let zt = self.text.logits(batch.tokens)?;
        let za = self.audio.logits(batch.audio)?;
        (0..batch.labels.len())
            .map(|i| {
                let pt = SoftTargets::from_logits(zt.row_slice(i), cfg.temperature, TargetSource::Text)?;
                let pa = SoftTargets::from_logits(za.row_slice(i), cfg.temperature, TargetSource::Audio)?;
                combine_teacher_targets(&pt, &pa, cfg.teacher_mix_beta)
            })
            .collect()
    }
}

/// One optimizer step on precomputed teacher targets.
pub fn student_step_with_targets(
    student: &mut StudentModel,
    batch: &Batch,
    targets: &[SoftTargets],
    cfg: &DistillConfig,
    opt: &mut Optimizer,
) -> Result<LossBreakdown> {
    batch.validate()?;
    student.zero_grad();
    let g = Graph::new();
    let out = student.forward(&g, batch.tokens, batch.audio)?;
    let (loss, breakdown) = distill_loss(&g, out.logits, targets, batch.labels, cfg)?;
    g.backward(loss)?.accumulate_into(student)?;
    opt.step(student)?;
    Ok(breakdown)
}

/// Teacher inference, target mixing, student forward, loss, backward and
/// optimizer step. Teachers are only read.
pub fn student_train_step(
    batch: &Batch,
    teachers: &Teachers,
    student: &mut StudentModel,
    cfg: &DistillConfig,
    opt: &mut Optimizer,
) -> Result<LossBreakdown> {
    let targets = teachers.targets(batch, cfg)?;
    student_step_with_targets(student, batch, &targets, cfg, opt)
}

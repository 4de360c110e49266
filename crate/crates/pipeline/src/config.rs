//! Run configuration.
//!
//! A config file holds UTF-8 `key = value` lines; blank lines and lines
//! starting with `#` are ignored. Every key is also a command-line flag
//! (`text_epochs` becomes `--text-epochs`) and a flag overrides the file.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use distillfuse_core::{OptimizerConfig, OptimizerKind};
use distillfuse_model::{DistillConfig, FusionKind, QuantScheme, StudentConfig, TextEncoderConfig};

use crate::error::{IoContext, PipelineError, Result};

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| PipelineError::Config(format!("{key} = {value:?}: {e}")))
}

macro_rules! run_config {
    ($( #[doc = $doc:literal] $name:ident : $ty:ty = $default:expr, )*) => {
        #[derive(Clone, Debug, PartialEq)]
        pub struct RunConfig {
            $( #[doc = $doc] pub $name: $ty, )*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { $( $name: $default, )* }
            }
        }

        impl RunConfig {
            /// Every key with its one-line description.
            pub const KEYS: &'static [(&'static str, &'static str)] = &[$( (stringify!($name), $doc.trim_ascii()), )*];

            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $( stringify!($name) => self.$name = parse_value(key, value)?, )*
                    _ => return Err(PipelineError::Config(format!("unknown key {key:?}"))),
                }
                Ok(())
            }

            /// Keys and values in declaration order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$( (stringify!($name), self.$name.to_string()), )*]
            }
        }
    };
}

run_config! {
    /// Seed for data generation, splits, initialization and batching
    seed: u64 = 0,
    /// Participants generated by `synth`
    n: usize = 600,
    /// Dataset directory (transcripts, WAVs, labels.csv)
    data_dir: String = "data".into(),
    /// Label file name inside data_dir
    label_file: String = "labels.csv".into(),
    /// Parent of the per-command run directories
    out_dir: String = "runs".into(),
    /// Cached features written by `preprocess`
    features_dir: String = String::new(),
    /// Text teacher checkpoint
    text_teacher: String = String::new(),
    /// Audio teacher checkpoint
    audio_teacher: String = String::new(),
    /// Checkpoint for `evaluate`
    checkpoint: String = String::new(),
    /// Token sequence length including [CLS] and [SEP]
    max_len: usize = 512,
    /// MFCC frames per clip
    target_frames: usize = 60,
    /// Minimum corpus count for a vocabulary token
    min_count: usize = 1,
    /// Mini-batch size
    batch_size: usize = 4,
    /// Text teacher epochs
    text_epochs: usize = 20,
    /// Text teacher AdamW learning rate
    text_lr: f64 = 1e-3,
    /// Text teacher AdamW weight decay
    text_weight_decay: f64 = 0.01,
    /// LoRA rank for the text teacher
    lora_rank: usize = 8,
    /// LoRA alpha for the text teacher
    lora_alpha: f64 = 32.0,
    /// Audio teacher epochs
    audio_epochs: usize = 10,
    /// Student epochs
    student_epochs: usize = 12,
    /// Optimizer for the audio teacher, the student and QAT (sgd, adam, adamw)
    optimizer: OptimizerKind = OptimizerKind::Adam,
    /// Learning rate for the audio teacher and the student
    lr: f64 = 1e-3,
    /// Weight decay when optimizer = adamw
    weight_decay: f64 = 0.01,
    /// Plateau scheduler factor
    plateau_factor: f64 = 0.5,
    /// Plateau scheduler patience in epochs
    plateau_patience: usize = 2,
    /// Weight of the KL term in the student loss
    alpha: f64 = 0.5,
    /// Weight of the text teacher when mixing soft targets
    teacher_mix_beta: f64 = 0.5,
    /// Softmax temperature for distillation
    temperature: f64 = 1.0,
    /// Student fusion: attention, multihead or concat
    fusion: FusionKind = FusionKind::MultiHead,
    /// Heads for multi-head fusion
    fusion_heads: usize = 4,
    /// Width of the fused representation
    latent_dim: usize = 32,
    /// Transformer width
    d_model: usize = 64,
    /// Transformer layers
    n_layers: usize = 2,
    /// Attention heads per transformer layer
    n_heads: usize = 4,
    /// Transformer feed-forward width
    d_ff: usize = 128,
    /// BiLSTM hidden units per direction
    lstm_hidden: usize = 32,
    /// Quantization scheme: symmetric or asymmetric
    quant_scheme: QuantScheme = QuantScheme::Symmetric,
    /// QAT fine-tuning epochs
    qat_epochs: usize = 3,
    /// QAT learning rate
    qat_lr: f64 = 1e-4,
    /// Comma-separated alpha values swept by `ablate`
    ablate_alphas: String = "0,0.25,0.5,0.75,1".into(),
}

impl RunConfig {
    pub fn flag_name(key: &str) -> String {
        key.replace('_', "-")
    }

    /// Applies `key = value` lines from `text`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| PipelineError::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(&std::fs::read_to_string(path).at(path)?)?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("target_frames", self.target_frames),
            ("fusion_heads", self.fusion_heads),
            ("latent_dim", self.latent_dim),
            ("lstm_hidden", self.lstm_hidden),
            ("lora_rank", self.lora_rank),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(PipelineError::Config(format!("{k} must be positive")));
            }
        }
        if self.max_len < 3 {
            return Err(PipelineError::Config("max_len must be at least 3".into()));
        }
        self.distill().validate()?;
        self.alphas()?;
        Ok(())
    }

    pub fn distill(&self) -> DistillConfig {
        DistillConfig {
            alpha: self.alpha,
            teacher_mix_beta: self.teacher_mix_beta,
            temperature: self.temperature,
        }
    }

    pub fn optimizer_config(&self, lr: f64) -> OptimizerConfig {
        match self.optimizer {
            OptimizerKind::AdamW => OptimizerConfig::adamw(lr, self.weight_decay),
            kind => OptimizerConfig::new(kind, lr),
        }
    }

    pub fn text_config(&self, vocab_size: usize) -> TextEncoderConfig {
        TextEncoderConfig {
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            ..TextEncoderConfig::new(vocab_size, self.max_len)
        }
    }

    pub fn student_config(&self, vocab_size: usize, audio_dim: usize) -> StudentConfig {
        StudentConfig {
            text: self.text_config(vocab_size),
            audio_input_dim: audio_dim,
            audio_hidden_dim: self.lstm_hidden,
            fusion: self.fusion,
            fusion_heads: self.fusion_heads,
            latent_dim: self.latent_dim,
        }
    }

    pub fn alphas(&self) -> Result<Vec<f64>> {
        self.ablate_alphas
            .split(',')
            .map(|a| {
                let v: f64 = parse_value("ablate_alphas", a)?;
                if (0.0..=1.0).contains(&v) {
                    Ok(v)
                } else {
                    Err(PipelineError::Config(format!("ablation alpha {v} outside [0, 1]")))
                }
            })
            .collect()
    }
}

//! Encoders, attention fusion, distillation losses and int8 quantization
//! for a text + audio classifier trained from two unimodal teachers.

pub mod bilstm;
pub mod distill;
pub mod fusion;
pub mod head;
pub mod lora;
pub mod models;
pub mod quant;
pub mod text_encoder;

pub use bilstm::{plain_weight, BiLstm, LstmCell, Pooling, WeightFn};
pub use distill::{
    ce_loss, combine_teacher_targets, cross_entropy, distill_loss, kl_divergence, one_hot, total_loss,
    total_loss_probs, DistillConfig, LossBreakdown, SoftTargets, TargetSource,
};
pub use fusion::{fuse_attention, multi_head_fuse, ConcatFusion, Fusion, FusionKind, FusionParams, MultiHeadFusion};
pub use head::{argmax2, ClassifierHead, NUM_CLASSES};
pub use lora::{lora_effective_weight, LoraAdapter};
pub use models::{
    student_step_with_targets, student_train_step, AudioClassifier, Batch, StudentConfig, StudentModel,
    Teachers, TextClassifier,
};
pub use quant::{
    calibrate, dequantize, fake_quant, fake_quant_forward, quantize, quantize_model, QuantParams,
    QuantScheme, QuantizedBiLstm, QuantizedMatrix,
};
pub use text_encoder::{TextEncoder, TextEncoderConfig};

//! Training loops for the two teachers, the student and QAT fine-tuning.

use distillfuse_core::{Graph, Module, Optimizer, OptimizerConfig, PlateauScheduler, Tensor};
use distillfuse_model::{
    ce_loss, distill_loss, fake_quant_forward, quantize_model, student_step_with_targets, AudioClassifier, Batch,
    DistillConfig, LossBreakdown, SoftTargets, StudentModel, Teachers, TextClassifier,
};
use distillfuse_text::TokenSequence;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::QuantizedAudioTeacher;
use crate::config::RunConfig;
use crate::dataset::Split;
use crate::error::Result;
use crate::prepare::{Example, PreparedData};

/// Inference batch size; does not affect results.
pub const EVAL_BATCH: usize = 32;
const MIN_LR: f64 = 1e-6;

/// Random streams per component, so changing one stage's consumption does
/// not shift another's.
#[derive(Clone, Copy, Debug)]
pub enum Stream {
    TextTeacher = 1,
    AudioTeacher = 2,
    Student = 3,
    Qat = 4,
}

pub fn rng_for(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Per-epoch lines collected for `train_log.txt`.
#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    pub lines: Vec<String>,
}

impl TrainLog {
    pub fn push(&mut self, line: String) {
        log::info!("{line}");
        self.lines.push(line);
    }

    pub fn to_text(&self) -> String {
        self.lines.iter().map(|l| format!("{l}\n")).collect()
    }
}

fn tokens<'a>(data: &'a PreparedData, idx: &[usize]) -> Vec<&'a TokenSequence> {
    idx.iter().map(|&i| &data.examples[i].tokens).collect()
}

fn audio<'a>(data: &'a PreparedData, idx: &[usize]) -> Vec<&'a Tensor> {
    idx.iter().map(|&i| &data.examples[i].audio).collect()
}

fn labels(data: &PreparedData, idx: &[usize]) -> Vec<usize> {
    idx.iter().map(|&i| data.examples[i].label).collect()
}

fn shuffled(idx: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut v = idx.to_vec();
    v.shuffle(rng);
    v
}

fn accuracy(probs: &[[f64; 2]], data: &PreparedData, idx: &[usize]) -> f64 {
    let hits = probs
        .iter()
        .zip(idx)
        .filter(|(p, &i)| usize::from(p[1] > p[0]) == data.examples[i].label)
        .count();
    hits as f64 / idx.len().max(1) as f64
}

fn mean_ce(probs: &[[f64; 2]], data: &PreparedData, idx: &[usize]) -> f64 {
    let s: f64 = probs
        .iter()
        .zip(idx)
        .map(|(p, &i)| -p[data.examples[i].label].max(distillfuse_model::distill::PROB_EPS).ln())
        .sum();
    s / idx.len().max(1) as f64
}

fn softmax_rows(logits: &Tensor) -> Result<Vec<[f64; 2]>> {
    let p = logits.softmax(1)?;
    Ok((0..p.rows()).map(|r| [p.get2(r, 0), p.get2(r, 1)]).collect())
}

/// Class probabilities for `idx` from any model, computed in chunks.
pub fn predict<F>(idx: &[usize], mut logits: F) -> Result<Vec<[f64; 2]>>
where
    F: FnMut(&[usize]) -> Result<Tensor>,
{
    let mut out = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(EVAL_BATCH) {
        out.extend(softmax_rows(&logits(chunk)?)?);
    }
    Ok(out)
}

pub fn text_probs(m: &TextClassifier, data: &PreparedData, idx: &[usize]) -> Result<Vec<[f64; 2]>> {
    predict(idx, |c| Ok(m.logits(&tokens(data, c))?))
}

pub fn audio_probs(m: &AudioClassifier, data: &PreparedData, idx: &[usize]) -> Result<Vec<[f64; 2]>> {
    predict(idx, |c| Ok(m.logits(&audio(data, c))?))
}

/// Student probabilities and, when the fusion reports them, per-example
/// (text, audio) modality weights.
pub fn student_probs(
    m: &StudentModel,
    data: &PreparedData,
    idx: &[usize],
) -> Result<(Vec<[f64; 2]>, Option<Vec<[f64; 2]>>)> {
    let mut weights: Option<Vec<[f64; 2]>> = None;
    let probs = predict(idx, |c| {
        let (logits, w) = m.predict(&tokens(data, c), &audio(data, c))?;
        if let Some(w) = w {
            weights
                .get_or_insert_with(Vec::new)
                .extend((0..w.rows()).map(|r| [w.get2(r, 0), w.get2(r, 1)]));
        }
        Ok(logits)
    })?;
    Ok((probs, weights))
}

pub fn train_text_teacher(data: &PreparedData, cfg: &RunConfig, log: &mut TrainLog) -> Result<TextClassifier> {
    let mut rng = rng_for(cfg.seed, Stream::TextTeacher);
    let mut model = TextClassifier::new(cfg.text_config(data.vocab.len()), &mut rng)?;
    model.encoder.attach_lora(cfg.lora_rank, cfg.lora_alpha, &mut rng)?;
    let mut opt = Optimizer::new(OptimizerConfig::adamw(cfg.text_lr, cfg.text_weight_decay))?;
    let train = data.indices(Split::Train);
    let val = data.indices(Split::Validation);
    for epoch in 1..=cfg.text_epochs {
        let mut total = 0.0;
        let order = shuffled(&train, &mut rng);
        for batch in order.chunks(cfg.batch_size) {
            model.zero_grad();
            let g = Graph::new();
            let logits = model.forward(&g, &tokens(data, batch))?;
            let loss = ce_loss(&g, logits, &labels(data, batch))?;
            total += g.value(loss).data()[0] * batch.len() as f64;
            g.backward(loss)?.accumulate_into(&mut model)?;
            opt.step(&mut model)?;
        }
        let vp = text_probs(&model, data, &val)?;
        log.push(format!(
            "text_teacher epoch={epoch} train_ce={} val_ce={} val_acc={} lr={}",
            total / train.len() as f64,
            mean_ce(&vp, data, &val),
            accuracy(&vp, data, &val),
            opt.lr()
        ));
    }
    Ok(model)
}

pub fn train_audio_teacher(data: &PreparedData, cfg: &RunConfig, log: &mut TrainLog) -> Result<AudioClassifier> {
    let mut rng = rng_for(cfg.seed, Stream::AudioTeacher);
    let mut model = AudioClassifier::new(data.audio_dim(), cfg.lstm_hidden, &mut rng);
    let mut opt = Optimizer::new(cfg.optimizer_config(cfg.lr))?;
    let mut sched = PlateauScheduler::new(cfg.plateau_factor, cfg.plateau_patience, MIN_LR);
    let train = data.indices(Split::Train);
    let val = data.indices(Split::Validation);
    for epoch in 1..=cfg.audio_epochs {
        let mut total = 0.0;
        let order = shuffled(&train, &mut rng);
        for batch in order.chunks(cfg.batch_size) {
            model.zero_grad();
            let g = Graph::new();
            let logits = model.forward(&g, &audio(data, batch))?;
            let loss = ce_loss(&g, logits, &labels(data, batch))?;
            total += g.value(loss).data()[0] * batch.len() as f64;
            g.backward(loss)?.accumulate_into(&mut model)?;
            opt.step(&mut model)?;
        }
        let vp = audio_probs(&model, data, &val)?;
        let val_ce = mean_ce(&vp, data, &val);
        log.push(format!(
            "audio_teacher epoch={epoch} train_ce={} val_ce={val_ce} val_acc={} lr={}",
            total / train.len() as f64,
            accuracy(&vp, data, &val),
            opt.lr()
        ));
        let lr = sched.update(val_ce, opt.lr());
        opt.set_lr(lr);
    }
    Ok(model)
}

/// Mixed teacher targets for `idx`.
pub fn teacher_targets(
    teachers: &Teachers,
    data: &PreparedData,
    idx: &[usize],
    dcfg: &DistillConfig,
) -> Result<Vec<SoftTargets>> {
    let mut out = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(EVAL_BATCH) {
        let (t, a, y) = (tokens(data, chunk), audio(data, chunk), labels(data, chunk));
        let batch = Batch {
            tokens: &t,
            audio: &a,
            labels: &y,
        };
        out.extend(teachers.targets(&batch, dcfg)?);
    }
    Ok(out)
}

/// Distills both teachers into a fresh student. Teacher targets for the
/// training split are computed once up front; the teachers are only read.
pub fn train_student(
    data: &PreparedData,
    teachers: &Teachers,
    cfg: &RunConfig,
    log: &mut TrainLog,
) -> Result<StudentModel> {
    let dcfg = cfg.distill();
    let mut rng = rng_for(cfg.seed, Stream::Student);
    let mut model = StudentModel::new(&cfg.student_config(data.vocab.len(), data.audio_dim()), &mut rng)?;
    let mut opt = Optimizer::new(cfg.optimizer_config(cfg.lr))?;
    let mut sched = PlateauScheduler::new(cfg.plateau_factor, cfg.plateau_patience, MIN_LR);
    let train = data.indices(Split::Train);
    let val = data.indices(Split::Validation);
    let all_targets = teacher_targets(teachers, data, &train, &dcfg)?;
    let target_of: std::collections::HashMap<usize, SoftTargets> =
        train.iter().copied().zip(all_targets.iter().copied()).collect();
    let val_targets = teacher_targets(teachers, data, &val, &dcfg)?;

    for epoch in 1..=cfg.student_epochs {
        let mut sum = LossBreakdown::default();
        let order = shuffled(&train, &mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let (t, a, y) = (tokens(data, batch), audio(data, batch), labels(data, batch));
            let targets: Vec<SoftTargets> = batch.iter().map(|i| target_of[i]).collect();
            let b = Batch {
                tokens: &t,
                audio: &a,
                labels: &y,
            };
            let l = student_step_with_targets(&mut model, &b, &targets, &dcfg, &mut opt)?;
            let w = batch.len() as f64;
            sum.kl_term += l.kl_term * w;
            sum.ce_term += l.ce_term * w;
            sum.total += l.total * w;
        }
        let n = train.len() as f64;
        let (vp, _) = student_probs(&model, data, &val)?;
        let val_loss = student_val_loss(&model, data, &val, &val_targets, &dcfg)?;
        log.push(format!(
            "student epoch={epoch} kl={} ce={} total={} val_total={} val_acc={} lr={}",
            sum.kl_term / n,
            sum.ce_term / n,
            sum.total / n,
            val_loss.total,
            accuracy(&vp, data, &val),
            opt.lr()
        ));
        let lr = sched.update(val_loss.total, opt.lr());
        opt.set_lr(lr);
    }
    Ok(model)
}

fn student_val_loss(
    model: &StudentModel,
    data: &PreparedData,
    idx: &[usize],
    targets: &[SoftTargets],
    dcfg: &DistillConfig,
) -> Result<LossBreakdown> {
    let mut sum = LossBreakdown::default();
    for (k, chunk) in idx.chunks(EVAL_BATCH).enumerate() {
        let g = Graph::new();
        let out = model.forward(&g, &tokens(data, chunk), &audio(data, chunk))?;
        let tg = &targets[k * EVAL_BATCH..k * EVAL_BATCH + chunk.len()];
        let (_, l) = distill_loss(&g, out.logits, tg, &labels(data, chunk), dcfg)?;
        let w = chunk.len() as f64;
        sum.kl_term += l.kl_term * w;
        sum.ce_term += l.ce_term * w;
        sum.total += l.total * w;
    }
    let n = idx.len().max(1) as f64;
    Ok(LossBreakdown {
        kl_term: sum.kl_term / n,
        ce_term: sum.ce_term / n,
        total: sum.total / n,
    })
}

/// Fine-tunes the audio teacher with fake-quantized BiLSTM matrices
/// (recalibrated every step), then stores those matrices as int8. Returns
/// the fine-tuned float model and its quantized counterpart.
pub fn qat_finetune(
    teacher: &AudioClassifier,
    data: &PreparedData,
    cfg: &RunConfig,
    log: &mut TrainLog,
) -> Result<(AudioClassifier, QuantizedAudioTeacher)> {
    let mut rng = rng_for(cfg.seed, Stream::Qat);
    let mut model = teacher.clone();
    let mut opt = Optimizer::new(cfg.optimizer_config(cfg.qat_lr))?;
    let scheme = cfg.quant_scheme;
    let wf = move |g: &Graph, p: &distillfuse_core::Parameter| fake_quant_forward(g, p, scheme);
    let train = data.indices(Split::Train);
    let val = data.indices(Split::Validation);
    for epoch in 1..=cfg.qat_epochs {
        let mut total = 0.0;
        let order = shuffled(&train, &mut rng);
        for batch in order.chunks(cfg.batch_size) {
            model.zero_grad();
            let g = Graph::new();
            let logits = model.forward_with(&g, &audio(data, batch), &wf)?;
            let loss = ce_loss(&g, logits, &labels(data, batch))?;
            total += g.value(loss).data()[0] * batch.len() as f64;
            g.backward(loss)?.accumulate_into(&mut model)?;
            opt.step(&mut model)?;
        }
        let vp = audio_probs(&model, data, &val)?;
        log.push(format!(
            "qat epoch={epoch} train_ce={} val_ce={} val_acc={} lr={}",
            total / train.len() as f64,
            mean_ce(&vp, data, &val),
            accuracy(&vp, data, &val),
            opt.lr()
        ));
    }
    let quantized = QuantizedAudioTeacher {
        lstm: quantize_model(&model.lstm, scheme)?,
        head: model.head.clone(),
    };
    Ok((model, quantized))
}

/// Labels of the examples at `idx`.
pub fn labels_of(data: &PreparedData, idx: &[usize]) -> Vec<usize> {
    labels(data, idx)
}

pub fn examples_of<'a>(data: &'a PreparedData, idx: &[usize]) -> Vec<&'a Example> {
    idx.iter().map(|&i| &data.examples[i]).collect()
}

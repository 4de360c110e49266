//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use distillfuse_audio::{lowpass_filter, mfcc_extract, FirFilter, FrontendConfig, MfccConfig, MfccExtractor, WaveForm};
use distillfuse_core::{Graph, Module, Parameter, Result as CoreResult, Tensor, Var};
use distillfuse_eval::{compute_metrics, roc_auc};
use distillfuse_model::{
    ce_loss, dequantize, distill_loss, fake_quant, fake_quant_forward, fuse_attention, kl_divergence, quantize,
    quantize_model, calibrate, AudioClassifier, BiLstm, ClassifierHead, DistillConfig, FusionParams,
    MultiHeadFusion, Pooling, QuantScheme, SoftTargets, TargetSource, Teachers, TextEncoder, TextEncoderConfig,
    total_loss,
};
use distillfuse_pipeline::commands::agreement;
use distillfuse_pipeline::train::{qat_finetune, train_audio_teacher, train_student, train_text_teacher, TrainLog};
use distillfuse_pipeline::{
    evaluate_model, load_prepared, preprocess, run_command, synth_generate, Command, Model, PreparedData, RunConfig,
    Split,
};
use distillfuse_text::TokenSequence;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

fn randomize<M: Module>(m: &mut M, rng: &mut ChaCha8Rng, scale: f64) {
    for (_, p) in m.named_params_mut() {
        for v in p.value.data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
}

// ---------------------------------------------------------------- 1

const FD_H: f64 = 1e-5;
const FD_POINTS: usize = 20;

/// Worst relative error over `FD_POINTS` random coordinates drawn from the
/// trainable parameters whose name satisfies `select`.
fn fd_check<M, F>(m: &mut M, loss: F, select: impl Fn(&str) -> bool, rng: &mut ChaCha8Rng) -> Result<f64, String>
where
    M: Module,
    F: Fn(&M, &Graph) -> CoreResult<Var>,
{
    let g = Graph::new();
    let l = ok(loss(m, &g))?;
    let grads = ok(g.backward(l))?;
    let candidates: Vec<usize> = m
        .named_params()
        .iter()
        .enumerate()
        .filter(|(_, (name, p))| p.trainable && select(name))
        .map(|(i, _)| i)
        .collect();
    ensure(!candidates.is_empty(), || "no parameters selected".into())?;
    let value = |m: &M| -> Result<f64, String> {
        let g = Graph::new();
        let l = ok(loss(m, &g))?;
        Ok(g.value(l).data()[0])
    };
    let mut worst = 0.0f64;
    for _ in 0..FD_POINTS {
        let pi = candidates[rng.gen_range(0..candidates.len())];
        let (id, n) = {
            let p = m.named_params()[pi].1;
            (p.id(), p.value.numel())
        };
        let j = rng.gen_range(0..n);
        let analytic = grads.param(id).map_or(0.0, |t| t.data()[j]);
        let orig = m.named_params()[pi].1.value.data()[j];
        let set = |m: &mut M, v: f64| m.named_params_mut()[pi].1.value.data_mut()[j] = v;
        set(m, orig + FD_H);
        let plus = value(m)?;
        set(m, orig - FD_H);
        let minus = value(m)?;
        set(m, orig);
        let numeric = (plus - minus) / (2.0 * FD_H);
        // gradients below 1e-3 in magnitude are judged on absolute error
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Scalar probe `sum(v * r)` with a fixed random `r`.
fn probe(g: &Graph, v: Var, seed: u64) -> CoreResult<Var> {
    let shape = g.value(v).shape().to_vec();
    let r = rand_tensor(&mut ChaCha8Rng::seed_from_u64(seed), &shape, 1.0);
    Ok(g.sum(g.mul(v, g.constant(r))?))
}

/// One full-length and one padded sequence covering every token id.
fn token_seqs(vocab: usize, max_len: usize) -> Vec<TokenSequence> {
    (0..2)
        .map(|k| {
            let real = if k == 0 { max_len } else { max_len - 3 };
            let ids = (0..max_len).map(|i| if i < real { (i * 7 + k) % vocab } else { 0 }).collect();
            let mask = (0..max_len).map(|i| u8::from(i < real)).collect();
            TokenSequence {
                ids,
                attention_mask: mask,
            }
        })
        .collect()
}

/// Logits as a trainable parameter, for checking the loss terms alone.
struct Logits(Parameter);

impl Module for Logits {
    fn named_params(&self) -> Vec<(String, &Parameter)> {
        vec![("logits".into(), &self.0)]
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Parameter)> {
        vec![("logits".into(), &mut self.0)]
    }
}

fn criterion_gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut results: Vec<(&str, f64)> = vec![];

    let cfg = TextEncoderConfig {
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        d_ff: 16,
        ..TextEncoderConfig::new(10, 12)
    };
    let seqs = token_seqs(10, 12);
    let text_loss = |seed| {
        let seqs = seqs.clone();
        move |m: &TextEncoder, g: &Graph| {
            let refs: Vec<&TokenSequence> = seqs.iter().collect();
            probe(g, m.forward_batch(g, &refs)?, seed)
        }
    };
    let mut enc = ok(TextEncoder::new(cfg, &mut rng))?;
    randomize(&mut enc, &mut rng, 0.5);
    results.push(("embeddings", fd_check(&mut enc, text_loss(1), |n| n.ends_with("_emb"), &mut rng)?));
    let attention = ["wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln1_g", "ln1_b"];
    results.push((
        "attention",
        fd_check(&mut enc, text_loss(2), |n| attention.iter().any(|a| n.ends_with(&format!(".{a}"))), &mut rng)?,
    ));
    let ff = ["ff1_w", "ff1_b", "ff2_w", "ff2_b", "ln2_g", "ln2_b"];
    results.push((
        "feed-forward",
        fd_check(&mut enc, text_loss(3), |n| ff.iter().any(|a| n.ends_with(&format!(".{a}"))), &mut rng)?,
    ));
    ok(enc.attach_lora(2, 4.0, &mut rng))?;
    for layer in &mut enc.layers {
        for ad in [layer.lora_q.as_mut().unwrap(), layer.lora_v.as_mut().unwrap()] {
            ad.b.value = rand_tensor(&mut rng, ad.b.value.shape(), 0.3);
        }
    }
    results.push(("lora", fd_check(&mut enc, text_loss(4), |n| n.contains("lora"), &mut rng)?));

    let mut lstm = BiLstm::new(3, 4, &mut rng);
    randomize(&mut lstm, &mut rng, 0.6);
    let seq_a = rand_tensor(&mut rng, &[5, 3], 1.0);
    let seq_b = rand_tensor(&mut rng, &[5, 3], 1.0);
    for (name, pooling) in [("lstm cells (last)", Pooling::Last), ("lstm cells (mean)", Pooling::Mean)] {
        let loss = |m: &BiLstm, g: &Graph| probe(g, m.forward(g, &[&seq_a, &seq_b], pooling)?, 5);
        results.push((name, fd_check(&mut lstm, loss, |_| true, &mut rng)?));
    }

    let x_t = rand_tensor(&mut rng, &[3, 5], 1.0);
    let x_a = rand_tensor(&mut rng, &[3, 4], 1.0);
    let mut fp = FusionParams::new(5, 4, 6, &mut rng);
    randomize(&mut fp, &mut rng, 0.7);
    let fusion_loss = |m: &FusionParams, g: &Graph| {
        let (h, w) = m.forward(g, g.constant(x_t.clone()), g.constant(x_a.clone()))?;
        g.add(probe(g, h, 6)?, probe(g, w, 7)?)
    };
    results.push(("fusion", fd_check(&mut fp, fusion_loss, |_| true, &mut rng)?));
    let mut mh = ok(MultiHeadFusion::new(5, 4, 6, 3, &mut rng))?;
    randomize(&mut mh, &mut rng, 0.7);
    let mh_loss = |m: &MultiHeadFusion, g: &Graph| {
        let (h, w) = m.forward(g, g.constant(x_t.clone()), g.constant(x_a.clone()))?;
        g.add(probe(g, h, 8)?, probe(g, w, 9)?)
    };
    results.push(("multi-head fusion", fd_check(&mut mh, mh_loss, |_| true, &mut rng)?));

    let mut head = ClassifierHead::new(5, &mut rng);
    randomize(&mut head, &mut rng, 0.8);
    let head_loss = |m: &ClassifierHead, g: &Graph| ce_loss(g, m.forward(g, g.constant(x_t.clone()))?, &[0, 1, 1]);
    results.push(("head", fd_check(&mut head, head_loss, |_| true, &mut rng)?));

    let targets: Vec<SoftTargets> = (0..3)
        .map(|_| {
            let p = rng.gen_range(0.05..0.95);
            SoftTargets::new([p, 1.0 - p], TargetSource::Mixed).unwrap()
        })
        .collect();
    let mut logits = Logits(Parameter::new(rand_tensor(&mut rng, &[3, 2], 2.0)));
    for (name, alpha, temperature) in [("kl term", 1.0, 1.0), ("kl term (T=2)", 1.0, 2.0), ("ce term", 0.0, 1.0)] {
        let dcfg = DistillConfig {
            alpha,
            teacher_mix_beta: 0.5,
            temperature,
        };
        let loss = |m: &Logits, g: &Graph| Ok(distill_loss(g, g.param(&m.0), &targets, &[1, 0, 1], &dcfg)?.0);
        results.push((name, fd_check(&mut logits, loss, |_| true, &mut rng)?));
    }

    let elapsed = start.elapsed();
    let worst = results.iter().cloned().fold(("", 0.0f64), |a, b| if b.1 > a.1 { b } else { a });
    for (name, err) in &results {
        ensure(*err < 1e-6, || format!("{name}: relative error {err:e}"))?;
    }
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} layers/terms x {FD_POINTS} points, worst {:e} ({}), {:.2?}",
        results.len(),
        worst.1,
        worst.0,
        elapsed
    ))
}

// ---------------------------------------------------------------- 2

fn criterion_fusion_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut max_diff, mut max_sum_err) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let (d_t, d_a, d_h) = (rng.gen_range(1..7), rng.gen_range(1..7), rng.gen_range(1..7));
        let mut p = FusionParams::new(d_t, d_a, d_h, &mut rng);
        randomize(&mut p, &mut rng, 1.5);
        let x_t: Vec<f64> = (0..d_t).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let x_a: Vec<f64> = (0..d_a).map(|_| rng.gen_range(-2.0..2.0)).collect();

        let affine = |w: &Tensor, b: &Tensor, x: &[f64]| -> Vec<f64> {
            (0..d_h)
                .map(|i| b.data()[i] + (0..x.len()).map(|j| w.data()[i * x.len() + j] * x[j]).sum::<f64>())
                .collect()
        };
        let h_t = affine(&p.w_t.value, &p.b_t.value, &x_t);
        let h_a = affine(&p.w_a.value, &p.b_a.value, &x_a);
        let score = |h: &[f64]| p.b_e.value.data()[0] + h.iter().zip(p.w_e.value.data()).map(|(a, b)| a * b).sum::<f64>();
        let (e_t, e_a) = (score(&h_t), score(&h_a));
        let m = e_t.max(e_a);
        let (z_t, z_a) = ((e_t - m).exp(), (e_a - m).exp());
        let (w_t, w_a) = (z_t / (z_t + z_a), z_a / (z_t + z_a));
        let want: Vec<f64> = (0..d_h).map(|i| w_t * h_t[i] + w_a * h_a[i]).collect();

        let (h_f, w) = ok(fuse_attention(&Tensor::vector(x_t.clone()), &Tensor::vector(x_a.clone()), &p))?;
        max_diff = max_diff.max((w.data()[0] - w_t).abs()).max((w.data()[1] - w_a).abs());
        for i in 0..d_h {
            let got = h_f.data()[i];
            max_diff = max_diff.max((got - want[i]).abs());
            let (lo, hi) = (h_t[i].min(h_a[i]), h_t[i].max(h_a[i]));
            ensure(got >= lo - 1e-12 && got <= hi + 1e-12, || {
                format!("h_f[{i}] = {got} outside [{lo}, {hi}]")
            })?;
        }
        max_sum_err = max_sum_err.max((w.data()[0] + w.data()[1] - 1.0).abs());
    }
    ensure(max_diff <= 1e-12, || format!("max deviation {max_diff:e}"))?;
    ensure(max_sum_err <= 1e-12, || format!("weights sum off by {max_sum_err:e}"))?;
    Ok(format!(
        "50 instances, max deviation {max_diff:e}, max |sum w - 1| {max_sum_err:e}, convex bound held"
    ))
}

// ---------------------------------------------------------------- 3

fn random_dist(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..1.0f64).powi(2)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

fn criterion_loss_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut max_lin = 0.0f64;
    for _ in 0..200 {
        let p = random_dist(&mut rng, 2);
        let targets = SoftTargets::new([p[0], p[1]], TargetSource::Mixed).unwrap();
        let logits = [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)];
        let y = distillfuse_model::one_hot(rng.gen_range(0..2));
        let temperature = if rng.gen_bool(0.5) { 1.0 } else { rng.gen_range(0.5..4.0) };
        let at = |alpha| DistillConfig {
            alpha,
            teacher_mix_beta: 0.5,
            temperature,
        };
        let l0 = ok(total_loss(&targets, &logits, &y, &at(0.0)))?;
        let l1 = ok(total_loss(&targets, &logits, &y, &at(1.0)))?;
        ensure(l0.total == l0.ce_term && l1.total == l1.kl_term, || {
            format!("endpoints not exact: {l0:?} {l1:?}")
        })?;

        // independent CE and temperature-scaled KL
        let soft = |t: f64| {
            let m = logits[0].max(logits[1]) / t;
            let z = [(logits[0] / t - m).exp(), (logits[1] / t - m).exp()];
            [z[0] / (z[0] + z[1]), z[1] / (z[0] + z[1])]
        };
        let q = soft(1.0);
        let k = if y[0] == 1.0 { 0 } else { 1 };
        let ce = -q[k].ln();
        let qt = soft(temperature);
        let kl = temperature * temperature * (0..2).map(|i| p[i] * (p[i] / qt[i]).ln()).sum::<f64>();
        ensure((l0.ce_term - ce).abs() < 1e-12 && (l1.kl_term - kl).abs() < 1e-12, || {
            format!("terms {} {} vs oracle {ce} {kl}", l0.ce_term, l1.kl_term)
        })?;

        for _ in 0..5 {
            let alpha: f64 = rng.gen_range(0.0..1.0);
            let l = ok(total_loss(&targets, &logits, &y, &at(alpha)))?;
            max_lin = max_lin.max((l.total - (alpha * l1.total + (1.0 - alpha) * l0.total)).abs());
        }
    }
    ensure(max_lin <= 1e-12, || format!("alpha-linearity off by {max_lin:e}"))?;

    let (mut min_kl, mut max_equal) = (f64::INFINITY, 0.0f64);
    for i in 0..1000 {
        let k = rng.gen_range(2..7);
        let p = random_dist(&mut rng, k);
        let equal = i % 4 == 0;
        let q = if equal { p.clone() } else { random_dist(&mut rng, k) };
        let kl = ok(kl_divergence(&p, &q))?;
        ensure(kl >= 0.0, || format!("negative KL {kl}"))?;
        if equal {
            max_equal = max_equal.max(kl);
        } else {
            // Pinsker: KL >= 0.5 * ||P - Q||_1^2
            let l1: f64 = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum();
            ensure(kl >= 0.5 * l1 * l1 - 1e-15, || format!("KL {kl} below Pinsker bound"))?;
            ensure(kl > 1e-9, || format!("KL {kl} for P != Q"))?;
            min_kl = min_kl.min(kl);
        }
    }
    ensure(max_equal <= 1e-9, || format!("KL(P, P) = {max_equal:e}"))?;
    Ok(format!(
        "1000 alpha samples, linearity err {max_lin:e}; 1000 KL pairs, max KL(P,P) {max_equal:e}, min KL(P,Q) {min_kl:e}"
    ))
}

// ---------------------------------------------------------------- 4

fn tone(freq: f64, n: usize, rate: u32) -> WaveForm {
    WaveForm::new(
        (0..n).map(|i| 0.5 * (2.0 * PI * freq * i as f64 / rate as f64).sin()).collect(),
        rate,
    )
    .unwrap()
}

/// O(N^2) DFT, triangular mel filterbank and orthonormal DCT-II, written
/// out from their definitions.
fn oracle_mfcc(x: &[f64], rate: f64, cfg: &MfccConfig) -> Vec<Vec<f64>> {
    let n = cfg.n_fft;
    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let inv = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let (lo, hi) = (mel(cfg.fmin), mel(cfg.fmax));
    let edge = |i: usize| inv(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64);
    let frames = 1 + (x.len() - n) / cfg.hop;
    (0..frames)
        .map(|f| {
            let seg: Vec<f64> = (0..n)
                .map(|i| x[f * cfg.hop + i] * (0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos()))
                .collect();
            let mag: Vec<f64> = (0..=n / 2)
                .map(|k| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (t, v) in seg.iter().enumerate() {
                        let a = -2.0 * PI * ((k * t) % n) as f64 / n as f64;
                        re += v * a.cos();
                        im += v * a.sin();
                    }
                    (re * re + im * im).sqrt()
                })
                .collect();
            let logs: Vec<f64> = (0..cfg.n_mels)
                .map(|j| {
                    let (a, c, b) = (edge(j), edge(j + 1), edge(j + 2));
                    let e: f64 = mag
                        .iter()
                        .enumerate()
                        .map(|(k, m)| {
                            let hz = k as f64 * rate / n as f64;
                            let w = if hz < a || hz > b {
                                0.0
                            } else if hz <= c {
                                (hz - a) / (c - a)
                            } else {
                                (b - hz) / (b - c)
                            };
                            w * m
                        })
                        .sum();
                    e.max(cfg.log_floor).ln()
                })
                .collect();
            let m = cfg.n_mels as f64;
            (0..cfg.n_coeffs)
                .map(|k| {
                    let s: f64 = logs
                        .iter()
                        .enumerate()
                        .map(|(j, l)| l * (PI * k as f64 * (2 * j + 1) as f64 / (2.0 * m)).cos())
                        .sum();
                    s * if k == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() }
                })
                .collect()
        })
        .collect()
}

fn criterion_dsp() -> Outcome {
    let cfg = MfccConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut max_diff = 0.0f64;
    for _ in 0..10 {
        let len = rng.gen_range(512..2400);
        let samples: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = ok(mfcc_extract(&WaveForm::new(samples.clone(), 16000).unwrap(), &cfg))?;
        let want = oracle_mfcc(&samples, 16000.0, &cfg);
        ensure(got.n_frames() == want.len(), || format!("{} frames vs {}", got.n_frames(), want.len()))?;
        for (t, row) in want.iter().enumerate() {
            for (a, b) in got.row(t).iter().zip(row) {
                max_diff = max_diff.max((a - b).abs());
            }
        }
    }
    ensure(max_diff < 1e-6, || format!("MFCC deviates by {max_diff:e}"))?;

    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let step = (mel(cfg.fmax) - mel(cfg.fmin)) / (cfg.n_mels + 1) as f64;
    let expected = ((mel(440.0) - mel(cfg.fmin)) / step - 1.0).round() as i64;
    let ext = ok(MfccExtractor::new(cfg, 16000))?;
    let mut bands = BTreeMap::new();
    for row in ok(ext.mel_energies(&tone(440.0, 16000, 16000)))? {
        let arg = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0 as i64;
        ensure((arg - expected).abs() <= 1, || format!("440 Hz peak in band {arg}, expected {expected}"))?;
        *bands.entry(arg).or_insert(0) += 1;
    }

    let defaults = FrontendConfig::default();
    let f = ok(FirFilter::lowpass(defaults.cutoff_hz, 16000, defaults.taps))?;
    let response_db = |freq: f64| {
        let w = 2.0 * PI * freq / 16000.0;
        let (re, im) = f.coefficients.iter().enumerate().fold((0.0, 0.0), |(r, i), (n, c)| {
            (r + c * (w * n as f64).cos(), i - c * (w * n as f64).sin())
        });
        -20.0 * (re * re + im * im).sqrt().log10()
    };
    let (stop, pass) = (response_db(7500.0), response_db(1000.0));
    ensure(stop >= 20.0, || format!("7.5 kHz attenuated {stop:.2} dB"))?;
    ensure(pass < 1.0, || format!("1 kHz attenuated {pass:.3} dB"))?;
    let rms = |x: &[f64]| (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    let measured = |freq: f64| -> Result<f64, String> {
        let x = tone(freq, 16000, 16000);
        let y = ok(lowpass_filter(&x, f.cutoff_hz, f.coefficients.len()))?;
        Ok(20.0 * (rms(&x.samples[200..15800]) / rms(&y.samples[200..15800])).log10())
    };
    let (m_stop, m_pass) = (measured(7500.0)?, measured(1000.0)?);
    ensure(m_stop >= 20.0 && m_pass < 1.0, || format!("measured {m_stop:.2} / {m_pass:.3} dB"))?;
    Ok(format!(
        "MFCC max deviation {max_diff:e}; 440 Hz peak bands {bands:?} (expected {expected}); FIR 7.5 kHz {stop:.1} dB, 1 kHz {pass:.4} dB"
    ))
}

// ---------------------------------------------------------------- shared runs

struct SeedRun {
    data: PreparedData,
    cfg: RunConfig,
    audio_teacher: AudioClassifier,
    text_acc: f64,
    audio_acc: f64,
    student_acc: f64,
    f1_distilled: f64,
    f1_plain: f64,
    elapsed: Duration,
}

thread_local! {
    static RUNS: RefCell<BTreeMap<u64, std::rc::Rc<SeedRun>>> = RefCell::new(BTreeMap::new());
    static SCRATCH: PathBuf = std::env::temp_dir().join(format!("distillfuse-acceptance-{}", std::process::id()));
}

fn scratch() -> PathBuf {
    SCRATCH.with(|p| p.clone())
}

fn seed_run(seed: u64) -> Result<std::rc::Rc<SeedRun>, String> {
    if let Some(r) = RUNS.with(|m| m.borrow().get(&seed).cloned()) {
        return Ok(r);
    }
    let start = Instant::now();
    let root = scratch().join(format!("seed{seed}"));
    let cfg = RunConfig {
        seed,
        ..RunConfig::default()
    };
    let manifest = ok(synth_generate(cfg.n, seed, &root.join("data")))?;
    let features = root.join("features");
    ok(preprocess(&manifest, cfg.target_frames, cfg.min_count, &features))?;
    let data = ok(load_prepared(&features, cfg.max_len))?;
    let mut log = TrainLog::default();
    let text = ok(train_text_teacher(&data, &cfg, &mut log))?;
    let audio = ok(train_audio_teacher(&data, &cfg, &mut log))?;
    let teachers = Teachers {
        text: &text,
        audio: &audio,
    };
    let distilled = ok(train_student(&data, &teachers, &cfg, &mut log))?;
    let plain_cfg = RunConfig {
        alpha: 0.0,
        ..cfg.clone()
    };
    let plain = ok(train_student(&data, &teachers, &plain_cfg, &mut log))?;
    let test = |m: Model| ok(evaluate_model(&m, &data, Split::Test)).map(|e| e.report);
    let text_r = test(Model::TextTeacher(text))?;
    let audio_r = test(Model::AudioTeacher(audio.clone()))?;
    let dist_r = test(Model::Student(distilled))?;
    let plain_r = test(Model::Student(plain))?;
    let run = std::rc::Rc::new(SeedRun {
        data,
        cfg,
        audio_teacher: audio,
        text_acc: text_r.accuracy,
        audio_acc: audio_r.accuracy,
        student_acc: dist_r.accuracy,
        f1_distilled: dist_r.f1_weighted,
        f1_plain: plain_r.f1_weighted,
        elapsed: start.elapsed(),
    });
    println!(
        "  seed {seed}: text {:.3} audio {:.3} student {:.3} f1(a=0.5) {:.3} f1(a=0) {:.3} in {:.1?}",
        run.text_acc, run.audio_acc, run.student_acc, run.f1_distilled, run.f1_plain, run.elapsed
    );
    RUNS.with(|m| m.borrow_mut().insert(seed, run.clone()));
    Ok(run)
}

// ---------------------------------------------------------------- 5

fn criterion_quantization() -> Outcome {
    let run = seed_run(0)?;
    let lstm = &run.audio_teacher.lstm;
    let names = BiLstm::weight_matrix_names();
    let mut worst_ratio = 0.0f64;
    for scheme in [QuantScheme::Symmetric, QuantScheme::Asymmetric] {
        let q = ok(quantize_model(lstm, scheme))?;
        for (name, p) in lstm.named_params() {
            if !names.contains(&name.as_str()) {
                continue;
            }
            let (_, qm) = q.matrices.iter().find(|(n, _)| *n == name).ok_or("matrix missing")?;
            let back = dequantize(qm);
            let half = qm.params.scale / 2.0;
            for (w, d) in p.value.data().iter().zip(back.data()) {
                let err = (w - d).abs();
                worst_ratio = worst_ratio.max(err / half);
                ensure(err <= half * (1.0 + 1e-12), || format!("{scheme} {name}: error {err} > scale/2 {half}"))?;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(505);
    for scheme in [QuantScheme::Symmetric, QuantScheme::Asymmetric] {
        for (name, p) in lstm.named_params() {
            let qp = ok(calibrate(&p.value, scheme))?;
            let g = Graph::new();
            let once = ok(fake_quant(&g, g.param(p), &qp))?;
            let twice = ok(fake_quant(&g, once, &qp))?;
            ensure(g.value(once).data() == g.value(twice).data(), || {
                format!("{scheme} fake-quant of {name} is not idempotent")
            })?;
            let direct = dequantize(&quantize(&p.value, &qp));
            ensure(direct.data() == g.value(once).data(), || format!("{scheme} fake-quant of {name} differs"))?;
        }
    }
    // symmetric: the largest magnitude maps to itself, so recalibrating
    // from fake-quantized values is also a fixpoint
    for _ in 0..20 {
        let mut w = Parameter::new(rand_tensor(&mut rng, &[6, 5], 0.8));
        let g = Graph::new();
        let once = g.value(ok(fake_quant_forward(&g, &w, QuantScheme::Symmetric))?).as_ref().clone();
        w.value = once.clone();
        let twice = g.value(ok(fake_quant_forward(&g, &w, QuantScheme::Symmetric))?).as_ref().clone();
        ensure(once == twice, || "recalibrated symmetric fake-quant drifted".into())?;
    }

    let mut log = TrainLog::default();
    let (qat_float, quantized) = ok(qat_finetune(&run.audio_teacher, &run.data, &run.cfg, &mut log))?;
    let val = run.data.indices(Split::Validation);
    let deq = quantized.dequantized();
    let vs_original = ok(agreement(&run.audio_teacher, &deq, &run.data, &val))?;
    let vs_qat = ok(agreement(&qat_float, &deq, &run.data, &val))?;
    ensure(vs_original >= 0.95, || {
        format!("quantized model agrees with the float teacher on {vs_original:.3} of validation")
    })?;
    Ok(format!(
        "round trip worst err/(scale/2) {worst_ratio:.4}; fake-quant idempotent; validation agreement {vs_original:.3} vs float teacher ({vs_qat:.3} vs QAT float, n={})",
        val.len()
    ))
}

// ---------------------------------------------------------------- 6

fn criterion_end_to_end() -> Outcome {
    let runs = (0..5).map(seed_run).collect::<Result<Vec<_>, _>>()?;
    let total: Duration = runs.iter().map(|r| r.elapsed).sum();
    let mean = |f: fn(&SeedRun) -> f64| runs.iter().map(|r| f(r)).sum::<f64>() / runs.len() as f64;
    let (text, audio, student) = (mean(|r| r.text_acc), mean(|r| r.audio_acc), mean(|r| r.student_acc));
    let wins = runs.iter().filter(|r| r.f1_distilled >= r.f1_plain).count();
    let summary = format!(
        "mean test acc: text {text:.3}, audio {audio:.3}, student {student:.3}; F1(a=0.5) >= F1(a=0) on {wins}/5 seeds; {total:.1?}"
    );
    ensure(text <= 0.75 && audio <= 0.75, || format!("teacher above 0.75: {summary}"))?;
    ensure(student >= 0.90, || format!("student below 0.90: {summary}"))?;
    ensure(wins >= 3, || format!("ablation ordering: {summary}"))?;
    ensure(total < Duration::from_secs(600), || format!("over 10 min: {summary}"))?;
    Ok(summary)
}

// ---------------------------------------------------------------- 7

fn mann_whitney(scores: &[f64], labels: &[usize]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

fn criterion_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut max_diff = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(2..150);
        let mut labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        // coarse scores so ties occur
        let scores: Vec<f64> = labels
            .iter()
            .map(|&y| ((rng.gen_range(0.0..1.0) + 0.3 * y as f64) * 10.0f64).round() / 10.0)
            .collect();
        let preds: Vec<usize> = scores.iter().map(|&s| usize::from(s > 0.6)).collect();

        let (_, auc) = ok(roc_auc(&scores, &labels))?;
        max_diff = max_diff.max((auc - mann_whitney(&scores, &labels)).abs());

        let m = ok(compute_metrics(&preds, &labels))?;
        let count = |p: usize, y: usize| preds.iter().zip(&labels).filter(|&(&a, &b)| a == p && b == y).count() as f64;
        let safe = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
        let (mut wp, mut wr, mut wf) = (0.0, 0.0, 0.0);
        for c in 0..2 {
            let o = 1 - c;
            let tp = count(c, c);
            let support = tp + count(o, c);
            let prec = safe(tp, tp + count(c, o));
            let rec = safe(tp, support);
            let pc = m.per_class[c];
            let harmonic = safe(2.0 * pc.precision * pc.recall, pc.precision + pc.recall);
            for d in [pc.precision - prec, pc.recall - rec, pc.f1 - harmonic] {
                max_diff = max_diff.max(d.abs());
            }
            ensure(pc.support as f64 == support, || format!("class {c} support {} vs {support}", pc.support))?;
            wp += prec * support / n as f64;
            wr += rec * support / n as f64;
            wf += harmonic * support / n as f64;
        }
        let acc = (count(0, 0) + count(1, 1)) / n as f64;
        for d in [m.accuracy - acc, m.precision_weighted - wp, m.recall_weighted - wr, m.f1_weighted - wf] {
            max_diff = max_diff.max(d.abs());
        }
        ensure(
            m.confusion.tp as f64 == count(1, 1)
                && m.confusion.fp as f64 == count(1, 0)
                && m.confusion.tn as f64 == count(0, 0)
                && m.confusion.fn_ as f64 == count(0, 1),
            || format!("confusion {:?}", m.confusion),
        )?;
    }
    ensure(max_diff <= 1e-9, || format!("max deviation {max_diff:e}"))?;
    Ok(format!("100 cases, max deviation {max_diff:e}"))
}

// ---------------------------------------------------------------- 8

fn pipeline_once(root: &Path) -> Result<(Vec<u8>, Vec<u8>), String> {
    std::fs::create_dir_all(root).map_err(|e| e.to_string())?;
    let prev = std::env::current_dir().map_err(|e| e.to_string())?;
    std::env::set_current_dir(root).map_err(|e| e.to_string())?;
    let result = (|| {
        let mut cfg = RunConfig {
            seed: 42,
            n: 80,
            text_epochs: 2,
            audio_epochs: 2,
            student_epochs: 2,
            max_len: 128,
            out_dir: "runs".into(),
            data_dir: "data".into(),
            ..RunConfig::default()
        };
        ok(run_command(Command::Synth, &cfg))?;
        let prep = ok(run_command(Command::Preprocess, &cfg))?;
        cfg.features_dir = prep.join("features").to_string_lossy().into_owned();
        let text = ok(run_command(Command::TrainTextTeacher, &cfg))?;
        let audio = ok(run_command(Command::TrainAudioTeacher, &cfg))?;
        cfg.text_teacher = text.join("text_teacher.dfck").to_string_lossy().into_owned();
        cfg.audio_teacher = audio.join("audio_teacher.dfck").to_string_lossy().into_owned();
        let student = ok(run_command(Command::TrainStudent, &cfg))?;
        cfg.checkpoint = student.join("student.dfck").to_string_lossy().into_owned();
        let eval = ok(run_command(Command::Evaluate, &cfg))?;
        let read = |f: &str| std::fs::read(eval.join(f)).map_err(|e| format!("{f}: {e}"));
        Ok((read("metrics.txt")?, read("roc.csv")?))
    })();
    std::env::set_current_dir(prev).map_err(|e| e.to_string())?;
    result
}

fn criterion_reproducible() -> Outcome {
    let base = scratch().join("repro");
    let (m1, r1) = pipeline_once(&base.join("a"))?;
    let (m2, r2) = pipeline_once(&base.join("b"))?;
    ensure(m1 == m2, || "metrics.txt differs between runs".into())?;
    ensure(r1 == r2, || "roc.csv differs between runs".into())?;
    Ok(format!(
        "metrics.txt ({} bytes) and roc.csv ({} bytes) identical across two runs",
        m1.len(),
        r1.len()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("gradient suite", criterion_gradients),
        ("attention fusion oracle", criterion_fusion_oracle),
        ("distillation loss identities", criterion_loss_identities),
        ("DSP oracles", criterion_dsp),
        ("quantization", criterion_quantization),
        ("end-to-end synthetic experiment", criterion_end_to_end),
        ("metrics correctness", criterion_metrics),
        ("reproducibility", criterion_reproducible),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS criterion {}: {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {}: {name}: {detail}", i + 1);
            }
        }
    }
    let _ = std::fs::remove_dir_all(scratch());
    if failed > 0 {
        std::process::exit(1);
    }
}

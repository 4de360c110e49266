use distillfuse_core::{Graph, Module, Optimizer, OptimizerConfig, Parameter, Tensor};
use distillfuse_model::{
    calibrate, fake_quant, fuse_attention, quantize_model, AudioClassifier, Batch, BiLstm, DistillConfig,
    FusionKind, FusionParams, MultiHeadFusion, QuantParams, QuantScheme, StudentConfig, StudentModel, Teachers,
    TextClassifier, TextEncoder, TextEncoderConfig, student_train_step,
};
use distillfuse_text::TokenSequence;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

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

fn values<M: Module>(m: &M) -> Vec<Vec<f64>> {
    m.named_params().iter().map(|(_, p)| p.value.data().to_vec()).collect()
}

/// One LSTM direction unrolled with scalar loops; gate order `[i, f, g, o]`.
fn unroll(w_ih: &Tensor, w_hh: &Tensor, b: &Tensor, xs: &[&[f64]]) -> Vec<f64> {
    let h_dim = w_hh.cols();
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let (mut h, mut c) = (vec![0.0; h_dim], vec![0.0; h_dim]);
    for x in xs {
        let z: Vec<f64> = (0..4 * h_dim)
            .map(|r| {
                b.data()[r]
                    + x.iter().enumerate().map(|(j, v)| w_ih.get2(r, j) * v).sum::<f64>()
                    + h.iter().enumerate().map(|(j, v)| w_hh.get2(r, j) * v).sum::<f64>()
            })
            .collect();
        for k in 0..h_dim {
            let (i, f, g, o) = (sig(z[k]), sig(z[h_dim + k]), z[2 * h_dim + k].tanh(), sig(z[3 * h_dim + k]));
            c[k] = f * c[k] + i * g;
            h[k] = o * c[k].tanh();
        }
    }
    h
}

#[test]
fn bilstm_matches_hand_unrolled_recurrence() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        let (t_len, i_dim, h_dim) = (rng.gen_range(1..8), rng.gen_range(1..5), rng.gen_range(1..5));
        let mut m = BiLstm::new(i_dim, h_dim, &mut rng);
        randomize(&mut m, &mut rng, 0.8);
        let seq = rand_tensor(&mut rng, &[t_len, i_dim], 1.0);
        let rows: Vec<&[f64]> = (0..t_len).map(|t| seq.row_slice(t)).collect();
        let rev: Vec<&[f64]> = rows.iter().rev().cloned().collect();
        let mut want = unroll(&m.fwd.w_ih.value, &m.fwd.w_hh.value, &m.fwd.b.value, &rows);
        want.extend(unroll(&m.bwd.w_ih.value, &m.bwd.w_hh.value, &m.bwd.b.value, &rev));
        let got = m.bilstm_forward(&seq).unwrap();
        for (a, b) in got.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn zero_weight_bilstm_outputs_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut m = BiLstm::new(3, 4, &mut rng);
    for (_, p) in m.named_params_mut() {
        p.value = Tensor::zeros(p.value.shape());
    }
    let out = m.bilstm_forward(&rand_tensor(&mut rng, &[6, 3], 5.0)).unwrap();
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn masked_tokens_do_not_change_text_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = TextEncoderConfig {
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        d_ff: 16,
        ..TextEncoderConfig::new(20, 10)
    };
    let enc = TextEncoder::new(cfg, &mut rng).unwrap();
    let mask: Vec<u8> = (0..10).map(|i| u8::from(i < 6)).collect();
    let a = TokenSequence {
        ids: vec![2, 7, 8, 9, 10, 3, 0, 0, 0, 0],
        attention_mask: mask.clone(),
    };
    let mut b = a.clone();
    b.ids[6..].copy_from_slice(&[11, 12, 13, 14]);
    assert_eq!(enc.text_forward(&a).unwrap(), enc.text_forward(&b).unwrap());
    let mut c = a.clone();
    c.ids[4] = 15;
    assert_ne!(enc.text_forward(&a).unwrap(), enc.text_forward(&c).unwrap());
}

#[test]
fn one_head_with_identity_output_is_single_fusion() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mh = MultiHeadFusion::new(5, 3, 4, 1, &mut rng).unwrap();
    randomize(&mut mh.heads[0], &mut rng, 1.0);
    mh.w_out = Parameter::new(Tensor::identity(4));
    mh.b_out = Parameter::zeros(&[4]);
    let single: FusionParams = mh.heads[0].clone();
    for _ in 0..10 {
        let x_t = rand_tensor(&mut rng, &[5], 1.0);
        let x_a = rand_tensor(&mut rng, &[3], 1.0);
        let (h, _) = fuse_attention(&x_t, &x_a, &single).unwrap();
        let got = distillfuse_model::multi_head_fuse(&x_t, &x_a, &mh).unwrap();
        for (a, b) in got.data().iter().zip(h.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

struct Setup {
    text: TextClassifier,
    audio: AudioClassifier,
    student: StudentModel,
    tokens: Vec<TokenSequence>,
    feats: Vec<Tensor>,
    labels: Vec<usize>,
}

fn setup(seed: u64) -> Setup {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tcfg = TextEncoderConfig {
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        d_ff: 16,
        ..TextEncoderConfig::new(12, 6)
    };
    let text = TextClassifier::new(tcfg, &mut rng).unwrap();
    let audio = AudioClassifier::new(3, 4, &mut rng);
    let student = StudentModel::new(
        &StudentConfig {
            text: tcfg,
            audio_input_dim: 3,
            audio_hidden_dim: 4,
            fusion: FusionKind::MultiHead,
            fusion_heads: 2,
            latent_dim: 5,
        },
        &mut rng,
    )
    .unwrap();
    let tokens = (0..4)
        .map(|_| TokenSequence {
            ids: (0..6).map(|_| rng.gen_range(0..12)).collect(),
            attention_mask: vec![1; 6],
        })
        .collect();
    let feats = (0..4).map(|_| rand_tensor(&mut rng, &[5, 3], 1.0)).collect();
    Setup {
        text,
        audio,
        student,
        tokens,
        feats,
        labels: vec![0, 1, 1, 0],
    }
}

fn step(s: &mut Setup, teachers_from: Option<(&TextClassifier, &AudioClassifier)>, cfg: &DistillConfig, lr: f64) {
    let tokens: Vec<&TokenSequence> = s.tokens.iter().collect();
    let audio: Vec<&Tensor> = s.feats.iter().collect();
    let batch = Batch {
        tokens: &tokens,
        audio: &audio,
        labels: &s.labels,
    };
    let (t, a) = teachers_from.unwrap_or((&s.text, &s.audio));
    let teachers = Teachers { text: t, audio: a };
    let mut opt = Optimizer::new(OptimizerConfig::adam(lr)).unwrap();
    student_train_step(&batch, &teachers, &mut s.student, cfg, &mut opt).unwrap();
}

#[test]
fn student_steps_leave_teachers_untouched() {
    let mut s = setup(5);
    let (t0, a0) = (values(&s.text), values(&s.audio));
    let before = values(&s.student);
    for _ in 0..3 {
        step(&mut s, None, &DistillConfig::default(), 1e-2);
    }
    assert_eq!(values(&s.text), t0);
    assert_eq!(values(&s.audio), a0);
    assert_ne!(values(&s.student), before);
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let mut s = setup(6);
    let before = values(&s.student);
    step(&mut s, None, &DistillConfig::default(), 0.0);
    assert_eq!(values(&s.student), before);
}

#[test]
fn alpha_zero_ignores_teachers() {
    let cfg = DistillConfig {
        alpha: 0.0,
        ..DistillConfig::default()
    };
    let mut a = setup(7);
    let mut b = setup(7);
    let other = setup(8);
    step(&mut a, None, &cfg, 1e-2);
    step(&mut b, Some((&other.text, &other.audio)), &cfg, 1e-2);
    assert_eq!(values(&a.student), values(&b.student));
}

#[test]
fn fake_quant_gradient_is_straight_through_inside_range() {
    let w = Parameter::new(Tensor::vector(vec![-1.0, -0.3, 0.0, 0.2, 0.9, 2.5]));
    // asymmetric over [-1, 1]: 2.5 clips
    let p = QuantParams {
        scale: 2.0 / 255.0,
        zero_point: 128,
        bits: 8,
        scheme: QuantScheme::Asymmetric,
    };
    let g = Graph::new();
    let q = fake_quant(&g, g.param(&w), &p).unwrap();
    let r = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let loss = g.sum(g.mul(q, r).unwrap());
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.param(w.id()).unwrap().data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 0.0]);
    assert!((g.value(q).data()[5] - p.value(255)).abs() < 1e-15);
}

#[test]
fn quantized_bilstm_is_small_and_stable() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let m = BiLstm::new(13, 32, &mut rng);
    for scheme in [QuantScheme::Symmetric, QuantScheme::Asymmetric] {
        let q = quantize_model(&m, scheme).unwrap();
        assert!(q.storage_bytes() * 4 < q.float_storage_bytes(), "{} vs {}", q.storage_bytes(), q.float_storage_bytes());
        if scheme == QuantScheme::Symmetric {
            // requantizing the dequantized model reproduces the same codes
            let again = quantize_model(&q.dequantized(), scheme).unwrap();
            for ((_, a), (_, b)) in q.matrices.iter().zip(&again.matrices) {
                assert_eq!(a.codes(), b.codes());
            }
        }
        for (name, qm) in &q.matrices {
            let p = m.named_params().into_iter().find(|(n, _)| n == name).unwrap().1;
            assert_eq!(calibrate(&p.value, scheme).unwrap(), qm.params);
        }
    }
}

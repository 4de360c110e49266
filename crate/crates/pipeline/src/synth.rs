//! Synthetic interview corpus in the dataset layout.
//!
//! Each participant has two hidden binary cues. The text cue picks which of
//! two word sets appears in the participant's answers; the audio cue picks
//! which of two tones dominates the voiced part of the clip. The label is
//! their XOR, so neither modality alone carries information about it.

use std::fmt::Write as _;
use std::path::Path;

use distillfuse_audio::{FirFilter, WaveForm};
use distillfuse_text::{write_transcript, TranscriptTurn, INTERVIEWER};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{load_dataset, DatasetManifest, AUDIO_SUFFIX, LABEL_HEADER, TRANSCRIPT_SUFFIX};
use crate::error::{IoContext, PipelineError, Result};

pub const MIN_PARTICIPANTS: usize = 20;
pub const FIRST_ID: u32 = 300;
pub const SYNTH_SAMPLE_RATE: u32 = 22_050;
pub const LABEL_FILE: &str = "labels.csv";

/// Words present when the text cue is 1.
pub const CUE_WORDS_ON: [&str; 6] = ["exhausted", "hopeless", "sleepless", "worthless", "drained", "numb"];
/// Words present when the text cue is 0.
pub const CUE_WORDS_OFF: [&str; 6] = ["cheerful", "rested", "hopeful", "energetic", "content", "motivated"];

const FILLER: [&str; 32] = [
    "i", "think", "the", "day", "was", "work", "went", "my", "family", "and", "to", "it", "really", "okay",
    "weekend", "walk", "friends", "home", "maybe", "just", "like", "some", "time", "school", "city", "we",
    "often", "talk", "about", "things", "lately", "usually",
];

const QUESTIONS: [&str; 4] = [
    "how are you doing today",
    "tell me about your last week",
    "what do you do to relax",
    "how have you been sleeping",
];

/// Tone frequencies selected by the audio cue (dominant, secondary).
pub const TONES_HZ: [(f64, f64); 2] = [(220.0, 660.0), (660.0, 220.0)];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cues {
    pub text: usize,
    pub audio: usize,
}

impl Cues {
    pub fn label(&self) -> usize {
        self.text ^ self.audio
    }
}

/// Cue pairs for participants `0..n`. The four combinations are dealt
/// round-robin and shuffled, so each occurs `n/4` times (rounded).
pub fn synth_cues(n: usize, seed: u64) -> Vec<Cues> {
    let mut cues: Vec<Cues> = (0..n)
        .map(|i| Cues {
            text: i % 2,
            audio: (i / 2) % 2,
        })
        .collect();
    cues.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    cues
}

fn participant_rng(seed: u64, id: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64 + 1);
    rng
}

fn answer<R: Rng>(rng: &mut R, cue_words: &[&str], n_cues: usize) -> String {
    let len = rng.gen_range(2..=4);
    let mut words: Vec<&str> = (0..len).map(|_| *FILLER.choose(rng).expect("filler")).collect();
    for _ in 0..n_cues {
        let at = rng.gen_range(0..=words.len());
        words.insert(at, cue_words.choose(rng).expect("cue words"));
    }
    words.join(" ")
}

/// Interview with alternating interviewer questions and participant
/// answers. The interviewer also uses cue words from both sets.
pub fn synth_transcript<R: Rng>(rng: &mut R, text_cue: usize) -> Vec<TranscriptTurn> {
    let cue_words: &[&str] = if text_cue == 1 { &CUE_WORDS_ON } else { &CUE_WORDS_OFF };
    let n_answers = 3;
    let cue_turn = rng.gen_range(0..n_answers);
    let mut turns = vec![];
    let mut t = 0.0f64;
    let mut turn = |speaker: &str, text: String, rng: &mut R| {
        let dur = (rng.gen_range(1.0..4.0) * 100.0f64).round() / 100.0;
        turns.push(TranscriptTurn {
            start_time: t,
            stop_time: ((t + dur) * 100.0).round() / 100.0,
            speaker: speaker.into(),
            text,
        });
        t = ((t + dur + 0.5) * 100.0).round() / 100.0;
    };
    for k in 0..n_answers {
        let q = format!(
            "{} do you feel {} or {}",
            QUESTIONS[(k + cue_turn) % QUESTIONS.len()],
            CUE_WORDS_ON.choose(rng).expect("cue words"),
            CUE_WORDS_OFF.choose(rng).expect("cue words"),
        );
        turn(INTERVIEWER, q, rng);
        let a = answer(rng, cue_words, 2);
        turn("Participant", a, rng);
    }
    turns
}

/// Quiet lead-in, a voiced tone mixture with band-limited noise, quiet
/// tail.
pub fn synth_audio<R: Rng>(rng: &mut R, audio_cue: usize, noise_filter: &FirFilter) -> Result<WaveForm> {
    let rate = SYNTH_SAMPLE_RATE as f64;
    let lead = (rng.gen_range(0.2..0.35) * rate) as usize;
    let voiced = (rng.gen_range(0.9..1.1) * rate) as usize;
    let tail = (rng.gen_range(0.2..0.35) * rate) as usize;
    let n = lead + voiced + tail;

    let (f_dom, f_sec) = TONES_HZ[audio_cue];
    let jitter = rng.gen_range(0.97..1.03);
    let amp = rng.gen_range(0.25..0.45);
    let sec_amp = amp * rng.gen_range(0.2..0.35);
    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let wobble_hz = rng.gen_range(3.0..5.0);

    let white: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let noise = noise_filter.apply(&WaveForm::new(white, SYNTH_SAMPLE_RATE)?)?.samples;

    let tau = std::f64::consts::TAU;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / rate;
            let s = if (lead..lead + voiced).contains(&i) {
                let env = 0.8 + 0.2 * (tau * wobble_hz * t).sin();
                env * (amp * (tau * f_dom * jitter * t + phase).sin() + sec_amp * (tau * f_sec * jitter * t).sin())
                    + 0.05 * noise[i]
            } else {
                0.003 * noise[i]
            };
            s.clamp(-1.0, 1.0)
        })
        .collect();
    Ok(WaveForm::new(samples, SYNTH_SAMPLE_RATE)?)
}

/// Writes `n` participants (ids from 300) plus `labels.csv` into `out_dir`
/// and loads the result.
pub fn synth_generate(n: usize, seed: u64, out_dir: &Path) -> Result<DatasetManifest> {
    if n < MIN_PARTICIPANTS {
        return Err(PipelineError::Config(format!(
            "synth needs at least {MIN_PARTICIPANTS} participants, got {n}"
        )));
    }
    std::fs::create_dir_all(out_dir).at(out_dir)?;
    let noise_filter = FirFilter::lowpass(3000.0, SYNTH_SAMPLE_RATE, 63)?;
    let mut labels = format!("{LABEL_HEADER}\n");
    for (i, cues) in synth_cues(n, seed).into_iter().enumerate() {
        let id = FIRST_ID + i as u32;
        let mut rng = participant_rng(seed, id);
        let transcript = write_transcript(&synth_transcript(&mut rng, cues.text));
        let path = out_dir.join(format!("{id}{TRANSCRIPT_SUFFIX}"));
        std::fs::write(&path, transcript).at(&path)?;
        let path = out_dir.join(format!("{id}{AUDIO_SUFFIX}"));
        synth_audio(&mut rng, cues.audio, &noise_filter)?
            .write_file(&path)
            .map_err(|e| match e {
                distillfuse_audio::AudioError::Io(source) => PipelineError::Io { path: path.clone(), source },
                other => other.into(),
            })?;
        let _ = writeln!(labels, "{id},{}", cues.label());
    }
    let path = out_dir.join(LABEL_FILE);
    std::fs::write(&path, labels).at(&path)?;
    load_dataset(out_dir, LABEL_FILE, seed)
}

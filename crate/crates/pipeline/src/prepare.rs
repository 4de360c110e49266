//! Feature cache: MFCC files, participant text, vocabulary and
//! normalization statistics, plus the loader that turns a cache into model
//! inputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use distillfuse_audio::{AudioFrontend, FeatureSequence, FrontendConfig, WaveForm};
use distillfuse_core::Tensor;
use distillfuse_text::{read_transcript, TokenSequence, Vocabulary, INTERVIEWER};
use rayon::prelude::*;

use crate::dataset::{DatasetManifest, Split};
use crate::error::{IoContext, PipelineError, Result};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const TEXT_FILE: &str = "text.tsv";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const NORM_FILE: &str = "norm.txt";
pub const THREADS_ENV: &str = "DISTILLFUSE_THREADS";

const STD_FLOOR: f64 = 1e-8;

/// Per-coefficient standardization fitted on training features.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureNorm {
    pub fn fit<'a>(seqs: impl IntoIterator<Item = &'a FeatureSequence>) -> Result<Self> {
        let mut sum: Vec<f64> = vec![];
        let mut sq: Vec<f64> = vec![];
        let mut count = 0usize;
        for s in seqs {
            if sum.is_empty() {
                sum = vec![0.0; s.n_coeffs()];
                sq = vec![0.0; s.n_coeffs()];
            }
            for t in 0..s.n_frames() {
                for (c, &v) in s.row(t).iter().enumerate() {
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
            count += s.n_frames();
        }
        if count == 0 {
            return Err(PipelineError::Config("no training frames to fit normalization".into()));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n - m * m).max(0.0).sqrt().max(STD_FLOOR))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, s: &FeatureSequence) -> Result<Tensor> {
        if s.n_coeffs() != self.mean.len() {
            return Err(PipelineError::Config(format!(
                "features have {} coefficients, normalization expects {}",
                s.n_coeffs(),
                self.mean.len()
            )));
        }
        let c = s.n_coeffs();
        let data = s
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % c]) / self.std[i % c])
            .collect();
        Ok(Tensor::matrix(s.n_frames(), c, data)?)
    }

    pub fn to_text(&self) -> String {
        self.mean.iter().zip(&self.std).map(|(m, s)| format!("{m} {s}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut norm = Self { mean: vec![], std: vec![] };
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| PipelineError::Config(format!("normalization line {line:?}: {e}")))?;
            match vals[..] {
                [m, s] if s > 0.0 => {
                    norm.mean.push(m);
                    norm.std.push(s);
                }
                _ => return Err(PipelineError::Config(format!("normalization line {line:?}"))),
            }
        }
        Ok(norm)
    }
}

/// Thread pool honouring `DISTILLFUSE_THREADS`.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| PipelineError::Config(format!("{THREADS_ENV}={v:?} is not a positive integer")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| PipelineError::Config(format!("thread pool: {e}")))
}

fn io_or(path: &Path, e: distillfuse_audio::AudioError) -> PipelineError {
    match e {
        distillfuse_audio::AudioError::Io(source) => PipelineError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other.into(),
    }
}

/// Runs the audio and text front ends for every participant and writes the
/// cache into `out`. Vocabulary and normalization use the training split
/// only.
pub fn preprocess(manifest: &DatasetManifest, target_frames: usize, min_count: usize, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).at(out)?;
    let frontend = AudioFrontend::new(FrontendConfig {
        target_frames,
        ..FrontendConfig::default()
    })?;
    let work = |e: &crate::dataset::Entry| -> Result<(FeatureSequence, String)> {
        let wave = WaveForm::read_file(&e.audio).map_err(|err| io_or(&e.audio, err))?;
        let feats = frontend.process(&wave)?;
        let text = read_transcript(&e.transcript, INTERVIEWER).map_err(|err| match err {
            distillfuse_text::TextError::Io(source) => PipelineError::Io {
                path: e.transcript.clone(),
                source,
            },
            other => PipelineError::Data {
                path: e.transcript.clone(),
                detail: other.to_string(),
            },
        })?;
        Ok((feats, text))
    };
    let results: Vec<(FeatureSequence, String)> =
        thread_pool()?.install(|| manifest.entries.par_iter().map(work).collect::<Result<_>>())?;

    let mut manifest_csv = String::from("id,label,split\n");
    let mut text_tsv = String::new();
    for (e, (feats, text)) in manifest.entries.iter().zip(&results) {
        let path = out.join(format!("{}.dfmf", e.id));
        feats.write_file(&path).map_err(|err| io_or(&path, err))?;
        let _ = writeln!(manifest_csv, "{},{},{}", e.id, e.label, e.split);
        let _ = writeln!(text_tsv, "{}\t{}", e.id, text.replace(['\t', '\n'], " "));
    }
    let train: Vec<usize> = (0..manifest.entries.len())
        .filter(|&i| manifest.entries[i].split == Split::Train)
        .collect();
    let corpus: Vec<&str> = train.iter().map(|&i| results[i].1.as_str()).collect();
    let vocab = Vocabulary::build(&corpus, min_count);
    let norm = FeatureNorm::fit(train.iter().map(|&i| &results[i].0))?;

    for (name, body) in [
        (MANIFEST_FILE, manifest_csv),
        (TEXT_FILE, text_tsv),
        (VOCAB_FILE, vocab.to_text()),
        (NORM_FILE, norm.to_text()),
    ] {
        let path = out.join(name);
        std::fs::write(&path, body).at(&path)?;
    }
    Ok(())
}

/// One participant ready for the models.
#[derive(Clone, Debug)]
pub struct Example {
    pub id: u32,
    pub label: usize,
    pub split: Split,
    pub tokens: TokenSequence,
    /// Standardized `frames x coefficients`.
    pub audio: Tensor,
}

#[derive(Clone, Debug)]
pub struct PreparedData {
    pub examples: Vec<Example>,
    pub vocab: Vocabulary,
    pub norm: FeatureNorm,
}

impl PreparedData {
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.examples.len()).filter(|&i| self.examples[i].split == split).collect()
    }

    pub fn audio_dim(&self) -> usize {
        self.norm.mean.len()
    }
}

fn read(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    std::fs::read_to_string(&path).at(path)
}

fn data_err(dir: &Path, name: &str, detail: String) -> PipelineError {
    PipelineError::Data {
        path: dir.join(name),
        detail,
    }
}

/// Loads a cache written by [`preprocess`], encoding text to `max_len`.
pub fn load_prepared(dir: &Path, max_len: usize) -> Result<PreparedData> {
    let vocab = Vocabulary::from_text(&read(dir, VOCAB_FILE)?)?;
    let norm = FeatureNorm::from_text(&read(dir, NORM_FILE)?)?;
    let mut texts = BTreeMap::new();
    for line in read(dir, TEXT_FILE)?.lines() {
        let (id, text) = line
            .split_once('\t')
            .ok_or_else(|| data_err(dir, TEXT_FILE, format!("bad line {line:?}")))?;
        texts.insert(id.to_string(), text.to_string());
    }
    let mut examples = vec![];
    for line in read(dir, MANIFEST_FILE)?.lines().skip(1) {
        let bad = || data_err(dir, MANIFEST_FILE, format!("bad line {line:?}"));
        let cols: Vec<&str> = line.split(',').collect();
        let [id, label, split] = cols[..] else { return Err(bad()) };
        let text = texts.get(id).ok_or_else(bad)?;
        let name = format!("{id}.dfmf");
        let feats = FeatureSequence::read_file(dir.join(&name)).map_err(|e| io_or(&dir.join(&name), e))?;
        examples.push(Example {
            id: id.parse().map_err(|_| bad())?,
            label: label.parse().ok().filter(|&y: &usize| y < 2).ok_or_else(bad)?,
            split: split.parse()?,
            tokens: vocab.encode(text, max_len)?,
            audio: norm.apply(&feats)?,
        });
    }
    if examples.is_empty() {
        return Err(PipelineError::EmptyDataset(dir.to_path_buf()));
    }
    Ok(PreparedData { examples, vocab, norm })
}

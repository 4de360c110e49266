//! Subcommands. Each run creates `<out_dir>/<command>-<unix millis>/`
//! holding `config.txt` and everything the command produces.

use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use distillfuse_model::{FusionKind, Teachers};

use crate::checkpoint::{load_model, save_model, Model};
use crate::config::RunConfig;
use crate::dataset::{load_dataset, Split};
use crate::error::{IoContext, PipelineError, Result};
use crate::evaluate::evaluate_model;
use crate::prepare::{load_prepared, preprocess, PreparedData};
use crate::synth::synth_generate;
use crate::train::{audio_probs, qat_finetune, train_audio_teacher, train_student, train_text_teacher, TrainLog};

pub const CONFIG_FILE: &str = "config.txt";
pub const LOG_FILE: &str = "train_log.txt";
pub const TEXT_TEACHER_FILE: &str = "text_teacher.dfck";
pub const AUDIO_TEACHER_FILE: &str = "audio_teacher.dfck";
pub const STUDENT_FILE: &str = "student.dfck";
pub const QAT_FLOAT_FILE: &str = "audio_teacher_qat.dfck";
pub const QUANTIZED_FILE: &str = "audio_teacher_int8.dfck";
pub const QUANT_SUMMARY_FILE: &str = "quantization.txt";
pub const ABLATION_FILE: &str = "ablation.tsv";
pub const FEATURES_SUBDIR: &str = "features";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Synth,
    Preprocess,
    TrainTextTeacher,
    TrainAudioTeacher,
    TrainStudent,
    Quantize,
    Evaluate,
    Ablate,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::Synth,
        Command::Preprocess,
        Command::TrainTextTeacher,
        Command::TrainAudioTeacher,
        Command::TrainStudent,
        Command::Quantize,
        Command::Evaluate,
        Command::Ablate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Preprocess => "preprocess",
            Command::TrainTextTeacher => "train-text-teacher",
            Command::TrainAudioTeacher => "train-audio-teacher",
            Command::TrainStudent => "train-student",
            Command::Quantize => "quantize",
            Command::Evaluate => "evaluate",
            Command::Ablate => "ablate",
        }
    }

    pub fn about(self) -> &'static str {
        match self {
            Command::Synth => "Generate a synthetic corpus into data_dir",
            Command::Preprocess => "Extract MFCC features and build the vocabulary",
            Command::TrainTextTeacher => "Fine-tune the text teacher with LoRA",
            Command::TrainAudioTeacher => "Train the BiLSTM audio teacher",
            Command::TrainStudent => "Distill both teachers into the fused student",
            Command::Quantize => "QAT fine-tune the audio teacher and store int8 weights",
            Command::Evaluate => "Score a checkpoint on the test split",
            Command::Ablate => "Train and score the ablation grid",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| PipelineError::Usage(format!("unknown subcommand {s:?}")))
    }
}

/// Creates a fresh run directory and writes the resolved config into it.
pub fn create_run_dir(cfg: &RunConfig, cmd: Command) -> Result<PathBuf> {
    let base = Path::new(&cfg.out_dir);
    std::fs::create_dir_all(base).at(base)?;
    let millis = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0);
    let stem = format!("{cmd}-{millis}");
    let mut dir = base.join(&stem);
    let mut k = 1;
    loop {
        match std::fs::create_dir(&dir) {
            Ok(()) => break,
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                dir = base.join(format!("{stem}-{k}"));
                k += 1;
            }
            Err(e) => return Err(e).at(&dir),
        }
    }
    let path = dir.join(CONFIG_FILE);
    std::fs::write(&path, cfg.to_text()).at(&path)?;
    Ok(dir)
}

fn required<'a>(value: &'a str, key: &str, cmd: Command) -> Result<&'a Path> {
    if value.is_empty() {
        Err(PipelineError::Config(format!("{cmd} needs {key} to be set")))
    } else {
        Ok(Path::new(value))
    }
}

fn write(dir: &Path, name: &str, body: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, body).at(path)
}

fn load_data(cfg: &RunConfig, cmd: Command) -> Result<PreparedData> {
    load_prepared(required(&cfg.features_dir, "features_dir", cmd)?, cfg.max_len)
}

fn load_text_teacher(cfg: &RunConfig, cmd: Command) -> Result<distillfuse_model::TextClassifier> {
    let path = required(&cfg.text_teacher, "text_teacher", cmd)?;
    match load_model(path)? {
        Model::TextTeacher(m) => Ok(m),
        other => Err(PipelineError::Config(format!(
            "{} holds a {:?} model, not a text teacher",
            path.display(),
            other.kind()
        ))),
    }
}

fn load_audio_teacher(cfg: &RunConfig, cmd: Command) -> Result<distillfuse_model::AudioClassifier> {
    let path = required(&cfg.audio_teacher, "audio_teacher", cmd)?;
    match load_model(path)? {
        Model::AudioTeacher(m) => Ok(m),
        other => Err(PipelineError::Config(format!(
            "{} holds a {:?} model, not an audio teacher",
            path.display(),
            other.kind()
        ))),
    }
}

/// Fraction of `idx` on which two audio models predict the same class.
pub fn agreement(
    a: &distillfuse_model::AudioClassifier,
    b: &distillfuse_model::AudioClassifier,
    data: &PreparedData,
    idx: &[usize],
) -> Result<f64> {
    let pa = audio_probs(a, data, idx)?;
    let pb = audio_probs(b, data, idx)?;
    let same = pa.iter().zip(&pb).filter(|(x, y)| (x[1] > x[0]) == (y[1] > y[0])).count();
    Ok(same as f64 / idx.len().max(1) as f64)
}

/// One row of the ablation table.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub name: String,
    pub fusion: String,
    pub alpha: String,
    pub report: distillfuse_eval::MetricsReport,
}

/// The grid: both unimodal teachers, then students with multi-head and
/// single-head fusion at every alpha in `ablate_alphas`.
pub fn ablation_grid(
    cfg: &RunConfig,
    data: &PreparedData,
    text: &distillfuse_model::TextClassifier,
    audio: &distillfuse_model::AudioClassifier,
    log: &mut TrainLog,
) -> Result<Vec<AblationRow>> {
    let mut rows = vec![
        AblationRow {
            name: "text_teacher".into(),
            fusion: "-".into(),
            alpha: "-".into(),
            report: evaluate_model(&Model::TextTeacher(text.clone()), data, Split::Test)?.report,
        },
        AblationRow {
            name: "audio_teacher".into(),
            fusion: "-".into(),
            alpha: "-".into(),
            report: evaluate_model(&Model::AudioTeacher(audio.clone()), data, Split::Test)?.report,
        },
    ];
    let teachers = Teachers { text, audio };
    for fusion in [FusionKind::MultiHead, FusionKind::Attention] {
        for alpha in cfg.alphas()? {
            let run_cfg = RunConfig {
                fusion,
                alpha,
                ..cfg.clone()
            };
            let student = train_student(data, &teachers, &run_cfg, log)?;
            rows.push(AblationRow {
                name: format!("student_{fusion}_alpha{alpha}"),
                fusion: fusion.to_string(),
                alpha: alpha.to_string(),
                report: evaluate_model(&Model::Student(student), data, Split::Test)?.report,
            });
        }
    }
    Ok(rows)
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = String::from("config\tfusion\talpha\taccuracy\tprecision\trecall\tf1\tauc\n");
    for r in rows {
        let m = &r.report;
        let auc = m.auc.map_or("undefined".to_string(), |a| a.to_string());
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{auc}",
            r.name, r.fusion, r.alpha, m.accuracy, m.precision_weighted, m.recall_weighted, m.f1_weighted
        );
    }
    s
}

/// Runs `cmd` and returns its run directory.
pub fn run_command(cmd: Command, cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let dir = create_run_dir(cfg, cmd)?;
    let mut log = TrainLog::default();
    match cmd {
        Command::Synth => {
            let m = synth_generate(cfg.n, cfg.seed, Path::new(&cfg.data_dir))?;
            let ones = m.entries.iter().filter(|e| e.label == 1).count();
            write(
                &dir,
                "synth.txt",
                &format!("data_dir={}\nparticipants={}\nlabel1={ones}\n", cfg.data_dir, m.entries.len()),
            )?;
        }
        Command::Preprocess => {
            let m = load_dataset(Path::new(&cfg.data_dir), &cfg.label_file, cfg.seed)?;
            preprocess(&m, cfg.target_frames, cfg.min_count, &dir.join(FEATURES_SUBDIR))?;
            let warnings: String = m.warnings.iter().map(|w| format!("{w}\n")).collect();
            write(&dir, "warnings.txt", &warnings)?;
        }
        Command::TrainTextTeacher => {
            let data = load_data(cfg, cmd)?;
            let m = train_text_teacher(&data, cfg, &mut log)?;
            save_model(&Model::TextTeacher(m), &dir.join(TEXT_TEACHER_FILE))?;
        }
        Command::TrainAudioTeacher => {
            let data = load_data(cfg, cmd)?;
            let m = train_audio_teacher(&data, cfg, &mut log)?;
            save_model(&Model::AudioTeacher(m), &dir.join(AUDIO_TEACHER_FILE))?;
        }
        Command::TrainStudent => {
            let data = load_data(cfg, cmd)?;
            let text = load_text_teacher(cfg, cmd)?;
            let audio = load_audio_teacher(cfg, cmd)?;
            let teachers = Teachers {
                text: &text,
                audio: &audio,
            };
            let m = train_student(&data, &teachers, cfg, &mut log)?;
            save_model(&Model::Student(m), &dir.join(STUDENT_FILE))?;
        }
        Command::Quantize => {
            let data = load_data(cfg, cmd)?;
            let teacher = load_audio_teacher(cfg, cmd)?;
            let (qat_float, quantized) = qat_finetune(&teacher, &data, cfg, &mut log)?;
            let val = data.indices(Split::Validation);
            let agree = agreement(&teacher, &quantized.dequantized(), &data, &val)?;
            save_model(&Model::AudioTeacher(qat_float), &dir.join(QAT_FLOAT_FILE))?;
            save_model(&Model::QuantizedAudioTeacher(quantized.clone()), &dir.join(QUANTIZED_FILE))?;
            write(
                &dir,
                QUANT_SUMMARY_FILE,
                &format!(
                    "scheme={}\nstorage_bytes={}\nfloat_storage_bytes={}\nvalidation_agreement={agree}\n",
                    cfg.quant_scheme,
                    quantized.lstm.storage_bytes(),
                    quantized.lstm.float_storage_bytes()
                ),
            )?;
        }
        Command::Evaluate => {
            let data = load_data(cfg, cmd)?;
            let model = load_model(required(&cfg.checkpoint, "checkpoint", cmd)?)?;
            evaluate_model(&model, &data, Split::Test)?.write(&dir)?;
        }
        Command::Ablate => {
            let data = load_data(cfg, cmd)?;
            let text = load_text_teacher(cfg, cmd)?;
            let audio = load_audio_teacher(cfg, cmd)?;
            let rows = ablation_grid(cfg, &data, &text, &audio, &mut log)?;
            write(&dir, ABLATION_FILE, &ablation_table(&rows))?;
        }
    }
    if !log.lines.is_empty() {
        write(&dir, LOG_FILE, &log.to_text())?;
    }
    Ok(dir)
}

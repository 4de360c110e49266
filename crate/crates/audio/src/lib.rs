//! Audio front end: WAV I/O, resampling, FIR low-pass, voice activity
//! detection and MFCC features normalized to a fixed number of frames.

pub mod error;
pub mod features;
pub mod fir;
pub mod mfcc;
pub mod resample;
pub mod vad;
pub mod wave;

pub use error::{AudioError, Result};
pub use features::{fix_length_and_batch, FeatureSequence, DEFAULT_TARGET_FRAMES};
pub use fir::{lowpass_filter, FirFilter};
pub use mfcc::{mfcc_extract, MfccConfig, MfccExtractor};
pub use resample::resample;
pub use vad::{vad_segments, voiced_audio, VadConfig};
pub use wave::WaveForm;

pub const TARGET_SAMPLE_RATE: u32 = 16_000;

#[derive(Clone, Debug, PartialEq)]
pub struct FrontendConfig {
    pub sample_rate: u32,
    pub cutoff_hz: f64,
    pub taps: usize,
    pub vad: VadConfig,
    pub mfcc: MfccConfig,
    pub target_frames: usize,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            sample_rate: TARGET_SAMPLE_RATE,
            cutoff_hz: fir::DEFAULT_CUTOFF_HZ,
            taps: fir::DEFAULT_TAPS,
            vad: VadConfig::default(),
            mfcc: MfccConfig::default(),
            target_frames: DEFAULT_TARGET_FRAMES,
        }
    }
}

/// Full chain: resample, low-pass, keep voiced audio, MFCC, fix length.
///
/// A clip with no voiced region keeps its filtered audio, and audio shorter
/// than one analysis window is zero-padded to one window.
pub struct AudioFrontend {
    cfg: FrontendConfig,
    filter: FirFilter,
    mfcc: MfccExtractor,
}

impl AudioFrontend {
    pub fn new(cfg: FrontendConfig) -> Result<Self> {
        cfg.vad.validate()?;
        if cfg.target_frames == 0 {
            return Err(AudioError::Config("target_frames must be positive".into()));
        }
        let filter = FirFilter::lowpass(cfg.cutoff_hz, cfg.sample_rate, cfg.taps)?;
        let mfcc = MfccExtractor::new(cfg.mfcc, cfg.sample_rate)?;
        Ok(Self { cfg, filter, mfcc })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.cfg
    }

    pub fn process(&self, w: &WaveForm) -> Result<FeatureSequence> {
        let filtered = self.filter.apply(&resample(w, self.cfg.sample_rate)?)?;
        let mut voiced = voiced_audio(&filtered, &self.cfg.vad)?.unwrap_or(filtered);
        if voiced.samples.len() < self.cfg.mfcc.n_fft {
            voiced.samples.resize(self.cfg.mfcc.n_fft, 0.0);
        }
        Ok(self.mfcc.extract(&voiced)?.fix_length(self.cfg.target_frames))
    }
}

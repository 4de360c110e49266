//! Mel-frequency cepstral coefficients.
//!
//! Per frame: Hamming window, magnitude spectrum, triangular filters on the
//! HTK mel scale, natural log with a floor, orthonormal DCT-II.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{AudioError, Result};
use crate::features::FeatureSequence;
use crate::wave::WaveForm;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MfccConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub n_coeffs: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            n_fft: 512,
            hop: 160,
            n_mels: 26,
            n_coeffs: 13,
            fmin: 0.0,
            fmax: 7000.0,
            log_floor: 1e-10,
        }
    }
}

impl MfccConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let bad = |m: String| Err(AudioError::Config(m));
        if !self.n_fft.is_power_of_two() || self.n_fft < 2 {
            return bad(format!("n_fft {} must be a power of two", self.n_fft));
        }
        if self.hop == 0 || self.n_mels == 0 || self.n_coeffs == 0 {
            return bad("hop, n_mels and n_coeffs must be positive".into());
        }
        if self.n_coeffs > self.n_mels {
            return bad(format!("n_coeffs {} exceeds n_mels {}", self.n_coeffs, self.n_mels));
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= sample_rate as f64 / 2.0) {
            return bad(format!(
                "need 0 <= fmin < fmax <= {} (got {} / {})",
                sample_rate as f64 / 2.0,
                self.fmin,
                self.fmax
            ));
        }
        if !(self.log_floor > 0.0) {
            return bad("log floor must be positive".into());
        }
        Ok(())
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Precomputed window, filterbank, DCT basis and FFT plan for one sample
/// rate.
pub struct MfccExtractor {
    cfg: MfccConfig,
    sample_rate: u32,
    window: Vec<f64>,
    /// `n_mels` rows over `n_fft / 2 + 1` bins.
    filters: Vec<Vec<f64>>,
    /// `n_coeffs` rows over `n_mels` inputs.
    dct: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
}

impl MfccExtractor {
    pub fn new(cfg: MfccConfig, sample_rate: u32) -> Result<Self> {
        cfg.validate(sample_rate)?;
        let n = cfg.n_fft;
        let window = (0..n)
            .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
            .collect();
        let filters = mel_filterbank(&cfg, sample_rate);
        let m = cfg.n_mels as f64;
        let dct = (0..cfg.n_coeffs)
            .map(|k| {
                let scale = if k == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
                (0..cfg.n_mels)
                    .map(|j| scale * (PI * k as f64 * (j as f64 + 0.5) / m).cos())
                    .collect()
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(n);
        Ok(Self {
            cfg,
            sample_rate,
            window,
            filters,
            dct,
            fft,
        })
    }

    pub fn config(&self) -> &MfccConfig {
        &self.cfg
    }

    pub fn filters(&self) -> &[Vec<f64>] {
        &self.filters
    }

    pub fn num_frames(&self, len: usize) -> Result<usize> {
        if len < self.cfg.n_fft {
            return Err(AudioError::ShortInput {
                len,
                needed: self.cfg.n_fft,
            });
        }
        Ok(1 + (len - self.cfg.n_fft) / self.cfg.hop)
    }

    fn check_rate(&self, w: &WaveForm) -> Result<()> {
        if w.sample_rate != self.sample_rate {
            return Err(AudioError::Config(format!(
                "extractor built for {} Hz, got {} Hz",
                self.sample_rate, w.sample_rate
            )));
        }
        Ok(())
    }

    /// Mel filterbank energies (before the log), one row per frame.
    pub fn mel_energies(&self, w: &WaveForm) -> Result<Vec<Vec<f64>>> {
        self.check_rate(w)?;
        let frames = self.num_frames(w.samples.len())?;
        let n = self.cfg.n_fft;
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut out = Vec::with_capacity(frames);
        for f in 0..frames {
            let start = f * self.cfg.hop;
            for (i, c) in buf.iter_mut().enumerate() {
                *c = Complex::new(w.samples[start + i] * self.window[i], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            let mag: Vec<f64> = buf[..n / 2 + 1].iter().map(|c| c.norm()).collect();
            out.push(
                self.filters
                    .iter()
                    .map(|row| row.iter().zip(&mag).map(|(w, m)| w * m).sum())
                    .collect(),
            );
        }
        Ok(out)
    }

    /// Cepstral coefficients of `log(max(energy, floor))`.
    pub fn cepstrum(&self, mel: &[f64]) -> Vec<f64> {
        let logs: Vec<f64> = mel.iter().map(|&e| e.max(self.cfg.log_floor).ln()).collect();
        self.dct
            .iter()
            .map(|row| row.iter().zip(&logs).map(|(b, l)| b * l).sum())
            .collect()
    }

    pub fn extract(&self, w: &WaveForm) -> Result<FeatureSequence> {
        let mel = self.mel_energies(w)?;
        let rows: Vec<Vec<f64>> = mel.iter().map(|m| self.cepstrum(m)).collect();
        Ok(FeatureSequence::from_rows(&rows, self.cfg.n_coeffs))
    }
}

/// Triangular filters with HTK-mel-spaced edges, evaluated at the exact bin
/// frequencies `k * sample_rate / n_fft`.
fn mel_filterbank(cfg: &MfccConfig, sample_rate: u32) -> Vec<Vec<f64>> {
    let (mlo, mhi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bins = cfg.n_fft / 2 + 1;
    (0..cfg.n_mels)
        .map(|j| {
            let (lo, c, hi) = (edges[j], edges[j + 1], edges[j + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * sample_rate as f64 / cfg.n_fft as f64;
                    if f >= lo && f <= c {
                        (f - lo) / (c - lo)
                    } else if f > c && f <= hi {
                        (hi - f) / (hi - c)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// One-shot extraction with a fresh [`MfccExtractor`].
pub fn mfcc_extract(w: &WaveForm, cfg: &MfccConfig) -> Result<FeatureSequence> {
    MfccExtractor::new(*cfg, w.sample_rate)?.extract(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_window_gives_one_frame() {
        let w = WaveForm::new(vec![0.1; 512], 16000).unwrap();
        let f = mfcc_extract(&w, &MfccConfig::default()).unwrap();
        assert_eq!(f.n_frames(), 1);
        assert_eq!(f.n_coeffs(), 13);
    }

    #[test]
    fn short_clip_rejected() {
        let w = WaveForm::new(vec![0.1; 511], 16000).unwrap();
        assert!(matches!(
            mfcc_extract(&w, &MfccConfig::default()),
            Err(AudioError::ShortInput { len: 511, needed: 512 })
        ));
    }

    #[test]
    fn silence_is_dct_of_log_floor() {
        let w = WaveForm::new(vec![0.0; 2000], 16000).unwrap();
        let f = mfcc_extract(&w, &MfccConfig::default()).unwrap();
        let m = 26.0f64;
        let c0 = (1.0 / m).sqrt() * m * 1e-10f64.ln();
        for r in 0..f.n_frames() {
            let row = f.row(r);
            assert!((row[0] - c0).abs() < 1e-9);
            assert!(row[1..].iter().all(|v| v.abs() < 1e-9));
        }
    }

    #[test]
    fn mel_scale_round_trip() {
        for hz in [0.0, 440.0, 1000.0, 7000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = MfccConfig {
            fmax: 9000.0,
            ..MfccConfig::default()
        };
        assert!(MfccExtractor::new(cfg, 16000).is_err());
        let cfg = MfccConfig {
            n_coeffs: 30,
            ..MfccConfig::default()
        };
        assert!(MfccExtractor::new(cfg, 16000).is_err());
    }
}

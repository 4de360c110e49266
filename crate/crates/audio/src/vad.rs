//! Frame-energy voice activity detection.
//!
//! A frame is voiced when its RMS exceeds `energy_threshold_ratio` times the
//! largest frame RMS of the clip, which makes the decision invariant to
//! overall gain. Frames overlap (`frame_ms > hop_ms`), so frame decisions are
//! mapped back to samples conservatively: a sample is voiced only when every
//! frame that contains it is voiced. This keeps segment edges within one hop
//! of true onsets and offsets even though a frame that merely grazes a sound
//! is itself voiced.

use crate::error::{AudioError, Result};
use crate::wave::WaveForm;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VadConfig {
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub energy_threshold_ratio: f64,
}

impl Default for VadConfig {
    fn default() -> Self {
        Self {
            frame_ms: 25.0,
            hop_ms: 10.0,
            energy_threshold_ratio: 0.1,
        }
    }
}

impl VadConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.hop_ms > 0.0 && self.frame_ms >= self.hop_ms) {
            return Err(AudioError::Config(format!(
                "VAD needs frame_ms >= hop_ms > 0 (got {} / {})",
                self.frame_ms, self.hop_ms
            )));
        }
        if !(self.energy_threshold_ratio > 0.0 && self.energy_threshold_ratio < 1.0) {
            return Err(AudioError::Config(format!(
                "energy_threshold_ratio {} outside (0, 1)",
                self.energy_threshold_ratio
            )));
        }
        Ok(())
    }

    /// Frame and hop lengths in samples at `rate`.
    pub fn frame_hop(&self, rate: u32) -> (usize, usize) {
        let frame = ((self.frame_ms * rate as f64 / 1000.0).round() as usize).max(1);
        let hop = ((self.hop_ms * rate as f64 / 1000.0).round() as usize).clamp(1, frame);
        (frame, hop)
    }
}

/// Half-open sample ranges `[start, end)` of voiced audio, in order.
pub fn vad_segments(w: &WaveForm, cfg: &VadConfig) -> Result<Vec<(usize, usize)>> {
    cfg.validate()?;
    let n = w.samples.len();
    if n == 0 {
        return Err(AudioError::EmptyInput);
    }
    let (frame, hop) = cfg.frame_hop(w.sample_rate);
    let n_frames = if n <= frame {
        1
    } else {
        (n - frame).div_ceil(hop) + 1
    };
    let rms: Vec<f64> = (0..n_frames)
        .map(|k| {
            let s = k * hop;
            let e = (s + frame).min(n);
            let chunk = &w.samples[s..e];
            (chunk.iter().map(|v| v * v).sum::<f64>() / chunk.len() as f64).sqrt()
        })
        .collect();
    let max_rms = rms.iter().cloned().fold(0.0, f64::max);
    if max_rms <= 0.0 {
        return Ok(vec![]);
    }
    let threshold = cfg.energy_threshold_ratio * max_rms;

    // unvoiced_before[k] = number of unvoiced frames among 0..k
    let mut unvoiced_before = vec![0usize; n_frames + 1];
    for k in 0..n_frames {
        unvoiced_before[k + 1] = unvoiced_before[k] + usize::from(rms[k] <= threshold);
    }

    let mut segments = vec![];
    let mut open: Option<usize> = None;
    for x in 0..n {
        let k_lo = if x + 1 > frame { (x + 1 - frame).div_ceil(hop) } else { 0 };
        let k_hi = (x / hop).min(n_frames - 1);
        let voiced = k_lo <= k_hi && unvoiced_before[k_hi + 1] == unvoiced_before[k_lo];
        match (voiced, open) {
            (true, None) => open = Some(x),
            (false, Some(s)) => {
                segments.push((s, x));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(s) = open {
        segments.push((s, n));
    }
    Ok(segments)
}

/// Concatenates the voiced samples of `w`. Returns `None` when nothing is
/// voiced.
pub fn voiced_audio(w: &WaveForm, cfg: &VadConfig) -> Result<Option<WaveForm>> {
    let segs = vad_segments(w, cfg)?;
    if segs.is_empty() {
        return Ok(None);
    }
    let samples: Vec<f64> = segs
        .iter()
        .flat_map(|&(s, e)| w.samples[s..e].iter().copied())
        .collect();
    Ok(Some(WaveForm::new(samples, w.sample_rate)?))
}

use std::f64::consts::PI;

use crate::error::{AudioError, Result};
use crate::wave::WaveForm;

pub const DEFAULT_TAPS: usize = 101;
pub const DEFAULT_CUTOFF_HZ: f64 = 7000.0;

/// Linear-phase windowed-sinc low-pass filter.
#[derive(Clone, Debug, PartialEq)]
pub struct FirFilter {
    pub coefficients: Vec<f64>,
    pub cutoff_hz: f64,
    pub sample_rate: u32,
    pub design: &'static str,
}

impl FirFilter {
    /// Hamming-windowed sinc normalized to unity DC gain.
    pub fn lowpass(cutoff_hz: f64, sample_rate: u32, taps: usize) -> Result<Self> {
        let nyquist = sample_rate as f64 / 2.0;
        if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
            return Err(AudioError::Config(format!(
                "cutoff {cutoff_hz} Hz must lie in (0, {nyquist}) Hz"
            )));
        }
        if taps.is_multiple_of(2) {
            return Err(AudioError::Config(format!("tap count {taps} must be odd")));
        }
        let fc = cutoff_hz / sample_rate as f64;
        let mid = (taps / 2) as f64;
        let mut h: Vec<f64> = (0..taps)
            .map(|n| {
                let x = n as f64 - mid;
                let sinc = if x == 0.0 {
                    2.0 * fc
                } else {
                    (2.0 * PI * fc * x).sin() / (PI * x)
                };
                let window = if taps == 1 {
                    1.0
                } else {
                    0.54 - 0.46 * (2.0 * PI * n as f64 / (taps - 1) as f64).cos()
                };
                sinc * window
            })
            .collect();
        let sum: f64 = h.iter().sum();
        for v in &mut h {
            *v /= sum;
        }
        // Exact symmetry regardless of rounding in the trig evaluations.
        for i in 0..taps / 2 {
            let avg = 0.5 * (h[i] + h[taps - 1 - i]);
            h[i] = avg;
            h[taps - 1 - i] = avg;
        }
        Ok(Self {
            coefficients: h,
            cutoff_hz,
            sample_rate,
            design: "hamming",
        })
    }

    /// Magnitude of the frequency response at `freq_hz`.
    pub fn magnitude_response(&self, freq_hz: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / self.sample_rate as f64;
        let (re, im) = self
            .coefficients
            .iter()
            .enumerate()
            .fold((0.0, 0.0), |(re, im), (n, &h)| {
                (re + h * (w * n as f64).cos(), im - h * (w * n as f64).sin())
            });
        (re * re + im * im).sqrt()
    }

    /// Direct convolution with "same" output length. The signal is extended
    /// by repeating its edge samples so constants pass unchanged.
    pub fn apply(&self, w: &WaveForm) -> Result<WaveForm> {
        if w.samples.is_empty() {
            return Err(AudioError::EmptyInput);
        }
        if w.sample_rate != self.sample_rate {
            return Err(AudioError::Config(format!(
                "filter designed for {} Hz applied to {} Hz audio",
                self.sample_rate, w.sample_rate
            )));
        }
        let m = self.coefficients.len() / 2;
        let n = w.samples.len();
        let first = w.samples[0];
        let last = w.samples[n - 1];
        let mut padded = Vec::with_capacity(n + 2 * m);
        padded.extend(std::iter::repeat_n(first, m));
        padded.extend_from_slice(&w.samples);
        padded.extend(std::iter::repeat_n(last, m));
        let out = padded
            .windows(self.coefficients.len())
            .map(|win| win.iter().zip(&self.coefficients).map(|(x, h)| x * h).sum())
            .collect();
        WaveForm::new(out, w.sample_rate)
    }
}

/// Applies a freshly designed low-pass filter to `w`.
pub fn lowpass_filter(w: &WaveForm, cutoff_hz: f64, taps: usize) -> Result<WaveForm> {
    FirFilter::lowpass(cutoff_hz, w.sample_rate, taps)?.apply(w)
}

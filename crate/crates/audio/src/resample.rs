use crate::error::{AudioError, Result};
use crate::wave::WaveForm;

/// Linear-interpolation resampler.
///
/// Output sample `k` is taken at time `k / target_rate`; positions past the
/// last input sample hold its value. The output has
/// `round(len * target_rate / sample_rate)` samples, so duration is kept to
/// within one output sample period.
pub fn resample(w: &WaveForm, target_rate: u32) -> Result<WaveForm> {
    if target_rate == 0 {
        return Err(AudioError::Config("target rate must be positive".into()));
    }
    if w.samples.is_empty() {
        return Err(AudioError::EmptyInput);
    }
    if target_rate == w.sample_rate {
        return Ok(w.clone());
    }
    let n = w.samples.len();
    let ratio = w.sample_rate as f64 / target_rate as f64;
    let n_out = ((n as f64 * target_rate as f64 / w.sample_rate as f64).round() as usize).max(1);
    let last = n - 1;
    let samples = (0..n_out)
        .map(|k| {
            let pos = k as f64 * ratio;
            let i = pos.floor() as usize;
            if i >= last {
                return w.samples[last];
            }
            let frac = pos - i as f64;
            w.samples[i] * (1.0 - frac) + w.samples[i + 1] * frac
        })
        .collect();
    WaveForm::new(samples, target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_preserved() {
        let w = WaveForm::new(vec![0.5; 800], 8000).unwrap();
        let r = resample(&w, 16000).unwrap();
        assert_eq!(r.sample_rate, 16000);
        assert_eq!(r.len(), 1600);
        assert!(r.samples.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn same_rate_is_identity() {
        let w = WaveForm::new(vec![0.1, -0.4, 0.9], 16000).unwrap();
        assert_eq!(resample(&w, 16000).unwrap(), w);
    }

    #[test]
    fn zero_target_rejected() {
        let w = WaveForm::new(vec![0.1], 16000).unwrap();
        assert!(resample(&w, 0).is_err());
    }
}

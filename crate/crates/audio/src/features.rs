use std::io::{Read, Write};
use std::path::Path;

use crate::error::{AudioError, Result};

pub const DFMF_MAGIC: &[u8; 4] = b"DFMF";
pub const DFMF_VERSION: u32 = 1;
pub const DEFAULT_TARGET_FRAMES: usize = 60;

/// Row-major `n_frames x n_coeffs` feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    data: Vec<f64>,
    n_frames: usize,
    n_coeffs: usize,
}

impl FeatureSequence {
    pub fn new(data: Vec<f64>, n_frames: usize, n_coeffs: usize) -> Result<Self> {
        if n_coeffs == 0 || data.len() != n_frames * n_coeffs {
            return Err(AudioError::Config(format!(
                "{} values do not form a {n_frames}x{n_coeffs} matrix",
                data.len()
            )));
        }
        Ok(Self {
            data,
            n_frames,
            n_coeffs,
        })
    }

    pub fn zeros(n_frames: usize, n_coeffs: usize) -> Self {
        Self {
            data: vec![0.0; n_frames * n_coeffs],
            n_frames,
            n_coeffs,
        }
    }

    pub(crate) fn from_rows(rows: &[Vec<f64>], n_coeffs: usize) -> Self {
        Self {
            data: rows.iter().flatten().copied().collect(),
            n_frames: rows.len(),
            n_coeffs,
        }
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_coeffs(&self) -> usize {
        self.n_coeffs
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.n_coeffs..(t + 1) * self.n_coeffs]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Keeps the first `target` frames, or zero-pads at the end.
    pub fn fix_length(&self, target: usize) -> Self {
        let keep = self.n_frames.min(target) * self.n_coeffs;
        let mut data = Vec::with_capacity(target * self.n_coeffs);
        data.extend_from_slice(&self.data[..keep]);
        data.resize(target * self.n_coeffs, 0.0);
        Self {
            data,
            n_frames: target,
            n_coeffs: self.n_coeffs,
        }
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let t = u32::try_from(self.n_frames)
            .map_err(|_| AudioError::Format("frame count exceeds u32".into()))?;
        let c = u32::try_from(self.n_coeffs)
            .map_err(|_| AudioError::Format("coefficient count exceeds u32".into()))?;
        w.write_all(DFMF_MAGIC)?;
        w.write_all(&DFMF_VERSION.to_le_bytes())?;
        w.write_all(&t.to_le_bytes())?;
        w.write_all(&c.to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(AudioError::Format(format!(
                "header needs 16 bytes, file has {}",
                bytes.len()
            )));
        }
        if &bytes[..4] != DFMF_MAGIC {
            return Err(AudioError::Format("bad magic, expected DFMF".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != DFMF_VERSION {
            return Err(AudioError::Format(format!(
                "unsupported version {version}, expected {DFMF_VERSION}"
            )));
        }
        let (t, c) = (u32_at(8) as usize, u32_at(12) as usize);
        let expected = t
            .checked_mul(c)
            .and_then(|n| n.checked_mul(8))
            .and_then(|n| n.checked_add(16))
            .ok_or_else(|| AudioError::Format("dimensions overflow".into()))?;
        if bytes.len() != expected {
            return Err(AudioError::Format(format!(
                "{t}x{c} payload needs {expected} bytes, file has {}",
                bytes.len()
            )));
        }
        let data = bytes[16..]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Self::new(data, t, c).map_err(|e| AudioError::Format(e.to_string()))
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::with_capacity(16 + 8 * self.data.len());
        self.write(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Normalizes every sequence to `target_frames` and groups them in order
/// into batches of `batch_size` (the last batch may be smaller).
pub fn fix_length_and_batch(
    seqs: &[FeatureSequence],
    target_frames: usize,
    batch_size: usize,
) -> Result<Vec<Vec<FeatureSequence>>> {
    if target_frames == 0 || batch_size == 0 {
        return Err(AudioError::Config(
            "target_frames and batch_size must be positive".into(),
        ));
    }
    Ok(seqs
        .chunks(batch_size)
        .map(|chunk| chunk.iter().map(|s| s.fix_length(target_frames)).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(frames: usize) -> FeatureSequence {
        FeatureSequence::new((0..frames * 2).map(|v| v as f64 + 1.0).collect(), frames, 2).unwrap()
    }

    #[test]
    fn truncates_head_first() {
        let s = ramp(100).fix_length(60);
        assert_eq!(s.n_frames(), 60);
        assert_eq!(s.data(), &ramp(100).data()[..120]);
    }

    #[test]
    fn pads_with_zero_frames() {
        let s = ramp(10).fix_length(60);
        assert_eq!(s.n_frames(), 60);
        assert_eq!(&s.data()[..20], ramp(10).data());
        assert!(s.data()[20..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn remainder_batch() {
        let seqs: Vec<_> = (0..7).map(|_| ramp(3)).collect();
        let b = fix_length_and_batch(&seqs, 60, 4).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 3]);
    }

    #[test]
    fn dfmf_round_trip_and_corruption() {
        let s = ramp(5);
        let mut buf = Vec::new();
        s.write(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"DFMF");
        assert_eq!(FeatureSequence::from_bytes(&buf).unwrap(), s);
        assert!(FeatureSequence::from_bytes(&buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[4] = 2;
        assert!(FeatureSequence::from_bytes(&bad).is_err());
        bad = buf;
        bad[0] = b'X';
        assert!(FeatureSequence::from_bytes(&bad).is_err());
    }
}

//! Participant discovery, label pairing and the train/validation/test split.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{IoContext, PipelineError, Result};

pub const LABEL_HEADER: &str = "Participant_ID,PHQ8_Binary";
pub const TRANSCRIPT_SUFFIX: &str = "_TRANSCRIPT.csv";
pub const AUDIO_SUFFIX: &str = "_AUDIO.wav";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            _ => Err(PipelineError::Config(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub id: u32,
    pub transcript: PathBuf,
    pub audio: PathBuf,
    pub label: usize,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    /// Sorted by id.
    pub entries: Vec<Entry>,
    /// Reasons entries were skipped.
    pub warnings: Vec<String>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Entry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

/// Parses `Participant_ID,PHQ8_Binary` rows.
pub fn read_labels(path: &Path) -> Result<BTreeMap<u32, usize>> {
    let text = std::fs::read_to_string(path).at(path)?;
    let bad = |line: usize, detail: String| PipelineError::Data {
        path: path.to_path_buf(),
        detail: format!("line {line}: {detail}"),
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == LABEL_HEADER => {}
        _ => return Err(bad(1, format!("expected header {LABEL_HEADER:?}"))),
    }
    let mut labels = BTreeMap::new();
    for (i, line) in lines {
        let mut cols = line.split(',').map(str::trim);
        let (Some(id), Some(y)) = (cols.next(), cols.next()) else {
            return Err(bad(i + 1, "expected two columns".into()));
        };
        let id: u32 = id.parse().map_err(|_| bad(i + 1, format!("bad participant id {id:?}")))?;
        let y = match y {
            "0" => 0,
            "1" => 1,
            _ => return Err(bad(i + 1, format!("label {y:?} is not 0 or 1"))),
        };
        if labels.insert(id, y).is_some() {
            return Err(bad(i + 1, format!("duplicate participant {id}")));
        }
    }
    Ok(labels)
}

fn ids_with_suffix(files: &BTreeSet<String>, suffix: &str) -> BTreeSet<u32> {
    files
        .iter()
        .filter_map(|f| f.strip_suffix(suffix)?.parse().ok())
        .collect()
}

/// Seeded 70/15/15 assignment of sorted ids.
pub fn assign_splits(ids: &[u32], seed: u64) -> BTreeMap<u32, Split> {
    let mut order = ids.to_vec();
    order.sort_unstable();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = order.len();
    let n_train = (n as f64 * 0.70).round() as usize;
    let n_val = (n as f64 * 0.15).round() as usize;
    order
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let s = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Validation
            } else {
                Split::Test
            };
            (id, s)
        })
        .collect()
}

/// Pairs `<id>_TRANSCRIPT.csv` and `<id>_AUDIO.wav` with label rows. Ids
/// missing a label or either file are skipped with a warning.
pub fn load_dataset(data_dir: &Path, label_file: &str, seed: u64) -> Result<DatasetManifest> {
    let labels = read_labels(&data_dir.join(label_file))?;
    let files: BTreeSet<String> = std::fs::read_dir(data_dir)
        .at(data_dir)?
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .collect();
    let transcripts = ids_with_suffix(&files, TRANSCRIPT_SUFFIX);
    let audio = ids_with_suffix(&files, AUDIO_SUFFIX);

    let mut warnings = vec![];
    let mut usable = vec![];
    for (&id, &label) in &labels {
        match (transcripts.contains(&id), audio.contains(&id)) {
            (true, true) => usable.push((id, label)),
            (t, a) => {
                let missing = match (t, a) {
                    (false, false) => "transcript and audio",
                    (false, true) => "transcript",
                    _ => "audio",
                };
                warnings.push(format!("participant {id}: missing {missing}, skipped"));
            }
        }
    }
    for id in transcripts.union(&audio).filter(|id| !labels.contains_key(id)) {
        warnings.push(format!("participant {id}: no label row, skipped"));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    if usable.is_empty() {
        return Err(PipelineError::EmptyDataset(data_dir.to_path_buf()));
    }
    let ids: Vec<u32> = usable.iter().map(|&(id, _)| id).collect();
    let splits = assign_splits(&ids, seed);
    let entries = usable
        .into_iter()
        .map(|(id, label)| Entry {
            id,
            transcript: data_dir.join(format!("{id}{TRANSCRIPT_SUFFIX}")),
            audio: data_dir.join(format!("{id}{AUDIO_SUFFIX}")),
            label,
            split: splits[&id],
        })
        .collect();
    Ok(DatasetManifest { entries, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes() {
        let ids: Vec<u32> = (300..900).collect();
        let s = assign_splits(&ids, 3);
        let count = |x| s.values().filter(|&&v| v == x).count();
        assert_eq!((count(Split::Train), count(Split::Validation), count(Split::Test)), (420, 90, 90));
        assert_eq!(s, assign_splits(&ids, 3));
        assert_ne!(s, assign_splits(&ids, 4));
    }
}

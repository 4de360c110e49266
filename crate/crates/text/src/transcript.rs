use std::path::Path;

use crate::error::{Result, TextError};

pub const HEADER: [&str; 4] = ["start_time", "stop_time", "speaker", "value"];
pub const INTERVIEWER: &str = "Ellie";

#[derive(Clone, Debug, PartialEq)]
pub struct TranscriptTurn {
    pub start_time: f64,
    pub stop_time: f64,
    pub speaker: String,
    pub text: String,
}

/// Parses tab-separated transcript content. Line numbers in errors are
/// 1-based and count the header. Blank lines are skipped.
pub fn parse_transcript(raw: &str) -> Result<Vec<TranscriptTurn>> {
    let mut lines = raw.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((i, l)) => break (i + 1, l),
            None => {
                return Err(TextError::Parse {
                    line: 1,
                    detail: "missing header row".into(),
                })
            }
        }
    };
    let cols: Vec<&str> = header.1.trim_start_matches('\u{feff}').split('\t').map(str::trim).collect();
    if cols != HEADER {
        return Err(TextError::Parse {
            line: header.0,
            detail: format!("expected header {:?}, found {:?}", HEADER.join("\t"), header.1),
        });
    }

    let mut turns = vec![];
    for (i, line) in lines {
        let line_no = i + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(TextError::Parse {
                line: line_no,
                detail: format!("expected 4 tab-separated columns, found {}", fields.len()),
            });
        }
        let time = |s: &str, what: &str| {
            s.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| TextError::Parse {
                line: line_no,
                detail: format!("bad {what} {s:?}"),
            })
        };
        let start_time = time(fields[0], "start_time")?;
        let stop_time = time(fields[1], "stop_time")?;
        if stop_time < start_time {
            return Err(TextError::Parse {
                line: line_no,
                detail: format!("stop_time {stop_time} precedes start_time {start_time}"),
            });
        }
        let speaker = fields[2].trim();
        if speaker.is_empty() {
            return Err(TextError::Parse {
                line: line_no,
                detail: "empty speaker".into(),
            });
        }
        turns.push(TranscriptTurn {
            start_time,
            stop_time,
            speaker: speaker.to_string(),
            text: fields[3].trim().to_string(),
        });
    }
    Ok(turns)
}

/// Drops turns by `interviewer` (case-insensitive) and joins the rest in
/// start-time order with single spaces. Ties keep file order.
pub fn merge_responses(turns: &[TranscriptTurn], interviewer: &str) -> String {
    let mut kept: Vec<&TranscriptTurn> = turns
        .iter()
        .filter(|t| !t.speaker.eq_ignore_ascii_case(interviewer))
        .collect();
    kept.sort_by(|a, b| a.start_time.total_cmp(&b.start_time));
    kept.iter()
        .flat_map(|t| t.text.split_whitespace())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn parse_and_filter_transcript(raw: &str, interviewer: &str) -> Result<String> {
    Ok(merge_responses(&parse_transcript(raw)?, interviewer))
}

pub fn read_transcript(path: impl AsRef<Path>, interviewer: &str) -> Result<String> {
    parse_and_filter_transcript(&std::fs::read_to_string(path)?, interviewer)
}

/// Renders turns in the transcript file layout.
pub fn write_transcript(turns: &[TranscriptTurn]) -> String {
    let mut out = HEADER.join("\t");
    out.push('\n');
    for t in turns {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            t.start_time, t.stop_time, t.speaker, t.text
        ));
    }
    out
}

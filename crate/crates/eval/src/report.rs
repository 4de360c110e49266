//! Plain-text report files.
//!
//! The metrics file holds one `key=value` per line. The ROC file has a
//! `fpr,tpr,threshold` header followed by one row per curve point. Floats
//! are written in shortest round-trip form, so parsing recovers them
//! exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{EvalError, Result};
use crate::metrics::{ClassMetrics, ConfusionCounts, MetricsReport};
use crate::roc::{RocCurve, RocPoint};

pub const METRICS_FILE: &str = "metrics.txt";
pub const ROC_FILE: &str = "roc.csv";
pub const ROC_HEADER: &str = "fpr,tpr,threshold";

pub fn format_metrics(r: &MetricsReport, extra: &[(String, String)]) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k}={v}");
    };
    kv("n", r.confusion.total().to_string());
    kv("accuracy", r.accuracy.to_string());
    kv("precision_weighted", r.precision_weighted.to_string());
    kv("recall_weighted", r.recall_weighted.to_string());
    kv("f1_weighted", r.f1_weighted.to_string());
    for (c, m) in r.per_class.iter().enumerate() {
        kv(&format!("class{c}_precision"), m.precision.to_string());
        kv(&format!("class{c}_recall"), m.recall.to_string());
        kv(&format!("class{c}_f1"), m.f1.to_string());
        kv(&format!("class{c}_support"), m.support.to_string());
    }
    kv("tp", r.confusion.tp.to_string());
    kv("fp", r.confusion.fp.to_string());
    kv("tn", r.confusion.tn.to_string());
    kv("fn", r.confusion.fn_.to_string());
    kv("auc", r.auc.map_or("undefined".to_string(), |a| a.to_string()));
    kv("zero_division", r.zero_division.to_string());
    for (k, v) in extra {
        kv(k, v.clone());
    }
    s
}

pub fn parse_pairs(text: &str, path: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| EvalError::Parse {
            path: path.into(),
            line: i + 1,
            detail: format!("expected key=value, found {line:?}"),
        })?;
        out.insert(k.to_string(), v.to_string());
    }
    Ok(out)
}

pub fn parse_metrics(text: &str, path: &str) -> Result<MetricsReport> {
    let pairs = parse_pairs(text, path)?;
    let get = |k: &str| -> Result<&str> {
        pairs.get(k).map(String::as_str).ok_or_else(|| EvalError::Parse {
            path: path.into(),
            line: 0,
            detail: format!("missing key {k}"),
        })
    };
    let f = |k: &str| -> Result<f64> {
        get(k)?.parse().map_err(|_| EvalError::Parse {
            path: path.into(),
            line: 0,
            detail: format!("{k} is not a number"),
        })
    };
    let u = |k: &str| -> Result<usize> {
        get(k)?.parse().map_err(|_| EvalError::Parse {
            path: path.into(),
            line: 0,
            detail: format!("{k} is not a count"),
        })
    };
    let class = |c: usize| -> Result<ClassMetrics> {
        Ok(ClassMetrics {
            precision: f(&format!("class{c}_precision"))?,
            recall: f(&format!("class{c}_recall"))?,
            f1: f(&format!("class{c}_f1"))?,
            support: u(&format!("class{c}_support"))?,
        })
    };
    Ok(MetricsReport {
        accuracy: f("accuracy")?,
        precision_weighted: f("precision_weighted")?,
        recall_weighted: f("recall_weighted")?,
        f1_weighted: f("f1_weighted")?,
        per_class: [class(0)?, class(1)?],
        confusion: ConfusionCounts {
            tp: u("tp")?,
            fp: u("fp")?,
            tn: u("tn")?,
            fn_: u("fn")?,
        },
        auc: match get("auc")? {
            "undefined" => None,
            _ => Some(f("auc")?),
        },
        zero_division: get("zero_division")? == "true",
    })
}

pub fn format_roc(curve: &RocCurve) -> String {
    let mut s = format!("{ROC_HEADER}\n");
    for p in &curve.points {
        let _ = writeln!(s, "{},{},{}", p.fpr, p.tpr, p.threshold);
    }
    s
}

pub fn parse_roc(text: &str, path: &str) -> Result<RocCurve> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == ROC_HEADER => {}
        _ => {
            return Err(EvalError::Parse {
                path: path.into(),
                line: 1,
                detail: format!("expected header {ROC_HEADER:?}"),
            })
        }
    }
    let mut points = vec![];
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| EvalError::Parse {
                path: path.into(),
                line: i + 1,
                detail: e.to_string(),
            })?;
        if vals.len() != 3 {
            return Err(EvalError::Parse {
                path: path.into(),
                line: i + 1,
                detail: format!("expected 3 fields, found {}", vals.len()),
            });
        }
        points.push(RocPoint {
            fpr: vals[0],
            tpr: vals[1],
            threshold: vals[2],
        });
    }
    Ok(RocCurve { points })
}

/// Writes `metrics.txt` and `roc.csv` into `dir` (created if missing) and
/// returns their paths.
pub fn emit_report(
    r: &MetricsReport,
    curve: &RocCurve,
    dir: &Path,
    extra: &[(String, String)],
) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let m = dir.join(METRICS_FILE);
    let c = dir.join(ROC_FILE);
    std::fs::write(&m, format_metrics(r, extra))?;
    std::fs::write(&c, format_roc(curve))?;
    Ok((m, c))
}

pub fn read_metrics(path: &Path) -> Result<MetricsReport> {
    parse_metrics(&std::fs::read_to_string(path)?, &path.display().to_string())
}

pub fn read_roc(path: &Path) -> Result<RocCurve> {
    parse_roc(&std::fs::read_to_string(path)?, &path.display().to_string())
}

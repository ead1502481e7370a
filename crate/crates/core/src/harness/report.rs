//! Run summaries, JSON reports and plot-ready CSV.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::eval::SessionReport;

/// Accuracy trajectory of one method under one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub method: String,
    pub seed: u64,
    pub config_hash: String,
    pub sessions: Vec<SessionReport>,
    /// Mean of the per-session overall accuracies.
    pub avg_acc: f64,
    /// First-session minus last-session overall accuracy.
    pub pd: f64,
}

impl Report {
    pub fn new(method: &str, seed: u64, config_hash: &str, sessions: Vec<SessionReport>) -> Result<Self> {
        let (avg_acc, pd) = summarize(&sessions)?;
        Ok(Report {
            method: method.to_string(),
            seed,
            config_hash: config_hash.to_string(),
            sessions,
            avg_acc,
            pd,
        })
    }

    pub fn last_accuracy(&self) -> f64 {
        self.sessions.last().map_or(f64::NAN, |s| s.acc_all)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        validate_report(&value).map_err(|m| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: m,
        })?;
        Ok(serde_json::from_value(value)?)
    }
}

/// `(mean accuracy, first - last accuracy)` over the sessions.
pub fn summarize(sessions: &[SessionReport]) -> Result<(f64, f64)> {
    let (first, last) = match (sessions.first(), sessions.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::Input("cannot summarize zero sessions".into())),
    };
    let avg = sessions.iter().map(|s| s.acc_all).sum::<f64>() / sessions.len() as f64;
    Ok((avg, first.acc_all - last.acc_all))
}

pub fn emit_report(report: &Report, path: &Path) -> Result<()> {
    std::fs::write(path, report.to_json()?).map_err(|e| Error::io(path, e))
}

/// CSV with header `session,method,accuracy`, one row per session and run.
pub fn plot_data(reports: &[Report]) -> String {
    let mut out = String::from("session,method,accuracy\n");
    for r in reports {
        for s in &r.sessions {
            writeln!(out, "{},{},{}", s.t, r.method, s.acc_all).unwrap();
        }
    }
    out
}

pub fn emit_plot_data(reports: &[Report], path: &Path) -> Result<()> {
    std::fs::write(path, plot_data(reports)).map_err(|e| Error::io(path, e))
}

/// Checks a parsed report against the schema
/// `{method, seed, config_hash, sessions: [{t, acc_all, acc_base, acc_novel}], avg_acc, pd}`
/// and its internal consistency.
pub fn validate_report(v: &serde_json::Value) -> std::result::Result<(), String> {
    use serde_json::Value;
    let obj = v.as_object().ok_or("report is not an object")?;
    let expected = ["method", "seed", "config_hash", "sessions", "avg_acc", "pd"];
    for k in obj.keys() {
        if !expected.contains(&k.as_str()) {
            return Err(format!("unexpected field {k}"));
        }
    }
    let field = |k: &str| obj.get(k).ok_or(format!("missing field {k}"));
    field("method")?.as_str().ok_or("method must be a string")?;
    field("seed")?.as_u64().ok_or("seed must be a non-negative integer")?;
    let hash = field("config_hash")?.as_str().ok_or("config_hash must be a string")?;
    if hash.len() != 64 || !hash.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err("config_hash must be 64 hex digits".into());
    }
    let unit = |x: &Value, what: &str| -> std::result::Result<f64, String> {
        let f = x.as_f64().ok_or(format!("{what} must be a number"))?;
        if (0.0..=1.0).contains(&f) {
            Ok(f)
        } else {
            Err(format!("{what} = {f} outside [0,1]"))
        }
    };
    let sessions = field("sessions")?.as_array().ok_or("sessions must be an array")?;
    if sessions.is_empty() {
        return Err("sessions is empty".into());
    }
    let mut accs = Vec::with_capacity(sessions.len());
    for (i, s) in sessions.iter().enumerate() {
        let s = s.as_object().ok_or("session entry is not an object")?;
        if s.len() != 4 {
            return Err(format!("session {i} must have exactly t, acc_all, acc_base, acc_novel"));
        }
        let get = |k: &str| s.get(k).ok_or(format!("session {i} lacks {k}"));
        if get("t")?.as_u64() != Some(i as u64) {
            return Err(format!("session {i} has t = {}", get("t")?));
        }
        accs.push(unit(get("acc_all")?, "acc_all")?);
        unit(get("acc_base")?, "acc_base")?;
        let novel = get("acc_novel")?;
        match (i, novel.is_null()) {
            (0, false) => return Err("base session must have acc_novel = null".into()),
            (_, true) => {}
            (_, false) => {
                unit(novel, "acc_novel")?;
            }
        }
    }
    let avg = field("avg_acc")?.as_f64().ok_or("avg_acc must be a number")?;
    let pd = field("pd")?.as_f64().ok_or("pd must be a number")?;
    let want_avg = accs.iter().sum::<f64>() / accs.len() as f64;
    if avg != want_avg {
        return Err(format!("avg_acc {avg} differs from the session mean {want_avg}"));
    }
    if pd != accs[0] - accs[accs.len() - 1] {
        return Err(format!("pd {pd} is not first minus last accuracy"));
    }
    Ok(())
}

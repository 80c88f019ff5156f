//! CSV and JSON emitters. Reals are written with 17 significant digits so
//! they parse back to the same `f64`.

use std::path::Path;

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::federation::RunLog;

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn num(v: f64) -> Value {
    Value::Number(fmt_f64(v).parse().expect("formatted f64 is a JSON number"))
}

pub(crate) fn vector(v: &[f64]) -> Value {
    Value::Array(v.iter().copied().map(num).collect())
}

pub(crate) fn matrix(rows: &[Vec<f64>]) -> Value {
    Value::Array(rows.iter().map(|r| vector(r)).collect())
}

pub(crate) fn labels(prefix: &str, n: usize) -> Value {
    Value::Array((0..n).map(|i| Value::String(format!("{prefix}{i}"))).collect())
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("JSON values serialise");
    text.push('\n');
    write_text(path, &text)
}

/// One row per round: `t, global_balanced_acc, acc_p*, gamma_p*, gamma_norm_p*`.
pub(crate) fn metrics_csv(log: &RunLog) -> String {
    let n = log.standalone_acc.len();
    let mut header = vec!["t".to_string(), "global_balanced_acc".to_string()];
    for prefix in ["acc", "gamma", "gamma_norm"] {
        header.extend((0..n).map(|i| format!("{prefix}_p{i}")));
    }
    let mut out = header.join(",");
    out.push('\n');
    for r in &log.records {
        let mut row = vec![r.t.to_string(), fmt_f64(r.global_balanced_acc)];
        for series in [&r.participant_balanced_acc, &r.gamma, &r.gamma_normalized] {
            row.extend(series.iter().map(|&v| fmt_f64(v)));
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Final smoothed contribution matrix with axis labels.
pub(crate) fn gamma_json(name: &str, log: &RunLog) -> Value {
    let last = log.last();
    let n = last.contributions.len();
    let m = last.contributions.first().map_or(0, Vec::len);
    json!({
        "strategy": name,
        "round": last.t,
        "participants": labels("p", n),
        "classes": labels("c", m),
        "gamma": matrix(&last.contributions),
    })
}

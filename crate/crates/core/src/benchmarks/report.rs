//! Result tables and the per-figure CSVs derived from them.

use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::fmt::Write as _;

pub const RESULTS_HEADER: &str = "method,quiz_size_or_type,mean,stderr";

/// One aggregated measurement. `key` is a quiz size for prediction rows
/// and `<type>_top<k>` for selection rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: String,
    pub key: String,
    pub mean: f64,
    pub stderr: f64,
}

impl ResultRow {
    pub fn new(method: impl Into<String>, key: impl Into<String>, mean: f64, stderr: f64) -> Self {
        Self {
            method: method.into(),
            key: key.into(),
            mean,
            stderr,
        }
    }
}

pub fn results_to_csv(rows: &[ResultRow]) -> String {
    let mut out = format!("{RESULTS_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:?},{:?}", r.method, r.key, r.mean, r.stderr);
    }
    out
}

pub fn results_from_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, h)| h) != Some(RESULTS_HEADER) {
        return Err(Error::Parse(format!("results header must be '{RESULTS_HEADER}'")));
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let c: Vec<&str> = l.split(',').collect();
            let [method, key, mean, stderr] = c[..] else {
                return Err(Error::Parse(format!("line {}: expected 4 columns", i + 1)));
            };
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("line {}: bad number '{s}'", i + 1)))
            };
            Ok(ResultRow::new(method, key, num(mean)?, num(stderr)?))
        })
        .collect()
}

/// Methods in first-seen order.
fn methods(rows: &[&ResultRow]) -> Vec<String> {
    let mut seen: Vec<String> = Vec::new();
    for r in rows {
        if !seen.contains(&r.method) {
            seen.push(r.method.clone());
        }
    }
    seen
}

fn cell(out: &mut String, v: Option<&&ResultRow>) {
    match v {
        Some(r) => {
            let _ = write!(out, ",{:?},{:?}", r.mean, r.stderr);
        }
        None => out.push_str(",,"),
    }
}

/// Accuracy against quiz size: `quiz_size,<m>_mean,<m>_stderr,...`, one
/// row per size. Rows whose key is not an integer are skipped.
pub fn prediction_plot_csv(rows: &[ResultRow]) -> String {
    let rows: Vec<&ResultRow> = rows.iter().filter(|r| r.key.parse::<usize>().is_ok()).collect();
    let ms = methods(&rows);
    let mut by: BTreeMap<usize, BTreeMap<&str, &ResultRow>> = BTreeMap::new();
    for r in &rows {
        by.entry(r.key.parse().expect("filtered"))
            .or_default()
            .insert(r.method.as_str(), r);
    }
    let mut out = String::from("quiz_size");
    for m in &ms {
        let _ = write!(out, ",{m}_mean,{m}_stderr");
    }
    out.push('\n');
    for (size, cells) in &by {
        let _ = write!(out, "{size}");
        for m in &ms {
            cell(&mut out, cells.get(m.as_str()));
        }
        out.push('\n');
    }
    out
}

/// Selection accuracy per method: one row per method with mean and
/// standard error for each of `type1_top1 .. type2_top3`.
pub fn selection_plot_csv(rows: &[ResultRow]) -> String {
    const KEYS: [&str; 4] = ["type1_top1", "type1_top3", "type2_top1", "type2_top3"];
    let rows: Vec<&ResultRow> = rows.iter().filter(|r| KEYS.contains(&r.key.as_str())).collect();
    let mut out = String::from("method");
    for k in KEYS {
        let _ = write!(out, ",{k}_mean,{k}_stderr");
    }
    out.push('\n');
    for m in methods(&rows) {
        out.push_str(&m);
        for k in KEYS {
            cell(&mut out, rows.iter().find(|r| r.method == m && r.key == k));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            ResultRow::new("Ours", "1", 0.61, 0.01),
            ResultRow::new("OPT", "type2_top3", 0.9, 0.02),
        ];
        let text = results_to_csv(&rows);
        assert!(text.starts_with("method,quiz_size_or_type,mean,stderr\n"));
        assert_eq!(results_from_csv(&text).unwrap(), rows);
        assert!(results_from_csv("method,mean\n").is_err());
    }

    #[test]
    fn pivots() {
        let rows = vec![
            ResultRow::new("Ours", "2", 0.7, 0.1),
            ResultRow::new("Ours", "1", 0.6, 0.1),
            ResultRow::new("Random", "1", 0.5, 0.0),
            ResultRow::new("Ours", "type1_top1", 0.4, 0.05),
        ];
        assert_eq!(
            prediction_plot_csv(&rows),
            "quiz_size,Ours_mean,Ours_stderr,Random_mean,Random_stderr\n1,0.6,0.1,0.5,0.0\n2,0.7,0.1,,\n"
        );
        assert_eq!(
            selection_plot_csv(&rows),
            "method,type1_top1_mean,type1_top1_stderr,type1_top3_mean,type1_top3_stderr,\
             type2_top1_mean,type2_top1_stderr,type2_top3_mean,type2_top3_stderr\nOurs,0.4,0.05,,,,,,\n"
        );
    }
}

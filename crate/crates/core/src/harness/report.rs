use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::suite::{SuiteSummary, SUMMARY_FILE, TRACES_DIR};
use super::trace::Mode;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no {SUMMARY_FILE} found under {0}")]
    NoSummaries(PathBuf),
    #[error("{path}: {message}")]
    Unreadable { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub mode: Mode,
    pub avg_turns: f64,
    pub correct_pct: f64,
}

pub const HEADER: &str = "Action Mode | Average Turns | Correct %";
pub const FOOTNOTE: &str = "turns: layers expanded (tree_of_code), iterations executed (codeact_baseline)";

/// Rows in fixed column widths: mode left-aligned, turns and percentage
/// right-aligned, two spaces between columns.
pub fn format_table(rows: &[ReportRow]) -> String {
    let cells: Vec<(&str, String, String)> = rows
        .iter()
        .map(|r| (r.mode.label(), format!("{:.1}", r.avg_turns), format!("{:.2}%", r.correct_pct)))
        .collect();
    let w0 = cells.iter().map(|c| c.0.len()).max().unwrap_or(0);
    let w1 = cells.iter().map(|c| c.1.len()).max().unwrap_or(0);
    let w2 = cells.iter().map(|c| c.2.len()).max().unwrap_or(0);
    let mut out = format!("{HEADER}\n{}\n", "-".repeat(HEADER.len()));
    for (mode, turns, pct) in &cells {
        out.push_str(&format!("{mode:<w0$}  {turns:>w1$}  {pct:>w2$}\n"));
    }
    out.push_str(&format!("\n{FOOTNOTE}\n"));
    out
}

/// Merges summaries per mode, weighting by task count; tree mode first.
pub fn aggregate(summaries: &[SuiteSummary]) -> Vec<ReportRow> {
    let mut by_mode: BTreeMap<Mode, (f64, f64, usize)> = BTreeMap::new();
    for s in summaries {
        let n = s.task_count.max(1);
        let entry = by_mode.entry(s.mode).or_default();
        entry.0 += s.avg_turns * n as f64;
        entry.1 += s.correct_pct * n as f64;
        entry.2 += n;
    }
    by_mode
        .into_iter()
        .map(|(mode, (turns, pct, n))| ReportRow {
            mode,
            avg_turns: turns / n as f64,
            correct_pct: pct / n as f64,
        })
        .collect()
}

fn find_summaries(dir: &Path, found: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let path = entry.path();
        if path.is_dir() {
            find_summaries(&path, found)?;
        } else if entry.file_name() == SUMMARY_FILE {
            found.push(path);
        }
    }
    Ok(())
}

/// Reads every summary under `dir`. Pointing at a run's `traces/`
/// directory also finds the summary next to it.
pub fn load_summaries(dir: &Path) -> Result<Vec<SuiteSummary>, ReportError> {
    let unreadable = |path: &Path, message: String| ReportError::Unreadable {
        path: path.to_path_buf(),
        message,
    };
    let mut paths = Vec::new();
    find_summaries(dir, &mut paths).map_err(|e| unreadable(dir, e.to_string()))?;
    if paths.is_empty() && dir.file_name().is_some_and(|n| n == TRACES_DIR) {
        if let Some(sibling) = dir.parent().map(|p| p.join(SUMMARY_FILE)).filter(|p| p.is_file()) {
            paths.push(sibling);
        }
    }
    if paths.is_empty() {
        return Err(ReportError::NoSummaries(dir.to_path_buf()));
    }
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| unreadable(p, e.to_string()))?;
            serde_json::from_str(&text).map_err(|e| unreadable(p, e.to_string()))
        })
        .collect()
}

pub fn report(dir: &Path) -> Result<String, ReportError> {
    Ok(format_table(&aggregate(&load_summaries(dir)?)))
}

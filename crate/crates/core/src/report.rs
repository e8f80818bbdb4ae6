//! Folds many `stats.jsonl` files into per-mode coverage curves.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use crate::campaign::{CampaignError, CampaignLog, Mode};

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub mode: Mode,
    pub t_ns: u64,
    pub median: f64,
    pub p25: f64,
    pub p75: f64,
}

/// Linear-interpolated quantile of an ascending slice.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        }
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile(&sorted, 0.5)
}

fn edges_at(log: &CampaignLog, t: u64) -> f64 {
    log.records
        .iter()
        .take_while(|r| r.t_ns <= t)
        .last()
        .map_or(0.0, |r| r.edges_covered as f64)
}

/// Per mode, the median and quartiles of edge coverage across runs at every
/// time point any run of that mode logged.
pub fn fold_logs(logs: &[CampaignLog]) -> Vec<CurvePoint> {
    let mut by_mode: BTreeMap<Mode, Vec<&CampaignLog>> = BTreeMap::new();
    for log in logs {
        if let Some(first) = log.records.first() {
            by_mode.entry(first.mode).or_default().push(log);
        }
    }
    let mut points = Vec::new();
    for (mode, runs) in by_mode {
        let times: BTreeSet<u64> = runs
            .iter()
            .flat_map(|l| l.records.iter().map(|r| r.t_ns))
            .collect();
        for t in times {
            let mut values: Vec<f64> = runs.iter().map(|l| edges_at(l, t)).collect();
            values.sort_by(f64::total_cmp);
            points.push(CurvePoint {
                mode,
                t_ns: t,
                median: quantile(&values, 0.5),
                p25: quantile(&values, 0.25),
                p75: quantile(&values, 0.75),
            });
        }
    }
    points
}

pub fn to_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("mode,t_ns,median_edges,p25_edges,p75_edges\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.mode, p.t_ns, p.median, p.p25, p.p75
        ));
    }
    out
}

fn find_stats(dir: &Path, found: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            find_stats(&path, found)?;
        } else if path.file_name().is_some_and(|n| n == "stats.jsonl") {
            found.push(path);
        }
    }
    Ok(())
}

/// Collects every `stats.jsonl` below `dir` and writes `dir/report.csv`.
pub fn write_report(dir: &Path) -> Result<PathBuf, CampaignError> {
    let mut paths = Vec::new();
    find_stats(dir, &mut paths)?;
    if paths.is_empty() {
        return Err(CampaignError::Report(format!(
            "no stats.jsonl files under {}",
            dir.display()
        )));
    }
    paths.sort();
    let logs = paths
        .iter()
        .map(|p| Ok(CampaignLog::from_jsonl(&std::fs::read_to_string(p)?)?))
        .collect::<Result<Vec<_>, CampaignError>>()?;
    let out = dir.join("report.csv");
    std::fs::write(&out, to_csv(&fold_logs(&logs)))?;
    Ok(out)
}

//! Multi-run reports: per-group accuracy summaries and pairwise Welch tests.
//!
//! A run is a directory holding a `log.jsonl`; its group is the name of the
//! directory that contains it (`runs/magic/seed0` belongs to `magic`).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::{welch_t_test, EpochLog, MeanStd, LOG_FILE};

/// The selected epoch of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunPoint {
    pub path: String,
    pub epoch: usize,
    pub visual: Option<f64>,
    pub blind: Option<f64>,
    pub all: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub name: String,
    pub runs: Vec<RunPoint>,
    pub visual: Option<MeanStd>,
    pub blind: Option<MeanStd>,
    pub all: MeanStd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub metric: String,
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub groups: Vec<GroupSummary>,
    pub comparisons: Vec<Comparison>,
}

/// Parses a run log; every line must be a complete epoch record.
pub fn parse_log(text: &str, source: &str) -> Result<Vec<EpochLog>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let entry: EpochLog = serde_json::from_str(l)
                .map_err(|e| Error::Report(format!("{source}: line {}: {e}", i + 1)))?;
            Ok(entry)
        })
        .collect::<Result<Vec<_>>>()
        .and_then(|v| if v.is_empty() { Err(Error::Report(format!("{source}: empty log"))) } else { Ok(v) })
}

/// The epoch with the best `val_all`, earliest on ties (the checkpoint rule).
pub fn select_epoch(log: &[EpochLog]) -> Option<&EpochLog> {
    log.iter().fold(None, |best: Option<&EpochLog>, e| match best {
        Some(b) if b.val_all >= e.val_all => Some(b),
        _ => Some(e),
    })
}

/// Accepts run directories or their `log.jsonl` files.
pub fn load_run(path: &Path) -> Result<(String, RunPoint)> {
    let (dir, log_path) = if path.is_dir() { (path.to_path_buf(), path.join(LOG_FILE)) } else { (path.parent().map(Path::to_path_buf).unwrap_or_default(), path.to_path_buf()) };
    let group = dir
        .parent()
        .and_then(|p| p.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| ".".into());
    let source = log_path.display().to_string();
    let text = fs::read_to_string(&log_path).map_err(|e| Error::Report(format!("{source}: {e}")))?;
    let log = parse_log(&text, &source)?;
    let e = select_epoch(&log).expect("non-empty log");
    Ok((group, RunPoint { path: dir.display().to_string(), epoch: e.epoch, visual: e.val_visual, blind: e.val_blind, all: e.val_all }))
}

fn summarize(values: impl Iterator<Item = Option<f64>>) -> Result<Option<MeanStd>> {
    let xs: Vec<f64> = values.flatten().collect();
    if xs.is_empty() {
        return Ok(None);
    }
    MeanStd::of(&xs).map(Some)
}

/// Builds a report from run paths. Groups are ordered by name; runs within a group by path.
pub fn build_report(paths: &[PathBuf], compare: &[String]) -> Result<Report> {
    if paths.is_empty() {
        return Err(Error::Report("no runs matched".into()));
    }
    let mut groups: BTreeMap<String, Vec<RunPoint>> = BTreeMap::new();
    for p in paths {
        let (g, run) = load_run(p)?;
        groups.entry(g).or_default().push(run);
    }
    let mut summaries = Vec::new();
    for (name, mut runs) in groups {
        runs.sort_by(|a, b| a.path.cmp(&b.path));
        summaries.push(GroupSummary {
            visual: summarize(runs.iter().map(|r| r.visual))?,
            blind: summarize(runs.iter().map(|r| r.blind))?,
            all: summarize(runs.iter().map(|r| Some(r.all)))?.expect("non-empty group"),
            name,
            runs,
        });
    }
    let mut comparisons = Vec::new();
    for (i, a) in compare.iter().enumerate() {
        for b in &compare[i + 1..] {
            let find = |n: &String| {
                summaries.iter().find(|g| &g.name == n).ok_or_else(|| Error::Report(format!("unknown group {n:?}")))
            };
            let (ga, gb) = (find(a)?, find(b)?);
            for g in [ga, gb] {
                if g.runs.len() < 2 {
                    return Err(Error::Report(format!("group {:?} has {} run(s); a t-test needs at least 2", g.name, g.runs.len())));
                }
            }
            let metrics: [(&str, fn(&RunPoint) -> Option<f64>); 3] =
                [("visual", |r| r.visual), ("blind", |r| r.blind), ("all", |r| Some(r.all))];
            for (metric, f) in metrics {
                let xa: Vec<f64> = ga.runs.iter().filter_map(f).collect();
                let xb: Vec<f64> = gb.runs.iter().filter_map(f).collect();
                if xa.len() < 2 || xb.len() < 2 {
                    continue;
                }
                let w = welch_t_test(&xa, &xb)?;
                comparisons.push(Comparison { a: a.clone(), b: b.clone(), metric: metric.into(), t: w.t, df: w.df, p: w.p });
            }
        }
    }
    Ok(Report { groups: summaries, comparisons })
}

fn cell(s: Option<&MeanStd>) -> String {
    match s {
        Some(s) => format!("{:.2} ± {:.2}", 100.0 * s.mean, 100.0 * s.std),
        None => "-".into(),
    }
}

/// Aligned text table, accuracies in percent.
pub fn render_table(report: &Report) -> String {
    let header = ["group", "runs", "visual", "blind", "all"];
    let rows: Vec<[String; 5]> = report
        .groups
        .iter()
        .map(|g| [g.name.clone(), g.runs.len().to_string(), cell(g.visual.as_ref()), cell(g.blind.as_ref()), cell(Some(&g.all))])
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for r in &rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(widths)
            .enumerate()
            .map(|(i, (c, w))| {
                let pad = w - c.chars().count();
                if i == 0 { format!("{c}{}", " ".repeat(pad)) } else { format!("{}{c}", " ".repeat(pad)) }
            })
            .collect();
        out.push_str(parts.join("  ").trim_end());
        out.push('\n');
    };
    line(&mut out, &header.map(String::from));
    for r in &rows {
        line(&mut out, r);
    }
    if !report.comparisons.is_empty() {
        out.push('\n');
        for c in &report.comparisons {
            let _ = writeln!(out, "{} vs {} ({}): t = {:.4}, df = {:.2}, p = {:.4}", c.a, c.b, c.metric, c.t, c.df, c.p);
        }
    }
    out
}

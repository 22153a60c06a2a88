//! Audit-trail files and report tables.
//!
//! Layout of an output directory:
//!
//! ```text
//! audit/manifest.json        window, confusion prefix, engine specs
//! audit/baseline.jsonl       one BaselineRecord per request, corpus order
//! audit/runs/m{M}_a{A}_r{R}.jsonl
//!                            RunKey header line, then one AuditRecord per step
//! cells.csv  baselines.csv  convergence.csv  confusion.csv  summary.json
//! ```
//!
//! Audit records are JSON objects whose fields appear in this order:
//! `step, request_id, predicted_engine, chosen_engine, translation,
//! engines_called, qe_calls, cost, explored, learned_label,
//! entropy_at_decision, source_chars, true_quality, ensemble_choice`.
//! Floats are written in shortest round-trip form, so [`recompute`]
//! reproduces every table byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    assemble_report, AuditRecord, BaselineRecord, CellReport, ExperimentReport, GridSpec, RunKey,
    RunSummary,
};
use crate::domain::EngineSpec;
use crate::error::{Error, Result};

const MANIFEST_FORMAT: &str = "mtroute-audit";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub window: usize,
    pub confusion_prefix: usize,
    pub engines: Vec<EngineSpec>,
}

fn json_line<T: Serialize>(w: &mut impl Write, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, value).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(b"\n")?;
    Ok(())
}

fn parse_line<T: for<'de> Deserialize<'de>>(path: &Path, lineno: usize, line: &str) -> Result<T> {
    serde_json::from_str(line)
        .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), lineno + 1)))
}

pub fn run_file_name(key: &RunKey) -> String {
    format!("m{}_a{}_r{}.jsonl", key.max_mts, key.alpha, key.repetition)
}

/// Writes audit files under `<out>/audit`.
pub struct AuditWriter {
    root: PathBuf,
}

impl AuditWriter {
    /// Creates the directory tree; stale run files from earlier grids are
    /// removed so the directory always describes exactly one study.
    pub fn create(out: &Path) -> Result<Self> {
        let root = out.join("audit");
        let runs = root.join("runs");
        if runs.exists() {
            fs::remove_dir_all(&runs)?;
        }
        fs::create_dir_all(&runs)?;
        Ok(Self { root })
    }

    pub fn write_manifest(&self, grid: &GridSpec, engines: &[EngineSpec]) -> Result<()> {
        let manifest = Manifest {
            format: MANIFEST_FORMAT.into(),
            version: 1,
            window: grid.window,
            confusion_prefix: grid.confusion_prefix,
            engines: engines.to_vec(),
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(self.root.join("manifest.json"), text + "\n")?;
        Ok(())
    }

    pub fn write_baseline(&self, records: &[BaselineRecord]) -> Result<()> {
        write_jsonl(&self.root.join("baseline.jsonl"), None::<&()>, records)
    }

    pub fn write_run(&self, key: &RunKey, records: &[AuditRecord]) -> Result<()> {
        let path = self.root.join("runs").join(run_file_name(key));
        write_jsonl(&path, Some(key), records)
    }
}

fn write_jsonl<H: Serialize, T: Serialize>(path: &Path, header: Option<&H>, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    if let Some(h) = header {
        json_line(&mut w, h)?;
    }
    for r in records {
        json_line(&mut w, r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(out: &Path) -> Result<Manifest> {
    let path = out.join("audit").join("manifest.json");
    let text = fs::read_to_string(&path)?;
    let m: Manifest = parse_line(&path, 0, &text)?;
    if m.format != MANIFEST_FORMAT || m.version != 1 {
        return Err(Error::Format(format!("{}: unsupported audit format", path.display())));
    }
    Ok(m)
}

pub fn read_baseline(out: &Path) -> Result<Vec<BaselineRecord>> {
    let path = out.join("audit").join("baseline.jsonl");
    let reader = BufReader::new(File::open(&path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            records.push(parse_line(&path, i, &line)?);
        }
    }
    Ok(records)
}

pub fn read_run(path: &Path) -> Result<(RunKey, Vec<AuditRecord>)> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let key: RunKey = match lines.next() {
        Some((i, line)) => parse_line(path, i, &line?)?,
        None => return Err(Error::Format(format!("{}: empty run file", path.display()))),
    };
    let mut records = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if !line.trim().is_empty() {
            records.push(parse_line(path, i, &line)?);
        }
    }
    Ok((key, records))
}

/// Rebuilds the full report from the audit trail in `out`.
pub fn recompute(out: &Path) -> Result<ExperimentReport> {
    let manifest = read_manifest(out)?;
    let baseline = read_baseline(out)?;
    let k = manifest.engines.len();

    let mut files: Vec<PathBuf> = fs::read_dir(out.join("audit").join("runs"))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|x| x == "jsonl"));
    files.sort();

    // (max_mts, alpha bits) -> repetition -> summary; alpha >= 0 so the bit
    // pattern orders like the value.
    let mut cells: BTreeMap<(usize, u64), BTreeMap<usize, RunSummary>> = BTreeMap::new();
    for path in &files {
        let (key, records) = read_run(path)?;
        if records.len() != baseline.len() {
            return Err(Error::Invariant(format!(
                "{}: {} steps but {} baseline requests",
                path.display(),
                records.len(),
                baseline.len()
            )));
        }
        for r in &records {
            let expect = r.outcome.recompute_cost(&manifest.engines);
            if expect != r.outcome.cost {
                return Err(Error::Invariant(format!(
                    "{}: step {} cost {} does not match engines called ({expect})",
                    path.display(),
                    r.step,
                    r.outcome.cost
                )));
            }
        }
        let summary =
            RunSummary::from_records(&records, k, manifest.window, manifest.confusion_prefix)?;
        cells
            .entry((key.max_mts, key.alpha.to_bits()))
            .or_default()
            .insert(key.repetition, summary);
    }
    let cells = cells
        .into_iter()
        .map(|((m, bits), runs)| {
            let runs: Vec<RunSummary> = runs.into_values().collect();
            CellReport::aggregate(m, f64::from_bits(bits), &runs)
        })
        .collect();
    let grid = GridSpec {
        window: manifest.window,
        confusion_prefix: manifest.confusion_prefix,
        ..GridSpec::default()
    };
    assemble_report(&baseline, &manifest.engines, &grid, cells)
}

pub fn cells_csv(report: &ExperimentReport) -> String {
    let mut s = String::from(
        "max_mts,alpha,repetitions,std_undefined,cost_mean,cost_std,quality_mean,quality_std,\
         engine_calls_mean,engine_calls_std,qe_calls_mean,qe_calls_std,\
         exploit_fraction_mean,exploit_fraction_std,weighted_f1_mean,weighted_f1_std\n",
    );
    for c in &report.cells {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            c.max_mts,
            c.alpha,
            c.repetitions,
            c.std_undefined,
            c.cost.mean,
            c.cost.std,
            c.quality.mean,
            c.quality.std,
            c.engine_calls.mean,
            c.engine_calls.std,
            c.qe_calls.mean,
            c.qe_calls.std,
            c.exploit_fraction.mean,
            c.exploit_fraction.std,
            c.weighted_f1.mean,
            c.weighted_f1.std
        );
    }
    s
}

pub fn baselines_csv(report: &ExperimentReport) -> String {
    let f = &report.full_ensemble;
    let b = &report.best_mt;
    let n = report.n_requests as u64;
    format!(
        "baseline,engine,total_cost,mean_quality,engine_calls,qe_calls\n\
         full_ensemble,,{},{},{},{}\n\
         best_mt,{},{},{},{},0\n",
        f.total_cost, f.mean_quality, f.engine_calls, f.qe_calls, b.engine, b.total_cost, b.mean_quality, n
    )
}

pub fn convergence_csv(report: &ExperimentReport) -> String {
    let mut s = String::from("max_mts,alpha,index,weighted_f1\n");
    for c in &report.cells {
        for (i, v) in c.convergence.iter().enumerate() {
            let _ = writeln!(s, "{},{},{},{}", c.max_mts, c.alpha, i, v);
        }
    }
    s
}

pub fn confusion_csv(report: &ExperimentReport) -> String {
    let mut s = String::from("max_mts,alpha,ensemble_engine,router_engine,count,fraction,supported\n");
    for c in &report.cells {
        let Some(m) = &c.confusion else { continue };
        for (i, row) in m.counts.iter().enumerate() {
            for (j, count) in row.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{}",
                    c.max_mts, c.alpha, i, j, count, m.normalized[i][j], m.supported[i]
                );
            }
        }
    }
    s
}

pub fn summary_json(report: &ExperimentReport) -> Result<String> {
    serde_json::to_string_pretty(report)
        .map(|s| s + "\n")
        .map_err(|e| Error::Format(e.to_string()))
}

/// Writes the four tables and the structured summary into `out`.
pub fn write_report(out: &Path, report: &ExperimentReport) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("cells.csv"), cells_csv(report))?;
    fs::write(out.join("baselines.csv"), baselines_csv(report))?;
    fs::write(out.join("convergence.csv"), convergence_csv(report))?;
    fs::write(out.join("confusion.csv"), confusion_csv(report))?;
    fs::write(out.join("summary.json"), summary_json(report)?)?;
    Ok(())
}

/// Names of the files [`write_report`] produces.
pub const REPORT_FILES: [&str; 5] = [
    "cells.csv",
    "baselines.csv",
    "convergence.csv",
    "confusion.csv",
    "summary.json",
];

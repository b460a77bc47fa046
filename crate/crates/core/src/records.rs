//! CSV run records, report files and the run manifest.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::campaign::BenchmarkReport;
use crate::eig::ControlGrid;
use crate::error::Result;
use crate::models::LikelihoodModel;
use crate::orchestrator::{Mode, RunTrace};
use crate::sim::{shot_histogram, ShotRecord};
use crate::throughput::ThroughputReport;

pub const SHOTS_HEADER: [&str; 6] = ["shot_index", "batch_id", "tau_us", "outcome", "probe_time_us", "wall_time_us"];
pub const CHECKPOINTS_HEADER: [&str; 6] = ["n_shot", "param_name", "mean", "abs_unc", "rel_unc", "truth_rel_err"];
pub const REPORT_HEADER: [&str; 4] = ["mode", "n_shot", "metric", "median"];
pub const RUNS_HEADER: [&str; 5] = ["mode", "run_id", "n_shot", "metric", "value"];
pub const THROUGHPUT_HEADER: [&str; 5] = ["n_p", "grid", "precision", "evals_per_s", "latency_us"];
pub const HISTOGRAM_HEADER: [&str; 5] = ["tau_us", "shots", "mean_outcome", "p0_truth", "p0_posterior"];

fn s(v: impl Display) -> String {
    v.to_string()
}

fn writer(out: impl Write) -> csv::Writer<impl Write> {
    csv::Writer::from_writer(out)
}

pub fn write_shots(out: impl Write, records: &[ShotRecord]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(SHOTS_HEADER)?;
    for r in records {
        w.write_record([
            s(r.shot_index),
            s(r.batch_id),
            s(r.tau_us),
            s(r.outcome),
            s(r.probe_time_us),
            s(r.wall_time_us),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_checkpoints(out: impl Write, trace: &RunTrace) -> Result<()> {
    let mut w = writer(out);
    w.write_record(CHECKPOINTS_HEADER)?;
    for c in &trace.checkpoints {
        for (j, name) in trace.param_names.iter().enumerate() {
            w.write_record([
                s(c.n_shot),
                name.clone(),
                s(c.summary.mean[j]),
                s(c.summary.abs_uncertainty[j]),
                s(c.summary.rel_uncertainty[j]),
                s(c.truth_rel_err[j]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_report(out: impl Write, report: &BenchmarkReport) -> Result<()> {
    let mut w = writer(out);
    w.write_record(REPORT_HEADER)?;
    for r in &report.rows {
        w.write_record([s(r.mode), s(r.n_shot), r.metric.clone(), s(r.median)])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-run values behind every report median.
pub fn write_runs(out: impl Write, report: &BenchmarkReport) -> Result<()> {
    let mut w = writer(out);
    w.write_record(RUNS_HEADER)?;
    for r in report.runs.iter().filter(|r| r.failure.is_none()) {
        for (n, metrics) in &r.checkpoints {
            for (name, v) in metrics {
                w.write_record([s(r.mode), s(r.run_id), s(n), name.clone(), s(v)])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Median curves of one mode in wide form: `n_shot` then one column per metric.
pub fn write_curves(out: impl Write, report: &BenchmarkReport, mode: Mode) -> Result<()> {
    let mut table: BTreeMap<usize, BTreeMap<&str, f64>> = BTreeMap::new();
    let mut metrics: Vec<&str> = Vec::new();
    for r in report.rows.iter().filter(|r| r.mode == mode) {
        table.entry(r.n_shot).or_default().insert(&r.metric, r.median);
        if !metrics.contains(&r.metric.as_str()) {
            metrics.push(&r.metric);
        }
    }
    metrics.sort_unstable();
    let mut w = writer(out);
    w.write_record(std::iter::once("n_shot").chain(metrics.iter().copied()))?;
    for (n, row) in &table {
        let cells = metrics.iter().map(|m| row.get(m).map(s).unwrap_or_default());
        w.write_record(std::iter::once(s(n)).chain(cells))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_throughput(out: impl Write, reports: &[ThroughputReport]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(THROUGHPUT_HEADER)?;
    for r in reports {
        w.write_record([s(r.n_p), s(r.grid_size), r.precision.to_string(), s(r.evals_per_s), s(r.latency_us)])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-control shot counts and mean outcomes next to `Pr(0)` under the truth
/// and under the posterior mean.
pub fn write_histogram<M: LikelihoodModel>(
    out: impl Write,
    model: &M,
    grid: &ControlGrid,
    truth: &[f64],
    trace: &RunTrace,
) -> Result<()> {
    let posterior = &trace.final_checkpoint().summary.mean;
    let bins = shot_histogram(&trace.records, grid)?;
    let mut bins = bins.into_iter().peekable();
    let mut w = writer(out);
    w.write_record(HISTOGRAM_HEADER)?;
    for &tau in grid.taus() {
        let (count, mean) = match bins.peek() {
            Some(b) if b.tau_us == tau => {
                let b = bins.next().expect("peeked");
                (s(b.count), s(b.mean_outcome))
            }
            _ => (s(0), String::new()),
        };
        w.write_record([s(tau), count, mean, s(model.prob_zero(truth, tau)), s(model.prob_zero(posterior, tau))])?;
    }
    w.flush()?;
    Ok(())
}

/// Flat `key=value` description of a run or campaign.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest(BTreeMap<String, String>);

impl Manifest {
    pub fn new() -> Self {
        Manifest::default()
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Display) -> &mut Self {
        self.0.insert(key.into(), value.to_string().replace('\n', "\\n"));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn write(&self, mut out: impl Write) -> Result<()> {
        for (k, v) in &self.0 {
            writeln!(out, "{k}={v}")?;
        }
        Ok(())
    }
}

/// Creates `path` and hands a buffered writer to `f`.
pub fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    f(&mut out)?;
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shots_csv_layout() {
        let rec = ShotRecord {
            shot_index: 3,
            batch_id: 0,
            tau_us: 2.5,
            outcome: 1,
            probe_time_us: 160.0,
            wall_time_us: 160.0,
            watermark: Some(0),
        };
        let mut buf = Vec::new();
        write_shots(&mut buf, &[rec]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "shot_index,batch_id,tau_us,outcome,probe_time_us,wall_time_us\n3,0,2.5,1,160,160\n");
    }

    #[test]
    fn manifest_is_sorted() {
        let mut m = Manifest::new();
        m.set("seed", 7).set("mode", "sync");
        let mut buf = Vec::new();
        m.write(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "mode=sync\nseed=7\n");
    }
}

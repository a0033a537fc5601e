//! Output files of a run.
//!
//! Floats are written with 17 significant digits so logs round-trip exactly and
//! two runs can be compared byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::sim::{RunMetrics, StepRecord};
use crate::solver::SolveStatus;
use crate::{Error, Result};

pub const STEP_CSV_HEADER: &str =
    "t,agent_id,px,py,vx,vy,ux,uy,set_cx,set_cy,set_R,frozen,Jc,Jhat,solver_status,residual,min_pair_dist";

/// Float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    match s {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        "nan" => Ok(f64::NAN),
        _ => s.parse().map_err(|_| Error::Config(format!("bad number {s:?} in step log"))),
    }
}

/// One row per agent and step.
pub fn step_csv(log: &[StepRecord]) -> String {
    let mut out = String::new();
    out.push_str(STEP_CSV_HEADER);
    out.push('\n');
    for rec in log {
        for a in &rec.agents {
            let f = [
                a.state.p.x,
                a.state.p.y,
                a.state.v.x,
                a.state.v.y,
                a.input.u.x,
                a.input.u.y,
                a.set.c.x,
                a.set.c.y,
                a.set.r,
            ];
            let _ = write!(out, "{},{}", rec.t, a.id);
            for v in f {
                let _ = write!(out, ",{}", fmt_f64(v));
            }
            let _ = writeln!(
                out,
                ",{},{},{},{},{},{}",
                a.frozen as u8,
                fmt_f64(a.j_c),
                fmt_f64(a.j_hat),
                a.report.status.as_str(),
                fmt_f64(a.residual),
                fmt_f64(rec.min_pair_dist)
            );
        }
    }
    out
}

/// Metrics that can be recomputed from the step log alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSummary {
    pub steps: usize,
    pub rows: usize,
    pub min_pair_dist: f64,
    /// Sum over steps of the number of agents running on a frozen set.
    pub frozen_agent_steps: usize,
    pub fallback_count: usize,
    pub solver_errors: usize,
    pub max_residual: f64,
}

pub fn summarize_step_csv(text: &str) -> Result<CsvSummary> {
    let mut lines = text.lines();
    if lines.next() != Some(STEP_CSV_HEADER) {
        return Err(Error::Config("step log header mismatch".into()));
    }
    let mut s = CsvSummary {
        steps: 0,
        rows: 0,
        min_pair_dist: f64::INFINITY,
        frozen_agent_steps: 0,
        fallback_count: 0,
        solver_errors: 0,
        max_residual: 0.0,
    };
    let mut last_t: Option<&str> = None;
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 17 {
            return Err(Error::Config(format!("step log row has {} columns", cols.len())));
        }
        s.rows += 1;
        if last_t != Some(cols[0]) {
            s.steps += 1;
            last_t = Some(cols[0]);
        }
        s.frozen_agent_steps += (cols[11] == "1") as usize;
        match cols[14] {
            "fallback_used" => s.fallback_count += 1,
            "error" => s.solver_errors += 1,
            _ => {}
        }
        s.max_residual = s.max_residual.max(parse_f64(cols[15])?);
        s.min_pair_dist = s.min_pair_dist.min(parse_f64(cols[16])?);
    }
    Ok(s)
}

/// Distances between body centers and gaps between active sets, per pair and step.
pub fn pairwise_csv(log: &[StepRecord]) -> String {
    let mut out = String::from("t,i,j,distance,set_gap\n");
    for rec in log {
        for (k, a) in rec.agents.iter().enumerate() {
            for b in &rec.agents[k + 1..] {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    rec.t,
                    a.id,
                    b.id,
                    fmt_f64((a.state.p - b.state.p).norm()),
                    fmt_f64(a.set.gap(&b.set))
                );
            }
        }
    }
    out
}

pub fn freeze_csv(log: &[StepRecord]) -> String {
    let mut out = String::from("t,agents,frozen,min_set_gap\n");
    for rec in log {
        let _ = writeln!(out, "{},{},{},{}", rec.t, rec.agents.len(), rec.freeze_count, fmt_f64(rec.min_set_gap));
    }
    out
}

pub fn normalized_cost_csv(metrics: &RunMetrics, log: &[StepRecord]) -> String {
    let mut out = String::from("t,agent_id,Jc_normalized\n");
    for (id, series) in &metrics.normalized_cost {
        let times = log.iter().filter(|r| r.agents.iter().any(|a| a.id == *id)).map(|r| r.t);
        for (t, v) in times.zip(series) {
            let _ = writeln!(out, "{t},{id},{}", fmt_f64(*v));
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary<'a> {
    pub scenario: &'a str,
    pub seed: u64,
    pub metrics: &'a RunMetrics,
    pub violations: Vec<String>,
    pub solver_status_counts: Vec<(&'static str, usize)>,
}

pub fn summary_json(scenario: &str, seed: u64, metrics: &RunMetrics, log: &[StepRecord]) -> Result<String> {
    let violations =
        log.iter().flat_map(|r| r.checks.violations().into_iter().map(move |v| format!("t={}: {v}", r.t))).collect();
    let statuses =
        [SolveStatus::Optimal, SolveStatus::FeasibleSuboptimal, SolveStatus::FallbackUsed, SolveStatus::Error];
    let counts = statuses
        .iter()
        .map(|s| {
            let n = log.iter().flat_map(|r| &r.agents).filter(|a| a.report.status == *s).count();
            (s.as_str(), n)
        })
        .collect();
    let summary = Summary { scenario, seed, metrics, violations, solver_status_counts: counts };
    Ok(serde_json::to_string_pretty(&summary)?)
}

/// Writes `steps.csv`, `summary.json` and the `plot_*.csv` series into `dir`.
pub fn write_run(dir: &Path, scenario: &str, seed: u64, metrics: &RunMetrics, log: &[StepRecord]) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("steps.csv"), step_csv(log))?;
    fs::write(dir.join("summary.json"), summary_json(scenario, seed, metrics, log)?)?;
    fs::write(dir.join("plot_pairwise.csv"), pairwise_csv(log))?;
    fs::write(dir.join("plot_freeze.csv"), freeze_csv(log))?;
    fs::write(dir.join("plot_normalized_cost.csv"), normalized_cost_csv(metrics, log))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 123456789.12345679, 0.0] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
        assert_eq!(parse_f64("inf").unwrap(), f64::INFINITY);
    }

    #[test]
    fn empty_log_has_header_only() {
        assert_eq!(step_csv(&[]), format!("{STEP_CSV_HEADER}\n"));
        let s = summarize_step_csv(&step_csv(&[])).unwrap();
        assert_eq!(s.rows, 0);
        assert!(summarize_step_csv("t,x\n").is_err());
    }
}

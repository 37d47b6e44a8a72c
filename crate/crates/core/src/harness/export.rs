//! `results.csv` and `summary.json`.
//!
//! Both files are pure functions of the outcome: rows are ordered by trial,
//! algorithm name and iteration, floats use the shortest round-trip form,
//! line endings are LF and nothing time dependent is written.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

use super::{Algorithm, ExperimentOutcome, Summary};

pub const CSV_NAME: &str = "results.csv";
pub const SUMMARY_NAME: &str = "summary.json";

struct Row {
    /// Empty for the state evolution, which is not tied to a trial.
    trial: Option<u64>,
    algorithm: Algorithm,
    iteration: usize,
    mse: f64,
}

/// Columns `trial, algorithm, iteration, mse`; state evolution rows come
/// last with an empty trial.
pub fn write_csv<W: Write>(outcome: &ExperimentOutcome, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(["trial", "algorithm", "iteration", "mse"])?;
    let mut wr = |row: Row| -> Result<()> {
        w.write_field(row.trial.map(|t| t.to_string()).unwrap_or_default())?;
        w.write_field(row.algorithm.name())?;
        w.write_field(row.iteration.to_string())?;
        w.write_field(shortest(row.mse))?;
        w.write_record(None::<&[u8]>)?;
        Ok(())
    };
    for r in &outcome.records {
        for (&algorithm, trace) in &r.traces {
            for (t, &mse) in trace.iter().enumerate() {
                wr(Row {
                    trial: Some(r.trial),
                    algorithm,
                    iteration: t + 1,
                    mse,
                })?;
            }
        }
    }
    if let Some(se) = &outcome.se {
        for (t, &mse) in se.mse.iter().enumerate() {
            wr(Row {
                trial: None,
                algorithm: Algorithm::Se,
                iteration: t + 1,
                mse,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Shortest representation that parses back to the same `f64`.
fn shortest(x: f64) -> String {
    format!("{x:?}")
}

pub fn write_summary<W: Write>(summary: &Summary, mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, summary)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Writes both files into `dir`, creating it if needed.
pub fn export(outcome: &ExperimentOutcome, dir: &Path) -> Result<()> {
    if outcome.records.is_empty() {
        return Err(Error::invalid("nothing to export"));
    }
    fs::create_dir_all(dir)?;
    let mut csv = Vec::new();
    write_csv(outcome, &mut csv)?;
    fs::write(dir.join(CSV_NAME), csv)?;
    let mut json = Vec::new();
    write_summary(&outcome.summary, &mut json)?;
    fs::write(dir.join(SUMMARY_NAME), json)?;
    Ok(())
}

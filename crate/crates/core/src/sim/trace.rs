//! CSV dumps of an episode's trace and per-step diagnostics.

use std::io::Write;

use super::episode::EpisodeResult;
use crate::error::{Error, Result};

const STATE_FIELDS: [&str; 13] = [
    "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "wx", "wy", "wz",
];

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// One row per control step: clock, 13 state values, 4 rotor thrusts.
pub fn write_trace_csv<W: Write>(result: &EpisodeResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let header = ["clock"]
        .into_iter()
        .chain(STATE_FIELDS)
        .chain(["u1", "u2", "u3", "u4"]);
    w.write_record(header).map_err(csv_err)?;
    for e in &result.trace {
        let record: Vec<String> = std::iter::once(e.clock)
            .chain(e.state.to_array())
            .chain(e.input.rotor_thrusts)
            .map(|v| v.to_string())
            .collect();
        w.write_record(&record).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))
}

/// One row per control step with the sampler's bookkeeping. Per-sample
/// feasibility factors, when they were logged, follow as `p0..pK-1`.
pub fn write_diagnostics_csv<W: Write>(result: &EpisodeResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let samples = result
        .diagnostics
        .iter()
        .filter_map(|d| d.feasibility.as_ref().map(Vec::len))
        .max()
        .unwrap_or(0);
    let header: Vec<String> = [
        "clock",
        "min_cost",
        "rejected",
        "violated",
        "all_infeasible",
        "no_viable_sample",
        "mean_feasibility",
        "min_feasibility",
    ]
    .into_iter()
    .map(String::from)
    .chain((0..samples).map(|i| format!("p{i}")))
    .collect();
    w.write_record(&header).map_err(csv_err)?;
    for d in &result.diagnostics {
        let mut record = vec![
            d.clock.to_string(),
            d.min_cost.to_string(),
            d.rejected.to_string(),
            d.violated.to_string(),
            d.all_infeasible.to_string(),
            d.no_viable_sample.to_string(),
            d.mean_feasibility.to_string(),
            d.min_feasibility.to_string(),
        ];
        let probs = d.feasibility.as_deref().unwrap_or(&[]);
        record.extend(probs.iter().map(|p| p.to_string()));
        record.resize(header.len(), String::new());
        w.write_record(&record).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))
}

//! Trajectory CSV: one row per agent per recorded step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::RunOutcome;

pub const HEADER: &str = "t,agent_id,x,y,theta,gamma,u,omega,V,min_dij,di0";
pub const DEFAULT_STRIDE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub agent_id: u32,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub gamma: f64,
    pub u: f64,
    pub omega: f64,
    /// Empty for misbehaving agents.
    #[serde(rename = "V")]
    pub value: Option<f64>,
    pub min_dij: f64,
    pub di0: f64,
}

/// Rows for every `stride`-th record, ordered by time then agent id.
pub fn trajectory_rows(outcome: &RunOutcome, stride: usize) -> Vec<TrajectoryRow> {
    let stride = stride.max(1);
    outcome
        .trajectory
        .iter()
        .step_by(stride)
        .flat_map(|rec| {
            rec.agents.iter().map(move |a| TrajectoryRow {
                t: rec.t,
                agent_id: a.id,
                x: a.state.x,
                y: a.state.y,
                theta: a.state.theta,
                gamma: a.state.gamma,
                u: a.command.u,
                omega: a.command.omega,
                value: a.value,
                min_dij: a.min_distance,
                di0: a.center_distance,
            })
        })
        .collect()
}

pub fn write_rows(rows: &[TrajectoryRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    for row in rows {
        w.serialize(row)
            .map_err(|e| Error::Io(format!("cannot write trajectory row: {e}")))?;
    }
    let body = w
        .into_inner()
        .map_err(|e| Error::Io(format!("cannot flush trajectory: {e}")))?;
    let body = String::from_utf8(body).map_err(|e| Error::Io(e.to_string()))?;
    Ok(format!("{HEADER}\n{body}"))
}

/// CSV text for `outcome`, subsampled by `stride` (values below 1 mean 1).
pub fn emit_trajectory(outcome: &RunOutcome, stride: usize) -> Result<String> {
    write_rows(&trajectory_rows(outcome, stride))
}

pub fn read_trajectory(text: &str) -> Result<Vec<TrajectoryRow>> {
    let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = r
        .headers()
        .map_err(|e| parse_error(0, e))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != HEADER {
        return Err(Error::Parse {
            location: "line 1".into(),
            message: format!("expected header `{HEADER}`, found `{header}`"),
        });
    }
    r.deserialize()
        .enumerate()
        .map(|(k, row)| row.map_err(|e| parse_error(k + 2, e)))
        .collect()
}

fn parse_error(line: usize, e: csv::Error) -> Error {
    Error::Parse {
        location: format!("line {line}"),
        message: e.to_string(),
    }
}

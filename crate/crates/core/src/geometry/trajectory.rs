use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Pose;
use crate::error::{FusionError, Result};
use crate::Vec3;

/// Circular camera path around a target point, looking at it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitSpec {
    pub target: [f64; 3],
    pub radius: f64,
    /// Height of the camera above the target (along +z).
    #[serde(default)]
    pub height: f64,
    #[serde(default)]
    pub start_deg: f64,
    pub step_deg: f64,
}

pub fn orbit_trajectory(spec: &OrbitSpec, frames: usize) -> Vec<Pose> {
    let target = Vec3::from(spec.target);
    (0..frames)
        .map(|i| {
            let a = (spec.start_deg + spec.step_deg * i as f64).to_radians();
            let eye = target + Vec3::new(spec.radius * a.cos(), spec.radius * a.sin(), spec.height);
            Pose::look_at(eye, target, Vec3::z())
        })
        .collect()
}

const HEADER: [&str; 13] = [
    "frame", "r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22", "tx", "ty", "tz",
];

/// Writes one CSV row per pose: frame index, row-major rotation, translation.
pub fn write_trajectory(path: &Path, poses: &[Pose]) -> Result<()> {
    let io = |e: csv::Error| FusionError::format(path, e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(HEADER).map_err(io)?;
    for (i, pose) in poses.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(pose.to_row().iter().map(|x| format!("{x:.17e}")));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| FusionError::io(path, e))
}

/// Reads a trajectory written by [`write_trajectory`]; a header row is
/// optional. Rows are returned ordered by frame index, which must be dense.
pub fn read_trajectory(path: &Path) -> Result<Vec<Pose>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| FusionError::format(path, e.to_string()))?;
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| FusionError::format(path, e.to_string()))?;
        if line == 0 && rec.get(0).is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        let values = rec
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| FusionError::format(path, format!("row {}: {e}", line + 1)))?;
        if values.len() != 13 {
            return Err(FusionError::format(
                path,
                format!("row {} has {} fields, expected 13", line + 1, values.len()),
            ));
        }
        let pose =
            Pose::from_row(&values[1..]).map_err(|e| FusionError::format(path, format!("row {}: {e}", line + 1)))?;
        rows.push((values[0] as usize, pose));
    }
    rows.sort_by_key(|(i, _)| *i);
    for (expected, (i, _)) in rows.iter().enumerate() {
        if *i != expected {
            return Err(FusionError::format(path, format!("missing frame {expected}")));
        }
    }
    Ok(rows.into_iter().map(|(_, p)| p).collect())
}

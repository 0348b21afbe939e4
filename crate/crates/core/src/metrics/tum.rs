//! TUM-style trajectory text: `frame tx ty tz qx qy qz qw` per line.

use std::fmt::Write as _;

use nalgebra::Vector3;

use super::{MetricsError, Trajectory};
use crate::geometry::{Pose, Rotation};
use crate::numfmt::sig;

pub fn write_tum(traj: &Trajectory) -> String {
    let mut out = String::new();
    for (frame, pose) in traj.iter() {
        let [qw, qx, qy, qz] = pose.rotation.wxyz();
        let t = pose.translation;
        let nums: Vec<String> = [t.x, t.y, t.z, qx, qy, qz, qw].iter().map(|v| sig(*v, 9)).collect();
        let _ = writeln!(out, "{frame} {}", nums.join(" "));
    }
    out
}

/// Blank lines and `#` comments are skipped. Quaternions are renormalized.
pub fn read_tum(text: &str) -> Result<Trajectory, MetricsError> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let err = |message: String| MetricsError::Parse { line, message };
        let fields: Vec<&str> = body.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(err(format!("expected 8 fields, found {}", fields.len())));
        }
        let frame: u32 = fields[0].parse().map_err(|_| err(format!("bad frame index {:?}", fields[0])))?;
        let mut v = [0.0f64; 7];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            *slot = f.parse().map_err(|_| err(format!("bad number {f:?}")))?;
            if !slot.is_finite() {
                return Err(err(format!("non-finite number {f:?}")));
            }
        }
        let rotation = Rotation::from_wxyz(v[6], v[3], v[4], v[5]).map_err(|e| err(e.to_string()))?;
        if entries.last().is_some_and(|(prev, _)| *prev >= frame) {
            return Err(err(format!("frame {frame} is not after the previous frame")));
        }
        entries.push((frame, Pose::new(rotation, Vector3::new(v[0], v[1], v[2]))));
    }
    Trajectory::new(entries)
}

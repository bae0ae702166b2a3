//! TUM trajectory text: `timestamp tx ty tz qx qy qz qw` per line.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use super::IoError;
use crate::scene::Pose;

/// One timestamped camera-to-world pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stamped {
    pub timestamp: f64,
    pub pose: Pose,
}

pub fn format_line(s: &Stamped) -> String {
    let t = s.pose.translation;
    let q = s.pose.rotation.quaternion();
    format!(
        "{:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
        s.timestamp, t.x, t.y, t.z, q.i, q.j, q.k, q.w
    )
}

pub fn format_trajectory(poses: &[Stamped]) -> String {
    let mut out = String::new();
    for s in poses {
        let _ = writeln!(out, "{}", format_line(s));
    }
    out
}

/// Parses TUM text. Blank lines and `#` comments are skipped; line numbers
/// in errors are 1-based.
pub fn parse_trajectory(text: &str) -> Result<Vec<Stamped>, IoError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| IoError::Parse { line: i + 1, message };
        let vals = line
            .split_whitespace()
            .map(|tok| tok.parse::<f64>().map_err(|_| err(format!("not a number: {tok:?}"))))
            .collect::<Result<Vec<f64>, _>>()?;
        if vals.len() != 8 {
            return Err(err(format!("expected 8 fields, found {}", vals.len())));
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(err("non-finite value".into()));
        }
        let q = Quaternion::new(vals[7], vals[4], vals[5], vals[6]);
        if q.norm() < 1e-9 {
            return Err(err("zero quaternion".into()));
        }
        out.push(Stamped {
            timestamp: vals[0],
            pose: Pose::new(
                UnitQuaternion::from_quaternion(q),
                Vector3::new(vals[1], vals[2], vals[3]),
            ),
        });
    }
    Ok(out)
}

pub fn save_trajectory(poses: &[Stamped], path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    fs::write(path, format_trajectory(poses)).map_err(|e| IoError::file(path, e))
}

pub fn load_trajectory(path: impl AsRef<Path>) -> Result<Vec<Stamped>, IoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| IoError::file(path, e))?;
    parse_trajectory(&text)
}

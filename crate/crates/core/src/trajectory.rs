//! Valence-arousal points and 1 Hz trajectories.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point on the valence-arousal plane.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Va {
    pub valence: f64,
    pub arousal: f64,
}

impl Va {
    pub const fn new(valence: f64, arousal: f64) -> Self {
        Va { valence, arousal }
    }

    pub fn clipped(self) -> Self {
        Va::new(self.valence.clamp(-1.0, 1.0), self.arousal.clamp(-1.0, 1.0))
    }

    pub fn lerp(self, other: Va, w: f64) -> Va {
        Va::new(
            self.valence + (other.valence - self.valence) * w,
            self.arousal + (other.arousal - self.arousal) * w,
        )
    }

    pub fn max_abs_diff(self, other: Va) -> f64 {
        (self.valence - other.valence).abs().max((self.arousal - other.arousal).abs())
    }

    pub fn in_unit_square(self) -> bool {
        (-1.0..=1.0).contains(&self.valence) && (-1.0..=1.0).contains(&self.arousal)
    }
}

/// Per-second affect curve; point `t` is the affect at second `t`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AffectTrajectory {
    pub points: Vec<Va>,
}

impl AffectTrajectory {
    pub fn new(points: Vec<Va>) -> Self {
        AffectTrajectory { points }
    }

    pub fn constant(va: Va, seconds: usize) -> Self {
        AffectTrajectory { points: vec![va; seconds] }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn slice(&self, start: usize, end: usize) -> Self {
        AffectTrajectory { points: self.points[start..end].to_vec() }
    }

    pub fn valences(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.valence).collect()
    }

    pub fn arousals(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.arousal).collect()
    }

    pub fn mean(&self) -> Option<Va> {
        if self.points.is_empty() {
            return None;
        }
        let n = self.points.len() as f64;
        let (v, a) = self
            .points
            .iter()
            .fold((0.0, 0.0), |(v, a), p| (v + p.valence, a + p.arousal));
        Some(Va::new(v / n, a / n))
    }

    /// Serializes as `va.csv`: header `t_s,valence,arousal`, one row per second.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_s,valence,arousal\n");
        for (t, p) in self.points.iter().enumerate() {
            writeln!(out, "{t},{:.6},{:.6}", p.valence, p.arousal).expect("write to string");
        }
        out
    }

    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("t_s,valence,arousal") {
            return Err(Error::format(path, "missing va.csv header"));
        }
        let mut points = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            let parse = |s: &str| s.trim().parse::<f64>().map_err(|_| Error::format(path, format!("bad number on row {i}")));
            if cols.len() != 3 {
                return Err(Error::format(path, format!("row {i} has {} columns", cols.len())));
            }
            if parse(cols[0])? as usize != i {
                return Err(Error::format(path, format!("row {i} is not at 1 Hz")));
            }
            points.push(Va::new(parse(cols[1])?, parse(cols[2])?));
        }
        Ok(AffectTrajectory { points })
    }
}

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{normal, rng_from, Rng};
use crate::trajectory::{AffectTrajectory, Va};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Archetype {
    Rise,
    Fall,
    RiseFall,
    Plateau,
    RandomWalk,
}

impl Archetype {
    pub const ALL: [Archetype; 5] = [
        Archetype::Rise,
        Archetype::Fall,
        Archetype::RiseFall,
        Archetype::Plateau,
        Archetype::RandomWalk,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Archetype::Rise => "rise",
            Archetype::Fall => "fall",
            Archetype::RiseFall => "rise-fall",
            Archetype::Plateau => "plateau",
            Archetype::RandomWalk => "random-walk",
        }
    }
}

impl fmt::Display for Archetype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Archetype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Archetype::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown archetype {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArcSegment {
    pub duration_s: f64,
    pub start: Va,
    pub end: Va,
}

/// Continuous piecewise-linear affect curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrativeArc {
    pub segments: Vec<ArcSegment>,
    pub total_duration_s: usize,
}

impl NarrativeArc {
    pub fn from_segments(segments: Vec<ArcSegment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::InvalidInput("arc needs at least one segment".into()));
        }
        let total: f64 = segments.iter().map(|s| s.duration_s).sum();
        if (total - total.round()).abs() > 1e-9 || total < 1.0 {
            return Err(Error::InvalidInput(format!("arc duration {total} is not a whole number of seconds")));
        }
        for w in segments.windows(2) {
            if w[0].end != w[1].start {
                return Err(Error::InvalidInput("arc segments are not continuous".into()));
            }
        }
        if segments.iter().any(|s| s.duration_s <= 0.0 || !s.start.in_unit_square() || !s.end.in_unit_square()) {
            return Err(Error::InvalidInput("arc segment out of range".into()));
        }
        Ok(NarrativeArc {
            segments,
            total_duration_s: total.round() as usize,
        })
    }

    pub fn constant(va: Va, duration_s: usize) -> Self {
        NarrativeArc {
            segments: vec![ArcSegment {
                duration_s: duration_s as f64,
                start: va,
                end: va,
            }],
            total_duration_s: duration_s,
        }
    }

    /// Affect at time `t` seconds, clamped to the arc's extent.
    pub fn value_at(&self, t: f64) -> Va {
        let mut t0 = 0.0;
        for seg in &self.segments {
            if t <= t0 + seg.duration_s {
                let w = ((t - t0) / seg.duration_s).clamp(0.0, 1.0);
                return seg.start.lerp(seg.end, w);
            }
            t0 += seg.duration_s;
        }
        self.segments.last().expect("nonempty").end
    }

    /// The arc sampled at `t = 0, 1, …, total − 1`.
    pub fn sample_1hz(&self) -> AffectTrajectory {
        AffectTrajectory::new((0..self.total_duration_s).map(|t| self.value_at(t as f64)).collect())
    }

    /// Arc with both axes negated.
    pub fn negated(&self) -> Self {
        let neg = |v: Va| Va::new(-v.valence, -v.arousal);
        NarrativeArc {
            segments: self
                .segments
                .iter()
                .map(|s| ArcSegment {
                    duration_s: s.duration_s,
                    start: neg(s.start),
                    end: neg(s.end),
                })
                .collect(),
            total_duration_s: self.total_duration_s,
        }
    }
}

fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn sign(rng: &mut Rng) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

const RANDOM_WALK_STEP_S: usize = 1;

/// Generates a seeded arc of the given shape. Arousal follows the archetype;
/// valence moves in a random direction with a comparable range.
pub fn make_arc(seed: u64, duration_s: usize, archetype: Archetype) -> Result<NarrativeArc> {
    if duration_s < 10 {
        return Err(Error::Config(format!("arc duration {duration_s} s is below the 10 s minimum")));
    }
    let mut rng = rng_from(seed);
    let d = duration_s as f64;
    let low = |rng: &mut Rng| -uniform(rng, 0.4, 0.9);
    let high = |rng: &mut Rng| uniform(rng, 0.4, 0.9);
    let seg = |duration_s: f64, start: Va, end: Va| ArcSegment { duration_s, start, end };
    let segments = match archetype {
        Archetype::Plateau => {
            let va = Va::new(uniform(&mut rng, -0.8, 0.8), uniform(&mut rng, -0.8, 0.8));
            vec![seg(d, va, va)]
        }
        Archetype::Rise | Archetype::Fall => {
            let s = sign(&mut rng);
            let v0 = s * uniform(&mut rng, 0.3, 0.9);
            let v1 = -s * uniform(&mut rng, 0.3, 0.9);
            let (a0, a1) = (low(&mut rng), high(&mut rng));
            let (a0, a1) = if archetype == Archetype::Rise { (a0, a1) } else { (a1, a0) };
            vec![seg(d, Va::new(v0, a0), Va::new(v1, a1))]
        }
        Archetype::RiseFall => {
            let peak = ((d * uniform(&mut rng, 0.3, 0.7)).round()).clamp(1.0, d - 1.0);
            let s = sign(&mut rng);
            let v0 = s * uniform(&mut rng, 0.3, 0.9);
            let v1 = -s * uniform(&mut rng, 0.3, 0.9);
            let v2 = s * uniform(&mut rng, 0.0, 0.9);
            let (a0, a1, a2) = (low(&mut rng), high(&mut rng), low(&mut rng));
            let mid = Va::new(v1, a1);
            vec![seg(peak, Va::new(v0, a0), mid), seg(d - peak, mid, Va::new(v2, a2))]
        }
        Archetype::RandomWalk => {
            let mut cur = Va::new(uniform(&mut rng, -0.8, 0.8), uniform(&mut rng, -0.8, 0.8));
            let mut out = Vec::new();
            let mut left = duration_s;
            while left > 0 {
                let len = left.min(RANDOM_WALK_STEP_S);
                let next = Va::new(
                    (cur.valence + 0.8 * normal::<f64>(&mut rng)).clamp(-0.95, 0.95),
                    (cur.arousal + 0.8 * normal::<f64>(&mut rng)).clamp(-0.95, 0.95),
                );
                out.push(seg(len as f64, cur, next));
                cur = next;
                left -= len;
            }
            out
        }
    };
    NarrativeArc::from_segments(segments)
}

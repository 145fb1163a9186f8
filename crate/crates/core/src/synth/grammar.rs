//! The affect grammar that turns an arc into a token grid, and its analytic inverse.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::synth::{CodecSpec, NarrativeArc, TokenGrid};
use crate::trajectory::Va;

const SWITCH_FLOOR: f64 = 0.05;
const SWITCH_SPAN: f64 = 0.90;

/// Probability that codebook 0 changes token at a step with arousal `a`.
pub fn switch_probability(arousal: f64) -> f64 {
    SWITCH_FLOOR + SWITCH_SPAN * (arousal.clamp(-1.0, 1.0) + 1.0) / 2.0
}

/// Probability that a newly drawn token comes from the major pool.
pub fn major_probability(valence: f64) -> f64 {
    (valence.clamp(-1.0, 1.0) + 1.0) / 2.0
}

/// Inverse of [`switch_probability`], clipped to `[-1, 1]`.
pub fn arousal_from_switch_rate(rate: f64) -> f64 {
    (2.0 * (rate - SWITCH_FLOOR) / SWITCH_SPAN - 1.0).clamp(-1.0, 1.0)
}

pub fn valence_from_major_fraction(fraction: f64) -> f64 {
    (2.0 * fraction - 1.0).clamp(-1.0, 1.0)
}

/// Emits `arc.total_duration_s × tokens_per_second` rows. The affect of row
/// `i` is the arc at second `⌊i / tps⌋`.
pub fn grammar_emit(arc: &NarrativeArc, codec: &CodecSpec, seed: u64) -> Result<TokenGrid> {
    codec.validate()?;
    let mut rng = rng_from(seed);
    let voiced = codec.voiced_ids();
    let major = codec.major_range();
    let minor = codec.minor_range();
    let rows = codec.steps(arc.total_duration_s);
    let k = codec.num_codebooks;
    let mut data = Vec::with_capacity(rows * k);
    let mut prev: Option<u16> = None;
    for row in 0..rows {
        let va = arc.value_at((row / codec.tokens_per_second) as f64);
        let switch = match prev {
            None => true,
            Some(_) => rng.random::<f64>() < switch_probability(va.arousal),
        };
        let c0 = if switch {
            let pool = if rng.random::<f64>() < major_probability(va.valence) {
                major.clone()
            } else {
                minor.clone()
            };
            // Uniform over the pool, excluding the previous token.
            let candidates: Vec<u16> = voiced[pool].iter().copied().filter(|&t| Some(t) != prev).collect();
            candidates[rng.random_range(0..candidates.len())]
        } else {
            prev.expect("repeat needs a previous token")
        };
        prev = Some(c0);
        data.extend((0..k).map(|cb| codec.derived_token(c0, cb)));
    }
    TokenGrid::new(*codec, rows, data)
}

/// One decoded window; `None` when the window has no usable transition.
pub type DecodedPoint = Option<Va>;

/// Per-window affect recovered from token statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedTrajectory {
    pub window_s: usize,
    pub points: Vec<DecodedPoint>,
}

impl DecodedTrajectory {
    pub fn defined(&self) -> impl Iterator<Item = (usize, Va)> + '_ {
        self.points.iter().enumerate().filter_map(|(i, p)| p.map(|v| (i, v)))
    }
}

/// Codebook-0 statistics of a run of rows.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WindowStats {
    pub voiced: usize,
    pub major: usize,
    pub transitions: usize,
    pub switches: usize,
}

impl WindowStats {
    pub fn of(tokens: &TokenGrid, start: usize, end: usize) -> Self {
        let codec = tokens.codec;
        let mut s = WindowStats::default();
        let mut prev: Option<u16> = None;
        for row in start..end {
            let t = tokens.get(row, 0);
            if t == codec.silence_token {
                prev = None;
                continue;
            }
            s.voiced += 1;
            if codec.is_major(t) {
                s.major += 1;
            }
            if let Some(p) = prev {
                s.transitions += 1;
                if p != t {
                    s.switches += 1;
                }
            }
            prev = Some(t);
        }
        s
    }

    pub fn switch_rate(&self) -> Option<f64> {
        (self.transitions > 0).then(|| self.switches as f64 / self.transitions as f64)
    }

    pub fn major_fraction(&self) -> Option<f64> {
        (self.voiced > 0).then(|| self.major as f64 / self.voiced as f64)
    }

    pub fn affect(&self) -> Option<Va> {
        Some(Va::new(
            valence_from_major_fraction(self.major_fraction()?),
            arousal_from_switch_rate(self.switch_rate()?),
        ))
    }
}

/// Measures affect from tokens over consecutive `window_s` windows. A trailing
/// partial window is decoded too. Silence rows are excluded from both estimates
/// and break transitions.
pub fn oracle_decode(tokens: &TokenGrid, window_s: usize) -> Result<DecodedTrajectory> {
    if tokens.is_empty() {
        return Err(Error::InvalidInput("cannot decode an empty token grid".into()));
    }
    if window_s == 0 {
        return Err(Error::InvalidInput("oracle window must be >= 1 s".into()));
    }
    let len = window_s * tokens.codec.tokens_per_second;
    let points = (0..tokens.rows())
        .step_by(len)
        .map(|start| WindowStats::of(tokens, start, (start + len).min(tokens.rows())).affect())
        .collect();
    Ok(DecodedTrajectory { window_s, points })
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{oracle_decode, TokenGrid};
use crate::trajectory::AffectTrajectory;

/// Pearson correlation per axis between oracle-decoded and target affect.
/// `None` marks an undefined score (zero variance on either side).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub valence: Option<f64>,
    pub arousal: Option<f64>,
    /// Windows with a defined oracle reading.
    pub windows: usize,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    const FLAT: f64 = 1e-12;
    if sxx <= FLAT || syy <= FLAT {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Compares `window_s` windows of the oracle reading of `generated` with the
/// mean of `target` over the same seconds.
pub fn affect_alignment(generated: &TokenGrid, target: &AffectTrajectory, window_s: usize) -> Result<Alignment> {
    if generated.silent_rows() == generated.rows() {
        return Err(Error::InvalidInput("generated audio is entirely silent".into()));
    }
    let decoded = oracle_decode(generated, window_s)?;
    let (mut dv, mut da, mut tv, mut ta) = (vec![], vec![], vec![], vec![]);
    for (i, va) in decoded.defined() {
        let (a, b) = (i * window_s, ((i + 1) * window_s).min(target.len()));
        let Some(mean) = (a < b).then(|| target.slice(a, b).mean()).flatten() else {
            continue;
        };
        dv.push(va.valence);
        da.push(va.arousal);
        tv.push(mean.valence);
        ta.push(mean.arousal);
    }
    if dv.len() < 3 {
        return Err(Error::InvalidInput(format!("{} decodable windows; need at least 3", dv.len())));
    }
    Ok(Alignment {
        valence: pearson(&dv, &tv),
        arousal: pearson(&da, &ta),
        windows: dv.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{grammar_emit, CodecSpec, NarrativeArc};
    use crate::trajectory::Va;

    #[test]
    fn pearson_by_hand() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap() + 0.5).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), None);
    }

    #[test]
    fn constant_target_is_flagged_and_silence_errors() {
        let codec = CodecSpec::default();
        let arc = NarrativeArc::constant(Va::new(0.2, 0.1), 40);
        let g = grammar_emit(&arc, &codec, 1).unwrap();
        let al = affect_alignment(&g, &arc.sample_1hz(), 5).unwrap();
        assert_eq!((al.valence, al.arousal), (None, None));
        assert_eq!(al.windows, 8);
        assert!(affect_alignment(&TokenGrid::silent(codec, 100), &arc.sample_1hz(), 5).is_err());
    }
}

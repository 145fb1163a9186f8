//! Delay-pattern interleaving: codebook `k` is shifted right by `k` steps and
//! the gaps are filled with a reserved pad id.

use crate::error::{Error, Result};
use crate::synth::{CodecSpec, TokenGrid};

/// `(T + K − 1) × K` grid in delayed layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelayedGrid {
    pub codec: CodecSpec,
    pub pad: u16,
    steps: usize,
    data: Vec<u16>,
}

impl DelayedGrid {
    pub fn from_raw(codec: CodecSpec, pad: u16, steps: usize, data: Vec<u16>) -> Result<Self> {
        if data.len() != steps * codec.num_codebooks {
            return Err(Error::Shape(format!("{} ids for {steps} delayed steps", data.len())));
        }
        Ok(DelayedGrid { codec, pad, steps, data })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn num_codebooks(&self) -> usize {
        self.codec.num_codebooks
    }

    pub fn get(&self, step: usize, k: usize) -> u16 {
        self.data[step * self.codec.num_codebooks + k]
    }

    pub fn row(&self, step: usize) -> &[u16] {
        let k = self.codec.num_codebooks;
        &self.data[step * k..(step + 1) * k]
    }

    pub fn is_pad(&self, step: usize, k: usize) -> bool {
        self.get(step, k) == self.pad
    }

    /// Number of undelayed rows this grid encodes.
    pub fn source_rows(&self) -> usize {
        (self.steps + 1).saturating_sub(self.codec.num_codebooks)
    }
}

/// Position of `(row, k)` of an undelayed grid in delayed layout is `(row + k, k)`.
pub fn apply_delay(tokens: &TokenGrid, pad: u16) -> DelayedGrid {
    let k = tokens.num_codebooks();
    let t = tokens.rows();
    let steps = if t == 0 { 0 } else { t + k - 1 };
    let mut data = vec![pad; steps * k];
    for row in 0..t {
        for cb in 0..k {
            data[(row + cb) * k + cb] = tokens.get(row, cb);
        }
    }
    DelayedGrid {
        codec: tokens.codec,
        pad,
        steps,
        data,
    }
}

/// Exact inverse of [`apply_delay`]; pads must sit exactly where the delay put them.
pub fn remove_delay(grid: &DelayedGrid) -> Result<TokenGrid> {
    let k = grid.num_codebooks();
    if grid.steps == 0 {
        return TokenGrid::new(grid.codec, 0, Vec::new());
    }
    if grid.steps < k {
        return Err(Error::Decode(format!("{} delayed steps cannot hold {k} codebooks", grid.steps)));
    }
    let rows = grid.steps + 1 - k;
    let mut out = Vec::with_capacity(rows * k);
    for step in 0..grid.steps {
        for cb in 0..k {
            let in_range = step >= cb && step - cb < rows;
            if grid.is_pad(step, cb) == in_range {
                return Err(Error::Decode(format!(
                    "pad misplaced at step {step}, codebook {cb}"
                )));
            }
        }
    }
    for row in 0..rows {
        for cb in 0..k {
            out.push(grid.get(row + cb, cb));
        }
    }
    TokenGrid::new(grid.codec, rows, out).map_err(|e| Error::Decode(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn codec(k: usize) -> CodecSpec {
        CodecSpec { num_codebooks: k, ..Default::default() }
    }

    #[test]
    fn two_codebook_example() {
        let (a, b, c, d, e, f) = (1, 2, 3, 4, 5, 6);
        let g = TokenGrid::new(codec(2), 3, vec![a, b, c, d, e, f]).unwrap();
        let p = 64;
        let dg = apply_delay(&g, p);
        assert_eq!(dg.steps(), 4);
        let rows: Vec<&[u16]> = (0..4).map(|s| dg.row(s)).collect();
        assert_eq!(rows, vec![&[a, p][..], &[c, b], &[e, d], &[p, f]]);
        assert_eq!(remove_delay(&dg).unwrap(), g);
    }

    #[test]
    fn single_codebook_is_identity() {
        let g = TokenGrid::new(codec(1), 3, vec![7, 8, 9]).unwrap();
        let dg = apply_delay(&g, 64);
        assert_eq!(dg.steps(), 3);
        assert!((0..3).all(|s| dg.get(s, 0) == g.get(s, 0)));
    }

    #[test]
    fn delayed_length_is_t_plus_k_minus_one() {
        for t in 1..=5 {
            for k in 1..=4 {
                let g = TokenGrid::new(codec(k), t, vec![1; t * k]).unwrap();
                assert_eq!(apply_delay(&g, 64).steps(), t + k - 1);
            }
        }
    }

    #[test]
    fn misplaced_pad_is_rejected() {
        let g = TokenGrid::new(codec(2), 3, vec![1, 2, 3, 4, 5, 6]).unwrap();
        let dg = apply_delay(&g, 64);
        let mut raw = dg.data.clone();
        raw[0] = 64;
        let bad = DelayedGrid::from_raw(dg.codec, 64, dg.steps(), raw).unwrap();
        assert!(matches!(remove_delay(&bad), Err(Error::Decode(_))));
        let mut raw = dg.data.clone();
        raw[1] = 9;
        let bad = DelayedGrid::from_raw(dg.codec, 64, dg.steps(), raw).unwrap();
        assert!(remove_delay(&bad).is_err());
    }

    proptest! {
        #[test]
        fn delay_round_trip(k in 1usize..=4, t in 1usize..=64, seed in any::<u64>()) {
            let ids: Vec<u16> = (0..t * k).map(|i| (crate::rng::mix64(seed ^ i as u64) % 64) as u16).collect();
            let g = TokenGrid::new(codec(k), t, ids).unwrap();
            prop_assert_eq!(remove_delay(&apply_delay(&g, 64)).unwrap(), g);
        }
    }
}

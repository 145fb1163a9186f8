use ndarray::Array2;

use crate::error::{Error, Result};
use crate::nn::log_sum_exp;
use crate::synth::DelayedGrid;
use crate::Scalar;

/// Mean cross-entropy over the non-pad entries of `targets`.
pub fn gen_loss<T: Scalar>(logits: &[Array2<T>], targets: &DelayedGrid) -> Result<T> {
    check(logits, targets)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (k, lk) in logits.iter().enumerate() {
        for s in 0..targets.steps() {
            if targets.is_pad(s, k) {
                continue;
            }
            let row = lk.row(s);
            let row = row.as_slice().expect("contiguous logits");
            total += (log_sum_exp(row) - row[usize::from(targets.get(s, k))]).f64();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InvalidInput("every target position is padding".into()));
    }
    Ok(T::of(total / count as f64))
}

/// [`gen_loss`] and its gradient w.r.t. every logit.
pub fn gen_loss_with_grad<T: Scalar>(logits: &[Array2<T>], targets: &DelayedGrid) -> Result<(T, Vec<Array2<T>>)> {
    check(logits, targets)?;
    let count = (0..targets.steps())
        .flat_map(|s| (0..logits.len()).map(move |k| (s, k)))
        .filter(|&(s, k)| !targets.is_pad(s, k))
        .count();
    if count == 0 {
        return Err(Error::InvalidInput("every target position is padding".into()));
    }
    let inv = T::of(1.0 / count as f64);
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (k, lk) in logits.iter().enumerate() {
        let mut g = Array2::zeros(lk.raw_dim());
        for s in 0..targets.steps() {
            if targets.is_pad(s, k) {
                continue;
            }
            let row = lk.row(s);
            let row = row.as_slice().expect("contiguous logits");
            let lse = log_sum_exp(row);
            let target = usize::from(targets.get(s, k));
            total += (lse - row[target]).f64();
            let mut grow = g.row_mut(s);
            for (gv, &x) in grow.iter_mut().zip(row) {
                *gv = (x - lse).exp() * inv;
            }
            grow[target] -= inv;
        }
        grads.push(g);
    }
    Ok((T::of(total / count as f64), grads))
}

fn check<T: Scalar>(logits: &[Array2<T>], targets: &DelayedGrid) -> Result<()> {
    if logits.len() != targets.num_codebooks() {
        return Err(Error::Shape(format!(
            "{} logit heads for {} codebooks",
            logits.len(),
            targets.num_codebooks()
        )));
    }
    for (k, l) in logits.iter().enumerate() {
        if l.nrows() != targets.steps() {
            return Err(Error::Shape(format!("head {k}: {} rows for {} steps", l.nrows(), targets.steps())));
        }
        for s in 0..targets.steps() {
            if !targets.is_pad(s, k) && usize::from(targets.get(s, k)) >= l.ncols() {
                return Err(Error::Shape(format!("target id {} outside {} logits", targets.get(s, k), l.ncols())));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{apply_delay, CodecSpec, TokenGrid};

    fn one_codebook(rows: usize) -> DelayedGrid {
        let codec = CodecSpec { num_codebooks: 1, ..Default::default() };
        let data = (0..rows).map(|i| (i % 64) as u16).collect();
        apply_delay(&TokenGrid::new(codec, rows, data).unwrap(), 64)
    }

    #[test]
    fn uniform_logits_give_log_vocab() {
        let targets = one_codebook(20);
        let logits = vec![Array2::<f64>::zeros((20, 64))];
        let loss = gen_loss(&logits, &targets).unwrap();
        assert!((loss - 64f64.ln()).abs() < 1e-12);
        assert!((loss - 4.1589).abs() < 1e-4);
    }

    #[test]
    fn confident_correct_logits_approach_zero() {
        let targets = one_codebook(5);
        let mut l = Array2::<f64>::zeros((5, 64));
        for s in 0..5 {
            l[[s, usize::from(targets.get(s, 0))]] = 50.0;
        }
        assert!(gen_loss(&[l], &targets).unwrap() < 1e-15);
    }

    #[test]
    fn pads_are_masked_and_all_pad_errors() {
        let codec = CodecSpec { num_codebooks: 3, vocab_size: 4, ..Default::default() };
        let targets = apply_delay(&TokenGrid::new(codec, 2, vec![1, 2, 3, 2, 1, 0]).unwrap(), 4);
        let mut logits = vec![Array2::<f64>::zeros((4, 5)); 3];
        // Huge logits on the pad column would dominate if pads counted.
        for l in &mut logits {
            l.column_mut(4).fill(0.0);
        }
        let loss = gen_loss(&logits, &targets).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);

        let all_pad = DelayedGrid::from_raw(codec, 4, 2, vec![4; 6]).unwrap();
        assert!(gen_loss(&vec![Array2::<f64>::zeros((2, 5)); 3], &all_pad).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let codec = CodecSpec { num_codebooks: 2, vocab_size: 5, ..Default::default() };
        let targets = apply_delay(&TokenGrid::new(codec, 3, vec![1, 2, 3, 4, 0, 1]).unwrap(), 5);
        let mut logits: Vec<Array2<f64>> = (0..2)
            .map(|k| crate::rng::normal_matrix(&mut crate::rng::rng_from(k), 4, 6, 1.0))
            .collect();
        let (_, g) = gen_loss_with_grad(&logits, &targets).unwrap();
        let h = 1e-6;
        for k in 0..2 {
            for idx in [(0, 1), (1, 3), (3, 5), (2, 0)] {
                let old = logits[k][idx];
                logits[k][idx] = old + h;
                let up = gen_loss(&logits, &targets).unwrap();
                logits[k][idx] = old - h;
                let down = gen_loss(&logits, &targets).unwrap();
                logits[k][idx] = old;
                let fd = (up - down) / (2.0 * h);
                assert!((fd - g[k][idx]).abs() < 1e-8, "{k} {idx:?}: {fd} vs {}", g[k][idx]);
            }
        }
    }
}

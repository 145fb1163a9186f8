use crate::error::{Error, Result};
use crate::synth::TokenGrid;

/// Laplace-smoothed (α = 1) codebook-0 unigram distribution of a corpus.
pub fn smoothed_unigram(corpus: &[TokenGrid]) -> Result<Vec<f64>> {
    let vocab = corpus
        .first()
        .ok_or_else(|| Error::InvalidInput("empty token corpus".into()))?
        .codec
        .vocab_size;
    let mut counts = vec![1.0f64; vocab];
    for g in corpus {
        if g.codec.vocab_size != vocab {
            return Err(Error::InvalidInput("corpora use different vocabularies".into()));
        }
        for t in g.codebook(0) {
            counts[usize::from(t)] += 1.0;
        }
    }
    let total: f64 = counts.iter().sum();
    Ok(counts.into_iter().map(|c| c / total).collect())
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(&a, &b)| a * (a / b).ln()).sum()
}

/// `½·KL(P‖Q) + ½·KL(Q‖P)` between smoothed unigram distributions.
pub fn kld_score(a: &[TokenGrid], b: &[TokenGrid]) -> Result<f64> {
    let p = smoothed_unigram(a)?;
    let q = smoothed_unigram(b)?;
    if p.len() != q.len() {
        return Err(Error::InvalidInput("corpora use different vocabularies".into()));
    }
    Ok(0.5 * kl(&p, &q) + 0.5 * kl(&q, &p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::CodecSpec;

    fn two_symbol(ones: usize, total: usize) -> TokenGrid {
        let codec = CodecSpec { num_codebooks: 1, vocab_size: 2, ..Default::default() };
        TokenGrid::new(codec, total, (0..total).map(|i| u16::from(i < ones)).collect()).unwrap()
    }

    #[test]
    fn two_symbol_case() {
        let p = two_symbol(500_000, 1_000_000);
        let q = two_symbol(250_000, 1_000_000);
        let score = kld_score(&[p.clone()], &[q.clone()]).unwrap();
        let hand = 0.5 * (0.5 * (0.5f64 / 0.75).ln() + 0.5 * (0.5f64 / 0.25).ln())
            + 0.5 * (0.75 * (0.75f64 / 0.5).ln() + 0.25 * (0.25f64 / 0.5).ln());
        assert!((score - hand).abs() < 1e-5);
        assert!((score - 0.1373).abs() < 1e-3);
        assert_eq!(score, kld_score(&[q], &[p.clone()]).unwrap());
        assert_eq!(kld_score(&[p.clone()], &[p]).unwrap(), 0.0);
        assert!(kld_score(&[], &[two_symbol(1, 2)]).is_err());
    }
}

use crate::synth::{grammar::WindowStats, TokenGrid};

/// Statistics window inside an embedding chunk.
pub const EMBED_WINDOW_S: usize = 5;
/// Length of audio summarized by one embedding.
pub const EMBED_CHUNK_S: usize = 30;
pub const FEATURES_PER_WINDOW: usize = 4;

/// Per-window (switch rate, major fraction, entropy, silence ratio), concatenated.
pub type FeatureEmbedding = Vec<f64>;

/// Codebook-0 unigram entropy of rows `[start, end)`, in nats.
fn entropy(tokens: &TokenGrid, start: usize, end: usize) -> f64 {
    let mut counts = vec![0usize; tokens.codec.vocab_size];
    for row in start..end {
        counts[usize::from(tokens.get(row, 0))] += 1;
    }
    let n = (end - start) as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Embedding of rows `[start, start + EMBED_CHUNK_S·tps)`. Undefined rates
/// (no voiced rows or no transitions) read as 0.
pub fn clip_embedding(tokens: &TokenGrid, start: usize) -> FeatureEmbedding {
    let w = EMBED_WINDOW_S * tokens.codec.tokens_per_second;
    let windows = EMBED_CHUNK_S / EMBED_WINDOW_S;
    let mut out = Vec::with_capacity(windows * FEATURES_PER_WINDOW);
    for i in 0..windows {
        let (a, b) = (start + i * w, start + (i + 1) * w);
        let stats = WindowStats::of(tokens, a, b);
        out.push(stats.switch_rate().unwrap_or(0.0));
        out.push(stats.major_fraction().unwrap_or(0.0));
        out.push(entropy(tokens, a, b));
        out.push(1.0 - stats.voiced as f64 / (b - a) as f64);
    }
    out
}

/// Every full `EMBED_CHUNK_S` chunk of every grid, in corpus order.
pub fn corpus_embeddings(corpus: &[TokenGrid]) -> Vec<FeatureEmbedding> {
    corpus
        .iter()
        .flat_map(|g| {
            let chunk = EMBED_CHUNK_S * g.codec.tokens_per_second;
            (0..g.rows() / chunk).map(move |i| clip_embedding(g, i * chunk))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::CodecSpec;

    #[test]
    fn embedding_by_hand() {
        let codec = CodecSpec { num_codebooks: 1, ..Default::default() };
        // Window 0: 25 rows of token 1 then 25 rows alternating 1/40; rest silent.
        let mut data = vec![0u16; 300];
        for (i, x) in data.iter_mut().enumerate().take(50) {
            *x = if i < 25 || i % 2 == 0 { 1 } else { 40 };
        }
        let g = TokenGrid::new(codec, 300, data).unwrap();
        let e = clip_embedding(&g, 0);
        assert_eq!(e.len(), 24);
        assert!((e[0] - 25.0 / 49.0).abs() < 1e-12);
        assert!((e[1] - 37.0 / 50.0).abs() < 1e-12);
        let p = 37.0 / 50.0;
        assert!((e[2] - -(p * f64::ln(p) + (1.0 - p) * f64::ln(1.0 - p))).abs() < 1e-12);
        assert_eq!(e[3], 0.0);
        assert_eq!(&e[4..8], &[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(corpus_embeddings(&[g.clone(), g.slice_rows(0, 299)]).len(), 1);
    }
}

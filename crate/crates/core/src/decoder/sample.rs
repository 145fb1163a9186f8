use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{AcousticDecoder, GateParams};
use crate::error::{Error, Result};
use crate::nn::softmax_in_place;
use crate::rng::{rng_from, Rng};
use crate::synth::{remove_delay, DelayedGrid, TokenGrid};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub temperature: f64,
    pub top_k: usize,
    pub rng_seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            temperature: 1.0,
            top_k: 16,
            rng_seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, vocab: usize) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be > 0".into()));
        }
        if self.top_k == 0 || self.top_k > vocab {
            return Err(Error::Config(format!("top_k must lie in 1..={vocab}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SampleOutput {
    /// The `length` newly generated rows (prefix excluded).
    pub tokens: TokenGrid,
    /// Decoder input steps consumed by this call.
    pub context_steps: usize,
    /// Delayed-space input rows fed to the decoder, in order.
    pub inputs: DelayedGrid,
}

/// Draws one id from the top `k` of `logits / temperature`, never `pad`.
fn draw<T: Scalar>(logits: &[T], pad: usize, cfg: &SamplerConfig, rng: &mut Rng) -> u16 {
    let mut order: Vec<usize> = (0..logits.len()).filter(|&i| i != pad).collect();
    order.sort_by(|&a, &b| logits[b].partial_cmp(&logits[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    order.truncate(cfg.top_k.min(order.len()));
    let mut probs: Vec<f64> = order.iter().map(|&i| logits[i].f64() / cfg.temperature).collect();
    softmax_in_place(&mut probs);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (&id, p) in order.iter().zip(&probs) {
        acc += p;
        if u < acc {
            return id as u16;
        }
    }
    *order.last().expect("top_k >= 1") as u16
}

/// Autoregressive sampling in delayed space. The `prefix` rows are
/// teacher-forced, then `length` new rows are drawn. `control`, when given,
/// has one row per undelayed row of prefix + continuation; the trailing
/// delay steps reuse its last row.
pub fn sample<T: Scalar>(
    decoder: &AcousticDecoder<T>,
    memory: ArrayView2<T>,
    control: Option<(ArrayView2<T>, &GateParams<T>)>,
    prefix: &TokenGrid,
    length: usize,
    cfg: &SamplerConfig,
) -> Result<SampleOutput> {
    let codec = prefix.codec;
    let k = codec.num_codebooks;
    let pad = decoder.config.pad_token();
    cfg.validate(codec.vocab_size)?;
    if length == 0 {
        return Err(Error::InvalidInput("sample length must be >= 1".into()));
    }
    if k != decoder.config.num_codebooks || usize::from(pad) != codec.vocab_size {
        return Err(Error::Config("codec does not match the decoder".into()));
    }
    let p = prefix.rows();
    let total = p + length;
    let steps = total + k - 1;
    if let Some((c, _)) = control {
        if c.nrows() != total {
            return Err(Error::Shape(format!("control has {} rows for {total} tokens", c.nrows())));
        }
    }
    if steps > decoder.config.max_context {
        return Err(Error::ContextOverflow {
            len: steps,
            max: decoder.config.max_context,
        });
    }

    let mut rng = rng_from(cfg.rng_seed);
    let mut state = decoder.start(memory);
    let mut delayed = vec![pad; steps * k];
    let mut inputs = Vec::with_capacity(steps * k);
    let mut input = vec![pad; k];
    for s in 0..steps {
        let c = control.as_ref().map(|(c, g)| (c.row(s.min(total - 1)), *g));
        let logits = decoder.step(&mut state, &input, c)?;
        inputs.extend_from_slice(&input);
        for cb in 0..k {
            let token = if s < cb || s - cb >= total {
                pad
            } else if s - cb < p {
                prefix.get(s - cb, cb)
            } else {
                let row = logits[cb].as_slice().expect("contiguous logits");
                draw(row, usize::from(pad), cfg, &mut rng)
            };
            delayed[s * k + cb] = token;
        }
        input.copy_from_slice(&delayed[s * k..(s + 1) * k]);
    }
    let grid = remove_delay(&DelayedGrid::from_raw(codec, pad, steps, delayed)?)?;
    Ok(SampleOutput {
        tokens: grid.slice_rows(p, total),
        context_steps: state.position(),
        inputs: DelayedGrid::from_raw(codec, pad, steps, inputs)?,
    })
}

/// Repeats the last control row so the matrix covers `steps` rows.
pub(crate) fn extend_rows<T: Scalar>(m: ArrayView2<T>, steps: usize) -> Array2<T> {
    let n = m.nrows();
    Array2::from_shape_fn((steps, m.ncols()), |(i, j)| m[[i.min(n - 1), j]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::DecoderConfig;
    use crate::synth::CodecSpec;

    fn setup() -> (AcousticDecoder<f64>, CodecSpec) {
        let codec = CodecSpec::default();
        let cfg = DecoderConfig { layers: 1, dim: 8, heads: 2, seed: 1, ..Default::default() }.for_codec(&codec);
        (AcousticDecoder::new(cfg).unwrap(), codec)
    }

    #[test]
    fn shape_and_determinism() {
        let (dec, codec) = setup();
        let mem = Array2::<f64>::ones((4, 8));
        let cfg = SamplerConfig { rng_seed: 5, ..Default::default() };
        let empty = TokenGrid::silent(codec, 0);
        let a = sample(&dec, mem.view(), None, &empty, 100, &cfg).unwrap();
        let b = sample(&dec, mem.view(), None, &empty, 100, &cfg).unwrap();
        assert_eq!((a.tokens.rows(), a.tokens.num_codebooks()), (100, 4));
        assert_eq!(a.tokens, b.tokens);
        assert!(a.tokens.as_slice().iter().all(|&t| t < 64));
        let c = sample(&dec, mem.view(), None, &empty, 100, &SamplerConfig { rng_seed: 6, ..cfg }).unwrap();
        assert_ne!(a.tokens, c.tokens);
    }

    #[test]
    fn prefix_is_teacher_forced() {
        let (dec, codec) = setup();
        let mem = Array2::<f64>::ones((4, 8));
        let prefix = TokenGrid::new(codec, 3, (0..12).map(|i| (i * 5 % 64) as u16).collect()).unwrap();
        let out = sample(&dec, mem.view(), None, &prefix, 7, &SamplerConfig::default()).unwrap();
        assert_eq!(out.tokens.rows(), 7);
        assert_eq!(out.context_steps, 3 + 7 + 3);
        // Input row s+1 carries delayed row s, which holds prefix row s−k in codebook k.
        for r in 0..3 {
            for cb in 0..4 {
                assert_eq!(out.inputs.get(r + cb + 1, cb), prefix.get(r, cb));
            }
        }
    }

    #[test]
    fn pad_never_drawn() {
        let mut logits = vec![0.0f64; 65];
        logits[64] = 100.0;
        let mut rng = rng_from(0);
        let cfg = SamplerConfig { top_k: 1, ..Default::default() };
        for _ in 0..50 {
            assert_ne!(draw(&logits, 64, &cfg, &mut rng), 64);
        }
        logits[10] = 5.0;
        assert_eq!(draw(&logits, 64, &cfg, &mut rng), 10);
    }

    #[test]
    fn invalid_sampler_rejected() {
        assert!(SamplerConfig { temperature: 0.0, ..Default::default() }.validate(64).is_err());
        assert!(SamplerConfig { top_k: 0, ..Default::default() }.validate(64).is_err());
        assert!(SamplerConfig { top_k: 65, ..Default::default() }.validate(64).is_err());
    }
}

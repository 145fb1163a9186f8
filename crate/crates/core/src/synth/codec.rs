use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token conventions of the synthetic codec.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecSpec {
    pub num_codebooks: usize,
    pub vocab_size: usize,
    pub tokens_per_second: usize,
    pub silence_token: u16,
}

impl Default for CodecSpec {
    fn default() -> Self {
        CodecSpec {
            num_codebooks: 4,
            vocab_size: 64,
            tokens_per_second: 10,
            silence_token: 0,
        }
    }
}

impl CodecSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_codebooks == 0 {
            return Err(Error::Config("num_codebooks must be >= 1".into()));
        }
        if self.vocab_size < 4 || self.vocab_size >= usize::from(u16::MAX) {
            return Err(Error::Config(format!("vocab_size {} out of range [4, 65535)", self.vocab_size)));
        }
        if self.tokens_per_second == 0 {
            return Err(Error::Config("tokens_per_second must be >= 1".into()));
        }
        if usize::from(self.silence_token) >= self.vocab_size {
            return Err(Error::Config("silence_token must be < vocab_size".into()));
        }
        Ok(())
    }

    /// Reserved delay-pattern pad id, one past the codec vocabulary.
    pub fn pad_token(&self) -> u16 {
        self.vocab_size as u16
    }

    pub fn steps(&self, seconds: usize) -> usize {
        seconds * self.tokens_per_second
    }

    /// Non-silence ids in increasing order.
    pub fn voiced_ids(&self) -> Vec<u16> {
        (0..self.vocab_size as u16).filter(|&t| t != self.silence_token).collect()
    }

    /// Index range into [`voiced_ids`](Self::voiced_ids) of the major pool:
    /// the first `⌊(N−2)/2⌋ + 1` voiced ids.
    pub fn major_range(&self) -> Range<usize> {
        0..(self.vocab_size - 2) / 2 + 1
    }

    pub fn minor_range(&self) -> Range<usize> {
        self.major_range().end..self.vocab_size - 1
    }

    pub fn is_major(&self, token: u16) -> bool {
        token != self.silence_token && self.voiced_index(token) < self.major_range().end
    }

    fn voiced_index(&self, token: u16) -> usize {
        let t = usize::from(token);
        if token > self.silence_token {
            t - 1
        } else {
            t
        }
    }

    /// Token of codebook `k` implied by codebook-0 token `c0`:
    /// `c_k = 1 + ((c_0 − 1 + 7k) mod (N − 1))` over the voiced ids.
    pub fn derived_token(&self, c0: u16, k: usize) -> u16 {
        if c0 == self.silence_token {
            return self.silence_token;
        }
        let n = self.vocab_size - 1;
        let idx = (self.voiced_index(c0) + 7 * k) % n;
        let t = idx as u16;
        if t >= self.silence_token {
            t + 1
        } else {
            t
        }
    }
}

/// `T × K` grid of token ids, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenGrid {
    pub codec: CodecSpec,
    rows: usize,
    data: Vec<u16>,
}

const TOKENS_MAGIC: &str = "TOKENS v1";

impl TokenGrid {
    pub fn new(codec: CodecSpec, rows: usize, data: Vec<u16>) -> Result<Self> {
        if data.len() != rows * codec.num_codebooks {
            return Err(Error::Shape(format!(
                "{} ids for {} rows of {} codebooks",
                data.len(),
                rows,
                codec.num_codebooks
            )));
        }
        if let Some(bad) = data.iter().find(|&&t| usize::from(t) >= codec.vocab_size) {
            return Err(Error::InvalidInput(format!("token {bad} outside vocab {}", codec.vocab_size)));
        }
        Ok(TokenGrid { codec, rows, data })
    }

    pub fn silent(codec: CodecSpec, rows: usize) -> Self {
        TokenGrid {
            codec,
            rows,
            data: vec![codec.silence_token; rows * codec.num_codebooks],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn num_codebooks(&self) -> usize {
        self.codec.num_codebooks
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn get(&self, row: usize, k: usize) -> u16 {
        self.data[row * self.codec.num_codebooks + k]
    }

    pub fn set(&mut self, row: usize, k: usize, token: u16) {
        assert!(usize::from(token) < self.codec.vocab_size);
        self.data[row * self.codec.num_codebooks + k] = token;
    }

    pub fn row(&self, row: usize) -> &[u16] {
        let k = self.codec.num_codebooks;
        &self.data[row * k..(row + 1) * k]
    }

    pub fn codebook(&self, k: usize) -> impl Iterator<Item = u16> + '_ {
        (0..self.rows).map(move |r| self.get(r, k))
    }

    pub fn as_slice(&self) -> &[u16] {
        &self.data
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> TokenGrid {
        let k = self.codec.num_codebooks;
        TokenGrid {
            codec: self.codec,
            rows: end - start,
            data: self.data[start * k..end * k].to_vec(),
        }
    }

    pub fn append(&mut self, other: &TokenGrid) {
        assert_eq!(self.codec, other.codec);
        self.data.extend_from_slice(&other.data);
        self.rows += other.rows;
    }

    /// Fraction of rows whose codebook-0 token is silence.
    pub fn silence_ratio(&self) -> f64 {
        if self.rows == 0 {
            return 0.0;
        }
        self.silent_rows() as f64 / self.rows as f64
    }

    pub fn silent_rows(&self) -> usize {
        self.codebook(0).filter(|&t| t == self.codec.silence_token).count()
    }

    /// `tokens.bin`: ASCII header `TOKENS v1 T K N\n`, then `T·K` little-endian `u16`, row-major.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!(
            "{TOKENS_MAGIC} {} {} {}\n",
            self.rows, self.codec.num_codebooks, self.codec.vocab_size
        )
        .into_bytes();
        out.reserve(self.data.len() * 2);
        for t in &self.data {
            out.extend_from_slice(&t.to_le_bytes());
        }
        out
    }

    /// Parses `tokens.bin`. Codec fields not in the header are taken from `base`.
    pub fn decode(bytes: &[u8], base: CodecSpec, path: &Path) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::format(path, "missing header line"))?;
        let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| Error::format(path, "header not ASCII"))?;
        let fields: Vec<&str> = header.split(' ').collect();
        if fields.len() != 5 || fields[0] != "TOKENS" || fields[1] != "v1" {
            return Err(Error::format(path, format!("bad header {header:?}")));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| Error::format(path, format!("bad header field {s:?}")));
        let (rows, k, n) = (num(fields[2])?, num(fields[3])?, num(fields[4])?);
        let body = &bytes[nl + 1..];
        if body.len() != rows * k * 2 {
            return Err(Error::format(path, "payload length does not match header"));
        }
        let data = body.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
        let codec = CodecSpec {
            num_codebooks: k,
            vocab_size: n,
            ..base
        };
        codec.validate()?;
        TokenGrid::new(codec, rows, data).map_err(|e| Error::format(path, e.to_string()))
    }
}

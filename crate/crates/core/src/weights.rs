//! Binary weight container shared by every trainable component.
//!
//! Layout:
//!
//! ```text
//! WEIGHTS v1 <count>\n
//! <name> f32 [d0,d1,...]\n        (count lines, payload order)
//! <payload: little-endian f32, concatenated>
//! <u64 little-endian FNV-1a of the payload bytes>
//! ```

use std::fs;
use std::path::Path;

use ndarray::{Dimension, IxDyn};

use crate::error::{Error, Result};
use crate::params::{collect, Params};
use crate::Scalar;

const MAGIC: &str = "WEIGHTS v1";

/// 64-bit FNV-1a.
#[derive(Debug, Clone, Copy)]
pub struct Fnv1a(u64);

impl Fnv1a {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;

    pub fn new() -> Self {
        Fnv1a(Self::OFFSET)
    }

    pub fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(Self::PRIME);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv1a {
    fn default() -> Self {
        Self::new()
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = Fnv1a::new();
    h.update(bytes);
    h.finish()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Decoded container contents.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightFile {
    pub tensors: Vec<TensorRecord>,
}

impl WeightFile {
    pub fn from_params<T: Scalar, P: Params<T> + ?Sized>(p: &P) -> Self {
        let tensors = collect(p)
            .into_iter()
            .map(|(name, v)| TensorRecord {
                name,
                shape: v.shape().to_vec(),
                data: v.iter().map(|x| x.f32()).collect(),
            })
            .collect();
        WeightFile { tensors }
    }

    /// Copies the stored tensors into `p`; names and shapes must match in order.
    pub fn load_into<T: Scalar, P: Params<T> + ?Sized>(&self, p: &mut P) -> Result<()> {
        let expected = collect(p)
            .into_iter()
            .map(|(n, v)| (n, v.shape().to_vec()))
            .collect::<Vec<_>>();
        if expected.len() != self.tensors.len() {
            return Err(Error::Shape(format!(
                "weight file has {} tensors, model expects {}",
                self.tensors.len(),
                expected.len()
            )));
        }
        for ((name, shape), rec) in expected.iter().zip(&self.tensors) {
            if *name != rec.name || *shape != rec.shape {
                return Err(Error::Shape(format!(
                    "tensor {} {:?} does not match stored {} {:?}",
                    name, shape, rec.name, rec.shape
                )));
            }
        }
        let mut i = 0;
        p.visit_mut("", &mut |_, mut v| {
            for (dst, &src) in v.iter_mut().zip(&self.tensors[i].data) {
                *dst = T::of(f64::from(src));
            }
            i += 1;
        });
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("{MAGIC} {}\n", self.tensors.len()).into_bytes();
        for t in &self.tensors {
            let dims = t.shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",");
            out.extend_from_slice(format!("{} f32 [{}]\n", t.name, dims).as_bytes());
        }
        let mut payload = Vec::with_capacity(self.tensors.iter().map(|t| t.data.len() * 4).sum());
        for t in &self.tensors {
            for x in &t.data {
                payload.extend_from_slice(&x.to_le_bytes());
            }
        }
        let sum = fnv1a(&payload);
        out.extend_from_slice(&payload);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: &str| Error::format(path, msg);
        let mut cursor = 0usize;
        let mut next_line = || -> Result<String> {
            let rest = &bytes[cursor..];
            let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("unterminated header"))?;
            let line = std::str::from_utf8(&rest[..end]).map_err(|_| bad("header is not UTF-8"))?;
            cursor += end + 1;
            Ok(line.to_string())
        };
        let head = next_line()?;
        let count: usize = head
            .strip_prefix(MAGIC)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad("bad magic line"))?;
        let mut specs = Vec::with_capacity(count);
        for _ in 0..count {
            let line = next_line()?;
            let mut parts = line.split(' ');
            let (name, dtype, shape) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
                (Some(n), Some(d), Some(s), None) => (n, d, s),
                _ => return Err(bad("malformed tensor line")),
            };
            if dtype != "f32" {
                return Err(bad("unsupported dtype"));
            }
            let inner = shape
                .strip_prefix('[')
                .and_then(|s| s.strip_suffix(']'))
                .ok_or_else(|| bad("malformed shape"))?;
            let dims = if inner.is_empty() {
                Vec::new()
            } else {
                inner
                    .split(',')
                    .map(|d| d.parse::<usize>().map_err(|_| bad("malformed dimension")))
                    .collect::<Result<Vec<_>>>()?
            };
            specs.push((name.to_string(), dims));
        }
        let total: usize = specs.iter().map(|(_, d)| d.iter().product::<usize>()).sum();
        let payload_end = cursor + total * 4;
        if bytes.len() != payload_end + 8 {
            return Err(bad("payload length does not match header"));
        }
        let payload = &bytes[cursor..payload_end];
        let stored = u64::from_le_bytes(bytes[payload_end..].try_into().expect("8 bytes"));
        if fnv1a(payload) != stored {
            return Err(bad("checksum mismatch"));
        }
        let mut floats = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
        let tensors = specs
            .into_iter()
            .map(|(name, shape)| {
                let n = IxDyn(&shape).size();
                TensorRecord {
                    name,
                    shape,
                    data: floats.by_ref().take(n).collect(),
                }
            })
            .collect();
        Ok(WeightFile { tensors })
    }

    /// Checksum of the payload as stored in the trailer.
    pub fn payload_checksum(&self) -> u64 {
        let mut h = Fnv1a::new();
        for t in &self.tensors {
            for x in &t.data {
                h.update(&x.to_le_bytes());
            }
        }
        h.finish()
    }
}

pub fn save<T: Scalar, P: Params<T> + ?Sized>(p: &P, path: &Path) -> Result<u64> {
    let file = WeightFile::from_params(p);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, file.encode())?;
    Ok(file.payload_checksum())
}

pub fn load<T: Scalar, P: Params<T> + ?Sized>(p: &mut P, path: &Path) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Missing(path.display().to_string()),
        _ => Error::Io(e),
    })?;
    WeightFile::decode(&bytes, path)?.load_into(p)
}

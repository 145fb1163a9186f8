//! Global style anchor: a four-field schema, a rule-based conceptualizer
//! over sparse keyframes, and the embedding used as cross-attention memory.

use std::sync::OnceLock;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{join, Params, Visit, VisitMut};
use crate::rng::{normal_matrix, Rng};
use crate::synth::video::{affect_loading, scene_basis, TOKENS_PER_FRAME};
use crate::synth::PseudoVideo;
use crate::trajectory::Va;
use crate::Scalar;

pub const FIELD_VOCAB: usize = 8;
pub const NUM_FIELDS: usize = 4;
pub const DEFAULT_KEYFRAMES: usize = 8;
pub const FIELD_NAMES: [&str; NUM_FIELDS] = ["genre", "instrumentation", "mood", "pacing"];

const VOCAB_JSON: &str = include_str!("../assets/vocab.json");

#[derive(Debug, Clone, Deserialize)]
pub struct Vocab {
    pub version: u32,
    pub genre: Vec<String>,
    pub instrumentation: Vec<String>,
    pub mood: Vec<String>,
    pub pacing: Vec<String>,
}

impl Vocab {
    pub fn field(&self, f: usize) -> &[String] {
        match f {
            0 => &self.genre,
            1 => &self.instrumentation,
            2 => &self.mood,
            3 => &self.pacing,
            _ => panic!("field index {f} out of range"),
        }
    }
}

pub fn vocab() -> &'static Vocab {
    static VOCAB: OnceLock<Vocab> = OnceLock::new();
    VOCAB.get_or_init(|| {
        let v: Vocab = serde_json::from_str(VOCAB_JSON).expect("bundled vocab.json parses");
        assert!((0..NUM_FIELDS).all(|f| v.field(f).len() == FIELD_VOCAB));
        v
    })
}

/// Style record: one id per field, each below [`FIELD_VOCAB`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SemanticAnchor {
    pub genre: u8,
    pub instrumentation: u8,
    pub mood: u8,
    pub pacing: u8,
}

/// String form written to `anchor.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamedAnchor {
    pub genre: String,
    pub instrumentation: String,
    pub mood: String,
    pub pacing: String,
}

impl SemanticAnchor {
    pub fn ids(&self) -> [usize; NUM_FIELDS] {
        [self.genre, self.instrumentation, self.mood, self.pacing].map(usize::from)
    }

    pub fn from_ids(ids: [usize; NUM_FIELDS]) -> Result<Self> {
        for (f, &id) in ids.iter().enumerate() {
            if id >= FIELD_VOCAB {
                return Err(Error::OutOfVocabulary {
                    field: FIELD_NAMES[f],
                    id,
                    vocab: FIELD_VOCAB,
                });
            }
        }
        Ok(SemanticAnchor {
            genre: ids[0] as u8,
            instrumentation: ids[1] as u8,
            mood: ids[2] as u8,
            pacing: ids[3] as u8,
        })
    }

    pub fn validate(&self) -> Result<()> {
        Self::from_ids(self.ids()).map(|_| ())
    }

    pub fn to_named(&self) -> NamedAnchor {
        let v = vocab();
        let ids = self.ids();
        let name = |f: usize| v.field(f)[ids[f]].clone();
        NamedAnchor {
            genre: name(0),
            instrumentation: name(1),
            mood: name(2),
            pacing: name(3),
        }
    }

    pub fn from_named(named: &NamedAnchor) -> Result<Self> {
        let v = vocab();
        let values = [&named.genre, &named.instrumentation, &named.mood, &named.pacing];
        let mut ids = [0usize; NUM_FIELDS];
        for f in 0..NUM_FIELDS {
            ids[f] = v
                .field(f)
                .iter()
                .position(|s| s == values[f])
                .ok_or_else(|| Error::InvalidInput(format!("{} {:?} not in vocab", FIELD_NAMES[f], values[f])))?;
        }
        Self::from_ids(ids)
    }
}

/// Uniformly spaced keyframe indices (frame centres of `n` equal bins).
pub fn keyframe_indices(frames: usize, n: usize) -> Vec<usize> {
    if frames <= n {
        return (0..frames).collect();
    }
    (0..n).map(|i| ((2 * i + 1) * frames) / (2 * n)).collect()
}

/// Least-squares affect read-out of one frame given its scene.
fn frame_affect(frame: ndarray::ArrayView2<f64>, basis: &Array2<f64>, loading: &ndarray::Array3<f64>) -> Va {
    // Normal equations of the stacked (M·D_f) × 2 system.
    let (mut a00, mut a01, mut a11, mut b0, mut b1) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for m in 0..TOKENS_PER_FRAME {
        let resid: ndarray::Array1<f64> = &frame.row(m) - &basis.row(m);
        let wv: ndarray::ArrayView1<f64> = loading.slice(s![m, .., 0]);
        let wa: ndarray::ArrayView1<f64> = loading.slice(s![m, .., 1]);
        a00 += wv.dot(&wv);
        a01 += wv.dot(&wa);
        a11 += wa.dot(&wa);
        b0 += wv.dot(&resid);
        b1 += wa.dot(&resid);
    }
    let det = a00 * a11 - a01 * a01;
    Va::new((a11 * b0 - a01 * b1) / det, (a00 * b1 - a01 * b0) / det)
}

/// Bucket of `x ∈ [-1, 1]` into `FIELD_VOCAB` equal bins, lowest first.
fn bucket(x: f64) -> usize {
    (((x.clamp(-1.0, 1.0) + 1.0) / 2.0 * FIELD_VOCAB as f64).floor() as usize).min(FIELD_VOCAB - 1)
}

/// Rule-based style conceptualizer.
///
/// Keyframes are subsampled uniformly, their affect read out by least squares
/// against the scene basis, and the mean affect mapped to mood (valence,
/// darkest first) and pacing (arousal, slowest first). Genre and
/// instrumentation follow the scene.
pub fn conceptualize(video: &PseudoVideo, num_keyframes: usize) -> SemanticAnchor {
    let basis = scene_basis(video.scene_id);
    let loading = affect_loading();
    let keys = keyframe_indices(video.num_frames(), num_keyframes.max(1));
    let n = keys.len().max(1) as f64;
    let (v, a) = keys.iter().fold((0.0, 0.0), |(v, a), &t| {
        let va = frame_affect(video.frame(t), &basis, &loading);
        (v + va.valence, a + va.arousal)
    });
    let scene = video.scene_id as usize;
    SemanticAnchor {
        genre: (scene % FIELD_VOCAB) as u8,
        instrumentation: ((scene / FIELD_VOCAB + 3 * scene) % FIELD_VOCAB) as u8,
        mood: bucket(v / n) as u8,
        pacing: bucket(a / n) as u8,
    }
}

/// Field-wise embedding tables plus a learned per-field offset.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorEncoder<T> {
    /// `NUM_FIELDS` tables of `FIELD_VOCAB × dim`.
    pub tables: Vec<Array2<T>>,
    /// `NUM_FIELDS × dim`.
    pub field_offset: Array2<T>,
}

/// Cross-attention memory: one row per field.
pub type AnchorEmbedding<T> = Array2<T>;

impl<T: Scalar> AnchorEncoder<T> {
    pub fn new(rng: &mut Rng, dim: usize) -> Self {
        AnchorEncoder {
            tables: (0..NUM_FIELDS).map(|_| normal_matrix(rng, FIELD_VOCAB, dim, 0.5)).collect(),
            field_offset: normal_matrix(rng, NUM_FIELDS, dim, 0.5),
        }
    }

    pub fn dim(&self) -> usize {
        self.field_offset.ncols()
    }

    pub fn encode(&self, anchor: &SemanticAnchor) -> Result<AnchorEmbedding<T>> {
        anchor.validate()?;
        let mut out = self.field_offset.clone();
        for (f, id) in anchor.ids().into_iter().enumerate() {
            out.row_mut(f).scaled_add(T::one(), &self.tables[f].row(id));
        }
        Ok(out)
    }

    /// Accumulates the gradient of an embedding into table rows and offsets.
    pub fn backward(&self, anchor: &SemanticAnchor, d_embedding: &Array2<T>, grads: &mut Self) {
        grads.field_offset += d_embedding;
        for (f, id) in anchor.ids().into_iter().enumerate() {
            grads.tables[f].row_mut(id).scaled_add(T::one(), &d_embedding.row(f));
        }
    }
}

impl<T: Scalar> Params<T> for AnchorEncoder<T> {
    fn visit<'a>(&'a self, prefix: &str, f: Visit<'a, '_, T>) {
        for (i, t) in self.tables.iter().enumerate() {
            f(&join(prefix, &format!("table_{}", FIELD_NAMES[i])), t.view().into_dyn());
        }
        f(&join(prefix, "field_offset"), self.field_offset.view().into_dyn());
    }

    fn visit_mut(&mut self, prefix: &str, f: VisitMut<'_, T>) {
        for (i, t) in self.tables.iter_mut().enumerate() {
            f(&join(prefix, &format!("table_{}", FIELD_NAMES[i])), t.view_mut().into_dyn());
        }
        f(&join(prefix, "field_offset"), self.field_offset.view_mut().into_dyn());
    }
}

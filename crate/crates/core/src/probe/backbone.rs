//! Frozen feature backbone: a small causal transformer with fixed seeded weights.

use ndarray::{s, Array1, Array2, Array3, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::nn::{gelu, sinusoidal, Attention, LayerNorm, Linear};
use crate::params::{join, Params, Visit, VisitMut};
use crate::probe::sequence::{InterleavedSequence, Slot};
use crate::rng::{normal_matrix, normal_vector, rng_from};
use crate::synth::video::FEATURE_DIM;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub num_instructions: usize,
    pub instruction_len: usize,
    pub seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            dim: 64,
            layers: 4,
            heads: 4,
            num_instructions: 4,
            instruction_len: 4,
            seed: 0xBAC0_B0E5,
        }
    }
}

/// Hidden states of one frame's visual tokens, `M × D_h`.
pub type FrameHidden<T> = Array2<T>;

#[derive(Debug, Clone, PartialEq)]
struct Block<T> {
    ln1: LayerNorm<T>,
    attn: Attention<T>,
    ln2: LayerNorm<T>,
    fc1: Linear<T>,
    fc2: Linear<T>,
}

impl<T: Scalar> Block<T> {
    fn forward(&self, h: ArrayView2<T>) -> Array2<T> {
        let (a, _) = self.ln1.forward(h);
        let (sa, _) = self.attn.forward(a.view(), a.view(), true);
        let h1 = &h + &sa;
        let (b, _) = self.ln2.forward(h1.view());
        let mid = self.fc1.forward(b.view()).mapv(gelu);
        h1 + self.fc2.forward(mid.view())
    }
}

impl<T: Scalar> Params<T> for Block<T> {
    fn visit<'a>(&'a self, prefix: &str, f: Visit<'a, '_, T>) {
        self.ln1.visit(&join(prefix, "ln1"), f);
        self.attn.visit(&join(prefix, "attn"), f);
        self.ln2.visit(&join(prefix, "ln2"), f);
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: VisitMut<'_, T>) {
        self.ln1.visit_mut(&join(prefix, "ln1"), f);
        self.attn.visit_mut(&join(prefix, "attn"), f);
        self.ln2.visit_mut(&join(prefix, "ln2"), f);
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}

/// Stand-in for a frozen vision-language model. Built from a fixed seed;
/// nothing in the crate mutates it after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenBackbone<T> {
    pub config: BackboneConfig,
    /// `(num_instructions · instruction_len) × D_h`.
    instruction_table: Array2<T>,
    marker_type: Array1<T>,
    visual_proj: Linear<T>,
    blocks: Vec<Block<T>>,
    ln_final: LayerNorm<T>,
}

impl<T: Scalar> FrozenBackbone<T> {
    pub fn new(config: BackboneConfig) -> Self {
        let mut rng = rng_from(config.seed);
        let d = config.dim;
        let blocks = (0..config.layers)
            .map(|_| Block {
                ln1: LayerNorm::new(d),
                attn: Attention::new(&mut rng, d, config.heads),
                ln2: LayerNorm::new(d),
                fc1: Linear::new(&mut rng, d, 4 * d),
                fc2: Linear::with_std(&mut rng, 4 * d, d, 0.5 / ((4 * d) as f64).sqrt()),
            })
            .collect();
        FrozenBackbone {
            config,
            instruction_table: normal_matrix(&mut rng, config.num_instructions * config.instruction_len, d, 1.0),
            marker_type: normal_vector(&mut rng, d, 1.0),
            visual_proj: Linear::new(&mut rng, FEATURE_DIM, d),
            blocks,
            ln_final: LayerNorm::new(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    fn embed(&self, seq: &InterleavedSequence) -> Array2<T> {
        let layout = seq.layout();
        let d = self.config.dim;
        let mut x = sinusoidal::<T>(0, layout.len(), d, 10_000.0);
        for (pos, slot) in layout.iter().enumerate() {
            let mut row = x.row_mut(pos);
            match *slot {
                Slot::Instruction(id) => row += &self.instruction_table.row(id % self.instruction_table.nrows()),
                Slot::TimeMarker(t) => {
                    let clock = sinusoidal::<T>(t, 1, d, 100.0);
                    row += &(&clock.row(0) + &self.marker_type);
                }
                Slot::Visual { .. } => {}
            }
        }
        for (i, e) in seq.elements.iter().enumerate() {
            let start = seq.visual_offset(i);
            let feats = e.visual.mapv(T::of);
            let proj = self.visual_proj.forward(feats.view());
            let mut rows = x.slice_mut(s![start..start + e.visual.nrows(), ..]);
            rows += &proj;
        }
        x
    }

    /// One `M × D_h` block of final-layer hidden states per frame.
    pub fn forward(&self, seq: &InterleavedSequence) -> Vec<FrameHidden<T>> {
        let mut h = self.embed(seq);
        for block in &self.blocks {
            h = block.forward(h.view());
        }
        let (h, _) = self.ln_final.forward(h.view());
        let m = seq.tokens_per_frame();
        (0..seq.num_frames())
            .map(|i| {
                let start = seq.visual_offset(i);
                h.slice(s![start..start + m, ..]).to_owned()
            })
            .collect()
    }

    /// Spatially pooled hidden state per frame, `T × D_h`.
    pub fn pooled(&self, seq: &InterleavedSequence) -> Array2<T> {
        let frames = self.forward(seq);
        let mut out = Array2::zeros((frames.len(), self.config.dim));
        for (mut row, z) in out.rows_mut().into_iter().zip(&frames) {
            row.assign(&z.mean_axis(ndarray::Axis(0)).expect("M > 0"));
        }
        out
    }

    /// Stacked hidden states, `T × M × D_h`.
    pub fn forward_stacked(&self, seq: &InterleavedSequence) -> Array3<T> {
        let frames = self.forward(seq);
        let m = seq.tokens_per_frame();
        let mut out = Array3::zeros((frames.len(), m, self.config.dim));
        for (i, z) in frames.iter().enumerate() {
            out.slice_mut(s![i, .., ..]).assign(z);
        }
        out
    }
}

impl<T: Scalar> Params<T> for FrozenBackbone<T> {
    fn visit<'a>(&'a self, prefix: &str, f: Visit<'a, '_, T>) {
        f(&join(prefix, "instruction_table"), self.instruction_table.view().into_dyn());
        f(&join(prefix, "marker_type"), self.marker_type.view().into_dyn());
        self.visual_proj.visit(&join(prefix, "visual_proj"), f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("block{i}")), f);
        }
        self.ln_final.visit(&join(prefix, "ln_final"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: VisitMut<'_, T>) {
        f(&join(prefix, "instruction_table"), self.instruction_table.view_mut().into_dyn());
        f(&join(prefix, "marker_type"), self.marker_type.view_mut().into_dyn());
        self.visual_proj.visit_mut(&join(prefix, "visual_proj"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("block{i}")), f);
        }
        self.ln_final.visit_mut(&join(prefix, "ln_final"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::sequence::build_interleaved_sequence;
    use crate::synth::{make_arc, render_pseudo_video, Archetype};

    fn seq(instruction: usize) -> InterleavedSequence {
        let arc = make_arc(1, 12, Archetype::Rise).unwrap();
        let v = render_pseudo_video(&arc, 2, 3);
        build_interleaved_sequence(&v, instruction, 4, 0).unwrap()
    }

    #[test]
    fn forward_is_deterministic_with_expected_shapes() {
        let bb = FrozenBackbone::<f32>::new(BackboneConfig::default());
        let a = bb.forward(&seq(0));
        let b = bb.forward(&seq(0));
        assert_eq!(a, b);
        assert_eq!(a.len(), 12);
        assert!(a.iter().all(|z| z.shape() == [4, 64]));
    }

    #[test]
    fn instruction_prefix_reaches_first_frame() {
        let bb = FrozenBackbone::<f64>::new(BackboneConfig::default());
        let a = bb.forward(&seq(0));
        let b = bb.forward(&seq(1));
        let diff = (&a[0] - &b[0]).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(diff > 1e-6);
    }
}

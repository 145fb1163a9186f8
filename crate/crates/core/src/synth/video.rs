use ndarray::{s, Array2, Array3, ArrayView2};

use crate::rng::{derive_seed, normal, normal_matrix, rng_from};
use crate::synth::NarrativeArc;
use crate::trajectory::{AffectTrajectory, Va};

/// Visual tokens per frame.
pub const TOKENS_PER_FRAME: usize = 4;
/// Width of each visual token.
pub const FEATURE_DIM: usize = 32;
pub const FRAME_NOISE_STD: f64 = 0.1;

const WORLD_SEED: u64 = 0x5EED_0F_A11_C0DE;
const AFFECT_GAIN: f64 = 0.5;

/// Stand-in for a decoded video: `T` frames of `M` visual token vectors at 1 Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoVideo {
    /// `T × M × D_f`.
    pub frames: Array3<f64>,
    pub ground_truth: AffectTrajectory,
    pub scene_id: u64,
}

impl PseudoVideo {
    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn frame(&self, t: usize) -> ArrayView2<'_, f64> {
        self.frames.slice(s![t, .., ..])
    }

    /// Frames `[start, end)` as a new video.
    pub fn slice(&self, start: usize, end: usize) -> PseudoVideo {
        PseudoVideo {
            frames: self.frames.slice(s![start..end, .., ..]).to_owned(),
            ground_truth: self.ground_truth.slice(start, end),
            scene_id: self.scene_id,
        }
    }
}

/// Per-scene mean appearance, `M × D_f`.
pub fn scene_basis(scene_id: u64) -> Array2<f64> {
    let mut rng = rng_from(derive_seed(WORLD_SEED, &[1, scene_id]));
    normal_matrix(&mut rng, TOKENS_PER_FRAME, FEATURE_DIM, 1.0)
}

/// Linear affect loading shared by all scenes: `M × D_f × 2`.
pub fn affect_loading() -> Array3<f64> {
    let mut rng = rng_from(derive_seed(WORLD_SEED, &[2]));
    Array3::from_shape_simple_fn((TOKENS_PER_FRAME, FEATURE_DIM, 2), || AFFECT_GAIN * normal::<f64>(&mut rng))
}

/// `W_va · [v, a]` for every visual token, `M × D_f`.
pub fn affect_component(loading: &Array3<f64>, va: Va) -> Array2<f64> {
    &loading.slice(s![.., .., 0]) * va.valence + &loading.slice(s![.., .., 1]) * va.arousal
}

/// Frame `t` = scene basis + affect loading · VA(t) + Gaussian noise.
pub fn render_pseudo_video(arc: &NarrativeArc, scene_id: u64, seed: u64) -> PseudoVideo {
    let basis = scene_basis(scene_id);
    let loading = affect_loading();
    let truth = arc.sample_1hz();
    let mut rng = rng_from(derive_seed(seed, &[scene_id]));
    let t_frames = truth.len();
    let mut frames = Array3::zeros((t_frames, TOKENS_PER_FRAME, FEATURE_DIM));
    for (t, &va) in truth.points.iter().enumerate() {
        let noise = normal_matrix::<f64>(&mut rng, TOKENS_PER_FRAME, FEATURE_DIM, FRAME_NOISE_STD);
        let frame = &basis + &affect_component(&loading, va) + &noise;
        frames.slice_mut(s![t, .., ..]).assign(&frame);
    }
    PseudoVideo {
        frames,
        ground_truth: truth,
        scene_id,
    }
}

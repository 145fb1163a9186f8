use log::warn;

use crate::anchor::{conceptualize, SemanticAnchor, DEFAULT_KEYFRAMES};
use crate::synth::{PseudoVideo, TokenGrid};
use crate::trajectory::AffectTrajectory;

pub const CLIP_LEN_S: usize = 30;
pub const CLIP_HOP_S: usize = 15;
/// Clips with a strictly larger silent fraction are dropped.
pub const MAX_SILENCE_RATIO: (usize, usize) = (2, 5);

/// A paired long-form source: its pseudo-video and the token stream emitted from the same arc.
#[derive(Debug, Clone, PartialEq)]
pub struct MusicStream {
    pub source_id: u64,
    pub seed: u64,
    pub video: PseudoVideo,
    pub tokens: TokenGrid,
}

impl MusicStream {
    pub fn duration_s(&self) -> usize {
        self.video.num_frames()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipRecord {
    pub va_curve: AffectTrajectory,
    pub tokens: TokenGrid,
    pub anchor: SemanticAnchor,
    pub source_id: u64,
    pub clip_start_s: usize,
    pub seed: u64,
}

/// Clip start times `0, hop, 2·hop, …` while `start + clip_len ≤ duration`.
pub fn segment_starts(duration_s: usize, clip_len_s: usize, hop_s: usize) -> Vec<usize> {
    assert!(clip_len_s > 0 && hop_s > 0, "clip length and hop must be positive");
    if duration_s < clip_len_s {
        return Vec::new();
    }
    (0..=duration_s - clip_len_s).step_by(hop_s).collect()
}

pub fn segment_clips(stream: &MusicStream, clip_len_s: usize, hop_s: usize) -> Vec<ClipRecord> {
    let duration = stream.duration_s();
    let starts = segment_starts(duration, clip_len_s, hop_s);
    if starts.is_empty() {
        warn!(
            "source {}: {duration} s stream is shorter than the {clip_len_s} s clip length; no clips",
            stream.source_id
        );
    }
    let tps = stream.tokens.codec.tokens_per_second;
    starts
        .into_iter()
        .map(|start| {
            let video = stream.video.slice(start, start + clip_len_s);
            ClipRecord {
                anchor: conceptualize(&video, DEFAULT_KEYFRAMES),
                va_curve: video.ground_truth,
                tokens: stream.tokens.slice_rows(start * tps, (start + clip_len_s) * tps),
                source_id: stream.source_id,
                clip_start_s: start,
                seed: stream.seed,
            }
        })
        .collect()
}

/// True when the codebook-0 silence fraction strictly exceeds 40 %.
pub fn too_silent(tokens: &TokenGrid) -> bool {
    let (num, den) = MAX_SILENCE_RATIO;
    tokens.silent_rows() * den > tokens.rows() * num
}

pub fn silence_filter(clips: Vec<ClipRecord>) -> Vec<ClipRecord> {
    clips.into_iter().filter(|c| !too_silent(&c.tokens)).collect()
}

//! Seeded generation of the paired corpora.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rng::{derive_seed, rng_from};
use crate::synth::dataset::VideoSpec;
use crate::synth::{
    grammar_emit, make_arc, segment_clips, silence_filter, Archetype, ClipRecord, CodecSpec, MusicStream, CLIP_HOP_S,
    CLIP_LEN_S,
};

const MUSIC_TAG: u64 = 0x4D55;
const VIDEO_TAG: u64 = 0x5649;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    /// Multiplies the stream counts below.
    pub scale: f64,
    /// Music streams at scale 1.0.
    pub music_streams: usize,
    /// Video streams at scale 1.0.
    pub video_streams: usize,
    pub min_stream_s: usize,
    pub max_stream_s: usize,
    /// Chance that a music stream carries one silent gap.
    pub silence_gap_probability: f64,
    /// Share of streams drawn as random walks; the rest split evenly over the other archetypes.
    pub random_walk_share: f64,
    pub num_scenes: u64,
    pub clip_len_s: usize,
    pub hop_s: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            scale: 1.0,
            music_streams: 240,
            video_streams: 120,
            min_stream_s: 90,
            max_stream_s: 180,
            silence_gap_probability: 0.15,
            random_walk_share: 0.6,
            num_scenes: 16,
            clip_len_s: CLIP_LEN_S,
            hop_s: CLIP_HOP_S,
        }
    }
}

impl CorpusConfig {
    pub fn scaled(&self, count: usize) -> usize {
        (count as f64 * self.scale.max(0.0)).round() as usize
    }
}

fn stream_shape(cfg: &CorpusConfig, seed: u64) -> (usize, Archetype, u64, u64) {
    let mut rng = rng_from(seed);
    let duration = rng.random_range(cfg.min_stream_s..=cfg.max_stream_s.max(cfg.min_stream_s));
    let archetype = if rng.random::<f64>() < cfg.random_walk_share {
        Archetype::RandomWalk
    } else {
        Archetype::ALL[rng.random_range(0..Archetype::ALL.len() - 1)]
    };
    let scene = rng.random_range(0..cfg.num_scenes.max(1));
    (duration, archetype, scene, rng.random())
}

pub fn video_spec(cfg: &CorpusConfig, seed: u64, index: usize) -> Result<VideoSpec> {
    let s = derive_seed(seed, &[VIDEO_TAG, index as u64]);
    let (duration, archetype, scene_id, arc_seed) = stream_shape(cfg, s);
    Ok(VideoSpec {
        source_id: index as u64,
        scene_id,
        seed: s,
        arc: make_arc(arc_seed, duration, archetype)?,
    })
}

pub fn video_specs(cfg: &CorpusConfig, seed: u64) -> Result<Vec<VideoSpec>> {
    (0..cfg.scaled(cfg.video_streams))
        .into_par_iter()
        .map(|i| video_spec(cfg, seed, i))
        .collect()
}

pub fn music_stream(cfg: &CorpusConfig, codec: &CodecSpec, seed: u64, index: usize) -> Result<MusicStream> {
    let s = derive_seed(seed, &[MUSIC_TAG, index as u64]);
    let (duration, archetype, scene_id, arc_seed) = stream_shape(cfg, s);
    let arc = make_arc(arc_seed, duration, archetype)?;
    let video = crate::synth::render_pseudo_video(&arc, scene_id, s);
    let mut tokens = grammar_emit(&arc, codec, derive_seed(s, &[1]))?;
    let mut rng = rng_from(derive_seed(s, &[2]));
    if rng.random::<f64>() < cfg.silence_gap_probability {
        let len = rng.random_range(5..=20usize).min(duration);
        let start = rng.random_range(0..=duration - len);
        let tps = codec.tokens_per_second;
        for row in start * tps..(start + len) * tps {
            for k in 0..codec.num_codebooks {
                tokens.set(row, k, codec.silence_token);
            }
        }
    }
    Ok(MusicStream {
        source_id: index as u64,
        seed: s,
        video,
        tokens,
    })
}

/// Segmented, silence-filtered music clips.
pub fn music_corpus(cfg: &CorpusConfig, codec: &CodecSpec, seed: u64) -> Result<Vec<ClipRecord>> {
    let per_stream: Vec<Vec<ClipRecord>> = (0..cfg.scaled(cfg.music_streams))
        .into_par_iter()
        .map(|i| {
            let stream = music_stream(cfg, codec, seed, i)?;
            Ok(silence_filter(segment_clips(&stream, cfg.clip_len_s, cfg.hop_s)))
        })
        .collect::<Result<_>>()?;
    Ok(per_stream.into_iter().flatten().collect())
}

//! The synthetic world: narrative arcs, pseudo-video, the affect grammar over
//! codec tokens, delay-pattern interleaving and clip preprocessing.

pub mod arc;
pub mod codec;
pub mod corpus;
pub mod dataset;
pub mod delay;
pub mod grammar;
pub mod segment;
pub mod video;

pub use arc::{make_arc, ArcSegment, Archetype, NarrativeArc};
pub use codec::{CodecSpec, TokenGrid};
pub use corpus::CorpusConfig;
pub use delay::{apply_delay, remove_delay, DelayedGrid};
pub use grammar::{grammar_emit, oracle_decode, DecodedTrajectory, WindowStats};
pub use segment::{
    segment_clips, segment_starts, silence_filter, too_silent, ClipRecord, MusicStream, CLIP_HOP_S, CLIP_LEN_S,
};
pub use video::{render_pseudo_video, PseudoVideo};

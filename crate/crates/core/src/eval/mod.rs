//! Objective metrics: a Fréchet distance over token-statistics embeddings, a
//! symmetrized unigram KL divergence, and affect alignment measured through the
//! grammar oracle.

mod alignment;
mod features;
mod frechet;
mod kld;
mod report;

pub use alignment::{affect_alignment, pearson, Alignment};
pub use features::{clip_embedding, corpus_embeddings, FeatureEmbedding, EMBED_CHUNK_S, EMBED_WINDOW_S, FEATURES_PER_WINDOW};
pub use frechet::{fit_gaussian, frechet_distance, frechet_from_moments};
pub use kld::{kld_score, smoothed_unigram};
pub use report::{evaluate_corpora, ClipScore, MetricReport};

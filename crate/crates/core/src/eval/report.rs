use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    affect_alignment, corpus_embeddings, frechet_distance, kld_score, Alignment, EMBED_CHUNK_S, EMBED_WINDOW_S,
    FEATURES_PER_WINDOW,
};
use crate::error::Result;
use crate::synth::TokenGrid;
use crate::trajectory::AffectTrajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipScore {
    pub name: String,
    pub rows: usize,
    pub alignment: Option<Alignment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Fréchet distance between token-statistics embeddings (one metric serves
    /// as FD and FAD here). `None` when either side has no more embeddings than
    /// dimensions.
    pub fd: Option<f64>,
    pub kld: f64,
    /// Mean per-clip alignment over clips with a defined score.
    pub affect_alignment_valence: Option<f64>,
    pub affect_alignment_arousal: Option<f64>,
    pub clips: Vec<ClipScore>,
}

const FEATURE_DIM: usize = EMBED_CHUNK_S / EMBED_WINDOW_S * FEATURES_PER_WINDOW;

fn mean_defined(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Scores `generated` against `reference`. Each generated clip may carry the
/// affect curve it was conditioned on, which enables the alignment columns.
pub fn evaluate_corpora(
    generated: &[(String, TokenGrid, Option<AffectTrajectory>)],
    reference: &[TokenGrid],
    window_s: usize,
) -> Result<MetricReport> {
    let gen_grids: Vec<TokenGrid> = generated.iter().map(|g| g.1.clone()).collect();
    let (ea, eb) = (corpus_embeddings(&gen_grids), corpus_embeddings(reference));
    let fd = if ea.len() > FEATURE_DIM && eb.len() > FEATURE_DIM {
        Some(frechet_distance(&ea, &eb)?)
    } else {
        log::warn!(
            "skipping FD: {} generated and {} reference embeddings, need more than {FEATURE_DIM} each",
            ea.len(),
            eb.len()
        );
        None
    };
    let kld = kld_score(&gen_grids, reference)?;
    let clips: Vec<ClipScore> = generated
        .iter()
        .map(|(name, grid, target)| ClipScore {
            name: name.clone(),
            rows: grid.rows(),
            alignment: target.as_ref().and_then(|t| affect_alignment(grid, t, window_s).ok()),
        })
        .collect();
    Ok(MetricReport {
        fd,
        kld,
        affect_alignment_valence: mean_defined(clips.iter().map(|c| c.alignment.and_then(|a| a.valence))),
        affect_alignment_arousal: mean_defined(clips.iter().map(|c| c.alignment.and_then(|a| a.arousal))),
        clips,
    })
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"))
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Flat export: one summary row, then one row per clip.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,rows,fd,kld,alignment_valence,alignment_arousal\n");
        writeln!(
            out,
            "ALL,,{},{:.6},{},{}",
            opt(self.fd),
            self.kld,
            opt(self.affect_alignment_valence),
            opt(self.affect_alignment_arousal)
        )
        .expect("write to string");
        for c in &self.clips {
            writeln!(
                out,
                "{},{},,,{},{}",
                c.name,
                c.rows,
                opt(c.alignment.and_then(|a| a.valence)),
                opt(c.alignment.and_then(|a| a.arousal))
            )
            .expect("write to string");
        }
        out
    }
}

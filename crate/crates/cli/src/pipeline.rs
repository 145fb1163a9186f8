//! Shared steps behind the commands: artifact paths, model loading, held-out
//! generation and scoring.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use arcscore::anchor::{conceptualize, SemanticAnchor, DEFAULT_KEYFRAMES};
use arcscore::config::RunConfig;
use arcscore::decoder::{Backbone, ControlBranch, SamplerConfig};
use arcscore::eval::{affect_alignment, Alignment};
use arcscore::longform::{generate_from_trajectory, AcousticModels, Continuation, LongformResult, WindowPlan};
use arcscore::probe::{FrozenBackbone, ProbeHead};
use arcscore::rng::{derive_seed, rng_from};
use arcscore::synth::{make_arc, render_pseudo_video, Archetype, NarrativeArc};
use arcscore::trajectory::AffectTrajectory;
use arcscore::{weights, Real};
use serde::{Deserialize, Serialize};

/// Archetypes cycled through by the held-out set. Plateaus are left out: a
/// constant target has no defined correlation.
pub const HELD_OUT_ARCHETYPES: [Archetype; 4] =
    [Archetype::Rise, Archetype::Fall, Archetype::RiseFall, Archetype::RandomWalk];

const HELD_OUT_TAG: u64 = 0x4845;

/// Locations of every artifact inside one run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub root: PathBuf,
    pub data: PathBuf,
    pub weights: PathBuf,
    pub generated: PathBuf,
    pub eval: PathBuf,
}

impl RunPaths {
    pub fn new(root: &Path, cfg: &RunConfig) -> Self {
        RunPaths {
            root: root.to_path_buf(),
            data: root.join(&cfg.paths.data),
            weights: root.join(&cfg.paths.weights),
            generated: root.join(&cfg.paths.generated),
            eval: root.join(&cfg.paths.eval),
        }
    }

    pub fn music(&self) -> PathBuf {
        self.data.join("music")
    }

    pub fn videos(&self) -> PathBuf {
        self.data.join("videos")
    }

    pub fn probe_backbone(&self) -> PathBuf {
        self.weights.join("probe_backbone.weights")
    }

    pub fn probe_head(&self) -> PathBuf {
        self.weights.join("probe.weights")
    }

    pub fn backbone(&self) -> PathBuf {
        self.weights.join("backbone.weights")
    }

    pub fn adapter(&self) -> PathBuf {
        self.weights.join("adapter.weights")
    }
}

fn require(path: &Path, what: &str, stage: &str) -> anyhow::Result<()> {
    if !path.exists() {
        bail!("{what} not found at {}; run `arcscore {stage}` first", path.display());
    }
    Ok(())
}

pub fn load_probe(paths: &RunPaths, cfg: &RunConfig) -> anyhow::Result<(FrozenBackbone<Real>, ProbeHead<Real>)> {
    require(&paths.probe_head(), "probe weights", "train probe")?;
    let mut backbone = FrozenBackbone::<Real>::new(cfg.probe_backbone);
    weights::load(&mut backbone, &paths.probe_backbone()).context("loading the probe backbone")?;
    let mut head = ProbeHead::new(&mut rng_from(0), backbone.dim(), cfg.probe.hidden_dim);
    weights::load(&mut head, &paths.probe_head()).context("loading the probe head")?;
    Ok((backbone, head))
}

pub fn load_backbone(path: &Path, cfg: &RunConfig) -> anyhow::Result<Backbone<Real>> {
    require(path, "backbone weights", "train backbone")?;
    let mut backbone = Backbone::<Real>::new(cfg.decoder)?;
    weights::load(&mut backbone, path).context("loading the backbone")?;
    Ok(backbone)
}

pub fn load_control(path: &Path, cfg: &RunConfig) -> anyhow::Result<ControlBranch<Real>> {
    require(path, "adapter weights", "train adapter")?;
    let mut branch = ControlBranch::<Real>::new(&cfg.decoder, &cfg.adapter, 0)?;
    weights::load(&mut branch, path).context("loading the adapter")?;
    Ok(branch)
}

/// A held-out target arc together with the anchor of its pseudo-video.
#[derive(Debug, Clone)]
pub struct HeldOutArc {
    pub name: String,
    pub arc: NarrativeArc,
    pub anchor: SemanticAnchor,
}

/// `n` arcs drawn from a stream disjoint from the training corpus.
pub fn held_out_arcs(n: usize, duration_s: usize, num_scenes: u64, seed: u64) -> anyhow::Result<Vec<HeldOutArc>> {
    (0..n)
        .map(|i| {
            let s = derive_seed(seed, &[HELD_OUT_TAG, i as u64]);
            let archetype = HELD_OUT_ARCHETYPES[i % HELD_OUT_ARCHETYPES.len()];
            let arc = make_arc(s, duration_s, archetype)?;
            let scene = derive_seed(s, &[1]) % num_scenes.max(1);
            let anchor = conceptualize(&render_pseudo_video(&arc, scene, s), DEFAULT_KEYFRAMES);
            Ok(HeldOutArc {
                name: format!("heldout_{i:03}_{archetype}"),
                arc,
                anchor,
            })
        })
        .collect()
}

/// Generates audio tokens for a known trajectory with the long-form engine.
pub fn generate_for_trajectory(
    backbone: &Backbone<Real>,
    control: Option<&ControlBranch<Real>>,
    anchor: &SemanticAnchor,
    trajectory: &AffectTrajectory,
    cfg: &RunConfig,
    sampler: &SamplerConfig,
    continuation: Continuation,
) -> anyhow::Result<LongformResult> {
    let plan = WindowPlan::from_config(trajectory.len(), &cfg.windows)?;
    let models = AcousticModels { backbone, control };
    Ok(generate_from_trajectory(anchor, trajectory, models, &plan, &cfg.codec, sampler, continuation)?)
}

/// Alignment of one held-out generation; `None` axes mark undefined scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutScore {
    pub name: String,
    pub alignment: Alignment,
}

/// Generates every held-out arc and scores it against its target.
pub fn score_held_out(
    backbone: &Backbone<Real>,
    control: Option<&ControlBranch<Real>>,
    arcs: &[HeldOutArc],
    cfg: &RunConfig,
) -> anyhow::Result<Vec<(HeldOutScore, LongformResult)>> {
    use rayon::prelude::*;
    arcs.par_iter()
        .enumerate()
        .map(|(i, h)| {
            let traj = h.arc.sample_1hz();
            let sampler = SamplerConfig {
                rng_seed: derive_seed(cfg.sampler.rng_seed, &[HELD_OUT_TAG, i as u64]),
                ..cfg.sampler
            };
            let out = generate_for_trajectory(backbone, control, &h.anchor, &traj, cfg, &sampler, Continuation::Prefixed)?;
            let alignment = affect_alignment(&out.tokens, &traj, cfg.eval.alignment_window_s)?;
            Ok((HeldOutScore { name: h.name.clone(), alignment }, out))
        })
        .collect()
}

/// Mean of the defined scores on each axis, with undefined ones counted as 0.
pub fn mean_alignment(scores: &[HeldOutScore]) -> (f64, f64) {
    let n = scores.len().max(1) as f64;
    let v = scores.iter().map(|s| s.alignment.valence.unwrap_or(0.0)).sum::<f64>() / n;
    let a = scores.iter().map(|s| s.alignment.arousal.unwrap_or(0.0)).sum::<f64>() / n;
    (v, a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn held_out_arcs_are_deterministic_and_cycle_archetypes() {
        let a = held_out_arcs(8, 30, 16, 3).unwrap();
        let b = held_out_arcs(8, 30, 16, 3).unwrap();
        assert_eq!(a.len(), 8);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.arc, y.arc);
            assert_eq!(x.anchor, y.anchor);
        }
        assert!(a[0].name.ends_with("rise") && a[3].name.ends_with("random-walk"));
        assert_ne!(a[0].arc, held_out_arcs(1, 30, 16, 4).unwrap()[0].arc);
    }

    #[test]
    fn mean_alignment_counts_undefined_as_zero() {
        let s = |v, a| HeldOutScore {
            name: String::new(),
            alignment: Alignment { valence: v, arousal: a, windows: 6 },
        };
        let (v, a) = mean_alignment(&[s(Some(1.0), None), s(Some(0.5), Some(0.4))]);
        assert_eq!((v, a), (0.75, 0.2));
    }

    #[test]
    fn missing_weights_name_the_stage() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::default();
        let paths = RunPaths::new(dir.path(), &cfg);
        let err = load_backbone(&paths.backbone(), &cfg).unwrap_err().to_string();
        assert!(err.contains("train backbone"), "{err}");
        let err = load_control(&paths.adapter(), &cfg).unwrap_err().to_string();
        assert!(err.contains("train adapter"), "{err}");
    }
}

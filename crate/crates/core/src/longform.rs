//! Long-form inference: window planning, overlapped trajectory extraction with
//! crossfade merging, and prefix-prompted acoustic continuation.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anchor::{conceptualize, SemanticAnchor, DEFAULT_KEYFRAMES};
use crate::decoder::{sample, Backbone, ControlBranch, SamplerConfig};
use crate::error::{Error, Result};
use crate::probe::train::predict_window;
use crate::probe::{FrozenBackbone, ProbeHead};
use crate::rng::derive_seed;
use crate::synth::{CodecSpec, PseudoVideo, TokenGrid, WindowStats};
use crate::trajectory::{AffectTrajectory, Va};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start_s: usize,
    pub end_s: usize,
}

impl Window {
    pub fn len(&self) -> usize {
        self.end_s - self.start_s
    }

    pub fn is_empty(&self) -> bool {
        self.end_s == self.start_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub window_s: usize,
    pub overlap_s: usize,
    pub prefix_s: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            window_s: 30,
            overlap_s: 15,
            prefix_s: 5,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_s == 0 || self.overlap_s >= self.window_s {
            return Err(Error::Config(format!(
                "window overlap {} must be smaller than window length {}",
                self.overlap_s, self.window_s
            )));
        }
        if self.prefix_s == 0 || self.prefix_s > self.overlap_s {
            return Err(Error::Config(format!(
                "prefix {} must lie in 1..={} (the overlap)",
                self.prefix_s, self.overlap_s
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub window_s: usize,
    pub overlap_s: usize,
    pub prefix_s: usize,
    pub duration_s: usize,
    pub windows: Vec<Window>,
}

impl WindowPlan {
    pub fn stride(&self) -> usize {
        self.window_s - self.overlap_s
    }
}

impl WindowPlan {
    /// Plan for `duration_s` under `cfg`, keeping its prefix length.
    pub fn from_config(duration_s: usize, cfg: &WindowConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(WindowPlan {
            prefix_s: cfg.prefix_s,
            ..plan_windows(duration_s, cfg.window_s, cfg.overlap_s)?
        })
    }
}

/// Windows start at multiples of `W − O`; the last one is clipped to the
/// duration and no window starts inside the tail already covered.
pub fn plan_windows(duration_s: usize, window_s: usize, overlap_s: usize) -> Result<WindowPlan> {
    if window_s == 0 || overlap_s >= window_s {
        return Err(Error::Config(format!(
            "window overlap {overlap_s} must be smaller than window length {window_s}"
        )));
    }
    if duration_s == 0 {
        return Err(Error::InvalidInput("duration must be >= 1 s".into()));
    }
    let stride = window_s - overlap_s;
    let mut windows = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + window_s).min(duration_s);
        windows.push(Window { start_s: start, end_s: end });
        if end == duration_s {
            break;
        }
        start += stride;
    }
    Ok(WindowPlan {
        window_s,
        overlap_s,
        prefix_s: WindowConfig::default().prefix_s.min(overlap_s),
        duration_s,
        windows,
    })
}

/// Merges per-window curves in plan order. Where a window overlaps the part
/// already merged, the `n` shared seconds are blended with weight `j / (n − 1)`
/// on the newer window (0.5 when `n = 1`).
pub fn merge_crossfade(plan: &WindowPlan, parts: &[AffectTrajectory]) -> Result<AffectTrajectory> {
    if parts.len() != plan.windows.len() {
        return Err(Error::Shape(format!("{} window curves for {} windows", parts.len(), plan.windows.len())));
    }
    let mut merged: Vec<Va> = Vec::with_capacity(plan.duration_s);
    for (w, part) in plan.windows.iter().zip(parts) {
        if part.len() != w.len() {
            return Err(Error::Shape(format!(
                "window [{}, {}) has {} points",
                w.start_s,
                w.end_s,
                part.len()
            )));
        }
        let shared = merged.len().saturating_sub(w.start_s).min(w.len());
        for j in 0..shared {
            let wt = if shared == 1 { 0.5 } else { j as f64 / (shared - 1) as f64 };
            let t = w.start_s + j;
            merged[t] = merged[t].lerp(part.points[j], wt);
        }
        merged.extend_from_slice(&part.points[shared..]);
    }
    if merged.len() != plan.duration_s {
        return Err(Error::Shape(format!("merged curve covers {} of {} s", merged.len(), plan.duration_s)));
    }
    Ok(AffectTrajectory::new(merged))
}

/// The trained probe stack used to read affect off a video.
#[derive(Debug, Clone, Copy)]
pub struct ProbeModels<'a, T> {
    pub backbone: &'a FrozenBackbone<T>,
    pub head: &'a ProbeHead<T>,
    pub instruction_id: usize,
}

/// Probes every window independently, then crossfades the overlaps.
pub fn extract_trajectory_longform<T: Scalar>(
    video: &PseudoVideo,
    probe: ProbeModels<'_, T>,
    plan: &WindowPlan,
) -> Result<AffectTrajectory> {
    if plan.duration_s != video.num_frames() {
        return Err(Error::Shape(format!(
            "plan covers {} s but the video has {} frames",
            plan.duration_s,
            video.num_frames()
        )));
    }
    let parts = plan
        .windows
        .par_iter()
        .map(|w| predict_window(probe.backbone, probe.head, video, w.start_s, w.end_s, probe.instruction_id))
        .collect::<Result<Vec<_>>>()?;
    merge_crossfade(plan, &parts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Continuation {
    /// Each window after the first continues from the last `P` seconds of tokens.
    Prefixed,
    /// Each window starts from an empty context.
    Independent,
}

/// What one decoder call saw and produced.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowRun {
    pub window: Window,
    /// Tokens fed as prompt (empty for the first window or in independent mode).
    pub prefix: TokenGrid,
    /// First second of newly generated tokens.
    pub new_start_s: usize,
    /// Prompt plus new rows.
    pub context_rows: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Seam {
    pub boundary_s: usize,
    /// Mean absolute change of oracle-decoded valence and arousal across the seam.
    pub discontinuity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LongformResult {
    pub tokens: TokenGrid,
    pub plan: WindowPlan,
    pub trajectory: AffectTrajectory,
    pub anchor: SemanticAnchor,
    pub runs: Vec<WindowRun>,
    pub seams: Vec<Seam>,
}

impl LongformResult {
    pub fn mean_seam_discontinuity(&self) -> Option<f64> {
        mean_defined(self.seams.iter().map(|s| s.discontinuity))
    }

    /// `seams.csv`: header `boundary_s,discontinuity`; undefined scores are empty.
    pub fn seams_csv(&self) -> String {
        let mut out = String::from("boundary_s,discontinuity\n");
        for s in &self.seams {
            match s.discontinuity {
                Some(d) => writeln!(out, "{},{d:.6}", s.boundary_s),
                None => writeln!(out, "{},", s.boundary_s),
            }
            .expect("write to string");
        }
        out
    }
}

fn mean_defined(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Seconds on each side of a seam used to score it.
pub const SEAM_SPAN_S: usize = 5;

/// Change in oracle-decoded affect between the `span_s` seconds before and
/// after `boundary_s`.
pub fn seam_discontinuity(tokens: &TokenGrid, boundary_s: usize, span_s: usize) -> Option<f64> {
    let tps = tokens.codec.tokens_per_second;
    let b = boundary_s * tps;
    let span = span_s * tps;
    if b < span || b + span > tokens.rows() {
        return None;
    }
    let before = WindowStats::of(tokens, b - span, b).affect()?;
    let after = WindowStats::of(tokens, b, b + span).affect()?;
    Some(((before.valence - after.valence).abs() + (before.arousal - after.arousal).abs()) / 2.0)
}

/// The acoustic side of long-form generation.
#[derive(Debug, Clone, Copy)]
pub struct AcousticModels<'a, T> {
    pub backbone: &'a Backbone<T>,
    /// Without a control branch the decoder runs unconditioned.
    pub control: Option<&'a ControlBranch<T>>,
}

/// Generates tokens for `trajectory` window by window under one anchor.
pub fn generate_from_trajectory<T: Scalar>(
    anchor: &SemanticAnchor,
    trajectory: &AffectTrajectory,
    models: AcousticModels<'_, T>,
    plan: &WindowPlan,
    codec: &CodecSpec,
    sampler: &SamplerConfig,
    continuation: Continuation,
) -> Result<LongformResult> {
    if trajectory.len() != plan.duration_s {
        return Err(Error::Shape(format!(
            "trajectory has {} s but the plan covers {} s",
            trajectory.len(),
            plan.duration_s
        )));
    }
    let tps = codec.tokens_per_second;
    let memory = models.backbone.anchor.encode(anchor)?;
    let mut tokens = TokenGrid::silent(*codec, 0);
    let mut runs = Vec::with_capacity(plan.windows.len());
    let mut done_s = 0;
    for (i, w) in plan.windows.iter().enumerate() {
        let new_start = done_s.max(w.start_s);
        let prefix_start = match continuation {
            Continuation::Prefixed => new_start.saturating_sub(plan.prefix_s),
            Continuation::Independent => new_start,
        };
        let prefix = tokens.slice_rows(prefix_start * tps, new_start * tps);
        let length = (w.end_s - new_start) * tps;
        let cfg = SamplerConfig {
            rng_seed: derive_seed(sampler.rng_seed, &[i as u64]),
            ..*sampler
        };
        let rows = prefix.rows() + length;
        let control = match models.control {
            Some(branch) => {
                let slice = trajectory.slice(prefix_start, w.end_s);
                Some((branch.adapter.control_for(&slice, rows)?, &branch.gates))
            }
            None => None,
        };
        let out = sample(
            &models.backbone.decoder,
            memory.view(),
            control.as_ref().map(|(c, g)| (c.view(), *g)),
            &prefix,
            length,
            &cfg,
        )?;
        tokens.append(&out.tokens);
        runs.push(WindowRun {
            window: *w,
            prefix,
            new_start_s: new_start,
            context_rows: rows,
        });
        done_s = w.end_s;
    }
    let seams = runs
        .iter()
        .skip(1)
        .map(|r| Seam {
            boundary_s: r.new_start_s,
            discontinuity: seam_discontinuity(&tokens, r.new_start_s, SEAM_SPAN_S),
        })
        .collect();
    Ok(LongformResult {
        tokens,
        plan: plan.clone(),
        trajectory: trajectory.clone(),
        anchor: *anchor,
        runs,
        seams,
    })
}

/// Full pipeline for one video: anchor once, probe per window, then generate.
pub fn generate_longform<T: Scalar>(
    video: &PseudoVideo,
    probe: ProbeModels<'_, T>,
    models: AcousticModels<'_, T>,
    plan: &WindowPlan,
    codec: &CodecSpec,
    sampler: &SamplerConfig,
    continuation: Continuation,
) -> Result<LongformResult> {
    let anchor = conceptualize(video, DEFAULT_KEYFRAMES);
    let trajectory = extract_trajectory_longform(video, probe, plan)?;
    generate_from_trajectory(&anchor, &trajectory, models, plan, codec, sampler, continuation)
}

/// Steps `|e_t − e_{t−1}|` (max over axes) split into those touching a
/// window edge and the rest.
pub fn boundary_and_interior_steps(plan: &WindowPlan, traj: &AffectTrajectory) -> (Vec<f64>, Vec<f64>) {
    let mut edges: Vec<usize> = plan.windows.iter().flat_map(|w| [w.start_s, w.end_s]).collect();
    edges.sort_unstable();
    edges.dedup();
    let (mut boundary, mut interior) = (Vec::new(), Vec::new());
    for t in 1..traj.len() {
        let step = traj.points[t].max_abs_diff(traj.points[t - 1]);
        // Step t spans seconds t − 1 → t.
        if edges.contains(&t) {
            boundary.push(step);
        } else {
            interior.push(step);
        }
    }
    (boundary, interior)
}

/// Nearest-rank percentile, `q ∈ [0, 1]`.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q.clamp(0.0, 1.0) * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Some(v[rank - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::AdapterConfig;
    use crate::decoder::DecoderConfig;
    use crate::probe::BackboneConfig;
    use crate::rng::rng_from;
    use crate::synth::{make_arc, render_pseudo_video, Archetype};

    fn spans(plan: &WindowPlan) -> Vec<(usize, usize)> {
        plan.windows.iter().map(|w| (w.start_s, w.end_s)).collect()
    }

    #[test]
    fn window_plans() {
        assert_eq!(spans(&plan_windows(60, 30, 15).unwrap()), vec![(0, 30), (15, 45), (30, 60)]);
        assert_eq!(spans(&plan_windows(30, 30, 15).unwrap()), vec![(0, 30)]);
        assert_eq!(spans(&plan_windows(20, 30, 15).unwrap()), vec![(0, 20)]);
        assert_eq!(spans(&plan_windows(50, 30, 15).unwrap()), vec![(0, 30), (15, 45), (30, 50)]);
        assert_eq!(spans(&plan_windows(50, 20, 0).unwrap()), vec![(0, 20), (20, 40), (40, 50)]);
        assert!(matches!(plan_windows(60, 30, 30), Err(Error::Config(_))));
        assert!(plan_windows(0, 30, 15).is_err());
    }

    #[test]
    fn window_config_bounds() {
        assert!(WindowConfig::default().validate().is_ok());
        assert!(WindowConfig { prefix_s: 16, ..Default::default() }.validate().is_err());
        assert!(WindowConfig { prefix_s: 0, ..Default::default() }.validate().is_err());
        assert!(WindowConfig { overlap_s: 30, ..Default::default() }.validate().is_err());
        let plan = WindowPlan::from_config(90, &WindowConfig::default()).unwrap();
        assert_eq!((plan.prefix_s, plan.windows.len()), (5, 5));
    }

    #[test]
    fn single_window_merge_is_identity() {
        let plan = plan_windows(20, 30, 15).unwrap();
        let traj = make_arc(3, 20, Archetype::RandomWalk).unwrap().sample_1hz();
        assert_eq!(merge_crossfade(&plan, &[traj.clone()]).unwrap(), traj);
    }

    #[test]
    fn constant_windows_crossfade_linearly() {
        let plan = plan_windows(45, 30, 15).unwrap();
        let (c1, c2) = (Va::new(0.6, -0.3), Va::new(-0.9, 0.9));
        let merged = merge_crossfade(
            &plan,
            &[AffectTrajectory::constant(c1, 30), AffectTrajectory::constant(c2, 30)],
        )
        .unwrap();
        assert_eq!(merged.len(), 45);
        for t in 0..15 {
            assert_eq!(merged.points[t], c1);
        }
        for j in 0..15 {
            let expect = c1.lerp(c2, j as f64 / 14.0);
            assert!(merged.points[15 + j].max_abs_diff(expect) < 1e-12);
        }
        for t in 30..45 {
            assert_eq!(merged.points[t], c2);
        }
        // The overlap is a straight line: constant increments.
        let d: Vec<f64> = (16..30).map(|t| merged.points[t].valence - merged.points[t - 1].valence).collect();
        assert!(d.iter().all(|x| (x - d[0]).abs() < 1e-12));
    }

    #[test]
    fn one_second_overlap_takes_the_midpoint() {
        let plan = plan_windows(19, 10, 1).unwrap();
        assert_eq!(spans(&plan), vec![(0, 10), (9, 19)]);
        let merged = merge_crossfade(
            &plan,
            &[
                AffectTrajectory::constant(Va::new(0.0, 0.0), 10),
                AffectTrajectory::constant(Va::new(1.0, -1.0), 10),
            ],
        )
        .unwrap();
        assert_eq!(merged.points[9], Va::new(0.5, -0.5));
    }

    #[test]
    fn merge_rejects_wrong_shapes() {
        let plan = plan_windows(45, 30, 15).unwrap();
        let c = AffectTrajectory::constant(Va::new(0.0, 0.0), 30);
        assert!(merge_crossfade(&plan, &[c.clone()]).is_err());
        assert!(merge_crossfade(&plan, &[c, AffectTrajectory::constant(Va::new(0.0, 0.0), 29)]).is_err());
    }

    #[test]
    fn probe_merge_covers_every_second() {
        let cfg = BackboneConfig { dim: 16, layers: 1, heads: 2, ..Default::default() };
        let backbone = FrozenBackbone::<f64>::new(cfg);
        let head = ProbeHead::new(&mut rng_from(1), 16, 8);
        let probe = ProbeModels { backbone: &backbone, head: &head, instruction_id: 0 };
        let arc = make_arc(2, 40, Archetype::Rise).unwrap();
        let video = render_pseudo_video(&arc, 1, 2);
        let plan = plan_windows(40, 30, 15).unwrap();
        let merged = extract_trajectory_longform(&video, probe, &plan).unwrap();
        assert_eq!(merged.len(), 40);
        // The first 15 s come from window one alone.
        let alone = predict_window(&backbone, &head, &video, 0, 30, 0).unwrap();
        assert_eq!(&merged.points[..15], &alone.points[..15]);
        let single = plan_windows(40, 60, 15).unwrap();
        let whole = predict_window(&backbone, &head, &video, 0, 40, 0).unwrap();
        assert_eq!(extract_trajectory_longform(&video, probe, &single).unwrap(), whole);
        assert!(extract_trajectory_longform(&video, probe, &plan_windows(41, 30, 15).unwrap()).is_err());
    }

    fn tiny_models() -> (Backbone<f64>, ControlBranch<f64>) {
        let cfg = DecoderConfig { layers: 2, dim: 8, heads: 2, seed: 4, ..Default::default() }
            .for_codec(&CodecSpec::default());
        let backbone = Backbone::new(cfg).unwrap();
        let mut branch = ControlBranch::new(&cfg, &AdapterConfig { dim: 8, ..Default::default() }, 5).unwrap();
        branch.gates.gamma.fill(0.5);
        (backbone, branch)
    }

    fn run(continuation: Continuation) -> LongformResult {
        let (backbone, branch) = tiny_models();
        let codec = CodecSpec::default();
        let traj = make_arc(9, 60, Archetype::RiseFall).unwrap().sample_1hz();
        let anchor = SemanticAnchor::from_ids([1, 2, 3, 4]).unwrap();
        let plan = WindowPlan::from_config(60, &WindowConfig::default()).unwrap();
        let models = AcousticModels { backbone: &backbone, control: Some(&branch) };
        generate_from_trajectory(&anchor, &traj, models, &plan, &codec, &SamplerConfig::default(), continuation).unwrap()
    }

    #[test]
    fn sixty_seconds_give_six_hundred_rows() {
        let r = run(Continuation::Prefixed);
        assert_eq!((r.tokens.rows(), r.tokens.num_codebooks()), (600, 4));
        assert_eq!(r.trajectory.len(), 60);
        assert_eq!(r.seams.iter().map(|s| s.boundary_s).collect::<Vec<_>>(), vec![30, 45]);
    }

    #[test]
    fn prefix_is_the_tail_of_the_previous_window() {
        let r = run(Continuation::Prefixed);
        let tps = r.tokens.codec.tokens_per_second;
        assert!(r.runs[0].prefix.is_empty());
        for run in &r.runs[1..] {
            let b = run.new_start_s * tps;
            assert_eq!(run.prefix, r.tokens.slice_rows(b - 5 * tps, b));
            assert!(run.context_rows <= (30 + 5) * tps);
        }
        let ind = run(Continuation::Independent);
        assert!(ind.runs.iter().all(|r| r.prefix.is_empty()));
        // The first window does not depend on the continuation mode.
        assert_eq!(ind.tokens.slice_rows(0, 300), r.tokens.slice_rows(0, 300));
        assert_eq!(run(Continuation::Prefixed), r);
    }

    #[test]
    fn anchor_embedding_is_stationary() {
        let (backbone, _) = tiny_models();
        let anchor = SemanticAnchor::from_ids([1, 2, 3, 4]).unwrap();
        let a = backbone.anchor.encode(&anchor).unwrap();
        let b = backbone.anchor.encode(&anchor).unwrap();
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(run(Continuation::Prefixed).anchor, anchor);
    }

    #[test]
    fn trajectory_length_must_match_plan() {
        let (backbone, _) = tiny_models();
        let plan = plan_windows(60, 30, 15).unwrap();
        let models = AcousticModels { backbone: &backbone, control: None };
        let err = generate_from_trajectory(
            &SemanticAnchor::from_ids([0, 0, 0, 0]).unwrap(),
            &AffectTrajectory::constant(Va::new(0.0, 0.0), 59),
            models,
            &plan,
            &CodecSpec::default(),
            &SamplerConfig::default(),
            Continuation::Prefixed,
        );
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn seam_score_by_hand() {
        let c = CodecSpec { num_codebooks: 1, tokens_per_second: 4, ..Default::default() };
        let ids = c.voiced_ids();
        let major = ids[c.major_range().start];
        let minor = ids[c.minor_range().start];
        // Before: a constant major token (no switches). After: alternating minor tokens.
        let mut rows = vec![major; 8];
        rows.extend([minor, minor + 1, minor, minor + 1, minor, minor + 1, minor, minor + 1]);
        let g = TokenGrid::new(c, 16, rows).unwrap();
        // valence 1 → -1, arousal from switch rate 0 → 1 (clipped): (2 + 2) / 2.
        assert!((seam_discontinuity(&g, 2, 2).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(seam_discontinuity(&g, 1, 2), None);
        assert_eq!(seam_discontinuity(&g, 3, 2), None);
    }

    #[test]
    fn seams_csv_layout() {
        let r = run(Continuation::Prefixed);
        let csv = r.seams_csv();
        assert!(csv.starts_with("boundary_s,discontinuity\n30,"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn percentile_nearest_rank() {
        let v = [5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(percentile(&v, 0.95), Some(5.0));
        assert_eq!(percentile(&v, 0.5), Some(3.0));
        assert_eq!(percentile(&v, 0.0), Some(1.0));
        assert_eq!(percentile(&[], 0.5), None);
    }

    #[test]
    fn boundary_steps_are_at_window_edges() {
        let plan = plan_windows(45, 30, 15).unwrap();
        let traj = AffectTrajectory::new((0..45).map(|t| Va::new(t as f64 / 100.0, 0.0)).collect());
        let (b, i) = boundary_and_interior_steps(&plan, &traj);
        assert_eq!(b.len(), 2);
        assert_eq!(b.len() + i.len(), 44);
    }
}

use ndarray::{s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::Injection;
use super::sample::extend_rows;
use super::{gen_loss, gen_loss_with_grad, shift_inputs, Backbone, ControlBranch};
use crate::adapter::{interpolate, AdapterConfig, Mode};
use crate::anchor::SemanticAnchor;
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig};
use crate::params::{add_scaled, checksum, scale, zeros_like, Params};
use crate::rng::{derive_seed, rng_from};
use crate::synth::{apply_delay, ClipRecord, DelayedGrid};
use crate::trajectory::AffectTrajectory;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Clips per optimizer step.
    pub batch_size: usize,
    /// Train on random crops of this many seconds; 0 uses whole clips.
    pub crop_s: usize,
    pub seed: u64,
}

impl Default for BackboneTrainConfig {
    fn default() -> Self {
        BackboneTrainConfig {
            epochs: 20,
            learning_rate: 1e-3,
            batch_size: 8,
            crop_s: 0,
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapterTrainConfig {
    pub epochs: usize,
    /// Adapter learning rate.
    pub learning_rate: f64,
    /// Gate learning rate; gates start at zero and must move much further than adapter weights.
    pub gate_learning_rate: f64,
    pub batch_size: usize,
    pub crop_s: usize,
    pub seed: u64,
}

impl Default for AdapterTrainConfig {
    fn default() -> Self {
        AdapterTrainConfig {
            epochs: 50,
            learning_rate: 3e-3,
            gate_learning_rate: 3e-2,
            batch_size: 8,
            crop_s: 0,
            seed: 13,
        }
    }
}

/// One training sequence: teacher-forcing inputs, delayed targets, the clip's
/// anchor and its affect curve over the same seconds.
#[derive(Debug, Clone)]
pub struct ClipExample {
    pub inputs: DelayedGrid,
    pub targets: DelayedGrid,
    pub anchor: SemanticAnchor,
    pub va: AffectTrajectory,
}

impl ClipExample {
    /// Undelayed token rows.
    pub fn rows(&self) -> usize {
        self.targets.source_rows()
    }
}

/// Builds an example from seconds `[start, start + len)` of `clip`
/// (the whole clip when `crop` is `None`).
pub fn clip_example(clip: &ClipRecord, crop: Option<(usize, usize)>) -> ClipExample {
    let tps = clip.tokens.codec.tokens_per_second;
    let (start, len) = crop.unwrap_or((0, clip.va_curve.len()));
    let tokens = clip.tokens.slice_rows(start * tps, (start + len) * tps);
    let targets = apply_delay(&tokens, clip.tokens.codec.pad_token());
    ClipExample {
        inputs: shift_inputs(&targets),
        targets,
        anchor: clip.anchor,
        va: clip.va_curve.slice(start, start + len),
    }
}

fn draw_example(clip: &ClipRecord, crop_s: usize, seed: u64) -> ClipExample {
    let dur = clip.va_curve.len();
    if crop_s == 0 || crop_s >= dur {
        return clip_example(clip, None);
    }
    let start = rng_from(seed).random_range(0..=dur - crop_s);
    clip_example(clip, Some((start, crop_s)))
}

#[derive(Debug, Clone)]
pub struct PretrainResult<T> {
    pub backbone: Backbone<T>,
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
}

fn batch_mean<P: Params<T> + Clone + Send, T: Scalar>(zero: &P, parts: Vec<(f64, P)>) -> (f64, P) {
    let n = parts.len() as f64;
    let mut acc = zero.clone();
    let mut loss = 0.0;
    // Reduction runs in batch order so results do not depend on thread count.
    for (l, g) in &parts {
        loss += l;
        add_scaled(&mut acc, g, T::one());
    }
    scale(&mut acc, T::of(1.0 / n));
    (loss / n, acc)
}

/// Anchor-conditioned next-token training of the decoder and anchor encoder.
pub fn pretrain_backbone<T: Scalar>(
    clips: &[ClipRecord],
    init: Backbone<T>,
    cfg: &BackboneTrainConfig,
) -> Result<PretrainResult<T>> {
    if clips.is_empty() {
        return Err(Error::InvalidInput("backbone pretraining needs a nonempty corpus".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut model = init;
    let zero = zeros_like(&model);
    let mut opt = Adam::new(AdamConfig {
        learning_rate: cfg.learning_rate,
        ..Default::default()
    });
    let mut order: Vec<usize> = (0..clips.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng_from(derive_seed(cfg.seed, &[epoch as u64])));
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let parts = batch
                .par_iter()
                .enumerate()
                .map(|(j, &i)| {
                    let ex = draw_example(&clips[i], cfg.crop_s, derive_seed(cfg.seed, &[epoch as u64, b as u64, j as u64]));
                    let mut g = zero.clone();
                    let memory = model.anchor.encode(&ex.anchor)?;
                    let (logits, cache) = model.decoder.forward(&ex.inputs, memory.view(), None)?;
                    let (loss, d_logits) = gen_loss_with_grad(&logits, &ex.targets)?;
                    let d_in = model.decoder.backward(&cache, &d_logits, None, Some(&mut g.decoder));
                    model.anchor.backward(&ex.anchor, &d_in.memory, &mut g.anchor);
                    Ok((loss.f64(), g))
                })
                .collect::<Result<Vec<_>>>()?;
            let (loss, grads) = batch_mean(&zero, parts);
            epoch_loss += loss * batch.len() as f64;
            opt.step(&mut model, &grads);
        }
        let mean = epoch_loss / clips.len() as f64;
        log::info!("backbone epoch {}/{}: loss {mean:.4}", epoch + 1, cfg.epochs);
        history.push(mean);
    }
    Ok(PretrainResult {
        backbone: model,
        loss_history: history,
    })
}

#[derive(Debug, Clone)]
pub struct TrainedControl<T> {
    pub branch: ControlBranch<T>,
    pub loss_history: Vec<f64>,
    pub backbone_checksum_before: u64,
    pub backbone_checksum_after: u64,
}

/// Control rows for an example: `rows` adapter outputs followed by copies of
/// the last one for the trailing delay steps.
fn example_control<T: Scalar>(
    branch: &ControlBranch<T>,
    ex: &ClipExample,
    mode: Mode,
) -> Result<(Array2<T>, crate::adapter::AdapterCache<T>)> {
    let dense = interpolate(&ex.va, ex.rows())?.mapv(T::of);
    let (c, cache) = branch.adapter.forward(dense.view(), mode);
    Ok((extend_rows(c.view(), ex.inputs.steps()), cache))
}

/// Loss and gradient w.r.t. the control branch only.
fn control_loss_and_grad<T: Scalar>(
    backbone: &Backbone<T>,
    branch: &ControlBranch<T>,
    ex: &ClipExample,
    mode: Mode,
    zero: &ControlBranch<T>,
) -> Result<(f64, ControlBranch<T>)> {
    let memory = backbone.anchor.encode(&ex.anchor)?;
    let (control, a_cache) = example_control(branch, ex, mode)?;
    let inj = Injection {
        control: control.view(),
        gates: &branch.gates,
    };
    let (logits, cache) = backbone.decoder.forward(&ex.inputs, memory.view(), Some(inj))?;
    let (loss, d_logits) = gen_loss_with_grad(&logits, &ex.targets)?;
    let d_in = backbone.decoder.backward(&cache, &d_logits, Some(&branch.gates), None);
    let mut g = zero.clone();
    g.gates.gamma += &d_in.gates.expect("gates were supplied");
    let d_ext = d_in.control.expect("control was supplied");
    // Fold the gradients of the repeated trailing rows back onto the last one.
    let rows = ex.rows();
    let mut d_c = d_ext.slice(s![..rows, ..]).to_owned();
    let tail = d_ext.slice(s![rows.., ..]).sum_axis(Axis(0));
    let mut last = d_c.row_mut(rows - 1);
    last += &tail;
    branch.adapter.backward(&a_cache, d_c.view(), &mut g.adapter);
    Ok((loss.f64(), g))
}

/// Shifts the adapter's output bias so the eval-mode control has zero mean
/// over `clips`. The affect-independent part of a random adapter only adds
/// gradient noise to the gates.
fn center_control<T: Scalar>(branch: &mut ControlBranch<T>, clips: &[ClipRecord]) -> Result<()> {
    let sums = clips
        .par_iter()
        .map(|clip| {
            let c = branch.adapter.control_for(&clip.va_curve, clip.tokens.rows())?;
            Ok((c.sum_axis(Axis(0)), c.nrows()))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: usize = sums.iter().map(|s| s.1).sum();
    if rows == 0 {
        return Ok(());
    }
    let mut total = Array1::<T>::zeros(branch.adapter.dim());
    for (s, _) in &sums {
        total += s;
    }
    branch.adapter.out.b -= &total.mapv(|x| x / T::of(rows as f64));
    Ok(())
}

/// Trains only the adapter and gates against a frozen backbone.
pub fn train_adapter<T: Scalar>(
    clips: &[ClipRecord],
    backbone: Option<&Backbone<T>>,
    adapter_cfg: &AdapterConfig,
    cfg: &AdapterTrainConfig,
) -> Result<TrainedControl<T>> {
    let backbone = backbone.ok_or_else(|| Error::Missing("adapter training needs a pretrained backbone".into()))?;
    if clips.is_empty() {
        return Err(Error::InvalidInput("adapter training needs a nonempty corpus".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let before = checksum(backbone);
    let mut branch = ControlBranch::new(backbone.config(), adapter_cfg, cfg.seed)?;
    center_control(&mut branch, clips)?;
    let zero = zeros_like(&branch);
    let mut adapter_opt = Adam::new(AdamConfig {
        learning_rate: cfg.learning_rate,
        ..Default::default()
    });
    let mut gate_opt = Adam::new(AdamConfig {
        learning_rate: cfg.gate_learning_rate,
        ..Default::default()
    });
    let mut order: Vec<usize> = (0..clips.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng_from(derive_seed(cfg.seed, &[epoch as u64])));
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let parts = batch
                .par_iter()
                .enumerate()
                .map(|(j, &i)| {
                    let seed = derive_seed(cfg.seed, &[epoch as u64, b as u64, j as u64]);
                    let ex = draw_example(&clips[i], cfg.crop_s, seed);
                    control_loss_and_grad(backbone, &branch, &ex, Mode::Train(derive_seed(seed, &[1])), &zero)
                })
                .collect::<Result<Vec<_>>>()?;
            let (loss, grads) = batch_mean(&zero, parts);
            epoch_loss += loss * batch.len() as f64;
            adapter_opt.step(&mut branch.adapter, &grads.adapter);
            gate_opt.step(&mut branch.gates, &grads.gates);
        }
        let mean = epoch_loss / clips.len() as f64;
        log::info!("adapter epoch {}/{}: loss {mean:.4}", epoch + 1, cfg.epochs);
        history.push(mean);
    }
    Ok(TrainedControl {
        branch,
        loss_history: history,
        backbone_checksum_before: before,
        backbone_checksum_after: checksum(backbone),
    })
}

/// Mean cross-entropy over whole clips, with or without the control branch.
pub fn evaluate_ce<T: Scalar>(
    backbone: &Backbone<T>,
    branch: Option<&ControlBranch<T>>,
    clips: &[ClipRecord],
) -> Result<f64> {
    if clips.is_empty() {
        return Err(Error::InvalidInput("no clips to evaluate".into()));
    }
    let losses = clips
        .par_iter()
        .map(|clip| {
            let ex = clip_example(clip, None);
            let memory = backbone.anchor.encode(&ex.anchor)?;
            let control = branch.map(|b| example_control(b, &ex, Mode::Eval)).transpose()?;
            let inj = match (&control, branch) {
                (Some((c, _)), Some(b)) => Some(Injection {
                    control: c.view(),
                    gates: &b.gates,
                }),
                _ => None,
            };
            let (logits, _) = backbone.decoder.forward(&ex.inputs, memory.view(), inj)?;
            Ok(gen_loss(&logits, &ex.targets)?.f64())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::DecoderConfig;
    use crate::params::{get, nudge, snapshot};
    use crate::synth::{corpus::music_corpus, CodecSpec, CorpusConfig};

    fn tiny_backbone() -> Backbone<f64> {
        let codec = CodecSpec { num_codebooks: 2, vocab_size: 8, ..Default::default() };
        Backbone::new(
            DecoderConfig { layers: 2, dim: 8, heads: 2, max_context: 400, seed: 4, ..Default::default() }
                .for_codec(&codec),
        )
        .unwrap()
    }

    fn tiny_clips(n: usize) -> Vec<ClipRecord> {
        let codec = CodecSpec { num_codebooks: 2, vocab_size: 8, ..Default::default() };
        let cfg = CorpusConfig { scale: 0.02, ..Default::default() };
        let mut clips = music_corpus(&cfg, &codec, 3).unwrap();
        clips.truncate(n);
        clips
    }

    #[test]
    fn control_gradients_match_finite_differences() {
        let backbone = tiny_backbone();
        let clip = &tiny_clips(1)[0];
        let ex = clip_example(clip, Some((3, 2)));
        let mut branch = ControlBranch::<f64>::new(
            backbone.config(),
            &AdapterConfig { dim: 8, ..Default::default() },
            9,
        )
        .unwrap();
        branch.gates.gamma.iter_mut().enumerate().for_each(|(i, g)| *g = 0.3 + 0.2 * i as f64);
        let zero = zeros_like(&branch);
        let (_, grads) = control_loss_and_grad(&backbone, &branch, &ex, Mode::Eval, &zero).unwrap();
        let loss = |b: &ControlBranch<f64>| control_loss_and_grad(&backbone, b, &ex, Mode::Eval, &zero).unwrap().0;
        let tensors = snapshot(&branch).len();
        let h = 1e-5;
        for t in 0..tensors {
            let size = snapshot(&branch)[t].1.len();
            for off in [0, size / 2, size - 1] {
                nudge(&mut branch, t, off, h);
                let up = loss(&branch);
                nudge(&mut branch, t, off, -2.0 * h);
                let down = loss(&branch);
                nudge(&mut branch, t, off, h);
                let fd = (up - down) / (2.0 * h);
                let an = get(&grads, t, off);
                let rel = (fd - an).abs() / (fd.abs() + an.abs()).max(1e-7);
                assert!(rel < 1e-4, "tensor {t} offset {off}: fd {fd} analytic {an}");
            }
        }
    }

    #[test]
    fn train_adapter_requires_backbone_and_keeps_it_frozen() {
        let clips = tiny_clips(4);
        let cfg = AdapterTrainConfig { epochs: 2, batch_size: 2, crop_s: 5, ..Default::default() };
        let acfg = AdapterConfig { dim: 8, ..Default::default() };
        assert!(matches!(
            train_adapter::<f64>(&clips, None, &acfg, &cfg),
            Err(Error::Missing(_))
        ));
        let backbone = tiny_backbone();
        let out = train_adapter(&clips, Some(&backbone), &acfg, &cfg).unwrap();
        assert_eq!(out.backbone_checksum_before, out.backbone_checksum_after);
        assert_eq!(out.loss_history.len(), 2);
        assert!(out.branch.gates.gamma.iter().any(|&g| g != 0.0));
    }

    #[test]
    fn pretraining_rejects_empty_corpus_and_is_deterministic() {
        assert!(pretrain_backbone(&[], tiny_backbone(), &BackboneTrainConfig::default()).is_err());
        let clips = tiny_clips(3);
        let cfg = BackboneTrainConfig { epochs: 2, batch_size: 2, crop_s: 4, ..Default::default() };
        let a = pretrain_backbone(&clips, tiny_backbone(), &cfg).unwrap();
        let b = pretrain_backbone(&clips, tiny_backbone(), &cfg).unwrap();
        assert_eq!(checksum(&a.backbone), checksum(&b.backbone));
        assert_eq!(a.loss_history, b.loss_history);
    }
}

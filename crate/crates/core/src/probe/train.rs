use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::longform::plan_windows;
use crate::nn::{Adam, AdamConfig};
use crate::params::{checksum, zeros_like};
use crate::probe::backbone::FrozenBackbone;
use crate::probe::head::{clip_unit, ProbeHead};
use crate::probe::loss::emo_loss_with_grad;
use crate::probe::sequence::build_interleaved_sequence;
use crate::rng::{derive_seed, rng_from};
use crate::synth::PseudoVideo;
use crate::trajectory::{AffectTrajectory, Va};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub hidden_dim: usize,
    /// Weight of the L1 term.
    pub lambda: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub rng_seed: u64,
    pub instruction_id: usize,
    /// Window length and overlap used when running the backbone over long videos.
    pub window_s: usize,
    pub overlap_s: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            hidden_dim: 64,
            lambda: 0.5,
            epochs: 150,
            learning_rate: 1e-3,
            batch_size: 256,
            rng_seed: 17,
            instruction_id: 0,
            window_s: 30,
            overlap_s: 15,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::Config("probe lambda must be >= 0".into()));
        }
        if self.hidden_dim == 0 || self.batch_size == 0 {
            return Err(Error::Config("probe hidden_dim and batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Pooled backbone features and their targets, one row per (window, frame).
#[derive(Debug, Clone)]
pub struct ProbeFeatures<T> {
    pub pooled: Array2<T>,
    pub targets: Array2<T>,
}

impl<T: Scalar> ProbeFeatures<T> {
    pub fn len(&self) -> usize {
        self.pooled.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.pooled.nrows() == 0
    }
}

/// Pooled hidden states for frames `[start, end)` of `video`.
pub fn window_features<T: Scalar>(
    backbone: &FrozenBackbone<T>,
    video: &PseudoVideo,
    start: usize,
    end: usize,
    instruction_id: usize,
) -> Result<Array2<T>> {
    let seq = build_interleaved_sequence(
        &video.slice(start, end),
        instruction_id,
        backbone.config.instruction_len,
        start,
    )?;
    Ok(backbone.pooled(&seq))
}

/// Runs the frozen backbone over every window of every video.
pub fn extract_features<T: Scalar>(
    backbone: &FrozenBackbone<T>,
    videos: &[PseudoVideo],
    cfg: &ProbeConfig,
) -> Result<ProbeFeatures<T>> {
    let parts: Vec<(Array2<T>, Array2<T>)> = videos
        .par_iter()
        .map(|video| {
            let plan = plan_windows(video.num_frames(), cfg.window_s, cfg.overlap_s)?;
            let mut pooled = Vec::new();
            let mut targets = Vec::new();
            for w in &plan.windows {
                pooled.push(window_features(backbone, video, w.start_s, w.end_s, cfg.instruction_id)?);
                let truth = &video.ground_truth.points[w.start_s..w.end_s];
                targets.push(Array2::from_shape_fn((truth.len(), 2), |(i, c)| {
                    T::of(if c == 0 { truth[i].valence } else { truth[i].arousal })
                }));
            }
            let pv: Vec<_> = pooled.iter().map(|p| p.view()).collect();
            let tv: Vec<_> = targets.iter().map(|p| p.view()).collect();
            Ok((
                ndarray::concatenate(Axis(0), &pv).map_err(|e| Error::Shape(e.to_string()))?,
                ndarray::concatenate(Axis(0), &tv).map_err(|e| Error::Shape(e.to_string()))?,
            ))
        })
        .collect::<Result<_>>()?;
    if parts.is_empty() {
        return Err(Error::InvalidInput("probe dataset is empty".into()));
    }
    let pv: Vec<_> = parts.iter().map(|p| p.0.view()).collect();
    let tv: Vec<_> = parts.iter().map(|p| p.1.view()).collect();
    Ok(ProbeFeatures {
        pooled: ndarray::concatenate(Axis(0), &pv).map_err(|e| Error::Shape(e.to_string()))?,
        targets: ndarray::concatenate(Axis(0), &tv).map_err(|e| Error::Shape(e.to_string()))?,
    })
}

/// Loss of the clipped probe on `features`, together with `∂L/∂head`.
pub fn probe_loss_and_grad<T: Scalar>(
    head: &ProbeHead<T>,
    pooled: ndarray::ArrayView2<T>,
    targets: ndarray::ArrayView2<T>,
    lambda: T,
) -> Result<(T, ProbeHead<T>)> {
    let (raw, cache) = head.forward_pooled(pooled);
    let pred = raw.mapv(clip_unit);
    let (loss, d_pred) = emo_loss_with_grad(pred.view(), targets, lambda)?;
    // The clip passes gradient only strictly inside (-1, 1).
    let d_raw = ndarray::Zip::from(&d_pred).and(&raw).map_collect(|&d, &r| {
        if r > -T::one() && r < T::one() {
            d
        } else {
            T::zero()
        }
    });
    let mut grads = zeros_like(head);
    head.backward(pooled, &cache, d_raw.view(), &mut grads);
    Ok((loss, grads))
}

#[derive(Debug, Clone)]
pub struct TrainedProbe<T> {
    pub head: ProbeHead<T>,
    pub initial_loss: f64,
    /// Full training-set loss after each epoch.
    pub loss_history: Vec<f64>,
    pub backbone_checksum: u64,
}

pub fn train_probe<T: Scalar>(
    backbone: &FrozenBackbone<T>,
    videos: &[PseudoVideo],
    cfg: &ProbeConfig,
) -> Result<TrainedProbe<T>> {
    cfg.validate()?;
    if videos.is_empty() {
        return Err(Error::InvalidInput("probe training needs at least one video".into()));
    }
    let before = checksum(backbone);
    let data = extract_features(backbone, videos, cfg)?;
    let trained = train_probe_on_features(backbone.dim(), &data, cfg)?;
    let after = checksum(backbone);
    debug_assert_eq!(before, after);
    Ok(TrainedProbe {
        backbone_checksum: after,
        ..trained
    })
}

pub fn train_probe_on_features<T: Scalar>(
    input_dim: usize,
    data: &ProbeFeatures<T>,
    cfg: &ProbeConfig,
) -> Result<TrainedProbe<T>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("probe dataset is empty".into()));
    }
    let mut rng = rng_from(cfg.rng_seed);
    let mut head = ProbeHead::new(&mut rng, input_dim, cfg.hidden_dim);
    let mut opt = Adam::new(AdamConfig {
        learning_rate: cfg.learning_rate,
        ..Default::default()
    });
    let lambda = T::of(cfg.lambda);
    let full_loss = |h: &ProbeHead<T>| -> Result<f64> {
        let pred = h.predict_pooled(data.pooled.view());
        Ok(emo_loss_with_grad(pred.view(), data.targets.view(), lambda)?.0.f64())
    };
    let initial_loss = full_loss(&head)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng_from(derive_seed(cfg.rng_seed, &[epoch as u64])));
        for batch in order.chunks(cfg.batch_size) {
            let pooled = data.pooled.select(Axis(0), batch);
            let targets = data.targets.select(Axis(0), batch);
            let (_, grads) = probe_loss_and_grad(&head, pooled.view(), targets.view(), lambda)?;
            opt.step(&mut head, &grads);
        }
        history.push(full_loss(&head)?);
    }
    Ok(TrainedProbe {
        head,
        initial_loss,
        loss_history: history,
        backbone_checksum: 0,
    })
}

/// Per-second probe output for frames `[start, end)`.
pub fn predict_window<T: Scalar>(
    backbone: &FrozenBackbone<T>,
    head: &ProbeHead<T>,
    video: &PseudoVideo,
    start: usize,
    end: usize,
    instruction_id: usize,
) -> Result<AffectTrajectory> {
    let pooled = window_features(backbone, video, start, end, instruction_id)?;
    let pred = head.predict_pooled(pooled.view());
    Ok(AffectTrajectory::new(
        pred.rows().into_iter().map(|r| Va::new(r[0].f64(), r[1].f64())).collect(),
    ))
}

/// Mean over rows of the squared error summed over both axes.
pub fn mse<T: Scalar>(pred: ndarray::ArrayView2<T>, truth: ndarray::ArrayView2<T>) -> f64 {
    let n = pred.nrows().max(1) as f64;
    (&pred - &truth).iter().map(|r| r.f64() * r.f64()).sum::<f64>() / n
}

/// MSE of always predicting the mean of `train_targets`.
pub fn mean_baseline_mse<T: Scalar>(train_targets: ndarray::ArrayView2<T>, test_targets: ndarray::ArrayView2<T>) -> f64 {
    let mean = train_targets.mean_axis(Axis(0)).expect("nonempty targets");
    let pred = Array2::from_shape_fn(test_targets.raw_dim(), |(_, c)| mean[c]);
    mse(pred.view(), test_targets)
}

pub fn held_out_mse<T: Scalar>(head: &ProbeHead<T>, data: &ProbeFeatures<T>) -> f64 {
    let pred = head.predict_pooled(data.pooled.view());
    mse(pred.view(), data.targets.view())
}


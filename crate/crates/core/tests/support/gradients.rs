//! Finite-difference checks of every hand-written gradient, in f64 on tiny
//! models. Each function returns the largest relative error it observed.

use arcscore::adapter::{AdapterConfig, Mode};
use arcscore::anchor::SemanticAnchor;
use arcscore::decoder::{
    gen_loss, gen_loss_with_grad, shift_inputs, Backbone, ControlBranch, DecoderConfig, Injection,
};
use arcscore::params::{max_relative_error, relative_error, zeros_like};
use arcscore::probe::train::probe_loss_and_grad;
use arcscore::probe::{emo_loss_with_grad, ProbeHead};
use arcscore::rng::{normal_matrix, rng_from};
use arcscore::synth::{apply_delay, grammar_emit, make_arc, Archetype, CodecSpec, DelayedGrid};
use ndarray::Array2;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// Central differences of `loss` w.r.t. every entry of `x`.
fn matrix_error(x: &Array2<f64>, analytic: &Array2<f64>, loss: impl Fn(&Array2<f64>) -> f64) -> f64 {
    let mut p = x.clone();
    let mut worst = 0.0f64;
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let orig = p[[r, c]];
        p[[r, c]] = orig + STEP;
        let up = loss(&p);
        p[[r, c]] = orig - STEP;
        let down = loss(&p);
        p[[r, c]] = orig;
        worst = worst.max(relative_error((up - down) / (2.0 * STEP), analytic[[r, c]]));
    }
    worst
}

/// Affect loss w.r.t. its predictions.
pub fn emo_loss_error() -> f64 {
    let mut rng = rng_from(1);
    let pred = normal_matrix::<f64>(&mut rng, 7, 2, 0.5);
    let truth = normal_matrix::<f64>(&mut rng, 7, 2, 0.5);
    let (_, grad) = emo_loss_with_grad(pred.view(), truth.view(), 0.5).unwrap();
    matrix_error(&pred, &grad, |p| emo_loss_with_grad(p.view(), truth.view(), 0.5).unwrap().0)
}

/// Affect loss through the probe head, w.r.t. the head parameters.
pub fn probe_head_error() -> f64 {
    let mut rng = rng_from(2);
    let head = ProbeHead::<f64>::new(&mut rng, 6, 5);
    let pooled = normal_matrix::<f64>(&mut rng, 9, 6, 1.0);
    let targets = normal_matrix::<f64>(&mut rng, 9, 2, 0.4);
    let (_, grads) = probe_loss_and_grad(&head, pooled.view(), targets.view(), 0.5).unwrap();
    max_relative_error(&head, &grads, STEP, |h| {
        probe_loss_and_grad(h, pooled.view(), targets.view(), 0.5).unwrap().0
    })
}

fn tiny_codec() -> CodecSpec {
    CodecSpec { num_codebooks: 2, vocab_size: 8, ..Default::default() }
}

fn tiny_targets() -> DelayedGrid {
    let codec = tiny_codec();
    let arc = make_arc(5, 10, Archetype::Rise).unwrap();
    let tokens = grammar_emit(&arc, &codec, 5).unwrap().slice_rows(0, 12);
    apply_delay(&tokens, codec.pad_token())
}

/// Generation loss w.r.t. the logits, pad positions included.
pub fn gen_loss_error() -> f64 {
    let targets = tiny_targets();
    let mut rng = rng_from(3);
    let logits: Vec<Array2<f64>> = (0..2).map(|_| normal_matrix(&mut rng, targets.steps(), 9, 1.0)).collect();
    let (_, grads) = gen_loss_with_grad(&logits, &targets).unwrap();
    (0..2)
        .map(|k| {
            matrix_error(&logits[k], &grads[k], |m| {
                let mut l = logits.clone();
                l[k] = m.clone();
                gen_loss(&l, &targets).unwrap()
            })
        })
        .fold(0.0, f64::max)
}

struct Setup {
    backbone: Backbone<f64>,
    branch: ControlBranch<f64>,
    inputs: DelayedGrid,
    targets: DelayedGrid,
    anchor: SemanticAnchor,
    dense: Array2<f64>,
}

fn setup() -> Setup {
    let cfg = DecoderConfig { layers: 2, dim: 8, heads: 2, max_context: 64, seed: 7, ..Default::default() }
        .for_codec(&tiny_codec());
    let backbone = Backbone::<f64>::new(cfg).unwrap();
    let mut branch = ControlBranch::<f64>::new(&cfg, &AdapterConfig { dim: 8, ..Default::default() }, 8).unwrap();
    branch.gates.gamma.iter_mut().enumerate().for_each(|(i, g)| *g = 0.4 + 0.3 * i as f64);
    let targets = tiny_targets();
    let dense = normal_matrix::<f64>(&mut rng_from(4), targets.steps(), 2, 0.5);
    Setup {
        inputs: shift_inputs(&targets),
        targets,
        backbone,
        branch,
        anchor: SemanticAnchor::from_ids([1, 2, 3, 4]).unwrap(),
        dense,
    }
}

/// Loss with the control branch, and optionally its full gradient.
fn loss_and_grads(
    s: &Setup,
    backbone: &Backbone<f64>,
    branch: &ControlBranch<f64>,
) -> (f64, Backbone<f64>, ControlBranch<f64>) {
    let memory = backbone.anchor.encode(&s.anchor).unwrap();
    let (control, a_cache) = branch.adapter.forward(s.dense.view(), Mode::Eval);
    let inj = Injection { control: control.view(), gates: &branch.gates };
    let (logits, cache) = backbone.decoder.forward(&s.inputs, memory.view(), Some(inj)).unwrap();
    let (loss, d_logits) = gen_loss_with_grad(&logits, &s.targets).unwrap();
    let mut g_backbone = zeros_like(backbone);
    let mut g_branch = zeros_like(branch);
    let d_in = backbone.decoder.backward(&cache, &d_logits, Some(&branch.gates), Some(&mut g_backbone.decoder));
    backbone.anchor.backward(&s.anchor, &d_in.memory, &mut g_backbone.anchor);
    g_branch.gates.gamma += &d_in.gates.unwrap();
    branch.adapter.backward(&a_cache, d_in.control.unwrap().view(), &mut g_branch.adapter);
    (loss, g_backbone, g_branch)
}

/// Decoder and anchor-encoder parameters (the pretraining gradient), with the
/// injection active.
pub fn decoder_error() -> f64 {
    let s = setup();
    let (_, g, _) = loss_and_grads(&s, &s.backbone, &s.branch);
    max_relative_error(&s.backbone, &g, STEP, |b| loss_and_grads(&s, b, &s.branch).0)
}

/// Adapter parameters through the frozen decoder.
pub fn adapter_error() -> f64 {
    let s = setup();
    let (_, _, g) = loss_and_grads(&s, &s.backbone, &s.branch);
    max_relative_error(&s.branch.adapter, &g.adapter, STEP, |a| {
        let b = ControlBranch { adapter: a.clone(), gates: s.branch.gates.clone() };
        loss_and_grads(&s, &s.backbone, &b).0
    })
}

/// Injection gates.
pub fn gate_error() -> f64 {
    let s = setup();
    let (_, _, g) = loss_and_grads(&s, &s.backbone, &s.branch);
    max_relative_error(&s.branch.gates, &g.gates, STEP, |gates| {
        let b = ControlBranch { adapter: s.branch.adapter.clone(), gates: gates.clone() };
        loss_and_grads(&s, &s.backbone, &b).0
    })
}

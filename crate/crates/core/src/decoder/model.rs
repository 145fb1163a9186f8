use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::{DecoderConfig, GateParams};
use crate::error::{Error, Result};
use crate::nn::{gelu, gelu_grad, sinusoidal, Attention, AttentionCache, KvCache, LayerNorm, LayerNormCache, Linear};
use crate::params::{join, Params, Visit, VisitMut};
use crate::rng::{derive_seed, normal_matrix, rng_from, Rng};
use crate::synth::DelayedGrid;
use crate::Scalar;

/// Per-codebook logits, each `S × vocab`.
pub type Logits<T> = Vec<Array2<T>>;

const POSITION_BASE: f64 = 10_000.0;
const EMBED_STD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
struct Block<T> {
    ln_self: LayerNorm<T>,
    self_attn: Attention<T>,
    ln_cross: LayerNorm<T>,
    cross_attn: Attention<T>,
    ln_mlp: LayerNorm<T>,
    mlp_in: Linear<T>,
    mlp_out: Linear<T>,
}

#[derive(Debug, Clone)]
struct BlockCache<T> {
    ln_self: LayerNormCache<T>,
    a: Array2<T>,
    self_attn: AttentionCache<T>,
    ln_cross: LayerNormCache<T>,
    b: Array2<T>,
    cross_attn: AttentionCache<T>,
    ln_mlp: LayerNormCache<T>,
    c: Array2<T>,
    pre: Array2<T>,
    act: Array2<T>,
}

impl<T: Scalar> Block<T> {
    fn new(rng: &mut Rng, dim: usize, heads: usize) -> Self {
        Block {
            ln_self: LayerNorm::new(dim),
            self_attn: Attention::new(rng, dim, heads),
            ln_cross: LayerNorm::new(dim),
            cross_attn: Attention::new(rng, dim, heads),
            ln_mlp: LayerNorm::new(dim),
            mlp_in: Linear::new(rng, dim, 4 * dim),
            mlp_out: Linear::new(rng, 4 * dim, dim),
        }
    }

    fn forward(&self, x: ArrayView2<T>, memory: ArrayView2<T>) -> (Array2<T>, BlockCache<T>) {
        let (a, ln_self) = self.ln_self.forward(x);
        let (sa, self_attn) = self.self_attn.forward(a.view(), a.view(), true);
        let x1 = &x + &sa;
        let (b, ln_cross) = self.ln_cross.forward(x1.view());
        let (ca, cross_attn) = self.cross_attn.forward(b.view(), memory, false);
        let x2 = x1 + ca;
        let (c, ln_mlp) = self.ln_mlp.forward(x2.view());
        let pre = self.mlp_in.forward(c.view());
        let act = pre.mapv(gelu);
        let out = x2 + self.mlp_out.forward(act.view());
        (
            out,
            BlockCache {
                ln_self,
                a,
                self_attn,
                ln_cross,
                b,
                cross_attn,
                ln_mlp,
                c,
                pre,
                act,
            },
        )
    }

    /// Returns `(dx, dmemory)`.
    fn backward(
        &self,
        cache: &BlockCache<T>,
        memory: ArrayView2<T>,
        dout: Array2<T>,
        grads: Option<&mut Self>,
    ) -> (Array2<T>, Array2<T>) {
        let mut g = grads;
        let d_act = self.mlp_out.backward(cache.act.view(), dout.view(), g.as_deref_mut().map(|g| &mut g.mlp_out));
        let d_pre = d_act * &cache.pre.mapv(gelu_grad);
        let d_c = self.mlp_in.backward(cache.c.view(), d_pre.view(), g.as_deref_mut().map(|g| &mut g.mlp_in));
        let dx2 = dout + self.ln_mlp.backward(&cache.ln_mlp, d_c.view(), g.as_deref_mut().map(|g| &mut g.ln_mlp));

        let (d_b, d_mem) = self.cross_attn.backward(
            &cache.cross_attn,
            cache.b.view(),
            memory,
            dx2.view(),
            g.as_deref_mut().map(|g| &mut g.cross_attn),
        );
        let dx1 = dx2 + self.ln_cross.backward(&cache.ln_cross, d_b.view(), g.as_deref_mut().map(|g| &mut g.ln_cross));

        let (dq, dkv) = self.self_attn.backward(
            &cache.self_attn,
            cache.a.view(),
            cache.a.view(),
            dx1.view(),
            g.as_deref_mut().map(|g| &mut g.self_attn),
        );
        let d_a = dq + dkv;
        let dx = dx1 + self.ln_self.backward(&cache.ln_self, d_a.view(), g.map(|g| &mut g.ln_self));
        (dx, d_mem)
    }

    fn step(&self, x: ArrayView1<T>, self_cache: &mut KvCache<T>, memory: &KvCache<T>) -> Array1<T> {
        let a = self.ln_self.forward_row(x);
        let x1 = &x + &self.self_attn.step_self(a.view(), self_cache);
        let b = self.ln_cross.forward_row(x1.view());
        let x2 = &x1 + &self.cross_attn.step_cross(b.view(), memory);
        let c = self.ln_mlp.forward_row(x2.view());
        let act = self.mlp_in.forward_row(c.view()).mapv(gelu);
        x2 + self.mlp_out.forward_row(act.view())
    }
}

impl<T: Scalar> Params<T> for Block<T> {
    fn visit<'a>(&'a self, prefix: &str, f: Visit<'a, '_, T>) {
        self.ln_self.visit(&join(prefix, "ln_self"), f);
        self.self_attn.visit(&join(prefix, "self_attn"), f);
        self.ln_cross.visit(&join(prefix, "ln_cross"), f);
        self.cross_attn.visit(&join(prefix, "cross_attn"), f);
        self.ln_mlp.visit(&join(prefix, "ln_mlp"), f);
        self.mlp_in.visit(&join(prefix, "mlp_in"), f);
        self.mlp_out.visit(&join(prefix, "mlp_out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: VisitMut<'_, T>) {
        self.ln_self.visit_mut(&join(prefix, "ln_self"), f);
        self.self_attn.visit_mut(&join(prefix, "self_attn"), f);
        self.ln_cross.visit_mut(&join(prefix, "ln_cross"), f);
        self.cross_attn.visit_mut(&join(prefix, "cross_attn"), f);
        self.ln_mlp.visit_mut(&join(prefix, "ln_mlp"), f);
        self.mlp_in.visit_mut(&join(prefix, "mlp_in"), f);
        self.mlp_out.visit_mut(&join(prefix, "mlp_out"), f);
    }
}

/// Control rows and gates for one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Injection<'a, T> {
    /// One row per input step.
    pub control: ArrayView2<'a, T>,
    pub gates: &'a GateParams<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcousticDecoder<T> {
    pub config: DecoderConfig,
    /// One `vocab × dim` table per codebook; a step's ids are embedded and summed.
    pub embed: Vec<Array2<T>>,
    blocks: Vec<Block<T>>,
    pub final_norm: LayerNorm<T>,
    /// One `dim → vocab` projection per codebook.
    pub heads: Vec<Linear<T>>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    tokens: Vec<u16>,
    memory: Array2<T>,
    control: Option<Array2<T>>,
    gammas: Vec<Option<T>>,
    /// Residual stream entering each block, after injection.
    block_inputs: Vec<Array2<T>>,
    blocks: Vec<BlockCache<T>>,
    final_norm: LayerNormCache<T>,
    normed: Array2<T>,
}

impl<T: Scalar> ForwardCache<T> {
    /// Hidden states entering block `l` (after any injection).
    pub fn hidden(&self, layer: usize) -> &Array2<T> {
        &self.block_inputs[layer]
    }
}

/// Gradients w.r.t. the non-parameter inputs of a forward pass.
#[derive(Debug, Clone)]
pub struct InputGrads<T> {
    pub memory: Array2<T>,
    /// Present when the pass had an injection.
    pub control: Option<Array2<T>>,
    /// Shaped like the gate vector that was used.
    pub gates: Option<Array1<T>>,
}

/// `h + γ·C`, row by row.
pub fn inject<T: Scalar>(h: &mut Array2<T>, control: ArrayView2<T>, gamma: T) {
    h.scaled_add(gamma, &control);
}

/// Teacher-forcing inputs for `targets`: an all-pad row followed by every
/// target row but the last.
pub fn shift_inputs(targets: &DelayedGrid) -> DelayedGrid {
    let k = targets.num_codebooks();
    let steps = targets.steps();
    let mut data = vec![targets.pad; steps * k];
    for s in 1..steps {
        data[s * k..(s + 1) * k].copy_from_slice(targets.row(s - 1));
    }
    DelayedGrid::from_raw(targets.codec, targets.pad, steps, data).expect("same shape as targets")
}

impl<T: Scalar> AcousticDecoder<T> {
    pub fn new(config: DecoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from(derive_seed(config.seed, &[0xDEC]));
        let embed = (0..config.num_codebooks)
            .map(|_| normal_matrix(&mut rng, config.vocab_size, config.dim, EMBED_STD))
            .collect();
        let blocks = (0..config.layers).map(|_| Block::new(&mut rng, config.dim, config.heads)).collect();
        let heads = (0..config.num_codebooks)
            .map(|_| Linear::new(&mut rng, config.dim, config.vocab_size))
            .collect();
        Ok(AcousticDecoder {
            config,
            embed,
            blocks,
            final_norm: LayerNorm::new(config.dim),
            heads,
        })
    }

    fn check_tokens(&self, tokens: &[u16], steps: usize) -> Result<()> {
        if steps > self.config.max_context {
            return Err(Error::ContextOverflow {
                len: steps,
                max: self.config.max_context,
            });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| usize::from(t) >= self.config.vocab_size) {
            return Err(Error::InvalidInput(format!(
                "token {bad} outside decoder vocab {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    fn embed_step(&self, row: &[u16], position: usize) -> Array1<T> {
        let mut x = sinusoidal::<T>(position, 1, self.config.dim, POSITION_BASE).row(0).to_owned();
        for (k, &t) in row.iter().enumerate() {
            x += &self.embed[k].row(usize::from(t));
        }
        x
    }

    /// Full teacher-forced pass over `inputs` (`S` steps). With `injection`,
    /// block `l < ⌈ρL⌉` sees `h + γ_l · C`.
    pub fn forward(
        &self,
        inputs: &DelayedGrid,
        memory: ArrayView2<T>,
        injection: Option<Injection<'_, T>>,
    ) -> Result<(Logits<T>, ForwardCache<T>)> {
        let steps = inputs.steps();
        let k = self.config.num_codebooks;
        if inputs.num_codebooks() != k {
            return Err(Error::Shape(format!("{} codebooks for a {k}-codebook decoder", inputs.num_codebooks())));
        }
        if memory.ncols() != self.config.dim || memory.nrows() == 0 {
            return Err(Error::Shape(format!("anchor memory {:?} vs dim {}", memory.shape(), self.config.dim)));
        }
        let tokens: Vec<u16> = (0..steps).flat_map(|s| inputs.row(s).iter().copied()).collect();
        self.check_tokens(&tokens, steps)?;
        if let Some(inj) = &injection {
            if inj.control.nrows() != steps || inj.control.ncols() != self.config.dim {
                return Err(Error::Shape(format!(
                    "control {:?} for {steps} steps of dim {}",
                    inj.control.shape(),
                    self.config.dim
                )));
            }
        }

        let mut x = sinusoidal::<T>(0, steps, self.config.dim, POSITION_BASE);
        for s in 0..steps {
            let mut row = x.row_mut(s);
            for (cb, &t) in inputs.row(s).iter().enumerate() {
                row += &self.embed[cb].row(usize::from(t));
            }
        }

        let mut gammas = Vec::with_capacity(self.blocks.len());
        let mut block_inputs = Vec::with_capacity(self.blocks.len());
        let mut caches = Vec::with_capacity(self.blocks.len());
        for (l, block) in self.blocks.iter().enumerate() {
            let gamma = injection.as_ref().and_then(|inj| inj.gates.gate(l));
            if let (Some(g), Some(inj)) = (gamma, &injection) {
                inject(&mut x, inj.control, g);
            }
            gammas.push(gamma);
            let (next, cache) = block.forward(x.view(), memory);
            block_inputs.push(x);
            caches.push(cache);
            x = next;
        }
        let (normed, final_norm) = self.final_norm.forward(x.view());
        let logits = self.heads.iter().map(|h| h.forward(normed.view())).collect();
        Ok((
            logits,
            ForwardCache {
                tokens,
                memory: memory.to_owned(),
                control: injection.map(|inj| inj.control.to_owned()),
                gammas,
                block_inputs,
                blocks: caches,
                final_norm,
                normed,
            },
        ))
    }

    /// Backpropagates `d_logits`. Parameter gradients accumulate into `grads`
    /// when given; input gradients are always returned.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        d_logits: &[Array2<T>],
        gates: Option<&GateParams<T>>,
        grads: Option<&mut Self>,
    ) -> InputGrads<T> {
        let mut grads = grads;
        let mut dx = Array2::zeros(cache.normed.raw_dim());
        for (k, head) in self.heads.iter().enumerate() {
            dx += &head.backward(
                cache.normed.view(),
                d_logits[k].view(),
                grads.as_deref_mut().map(|g| &mut g.heads[k]),
            );
        }
        dx = self
            .final_norm
            .backward(&cache.final_norm, dx.view(), grads.as_deref_mut().map(|g| &mut g.final_norm));

        let mut d_memory = Array2::zeros(cache.memory.raw_dim());
        let mut d_control = cache.control.as_ref().map(|c| Array2::zeros(c.raw_dim()));
        let mut d_gates = gates.map(|g| Array1::zeros(g.gamma.raw_dim()));
        for l in (0..self.blocks.len()).rev() {
            let (d_in, d_mem) = self.blocks[l].backward(
                &cache.blocks[l],
                cache.memory.view(),
                dx,
                grads.as_deref_mut().map(|g| &mut g.blocks[l]),
            );
            d_memory += &d_mem;
            if let (Some(gamma), Some(control)) = (cache.gammas[l], &cache.control) {
                if let Some(dc) = d_control.as_mut() {
                    dc.scaled_add(gamma, &d_in);
                }
                if let (Some(dg), Some(g)) = (d_gates.as_mut(), gates) {
                    dg[g.slot(l)] += (&d_in * control).sum();
                }
            }
            dx = d_in;
        }

        if let Some(g) = grads {
            let k = self.config.num_codebooks;
            for (i, &t) in cache.tokens.iter().enumerate() {
                let (s, cb) = (i / k, i % k);
                let mut row = g.embed[cb].row_mut(usize::from(t));
                row += &dx.row(s);
            }
        }
        InputGrads {
            memory: d_memory,
            control: d_control,
            gates: d_gates,
        }
    }

    /// Starts incremental decoding against a fixed anchor memory.
    pub fn start(&self, memory: ArrayView2<T>) -> DecodeState<T> {
        DecodeState {
            self_caches: (0..self.blocks.len())
                .map(|_| KvCache::with_capacity(self.config.max_context, self.config.dim))
                .collect(),
            memory: self.blocks.iter().map(|b| b.cross_attn.project_memory(memory)).collect(),
            position: 0,
        }
    }

    /// Feeds one input step and returns per-codebook logits for the next
    /// delayed row. Matches [`forward`](Self::forward) row by row.
    pub fn step(
        &self,
        state: &mut DecodeState<T>,
        row: &[u16],
        control: Option<(ArrayView1<T>, &GateParams<T>)>,
    ) -> Result<Vec<Array1<T>>> {
        if row.len() != self.config.num_codebooks {
            return Err(Error::Shape(format!("{} ids for {} codebooks", row.len(), self.config.num_codebooks)));
        }
        self.check_tokens(row, state.position + 1)?;
        let mut x = self.embed_step(row, state.position);
        for (l, block) in self.blocks.iter().enumerate() {
            if let Some((c, gates)) = control {
                if let Some(g) = gates.gate(l) {
                    x.scaled_add(g, &c);
                }
            }
            x = block.step(x.view(), &mut state.self_caches[l], &state.memory[l]);
        }
        state.position += 1;
        let normed = self.final_norm.forward_row(x.view());
        Ok(self.heads.iter().map(|h| h.forward_row(normed.view())).collect())
    }
}

/// Key/value caches for incremental decoding.
#[derive(Debug, Clone)]
pub struct DecodeState<T> {
    self_caches: Vec<KvCache<T>>,
    memory: Vec<KvCache<T>>,
    position: usize,
}

impl<T> DecodeState<T> {
    /// Number of steps consumed so far.
    pub fn position(&self) -> usize {
        self.position
    }
}

impl<T: Scalar> Params<T> for AcousticDecoder<T> {
    fn visit<'a>(&'a self, prefix: &str, f: Visit<'a, '_, T>) {
        for (k, e) in self.embed.iter().enumerate() {
            f(&join(prefix, &format!("embed{k}")), e.view().into_dyn());
        }
        for (l, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("block{l}")), f);
        }
        self.final_norm.visit(&join(prefix, "final_norm"), f);
        for (k, h) in self.heads.iter().enumerate() {
            h.visit(&join(prefix, &format!("head{k}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: VisitMut<'_, T>) {
        for (k, e) in self.embed.iter_mut().enumerate() {
            f(&join(prefix, &format!("embed{k}")), e.view_mut().into_dyn());
        }
        for (l, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("block{l}")), f);
        }
        self.final_norm.visit_mut(&join(prefix, "final_norm"), f);
        for (k, h) in self.heads.iter_mut().enumerate() {
            h.visit_mut(&join(prefix, &format!("head{k}")), f);
        }
    }
}

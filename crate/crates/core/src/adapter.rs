//! Temporal super-resolution adapter: lifts a 1 Hz affect trajectory to the
//! acoustic token rate and maps it into the decoder's hidden space.
//!
//! `C_local = F(projector(interp(E_local)))`, where the projector is a
//! two-layer GELU MLP with dropout and `F` is a stack of causal dilated
//! convolutions with LeakyReLU, closed by a linear layer.

use std::fmt::Write as _;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{gelu, gelu_grad, leaky_relu, leaky_relu_grad, Dropout, Linear};
use crate::params::{join, visit_fields, visit_fields_mut, Params, Visit, VisitMut};
use crate::rng::{normal_matrix, rng_from, Rng};
use crate::trajectory::AffectTrajectory;
use crate::Scalar;

/// Dense per-step conditioning, `T_a × D`.
pub type ControlSignal<T> = Array2<T>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapterConfig {
    pub dim: usize,
    pub dropout: f64,
    pub kernel: usize,
    pub dilations: Vec<usize>,
    pub leaky_slope: f64,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        AdapterConfig {
            dim: 128,
            dropout: 0.1,
            kernel: 3,
            dilations: vec![1, 2, 4],
            leaky_slope: 0.1,
        }
    }
}

impl AdapterConfig {
    /// Rows before `t` that can influence output row `t`.
    pub fn receptive_field(&self) -> usize {
        self.dilations.iter().map(|d| d * (self.kernel - 1)).sum()
    }
}

/// Piecewise-linear resampling of a trajectory onto `t_a` uniformly spaced
/// times spanning its first to last point. Single points broadcast.
pub fn interpolate(traj: &AffectTrajectory, t_a: usize) -> Result<Array2<f64>> {
    if traj.is_empty() {
        return Err(Error::InvalidInput("cannot interpolate an empty trajectory".into()));
    }
    if t_a == 0 {
        return Err(Error::InvalidInput("target length must be >= 1".into()));
    }
    let n = traj.len();
    let mut out = Array2::zeros((t_a, 2));
    for i in 0..t_a {
        let t = if t_a == 1 || n == 1 {
            0.0
        } else {
            i as f64 * (n - 1) as f64 / (t_a - 1) as f64
        };
        let lo = (t.floor() as usize).min(n - 1);
        let hi = (lo + 1).min(n - 1);
        let w = t - lo as f64;
        let p = traj.points[lo].lerp(traj.points[hi], w);
        out[[i, 0]] = p.valence;
        out[[i, 1]] = p.arousal;
    }
    Ok(out)
}

/// Zero-order hold: each second's value repeated `steps_per_point` times.
pub fn zero_order_hold(traj: &AffectTrajectory, steps_per_point: usize) -> Array2<f64> {
    Array2::from_shape_fn((traj.len() * steps_per_point, 2), |(i, c)| {
        let p = traj.points[i / steps_per_point];
        if c == 0 {
            p.valence
        } else {
            p.arousal
        }
    })
}

/// Causal dilated 1-D convolution: `y_t = b + Σ_j x_{t − j·d} W_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalConv<T> {
    /// `kernel × in × out`.
    pub taps: ndarray::Array3<T>,
    pub bias: Array1<T>,
    pub dilation: usize,
}

fn shift_down<T: Scalar>(x: ArrayView2<T>, by: usize) -> Array2<T> {
    let mut out = Array2::zeros(x.raw_dim());
    let n = x.nrows();
    if by < n {
        out.slice_mut(s![by.., ..]).assign(&x.slice(s![..n - by, ..]));
    }
    out
}

fn shift_up<T: Scalar>(x: ArrayView2<T>, by: usize) -> Array2<T> {
    let mut out = Array2::zeros(x.raw_dim());
    let n = x.nrows();
    if by < n {
        out.slice_mut(s![..n - by, ..]).assign(&x.slice(s![by.., ..]));
    }
    out
}

impl<T: Scalar> CausalConv<T> {
    pub fn new(rng: &mut Rng, kernel: usize, dim: usize, dilation: usize) -> Self {
        // He scaling keeps activations from shrinking through the LeakyReLU stack.
        let std = (2.0 / (kernel * dim) as f64).sqrt();
        let flat = normal_matrix::<T>(rng, kernel * dim, dim, std);
        CausalConv {
            taps: flat.into_shape_with_order((kernel, dim, dim)).expect("shape"),
            bias: Array1::zeros(dim),
            dilation,
        }
    }

    pub fn forward(&self, x: ArrayView2<T>) -> Array2<T> {
        let mut y = Array2::zeros((x.nrows(), self.taps.shape()[2]));
        y += &self.bias;
        for j in 0..self.taps.shape()[0] {
            let shifted = shift_down(x, j * self.dilation);
            y += &shifted.dot(&self.taps.index_axis(Axis(0), j));
        }
        y
    }

    pub fn backward(&self, x: ArrayView2<T>, dy: ArrayView2<T>, grads: Option<&mut Self>) -> Array2<T> {
        let mut dx = Array2::zeros(x.raw_dim());
        let mut grads = grads;
        for j in 0..self.taps.shape()[0] {
            let w = self.taps.index_axis(Axis(0), j);
            if let Some(g) = grads.as_deref_mut() {
                let shifted = shift_down(x, j * self.dilation);
                let mut gw = g.taps.index_axis_mut(Axis(0), j);
                gw += &shifted.t().dot(&dy);
            }
            dx += &shift_up(dy.dot(&w.t()).view(), j * self.dilation);
        }
        if let Some(g) = grads {
            g.bias += &dy.sum_axis(Axis(0));
        }
        dx
    }
}

impl<T: Scalar> Params<T> for CausalConv<T> {
    fn visit<'a>(&'a self, prefix: &str, f: Visit<'a, '_, T>) {
        visit_fields!(self, prefix, f; taps, bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: VisitMut<'_, T>) {
        visit_fields_mut!(self, prefix, f; taps, bias);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, masks drawn from this seed.
    Train(u64),
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams<T> {
    pub proj1: Linear<T>,
    pub proj2: Linear<T>,
    pub convs: Vec<CausalConv<T>>,
    pub out: Linear<T>,
    pub dropout: f64,
    pub leaky_slope: f64,
}

#[derive(Debug, Clone)]
pub struct AdapterCache<T> {
    input: Array2<T>,
    pre1: Array2<T>,
    dropped: Array2<T>,
    mask: Option<Array2<T>>,
    /// Input to each conv, then the input to the output layer.
    conv_inputs: Vec<Array2<T>>,
    conv_pre: Vec<Array2<T>>,
}

impl<T: Scalar> AdapterParams<T> {
    pub fn new(rng: &mut Rng, cfg: &AdapterConfig) -> Self {
        AdapterParams {
            proj1: Linear::with_std(rng, 2, cfg.dim, 1.0),
            proj2: Linear::with_std(rng, cfg.dim, cfg.dim, (2.0 / cfg.dim as f64).sqrt()),
            convs: cfg
                .dilations
                .iter()
                .map(|&d| CausalConv::new(rng, cfg.kernel, cfg.dim, d))
                .collect(),
            out: Linear::new(rng, cfg.dim, cfg.dim),
            dropout: cfg.dropout,
            leaky_slope: cfg.leaky_slope,
        }
    }

    pub fn dim(&self) -> usize {
        self.out.output_dim()
    }

    /// Projector output (eval mode), `T_a × D`.
    pub fn project(&self, dense: ArrayView2<T>) -> Array2<T> {
        self.proj2.forward(self.proj1.forward(dense).mapv(gelu).view())
    }

    pub fn forward(&self, dense: ArrayView2<T>, mode: Mode) -> (ControlSignal<T>, AdapterCache<T>) {
        let pre1 = self.proj1.forward(dense);
        let act = pre1.mapv(gelu);
        let (dropped, mask) = match mode {
            Mode::Train(seed) if self.dropout > 0.0 => {
                let mask = Dropout { rate: self.dropout }.mask(act.nrows(), act.ncols(), &mut rng_from(seed));
                (&act * &mask, Some(mask))
            }
            _ => (act, None),
        };
        let mut h = self.proj2.forward(dropped.view());
        let slope = T::of(self.leaky_slope);
        let mut conv_inputs = Vec::with_capacity(self.convs.len() + 1);
        let mut conv_pre = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let pre = conv.forward(h.view());
            conv_inputs.push(h);
            h = pre.mapv(|x| leaky_relu(x, slope));
            conv_pre.push(pre);
        }
        let out = self.out.forward(h.view());
        conv_inputs.push(h);
        (
            out,
            AdapterCache {
                input: dense.to_owned(),
                pre1,
                dropped,
                mask,
                conv_inputs,
                conv_pre,
            },
        )
    }

    /// Accumulates parameter gradients of a loss whose gradient w.r.t. the control signal is `d_out`.
    pub fn backward(&self, cache: &AdapterCache<T>, d_out: ArrayView2<T>, grads: &mut Self) {
        let n = self.convs.len();
        let mut dh = self.out.backward(cache.conv_inputs[n].view(), d_out, Some(&mut grads.out));
        let slope = T::of(self.leaky_slope);
        for i in (0..n).rev() {
            let d_pre = dh * &cache.conv_pre[i].mapv(|x| leaky_relu_grad(x, slope));
            dh = self.convs[i].backward(cache.conv_inputs[i].view(), d_pre.view(), Some(&mut grads.convs[i]));
        }
        let mut d_act = self.proj2.backward(cache.dropped.view(), dh.view(), Some(&mut grads.proj2));
        if let Some(mask) = &cache.mask {
            d_act *= mask;
        }
        let d_pre1 = d_act * &cache.pre1.mapv(gelu_grad);
        self.proj1.backward(cache.input.view(), d_pre1.view(), Some(&mut grads.proj1));
    }

    /// Interpolates to `t_a` rows and runs the adapter in eval mode.
    pub fn control_for(&self, traj: &AffectTrajectory, t_a: usize) -> Result<ControlSignal<T>> {
        let dense = interpolate(traj, t_a)?.mapv(T::of);
        Ok(self.forward(dense.view(), Mode::Eval).0)
    }
}

impl<T: Scalar> Params<T> for AdapterParams<T> {
    fn visit<'a>(&'a self, prefix: &str, f: Visit<'a, '_, T>) {
        self.proj1.visit(&join(prefix, "proj1"), f);
        self.proj2.visit(&join(prefix, "proj2"), f);
        for (i, c) in self.convs.iter().enumerate() {
            c.visit(&join(prefix, &format!("conv{i}")), f);
        }
        self.out.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: VisitMut<'_, T>) {
        self.proj1.visit_mut(&join(prefix, "proj1"), f);
        self.proj2.visit_mut(&join(prefix, "proj2"), f);
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.visit_mut(&join(prefix, &format!("conv{i}")), f);
        }
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}

/// CSV export of a control matrix: header `step,c0,c1,…`.
pub fn control_to_csv<T: Scalar>(control: &ControlSignal<T>) -> String {
    let mut out = String::from("step");
    for c in 0..control.ncols() {
        write!(out, ",c{c}").expect("write to string");
    }
    out.push('\n');
    for (i, row) in control.rows().into_iter().enumerate() {
        write!(out, "{i}").expect("write to string");
        for x in row {
            write!(out, ",{:.6}", x.f64()).expect("write to string");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::Va;
    use ndarray::array;

    fn small_cfg(dim: usize) -> AdapterConfig {
        AdapterConfig { dim, ..Default::default() }
    }

    #[test]
    fn interpolation_by_hand() {
        let traj = AffectTrajectory::new(vec![Va::new(0.0, 0.0), Va::new(1.0, -1.0)]);
        let d = interpolate(&traj, 5).unwrap();
        assert_eq!(d.column(0).to_vec(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(d.column(1).to_vec(), vec![0.0, -0.25, -0.5, -0.75, -1.0]);
    }

    #[test]
    fn interpolation_constant_knots_and_broadcast() {
        let c = AffectTrajectory::constant(Va::new(0.3, -0.7), 6);
        let d = interpolate(&c, 17).unwrap();
        assert!(d.rows().into_iter().all(|r| r[0] == 0.3 && r[1] == -0.7));

        let traj = AffectTrajectory::new(vec![Va::new(0.1, 0.2), Va::new(-0.4, 0.9), Va::new(0.5, 0.0)]);
        let d = interpolate(&traj, 3).unwrap();
        for (i, p) in traj.points.iter().enumerate() {
            assert_eq!((d[[i, 0]], d[[i, 1]]), (p.valence, p.arousal));
        }

        let single = AffectTrajectory::new(vec![Va::new(0.2, 0.4)]);
        assert_eq!(interpolate(&single, 4).unwrap(), array![[0.2, 0.4], [0.2, 0.4], [0.2, 0.4], [0.2, 0.4]]);
        assert!(interpolate(&AffectTrajectory::default(), 4).is_err());
    }

    #[test]
    fn eval_mode_is_deterministic_and_train_mode_drops() {
        let p = AdapterParams::<f64>::new(&mut rng_from(1), &small_cfg(8));
        let x = crate::rng::normal_matrix::<f64>(&mut rng_from(2), 20, 2, 1.0);
        let (a, _) = p.forward(x.view(), Mode::Eval);
        let (b, _) = p.forward(x.view(), Mode::Eval);
        assert_eq!(a, b);
        let (c, _) = p.forward(x.view(), Mode::Train(9));
        assert_ne!(a, c);
    }

    #[test]
    fn causal_prefix_property() {
        let p = AdapterParams::<f64>::new(&mut rng_from(3), &small_cfg(8));
        let mut x = crate::rng::normal_matrix::<f64>(&mut rng_from(4), 30, 2, 1.0);
        let (a, _) = p.forward(x.view(), Mode::Eval);
        x.slice_mut(s![17.., ..]).fill(5.0);
        let (b, _) = p.forward(x.view(), Mode::Eval);
        assert_eq!(a.slice(s![..17, ..]), b.slice(s![..17, ..]));
    }

    #[test]
    fn receptive_field_is_fourteen_rows() {
        let cfg = small_cfg(6);
        assert_eq!(cfg.receptive_field(), 14);
        let p = AdapterParams::<f64>::new(&mut rng_from(5), &cfg);
        let x = crate::rng::normal_matrix::<f64>(&mut rng_from(6), 60, 2, 1.0);
        let (base, _) = p.forward(x.view(), Mode::Eval);
        let t = 40;
        for src in 0..60 {
            let mut y = x.clone();
            y[[src, 0]] += 0.5;
            y[[src, 1]] -= 0.5;
            let (out, _) = p.forward(y.view(), Mode::Eval);
            let changed = (&out.row(t) - &base.row(t)).iter().any(|v| v.abs() > 1e-12);
            assert_eq!(changed, src <= t && src + 14 >= t, "input row {src}");
        }
    }

    #[test]
    fn identity_parameterization_passes_projector_output() {
        let mut p = AdapterParams::<f64>::new(&mut rng_from(7), &small_cfg(2));
        p.proj1 = Linear::identity(2);
        p.proj2 = Linear::identity(2);
        p.out = Linear::identity(2);
        for conv in &mut p.convs {
            conv.taps.fill(0.0);
            conv.taps.index_axis_mut(Axis(0), 0).assign(&Array2::eye(2));
            conv.bias.fill(0.0);
        }
        // Positive inputs keep GELU and LeakyReLU on their positive branch.
        let x = Array2::from_shape_fn((25, 2), |(i, c)| 0.1 + 0.03 * i as f64 + 0.2 * c as f64);
        let (out, _) = p.forward(x.view(), Mode::Eval);
        let proj = p.project(x.view());
        assert!((&out - &proj).iter().all(|d| d.abs() < 1e-15));
    }

    #[test]
    fn adapter_output_is_smoother_than_zero_order_hold() {
        let traj = AffectTrajectory::new(
            (0..8).map(|t| if t < 4 { Va::new(-0.8, -0.8) } else { Va::new(0.8, 0.8) }).collect(),
        );
        for seed in 0..5 {
            let p = AdapterParams::<f64>::new(&mut rng_from(seed), &small_cfg(16));
            let smooth = p.control_for(&traj, 80).unwrap();
            let naive = p.project(zero_order_hold(&traj, 10).view());
            assert!(max_step(&smooth) < max_step(&naive), "seed {seed}");
        }
    }

    fn max_step(m: &Array2<f64>) -> f64 {
        (1..m.nrows())
            .map(|i| (&m.row(i) - &m.row(i - 1)).iter().fold(0.0f64, |a, x| a.max(x.abs())))
            .fold(0.0, f64::max)
    }

    #[test]
    fn control_csv_header() {
        let c = array![[0.5f32, -1.0], [0.0, 2.0]];
        assert_eq!(control_to_csv(&c), "step,c0,c1\n0,0.500000,-1.000000\n1,0.000000,2.000000\n");
    }
}

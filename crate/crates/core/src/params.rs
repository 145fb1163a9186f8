//! Named parameter traversal.
//!
//! Every trainable structure exposes its tensors in a fixed order through
//! [`Params`]. Gradients are stored in a value of the same type, so the
//! optimizer, the checksum and the weight container all walk the same list.

use ndarray::{ArrayD, ArrayViewD, ArrayViewMutD};

use crate::weights::Fnv1a;
use crate::Scalar;

pub type Visit<'a, 'f, T> = &'f mut dyn FnMut(&str, ArrayViewD<'a, T>);
pub type VisitMut<'f, T> = &'f mut dyn FnMut(&str, ArrayViewMutD<'_, T>);

pub trait Params<T: Scalar> {
    fn visit<'a>(&'a self, prefix: &str, f: Visit<'a, '_, T>);
    fn visit_mut(&mut self, prefix: &str, f: VisitMut<'_, T>);
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Shorthand used by `Params` impls to visit plain array fields.
macro_rules! visit_fields {
    ($self:ident, $prefix:ident, $f:ident; $($field:ident),* $(,)?) => {
        $( $f(&$crate::params::join($prefix, stringify!($field)), $self.$field.view().into_dyn()); )*
    };
}

macro_rules! visit_fields_mut {
    ($self:ident, $prefix:ident, $f:ident; $($field:ident),* $(,)?) => {
        $( $f(&$crate::params::join($prefix, stringify!($field)), $self.$field.view_mut().into_dyn()); )*
    };
}

pub(crate) use {visit_fields, visit_fields_mut};

pub fn collect<'a, T: Scalar, P: Params<T> + ?Sized>(p: &'a P) -> Vec<(String, ArrayViewD<'a, T>)> {
    let mut out = Vec::new();
    p.visit("", &mut |name, view| out.push((name.to_string(), view)));
    out
}

pub fn param_count<T: Scalar, P: Params<T> + ?Sized>(p: &P) -> usize {
    let mut n = 0;
    p.visit("", &mut |_, v| n += v.len());
    n
}

/// FNV-1a over the little-endian `f32` image of every parameter.
pub fn checksum<T: Scalar, P: Params<T> + ?Sized>(p: &P) -> u64 {
    let mut h = Fnv1a::new();
    p.visit("", &mut |_, v| {
        for x in v.iter() {
            h.update(&x.f32().to_le_bytes());
        }
    });
    h.finish()
}

pub fn fill<T: Scalar, P: Params<T> + ?Sized>(p: &mut P, value: T) {
    p.visit_mut("", &mut |_, mut v| v.fill(value));
}

/// Clone of `p` with every tensor zeroed, used as a gradient accumulator.
pub fn zeros_like<T: Scalar, P: Params<T> + Clone>(p: &P) -> P {
    let mut g = p.clone();
    fill(&mut g, T::zero());
    g
}

/// `acc += scale * other`, tensor by tensor.
pub fn add_scaled<T: Scalar, P: Params<T>>(acc: &mut P, other: &P, scale: T) {
    let src = collect(other);
    let mut i = 0;
    acc.visit_mut("", &mut |_, mut v| {
        v.scaled_add(scale, &src[i].1);
        i += 1;
    });
}

pub fn squared_norm<T: Scalar, P: Params<T> + ?Sized>(p: &P) -> f64 {
    let mut s = 0.0;
    p.visit("", &mut |_, v| s += v.iter().map(|x| x.f64() * x.f64()).sum::<f64>());
    s
}

pub fn scale<T: Scalar, P: Params<T> + ?Sized>(p: &mut P, factor: T) {
    p.visit_mut("", &mut |_, mut v| v.mapv_inplace(|x| x * factor));
}

/// Owned snapshot of every tensor (name, data).
pub fn snapshot<T: Scalar, P: Params<T> + ?Sized>(p: &P) -> Vec<(String, ArrayD<T>)> {
    collect(p).into_iter().map(|(n, v)| (n, v.to_owned())).collect()
}

/// Reads or writes one scalar addressed by (tensor index, flat offset).
/// Test helper for finite-difference checks.
pub fn nudge<T: Scalar, P: Params<T> + ?Sized>(p: &mut P, tensor: usize, offset: usize, delta: T) -> T {
    let mut i = 0;
    let mut old = T::zero();
    p.visit_mut("", &mut |_, mut v| {
        if i == tensor {
            let slot = v.iter_mut().nth(offset).expect("offset in range");
            old = *slot;
            *slot += delta;
        }
        i += 1;
    });
    old
}

pub fn get<T: Scalar, P: Params<T> + ?Sized>(p: &P, tensor: usize, offset: usize) -> T {
    collect(p)[tensor].1.iter().nth(offset).copied().expect("offset in range")
}

/// Below this magnitude a pair of gradients counts as zero: central
/// differences of an exactly-zero gradient return rounding noise near 1e-11.
pub const ZERO_GRADIENT: f64 = 1e-9;

/// `|a − b| / max(|a| + |b|, 1e-7)`, or 0 when both are below [`ZERO_GRADIENT`].
pub fn relative_error(a: f64, b: f64) -> f64 {
    if a.abs() < ZERO_GRADIENT && b.abs() < ZERO_GRADIENT {
        return 0.0;
    }
    (a - b).abs() / (a.abs() + b.abs()).max(1e-7)
}

/// Largest relative error between `analytic` and central differences of
/// `loss` with step `h`, probed at the first, middle and last entry of every
/// tensor of `params`.
pub fn max_relative_error<P: Params<f64> + Clone>(params: &P, analytic: &P, h: f64, loss: impl Fn(&P) -> f64) -> f64 {
    let mut p = params.clone();
    let sizes: Vec<usize> = collect(params).iter().map(|(_, v)| v.len()).collect();
    let mut worst = 0.0f64;
    for (t, &size) in sizes.iter().enumerate() {
        if size == 0 {
            continue;
        }
        let mut offsets = vec![0, size / 2, size - 1];
        offsets.dedup();
        for off in offsets {
            nudge(&mut p, t, off, h);
            let up = loss(&p);
            nudge(&mut p, t, off, -2.0 * h);
            let down = loss(&p);
            nudge(&mut p, t, off, h);
            worst = worst.max(relative_error((up - down) / (2.0 * h), get(analytic, t, off)));
        }
    }
    worst
}

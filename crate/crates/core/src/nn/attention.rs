use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::{linear::Linear, softmax_in_place, softmax_rows};
use crate::params::{join, Params, Visit, VisitMut};
use crate::rng::Rng;
use crate::Scalar;

/// Multi-head scaled dot-product attention. Used both as causal
/// self-attention and as cross-attention over a small memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention<T> {
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
    pub o: Linear<T>,
    pub heads: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<T> {
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    probs: Vec<Array2<T>>,
    concat: Array2<T>,
}

/// Projected keys and values for incremental decoding.
#[derive(Debug, Clone)]
pub struct KvCache<T> {
    k: Array2<T>,
    v: Array2<T>,
    len: usize,
}

impl<T: Scalar> KvCache<T> {
    pub fn with_capacity(capacity: usize, dim: usize) -> Self {
        KvCache {
            k: Array2::zeros((capacity, dim)),
            v: Array2::zeros((capacity, dim)),
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn push(&mut self, k: ArrayView1<T>, v: ArrayView1<T>) {
        assert!(self.len < self.k.nrows(), "kv cache capacity exceeded");
        self.k.row_mut(self.len).assign(&k);
        self.v.row_mut(self.len).assign(&v);
        self.len += 1;
    }
}

impl<T: Scalar> Attention<T> {
    pub fn new(rng: &mut Rng, dim: usize, heads: usize) -> Self {
        assert!(heads > 0 && dim % heads == 0, "heads must divide dim");
        Attention {
            q: Linear::new(rng, dim, dim),
            k: Linear::new(rng, dim, dim),
            v: Linear::new(rng, dim, dim),
            o: Linear::new(rng, dim, dim),
            heads,
        }
    }

    fn head_dim(&self) -> usize {
        self.q.output_dim() / self.heads
    }

    fn scale(&self) -> T {
        T::one() / T::of(self.head_dim() as f64).sqrt()
    }

    /// `xq: S × D` attends over `xkv: M × D`. With `causal`, query `i` sees keys `0..=i`.
    pub fn forward(&self, xq: ArrayView2<T>, xkv: ArrayView2<T>, causal: bool) -> (Array2<T>, AttentionCache<T>) {
        let q = self.q.forward(xq);
        let k = self.k.forward(xkv);
        let v = self.v.forward(xkv);
        let dh = self.head_dim();
        let scale = self.scale();
        let mut concat = Array2::zeros(q.raw_dim());
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut scores = q.slice(cols).dot(&k.slice(cols).t());
            scores.mapv_inplace(|x| x * scale);
            if causal {
                for (i, mut row) in scores.rows_mut().into_iter().enumerate() {
                    row.slice_mut(s![i + 1..]).fill(T::neg_infinity());
                }
            }
            softmax_rows(&mut scores);
            concat.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
            probs.push(scores);
        }
        let out = self.o.forward(concat.view());
        (out, AttentionCache { q, k, v, probs, concat })
    }

    /// Returns `(dxq, dxkv)`.
    pub fn backward(
        &self,
        cache: &AttentionCache<T>,
        xq: ArrayView2<T>,
        xkv: ArrayView2<T>,
        dout: ArrayView2<T>,
        grads: Option<&mut Self>,
    ) -> (Array2<T>, Array2<T>) {
        let (gq, gk, gv, go) = match grads {
            Some(g) => (Some(&mut g.q), Some(&mut g.k), Some(&mut g.v), Some(&mut g.o)),
            None => (None, None, None, None),
        };
        let dconcat = self.o.backward(cache.concat.view(), dout, go);
        let dh = self.head_dim();
        let scale = self.scale();
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for (h, p) in cache.probs.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let doh = dconcat.slice(cols);
            let dp = doh.dot(&cache.v.slice(cols).t());
            dv.slice_mut(cols).assign(&p.t().dot(&doh));
            let mut ds = &dp * p;
            let row_dot = ds.sum_axis(Axis(1));
            for ((mut row, pr), &rd) in ds.rows_mut().into_iter().zip(p.rows()).zip(row_dot.iter()) {
                for (x, &pp) in row.iter_mut().zip(pr.iter()) {
                    *x = (*x - pp * rd) * scale;
                }
            }
            dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
        }
        let dxq = self.q.backward(xq, dq.view(), gq);
        let dxkv = self.k.backward(xkv, dk.view(), gk) + self.v.backward(xkv, dv.view(), gv);
        (dxq, dxkv)
    }

    /// Projects a fixed memory once for repeated incremental queries.
    pub fn project_memory(&self, mem: ArrayView2<T>) -> KvCache<T> {
        let k = self.k.forward(mem);
        let v = self.v.forward(mem);
        let len = k.nrows();
        KvCache { k, v, len }
    }

    /// One causal self-attention step: appends this position's key/value to `cache`.
    pub fn step_self(&self, x: ArrayView1<T>, cache: &mut KvCache<T>) -> Array1<T> {
        let k = self.k.forward_row(x);
        let v = self.v.forward_row(x);
        cache.push(k.view(), v.view());
        self.attend_row(x, cache)
    }

    pub fn step_cross(&self, x: ArrayView1<T>, memory: &KvCache<T>) -> Array1<T> {
        self.attend_row(x, memory)
    }

    fn attend_row(&self, x: ArrayView1<T>, kv: &KvCache<T>) -> Array1<T> {
        let q = self.q.forward_row(x);
        let dh = self.head_dim();
        let scale = self.scale();
        let keys = kv.k.slice(s![..kv.len, ..]);
        let values = kv.v.slice(s![..kv.len, ..]);
        let mut concat = Array1::zeros(q.len());
        for h in 0..self.heads {
            let cols = h * dh..(h + 1) * dh;
            let mut scores = keys.slice(s![.., cols.clone()]).dot(&q.slice(s![cols.clone()]));
            scores.mapv_inplace(|x| x * scale);
            softmax_in_place(scores.as_slice_mut().expect("contiguous"));
            concat.slice_mut(s![cols.clone()]).assign(&scores.dot(&values.slice(s![.., cols])));
        }
        self.o.forward_row(concat.view())
    }
}

impl<T: Scalar> Params<T> for Attention<T> {
    fn visit<'a>(&'a self, prefix: &str, f: Visit<'a, '_, T>) {
        self.q.visit(&join(prefix, "q"), f);
        self.k.visit(&join(prefix, "k"), f);
        self.v.visit(&join(prefix, "v"), f);
        self.o.visit(&join(prefix, "o"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: VisitMut<'_, T>) {
        self.q.visit_mut(&join(prefix, "q"), f);
        self.k.visit_mut(&join(prefix, "k"), f);
        self.v.visit_mut(&join(prefix, "v"), f);
        self.o.visit_mut(&join(prefix, "o"), f);
    }
}

//! Rate-adaptive codebook resizing.
//!
//! [`AdapterModel`] is a recurrent sequence-to-sequence network: an encoder
//! LSTM reads the source codevectors (most used first) into a summary
//! state, and a decoder LSTM seeded with that state runs exactly `K~` steps,
//! emitting one codevector per step. Step `j` sees source vector `j` and the
//! relative size `log2 K~ / log2 K`, and emits that vector plus a learned
//! correction. The correction layer starts at zero, so an untrained adapter
//! returns the `K~` most used source vectors.

use ndarray::Array2;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Graph, ParamStore, Tensor, Var};
use crate::vq::Codebook;
use crate::{Error, Result, Scalar};

pub const DEFAULT_HIDDEN: usize = 64;
pub const KMEANS_MAX_ITER: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterShape {
    /// Codevector dimension.
    pub dim: usize,
    /// Source codebook size.
    pub source: usize,
    pub hidden: usize,
    pub k_min: usize,
    pub k_max: usize,
}

impl AdapterShape {
    /// Default supported range `[K/8, K]`.
    pub fn desk(dim: usize, source: usize) -> Self {
        Self {
            dim,
            source,
            hidden: DEFAULT_HIDDEN,
            k_min: (source / 8).max(1),
            k_max: source,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.hidden == 0 || self.source == 0 {
            return Err(Error::InvalidConfig("adapter sizes must be positive".into()));
        }
        if self.k_min < 1 || self.k_max < self.k_min || self.k_max > self.source {
            return Err(Error::InvalidConfig(format!(
                "adapter range [{}, {}] invalid for source size {}",
                self.k_min, self.k_max, self.source
            )));
        }
        Ok(())
    }

    pub fn check_target(&self, target: usize) -> Result<()> {
        if target < self.k_min || target > self.k_max {
            return Err(Error::Range {
                what: "target codebook size",
                value: target,
                min: self.k_min,
                max: self.k_max,
            });
        }
        Ok(())
    }

    /// Powers of two inside the supported range, ascending.
    pub fn power_of_two_sizes(&self) -> Vec<usize> {
        (0..usize::BITS)
            .map(|b| 1usize << b)
            .filter(|&k| k >= self.k_min && k <= self.k_max)
            .collect()
    }
}

struct Slots {
    enc_w: usize,
    enc_b: usize,
    dec_w: usize,
    dec_b: usize,
    out_w: usize,
    out_b: usize,
}

/// Sequence-to-sequence codebook adapter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdapterModel<T: Scalar> {
    pub shape: AdapterShape,
    pub params: ParamStore<T>,
}

impl<T: Scalar> AdapterModel<T> {
    pub fn new(shape: AdapterShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, h) = (shape.dim, shape.hidden);
        let mut params = ParamStore::new();
        let bound = 1.0 / (h as f64).sqrt();
        params.add("enc.w", ParamStore::uniform(&mut rng, &[4 * h, d + h], bound));
        params.add("enc.b", lstm_bias(h));
        params.add("dec.w", ParamStore::uniform(&mut rng, &[4 * h, d + 1 + h], bound));
        params.add("dec.b", lstm_bias(h));
        params.add("out.w", Tensor::zeros(&[d, h]));
        params.add("out.b", Tensor::zeros(&[d]));
        Ok(Self { shape, params })
    }

    /// Restores a model from stored parameters, checking their shapes.
    pub fn from_params(shape: AdapterShape, params: ParamStore<T>) -> Result<Self> {
        let fresh = Self::new(shape, 0)?;
        if fresh.params.len() != params.len()
            || fresh.params.iter().zip(params.iter()).any(|(a, b)| a.0 != b.0 || a.1.shape() != b.1.shape())
        {
            return Err(Error::Format("adapter parameters do not match its shape".into()));
        }
        Ok(Self { shape, params })
    }

    fn slots() -> Slots {
        Slots { enc_w: 0, enc_b: 1, dec_w: 2, dec_b: 3, out_w: 4, out_b: 5 }
    }

    /// Records the adapter on `g`; returns the `[target, D]` codebook.
    /// With `trainable` the parameters are graph parameters, otherwise
    /// constants.
    pub fn forward<'g>(
        &self,
        g: &'g Graph<T>,
        book: &Codebook<T>,
        target: usize,
        trainable: bool,
    ) -> Result<Var<'g, T>> {
        self.shape.check_target(target)?;
        if book.dim() != self.shape.dim || book.size() != self.shape.source {
            return Err(Error::Shape(format!(
                "adapter expects a {}x{} codebook, got {}x{}",
                self.shape.source,
                self.shape.dim,
                book.size(),
                book.dim()
            )));
        }
        let p = |id: usize| {
            if trainable {
                g.param(&self.params, id)
            } else {
                g.constant(self.params.get(id).clone())
            }
        };
        let s = Self::slots();
        let (enc_w, enc_b, dec_w, dec_b, out_w, out_b) =
            (p(s.enc_w), p(s.enc_b), p(s.dec_w), p(s.dec_b), p(s.out_w), p(s.out_b));
        let (d, h) = (self.shape.dim, self.shape.hidden);
        let order = usage_order(book);
        let src = g.constant(Tensor::new(&[book.size() * d], book.vectors().iter().copied().collect()));
        let row = |i: usize| src.slice(i * d, (i + 1) * d);
        let mut state = (g.constant(Tensor::zeros(&[h])), g.constant(Tensor::zeros(&[h])));
        for &i in &order {
            state = lstm_step(row(i), state, enc_w, enc_b, h);
        }
        let ratio = (target as f64).log2() / (self.shape.source as f64).log2().max(1.0);
        let ratio = g.constant(Tensor::new(&[1], vec![T::of(if ratio.is_finite() { ratio } else { 1.0 })]));
        let mut out = Vec::with_capacity(target);
        for &i in order.iter().take(target) {
            let x = Var::concat(&[row(i), ratio]);
            state = lstm_step(x, state, dec_w, dec_b, h);
            out.push(row(i).add(state.0.linear(out_w, out_b)));
        }
        Ok(Var::concat(&out).reshape(&[target, d]))
    }
}

fn lstm_bias<T: Scalar>(h: usize) -> Tensor<T> {
    // forget gate starts open
    let mut b = vec![T::zero(); 4 * h];
    for v in &mut b[h..2 * h] {
        *v = T::one();
    }
    Tensor::new(&[4 * h], b)
}

/// One LSTM step with gate order (input, forget, cell, output).
fn lstm_step<'g, T: Scalar>(
    x: Var<'g, T>,
    (h, c): (Var<'g, T>, Var<'g, T>),
    w: Var<'g, T>,
    b: Var<'g, T>,
    n: usize,
) -> (Var<'g, T>, Var<'g, T>) {
    let z = Var::concat(&[x, h]).linear(w, b);
    let i = z.slice(0, n).sigmoid();
    let f = z.slice(n, 2 * n).sigmoid();
    let gg = z.slice(2 * n, 3 * n).tanh();
    let o = z.slice(3 * n, 4 * n).sigmoid();
    let c = f.mul(c).add(i.mul(gg));
    (o.mul(c.tanh()), c)
}

/// Codevector indices by descending EMA count, ties by index.
pub fn usage_order<T: Scalar>(book: &Codebook<T>) -> Vec<usize> {
    let counts = book.ema_counts();
    let mut order: Vec<usize> = (0..book.size()).collect();
    order.sort_by(|&a, &b| {
        counts[b]
            .partial_cmp(&counts[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Resized codebook of exactly `target` vectors; the source is untouched.
pub fn adapt<T: Scalar>(book: &Codebook<T>, target: usize, model: &AdapterModel<T>) -> Result<Codebook<T>> {
    let g = Graph::new();
    let out = model.forward(&g, book, target, false)?;
    let v = out.value();
    let vectors = Array2::from_shape_vec((target, book.dim()), v.data().to_vec())
        .map_err(|e| Error::Shape(e.to_string()))?;
    Codebook::with_vectors(vectors, book.decay)
}

/// Picks a training size uniformly from `sizes`, rejecting any outside the
/// adapter range.
pub fn sample_size<T: Scalar, R: Rng>(model: &AdapterModel<T>, sizes: &[usize], rng: &mut R) -> Result<usize> {
    let &k = sizes
        .choose(rng)
        .ok_or_else(|| Error::InvalidConfig("no adapter training sizes".into()))?;
    model.shape.check_target(k)?;
    Ok(k)
}

/// k-means reduction with k-means++ seeding; see [`cluster_reduce_traced`].
pub fn cluster_reduce<T: Scalar>(book: &Codebook<T>, target: usize, seed: u64) -> Result<Codebook<T>> {
    cluster_reduce_traced(book, target, seed).map(|(b, _)| b)
}

/// Lloyd iterations (at most [`KMEANS_MAX_ITER`]) over the source vectors;
/// also returns the within-cluster SSE after seeding and after each
/// iteration. A centroid that loses all its points stays in place.
pub fn cluster_reduce_traced<T: Scalar>(book: &Codebook<T>, target: usize, seed: u64) -> Result<(Codebook<T>, Vec<f64>)> {
    let k = book.size();
    if target < 1 || target > k {
        return Err(Error::Range { what: "target codebook size", value: target, min: 1, max: k });
    }
    let d = book.dim();
    let pts: Vec<Vec<f64>> = book.vectors().outer_iter().map(|r| r.iter().map(|v| v.to64()).collect()).collect();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cents: Vec<Vec<f64>> = vec![pts[rng.random_range(0..k)].clone()];
    let mut best: Vec<f64> = pts.iter().map(|p| dist(p, &cents[0])).collect();
    while cents.len() < target {
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            let mut chosen = k - 1;
            for (i, &b) in best.iter().enumerate() {
                if b > 0.0 && r < b {
                    chosen = i;
                    break;
                }
                r -= b;
            }
            chosen
        } else {
            rng.random_range(0..k)
        };
        cents.push(pts[pick].clone());
        for (b, p) in best.iter_mut().zip(&pts) {
            *b = b.min(dist(p, &pts[pick]));
        }
    }
    let assign = |cents: &[Vec<f64>]| -> (Vec<usize>, f64) {
        let mut sse = 0.0;
        let a = pts
            .iter()
            .map(|p| {
                let mut bi = (0, f64::INFINITY);
                for (j, c) in cents.iter().enumerate() {
                    let dd = dist(p, c);
                    if dd < bi.1 {
                        bi = (j, dd);
                    }
                }
                sse += bi.1;
                bi.0
            })
            .collect();
        (a, sse)
    };
    let (mut labels, sse0) = assign(&cents);
    let mut trace = vec![sse0];
    for _ in 0..KMEANS_MAX_ITER {
        let mut sums = vec![vec![0.0; d]; target];
        let mut counts = vec![0usize; target];
        for (p, &l) in pts.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for ((c, s), &n) in cents.iter_mut().zip(sums).zip(&counts) {
            if n > 0 {
                *c = s.into_iter().map(|v| v / n as f64).collect();
            }
        }
        let (next, sse) = assign(&cents);
        trace.push(sse);
        let done = next == labels;
        labels = next;
        if done {
            break;
        }
    }
    let vectors = Array2::from_shape_fn((target, d), |(i, j)| T::of(cents[i][j]));
    Ok((Codebook::with_vectors(vectors, book.decay)?, trace))
}

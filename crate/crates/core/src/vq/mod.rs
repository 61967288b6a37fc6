//! Codebooks, nearest-codevector quantization, EMA codebook learning and the
//! VQ losses.

mod file;

pub use file::{read_codebook, write_codebook, CODEBOOK_MAGIC, CODEBOOK_VERSION};

use ndarray::{Array1, Array2, Array3, ArrayView1};
use rand::seq::index::sample;
use rand::Rng;

use crate::nn::Tensor;
use crate::{Error, Result, Scalar};

pub const DEFAULT_DECAY: f64 = 0.95;
pub const DEFAULT_LAPLACE_EPS: f64 = 1e-5;
pub const DEFAULT_BETA: f64 = 0.25;
/// Smoothed count below which a codevector counts as dead.
pub const DEAD_COUNT: f64 = 1e-3;

/// `K x D` codevectors with their EMA accumulators.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook<T: Scalar> {
    vectors: Array2<T>,
    ema_counts: Array1<T>,
    ema_sums: Array2<T>,
    pub decay: f64,
    pub laplace_eps: f64,
}

impl<T: Scalar> Codebook<T> {
    /// Accumulators start at one pseudo-assignment per codevector.
    pub fn new(vectors: Array2<T>) -> Result<Self> {
        let (k, d) = vectors.dim();
        if k == 0 || d == 0 {
            return Err(Error::Shape(format!("codebook must be at least 1x1, got {k}x{d}")));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("codebook vectors must be finite".into()));
        }
        Ok(Self {
            ema_sums: vectors.clone(),
            ema_counts: Array1::from_elem(k, T::one()),
            vectors,
            decay: DEFAULT_DECAY,
            laplace_eps: DEFAULT_LAPLACE_EPS,
        })
    }

    /// `k` vectors drawn without replacement from the cells of `latents`
    /// (with replacement when there are fewer cells than `k`).
    pub fn sample_from<R: Rng>(latents: &[LatentGrid<T>], k: usize, rng: &mut R) -> Result<Self> {
        let pool: Vec<ArrayView1<'_, T>> = latents.iter().flat_map(|l| l.vectors()).collect();
        if pool.is_empty() || k == 0 {
            return Err(Error::EmptyDataset);
        }
        let d = pool[0].len();
        let picks: Vec<usize> = if pool.len() >= k {
            sample(rng, pool.len(), k).into_vec()
        } else {
            (0..k).map(|_| rng.random_range(0..pool.len())).collect()
        };
        let mut v = Array2::zeros((k, d));
        for (row, &p) in picks.iter().enumerate() {
            v.row_mut(row).assign(&pool[p]);
        }
        Self::new(v)
    }

    pub fn size(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn vectors(&self) -> &Array2<T> {
        &self.vectors
    }

    pub fn ema_counts(&self) -> &Array1<T> {
        &self.ema_counts
    }

    pub fn ema_sums(&self) -> &Array2<T> {
        &self.ema_sums
    }

    /// `[K, D]` tensor for the network.
    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(&[self.size(), self.dim()], self.vectors.iter().copied().collect())
    }

    /// Laplace-smoothed counts `(c + eps) / (C + K eps) * C`.
    pub fn smoothed_counts(&self) -> Array1<f64> {
        let k = self.size() as f64;
        let total: f64 = self.ema_counts.iter().map(|c| c.to64()).sum();
        let eps = self.laplace_eps;
        self.ema_counts
            .mapv(|c| (c.to64() + eps) / (total + k * eps) * total)
    }

    /// Nearest codevector by squared L2 distance, lowest index on ties.
    pub fn nearest(&self, z: ArrayView1<'_, T>) -> (usize, T) {
        let mut best = (0, T::infinity());
        for (i, e) in self.vectors.outer_iter().enumerate() {
            let d: T = e.iter().zip(z.iter()).map(|(&a, &b)| (a - b) * (a - b)).sum();
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    /// EMA step: accumulators decay by `decay` and absorb the batch counts
    /// and sums; assigned codevectors move to the smoothed cluster mean,
    /// unassigned ones keep their value.
    pub fn ema_update(&mut self, latents: &[LatentGrid<T>], indices: &[IndexGrid]) -> Result<()> {
        if latents.len() != indices.len() {
            return Err(Error::Shape("latent and index batches differ in length".into()));
        }
        let (k, d) = self.vectors.dim();
        let mut counts = vec![0usize; k];
        let mut sums = Array2::<f64>::zeros((k, d));
        for (lat, idx) in latents.iter().zip(indices) {
            if lat.dim() != d {
                return Err(Error::Shape(format!("latent dim {} vs codebook dim {d}", lat.dim())));
            }
            if (lat.height(), lat.width()) != idx.shape() {
                return Err(Error::Shape("latent grid and index grid shapes differ".into()));
            }
            for (z, &i) in lat.vectors().zip(idx.data.iter()) {
                let i = i as usize;
                if i >= k {
                    return Err(Error::Range { what: "index", value: i, min: 0, max: k - 1 });
                }
                counts[i] += 1;
                for (s, &v) in sums.row_mut(i).iter_mut().zip(z.iter()) {
                    *s += v.to64();
                }
            }
        }
        let g = self.decay;
        for i in 0..k {
            let c = g * self.ema_counts[i].to64() + (1.0 - g) * counts[i] as f64;
            self.ema_counts[i] = T::of(c);
            for j in 0..d {
                let s = g * self.ema_sums[[i, j]].to64() + (1.0 - g) * sums[[i, j]];
                self.ema_sums[[i, j]] = T::of(s);
            }
        }
        let smoothed = self.smoothed_counts();
        for i in 0..k {
            if counts[i] == 0 || smoothed[i] <= 0.0 {
                continue;
            }
            for j in 0..d {
                self.vectors[[i, j]] = T::of(self.ema_sums[[i, j]].to64() / smoothed[i]);
            }
        }
        Ok(())
    }

    /// Replaces codevectors whose smoothed count fell below [`DEAD_COUNT`]
    /// with random latents; returns how many were reseeded.
    pub fn reseed_dead<R: Rng>(&mut self, latents: &[LatentGrid<T>], rng: &mut R) -> usize {
        let pool: Vec<ArrayView1<'_, T>> = latents.iter().flat_map(|l| l.vectors()).collect();
        if pool.is_empty() {
            return 0;
        }
        let smoothed = self.smoothed_counts();
        let mut n = 0;
        for i in 0..self.size() {
            if smoothed[i] < DEAD_COUNT {
                let z = pool[rng.random_range(0..pool.len())];
                self.vectors.row_mut(i).assign(&z);
                self.ema_sums.row_mut(i).assign(&z);
                self.ema_counts[i] = T::one();
                n += 1;
            }
        }
        n
    }

    /// Direct replacement of the codevectors (accumulators reset).
    pub fn with_vectors(vectors: Array2<T>, decay: f64) -> Result<Self> {
        let mut b = Self::new(vectors)?;
        b.decay = decay;
        Ok(b)
    }

    pub fn cast<U: Scalar>(&self) -> Codebook<U> {
        Codebook {
            vectors: self.vectors.mapv(|v| U::of(v.to64())),
            ema_counts: self.ema_counts.mapv(|v| U::of(v.to64())),
            ema_sums: self.ema_sums.mapv(|v| U::of(v.to64())),
            decay: self.decay,
            laplace_eps: self.laplace_eps,
        }
    }

    /// Restores accumulators, e.g. from a checkpoint.
    pub fn set_accumulators(&mut self, counts: Array1<T>, sums: Array2<T>) -> Result<()> {
        if counts.len() != self.size() || sums.dim() != self.vectors.dim() {
            return Err(Error::Shape("accumulator shapes do not match codebook".into()));
        }
        if counts.iter().any(|c| !(c.is_finite() && *c >= T::zero())) {
            return Err(Error::Domain("ema counts must be finite and non-negative".into()));
        }
        self.ema_counts = counts;
        self.ema_sums = sums;
        Ok(())
    }
}

/// `h x w` grid of `D`-dimensional latent vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentGrid<T: Scalar> {
    pub data: Array3<T>,
}

impl<T: Scalar> LatentGrid<T> {
    pub fn new(data: Array3<T>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("latents must be finite".into()));
        }
        Ok(Self { data })
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn dim(&self) -> usize {
        self.data.dim().2
    }

    pub fn cells(&self) -> usize {
        self.height() * self.width()
    }

    /// Row-major iterator over the cell vectors.
    pub fn vectors(&self) -> impl Iterator<Item = ArrayView1<'_, T>> {
        self.data.lanes(ndarray::Axis(2)).into_iter()
    }

    /// From a channel-major `[D, h, w]` tensor.
    pub fn from_tensor(t: &Tensor<T>) -> Self {
        let (d, h, w) = t.dims3();
        let src = t.data();
        Self {
            data: Array3::from_shape_fn((h, w, d), |(i, j, c)| src[(c * h + i) * w + j]),
        }
    }

    /// To a channel-major `[D, h, w]` tensor.
    pub fn to_tensor(&self) -> Tensor<T> {
        let (h, w, d) = self.data.dim();
        let mut out = vec![T::zero(); d * h * w];
        for ((i, j, c), &v) in self.data.indexed_iter() {
            out[(c * h + i) * w + j] = v;
        }
        Tensor::new(&[d, h, w], out)
    }
}

/// `h x w` grid of codevector indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexGrid {
    pub data: Array2<u32>,
}

impl IndexGrid {
    pub fn new(data: Array2<u32>) -> Self {
        Self { data }
    }

    /// Row-major indices of a `shape` grid.
    pub fn from_vec(shape: (usize, usize), indices: Vec<u32>) -> Result<Self> {
        Array2::from_shape_vec(shape, indices)
            .map(Self::new)
            .map_err(|e| Error::Shape(e.to_string()))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row-major index list.
    pub fn to_vec(&self) -> Vec<usize> {
        self.data.iter().map(|&i| i as usize).collect()
    }

    /// Fails when any index is `>= k`.
    pub fn check_below(&self, k: usize) -> Result<()> {
        match self.data.iter().position(|&i| i as usize >= k) {
            None => Ok(()),
            Some(p) => Err(Error::CorruptStream {
                offset: p as u64,
                reason: format!("index {} not below codebook size {k}", self.data.as_slice().map_or(0, |s| s[p])),
            }),
        }
    }
}

/// Nearest-codevector quantization of every cell.
pub fn quantize<T: Scalar>(latents: &LatentGrid<T>, book: &Codebook<T>) -> Result<(IndexGrid, LatentGrid<T>)> {
    if latents.dim() != book.dim() {
        return Err(Error::Shape(format!(
            "latent dim {} vs codebook dim {}",
            latents.dim(),
            book.dim()
        )));
    }
    let (h, w, d) = latents.data.dim();
    let mut idx = Array2::zeros((h, w));
    let mut q = Array3::zeros((h, w, d));
    for i in 0..h {
        for j in 0..w {
            let z = latents.data.slice(ndarray::s![i, j, ..]);
            let (k, _) = book.nearest(z);
            idx[[i, j]] = k as u32;
            q.slice_mut(ndarray::s![i, j, ..]).assign(&book.vectors.row(k));
        }
    }
    Ok((IndexGrid::new(idx), LatentGrid { data: q }))
}

/// Codevectors looked up by index.
pub fn dequantize<T: Scalar>(indices: &IndexGrid, book: &Codebook<T>) -> Result<LatentGrid<T>> {
    indices.check_below(book.size())?;
    let (h, w) = indices.shape();
    let d = book.dim();
    Ok(LatentGrid {
        data: Array3::from_shape_fn((h, w, d), |(i, j, c)| book.vectors[[indices.data[[i, j]] as usize, c]]),
    })
}

/// `(mean ||sg[z_e] - z_q||^2, beta * mean ||z_e - sg[z_q]||^2)` with means
/// over cells.
pub fn vq_losses<T: Scalar>(encoder_out: &LatentGrid<T>, quantized: &LatentGrid<T>, beta: f64) -> Result<(f64, f64)> {
    if encoder_out.data.dim() != quantized.data.dim() {
        return Err(Error::Shape("encoder output and quantized latents differ in shape".into()));
    }
    let cells = encoder_out.cells().max(1) as f64;
    let sq: f64 = encoder_out
        .data
        .iter()
        .zip(quantized.data.iter())
        .map(|(&a, &b)| (a.to64() - b.to64()).powi(2))
        .sum();
    let m = sq / cells;
    Ok((m, beta * m))
}

/// Fraction of the `k` codevectors used at least once.
pub fn utilization(streams: &[IndexGrid], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Domain("codebook size must be positive".into()));
    }
    let mut seen = vec![false; k];
    for s in streams {
        s.check_below(k)?;
        for &i in s.data.iter() {
            seen[i as usize] = true;
        }
    }
    Ok(seen.iter().filter(|&&b| b).count() as f64 / k as f64)
}

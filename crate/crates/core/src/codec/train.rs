//! Two-stage training and the trained-codec bundle.
//!
//! Stage 1 trains encoder and decoder against the reconstruction loss plus
//! the commitment term, with codebooks learned by EMA. Stage 2 freezes the
//! codec and codebooks and trains one adapter per level on the same loss
//! evaluated with adapted codebooks of randomly drawn sizes.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::ReconContext;
use super::model::{Codec, QuantMode};
use super::{CodecProfile, LossWeights, Sample, TrainSchedule};
use crate::adapt::{adapt, sample_size, AdapterModel, AdapterShape};
use crate::nn::{clip_grad_norm, Adam, Gradients, Graph, ParamStore, Tensor, Var};
use crate::optics::{AmplitudeMap, OpticsConfig, PhaseMap};
use crate::vq::{utilization, Codebook, IndexGrid, LatentGrid, DEFAULT_BETA};
use crate::{Error, Result, Scalar};

pub const CLIP_NORM: f64 = 5.0;

/// Per-epoch record of a training run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    /// Mean total loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// Mean reconstruction loss per epoch.
    pub epoch_recon: Vec<f64>,
    /// `(bottom, top)` codebook utilization per epoch (stage 1 only).
    pub utilization: Vec<(f64, f64)>,
    /// Codevectors reseeded at the end of each epoch (stage 1 only).
    pub reseeded: Vec<usize>,
}

/// A codec together with its codebooks, adapters and optics: everything a
/// sender or receiver needs.
#[derive(Clone, Debug)]
pub struct HoloCodec<T: Scalar> {
    pub codec: Codec<T>,
    pub optics: OpticsConfig,
    pub weights: LossWeights,
    pub beta: f64,
    pub channel: u8,
    /// `(bottom, top)`.
    pub books: Option<(Codebook<T>, Codebook<T>)>,
    /// `(bottom, top)`.
    pub adapters: Option<(AdapterModel<T>, AdapterModel<T>)>,
    pub stage1_epochs: usize,
    pub stage1_complete: bool,
}

fn sum_grads<T: Scalar>(acc: &mut Vec<Option<Tensor<T>>>, add: Vec<Option<Tensor<T>>>) {
    if acc.is_empty() {
        *acc = add;
        return;
    }
    for (a, g) in acc.iter_mut().zip(add) {
        match (a.as_mut(), g) {
            (Some(a), Some(g)) => a.add_assign(&g),
            (None, Some(g)) => *a = Some(g),
            _ => {}
        }
    }
}

fn scale_grads<T: Scalar>(grads: &mut [Option<Tensor<T>>], s: f64) {
    let s = T::of(s);
    for g in grads.iter_mut().flatten() {
        for v in g.data_mut() {
            *v = *v * s;
        }
    }
}

/// `mean over cells of ||a - b||^2` for `[D,h,w]` values.
fn cell_sq<'g, T: Scalar>(a: Var<'g, T>, b: Var<'g, T>) -> Var<'g, T> {
    let (_, h, w) = a.value().dims3();
    a.sub(b).square().sum().scale(T::one() / T::of_usize(h * w))
}

fn non_finite(step: usize, loss: f64) -> Error {
    Error::NumericFailure {
        iteration: step,
        reason: format!("training loss became {loss}"),
    }
}

struct Stage2<'a, T: Scalar> {
    codec: &'a Codec<T>,
    ctx: &'a ReconContext<T>,
    books: (&'a Codebook<T>, &'a Codebook<T>),
    adapters: (&'a AdapterModel<T>, &'a AdapterModel<T>),
    beta: f64,
}

impl<T: Scalar> Stage2<'_, T> {
    /// Reconstruction loss plus codebook loss with adapted books of sizes
    /// `k`; returns the differentiable loss, the full objective value
    /// (commitment included) and the reconstruction part.
    fn loss<'g>(&self, g: &'g Graph<T>, s: &Sample<T>, k: (usize, usize), trainable: bool) -> Result<(Var<'g, T>, f64, f64)> {
        let eb = self.adapters.0.forward(g, self.books.0, k.0, trainable)?;
        let et = self.adapters.1.forward(g, self.books.1, k.1, trainable)?;
        let f = self.codec.forward(g, &s.input, QuantMode::Adapted { bottom: eb, top: et }, false)?;
        let recon = self.ctx.loss(f.phase, g.constant(s.target.clone()));
        let vq = cell_sq(f.z_top.detach(), f.q_top).add(cell_sq(f.z_bottom.detach(), f.q_bottom));
        let (r, v) = (recon.item().to64(), vq.item().to64());
        Ok((recon.add(vq), r + (1.0 + self.beta) * v, r))
    }
}

impl<T: Scalar> HoloCodec<T> {
    pub fn new(profile: CodecProfile, optics: OpticsConfig, weights: LossWeights, channel: u8, seed: u64) -> Result<Self> {
        optics.validate()?;
        weights.validate()?;
        Ok(Self {
            codec: Codec::new(profile, seed)?,
            optics,
            weights,
            beta: DEFAULT_BETA,
            channel,
            books: None,
            adapters: None,
            stage1_epochs: 0,
            stage1_complete: false,
        })
    }

    pub fn profile(&self) -> &CodecProfile {
        &self.codec.profile
    }

    fn check_data(&self, data: &[Sample<T>]) -> Result<(usize, usize)> {
        let first = data.first().ok_or(Error::EmptyDataset)?;
        let frame = first.frame();
        if data.iter().any(|s| s.frame() != frame) {
            return Err(Error::Shape("all samples must share one frame shape".into()));
        }
        self.codec.profile.check_frame(frame)?;
        Ok(frame)
    }

    /// Codebooks sampled from encoder outputs of `batch`: the top level from
    /// the top latents, the bottom level from the fused bottom latents.
    pub fn init_books(&mut self, batch: &[Sample<T>], seed: u64) -> Result<()> {
        let p = &self.codec.profile;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let mut tops = Vec::new();
        for s in batch {
            tops.push(self.codec.encode(&s.input)?.1);
        }
        let top = Codebook::sample_from(&tops, p.k_top, &mut rng)?;
        let mut bottoms = Vec::new();
        let placeholder = Codebook::new(ndarray::Array2::zeros((1, p.latent_dim)))?;
        for s in batch {
            let g = Graph::new();
            let f = self.codec.forward(&g, &s.input, QuantMode::Nearest { bottom: &placeholder, top: &top }, false)?;
            bottoms.push(LatentGrid::from_tensor(&f.z_bottom.value()));
        }
        let bottom = Codebook::sample_from(&bottoms, p.k_bottom, &mut rng)?;
        self.books = Some((bottom, top));
        Ok(())
    }

    /// Stage 1: `schedule.stage1_epochs` epochs of codec training with EMA
    /// codebooks. Marks stage 1 complete.
    pub fn train_stage1(&mut self, data: &[Sample<T>], schedule: &TrainSchedule) -> Result<TrainLog> {
        schedule.validate()?;
        let frame = self.check_data(data)?;
        let ctx = ReconContext::<T>::new(frame, &self.optics, self.weights)?;
        if self.books.is_none() {
            let n = schedule.batch_size.min(data.len());
            self.init_books(&data[..n], schedule.seed)?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
        let mut opt = Adam::new(schedule.learning_rate);
        let mut log = TrainLog::default();
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut step = 0;
        for _ in 0..schedule.stage1_epochs {
            order.shuffle(&mut rng);
            let (mut total, mut recon_total) = (0.0, 0.0);
            let mut epoch_latents: (Vec<LatentGrid<T>>, Vec<LatentGrid<T>>) = (Vec::new(), Vec::new());
            let mut epoch_idx: (Vec<IndexGrid>, Vec<IndexGrid>) = (Vec::new(), Vec::new());
            for batch in order.chunks(schedule.batch_size) {
                let mut acc = Vec::new();
                let mut lat: (Vec<LatentGrid<T>>, Vec<LatentGrid<T>>) = (Vec::new(), Vec::new());
                let mut idx: (Vec<IndexGrid>, Vec<IndexGrid>) = (Vec::new(), Vec::new());
                for &i in batch {
                    let (bottom, top) = self.books.as_ref().expect("books initialized");
                    let s = &data[i];
                    let g = Graph::new();
                    let f = self.codec.forward(&g, &s.input, QuantMode::Nearest { bottom, top }, true)?;
                    let recon = ctx.loss(f.phase, g.constant(s.target.clone()));
                    let commit_t = cell_sq(f.z_top, f.q_top.detach());
                    let commit_b = cell_sq(f.z_bottom, f.q_bottom.detach());
                    let commit = commit_t.add(commit_b);
                    let loss = recon.add(commit.scale(T::of(self.beta)));
                    let (r, c) = (recon.item().to64(), commit.item().to64());
                    let value = r + (1.0 + self.beta) * c;
                    if !value.is_finite() {
                        return Err(non_finite(step, value));
                    }
                    total += value;
                    recon_total += r;
                    let mut grads: Gradients<T> = g.backward(loss);
                    sum_grads(&mut acc, grads.params(&self.codec.params));
                    lat.0.push(LatentGrid::from_tensor(&f.z_bottom.value()));
                    lat.1.push(LatentGrid::from_tensor(&f.z_top.value()));
                    idx.0.push(f.idx_bottom.expect("nearest mode"));
                    idx.1.push(f.idx_top.expect("nearest mode"));
                }
                scale_grads(&mut acc, 1.0 / batch.len() as f64);
                clip_grad_norm(&mut acc, CLIP_NORM);
                opt.step(&mut self.codec.params, &acc);
                let (bottom, top) = self.books.as_mut().expect("books initialized");
                bottom.ema_update(&lat.0, &idx.0)?;
                top.ema_update(&lat.1, &idx.1)?;
                epoch_latents.0.extend(lat.0);
                epoch_latents.1.extend(lat.1);
                epoch_idx.0.extend(idx.0);
                epoch_idx.1.extend(idx.1);
                step += 1;
            }
            let (bottom, top) = self.books.as_mut().expect("books initialized");
            log.utilization.push((
                utilization(&epoch_idx.0, bottom.size())?,
                utilization(&epoch_idx.1, top.size())?,
            ));
            log.reseeded.push(
                bottom.reseed_dead(&epoch_latents.0, &mut rng) + top.reseed_dead(&epoch_latents.1, &mut rng),
            );
            log.epoch_loss.push(total / data.len() as f64);
            log.epoch_recon.push(recon_total / data.len() as f64);
        }
        self.stage1_epochs += schedule.stage1_epochs;
        self.stage1_complete = true;
        Ok(log)
    }

    /// Stage 2: trains the per-level adapters (created with `hidden` units
    /// when absent) for `schedule.stage2_epochs` epochs; each step draws a
    /// bottom size from `sizes.0` and a top size from `sizes.1`.
    pub fn train_adapters(
        &mut self,
        data: &[Sample<T>],
        sizes: (&[usize], &[usize]),
        hidden: usize,
        schedule: &TrainSchedule,
    ) -> Result<TrainLog> {
        if !self.stage1_complete {
            return Err(Error::Sequencing("adapter training requires a completed stage 1".into()));
        }
        schedule.validate()?;
        let frame = self.check_data(data)?;
        let ctx = ReconContext::<T>::new(frame, &self.optics, self.weights)?;
        let (book_b, book_t) = self
            .books
            .clone()
            .ok_or_else(|| Error::Sequencing("stage 1 produced no codebooks".into()))?;
        if self.adapters.is_none() {
            self.init_adapters(hidden, schedule.seed)?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed ^ 0xada);
        let (ad_b, ad_t) = self.adapters.as_mut().expect("adapters exist");
        for &k in sizes.0 {
            ad_b.shape.check_target(k)?;
        }
        for &k in sizes.1 {
            ad_t.shape.check_target(k)?;
        }
        let mut opt_b = Adam::new(schedule.learning_rate);
        let mut opt_t = Adam::new(schedule.learning_rate);
        let mut log = TrainLog::default();
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut step = 0;
        for _ in 0..schedule.stage2_epochs {
            order.shuffle(&mut rng);
            let (mut total, mut recon_total) = (0.0, 0.0);
            for batch in order.chunks(schedule.batch_size) {
                let kb = sample_size(ad_b, sizes.0, &mut rng)?;
                let kt = sample_size(ad_t, sizes.1, &mut rng)?;
                let (mut acc_b, mut acc_t) = (Vec::new(), Vec::new());
                for &i in batch {
                    let g = Graph::new();
                    let parts = Stage2 { codec: &self.codec, ctx: &ctx, books: (&book_b, &book_t), adapters: (ad_b, ad_t), beta: self.beta };
                    let (loss, value, r) = parts.loss(&g, &data[i], (kb, kt), true)?;
                    if !value.is_finite() {
                        return Err(non_finite(step, value));
                    }
                    total += value;
                    recon_total += r;
                    let mut grads = g.backward(loss);
                    sum_grads(&mut acc_b, grads.params(&ad_b.params));
                    sum_grads(&mut acc_t, grads.params(&ad_t.params));
                }
                let inv = 1.0 / batch.len() as f64;
                scale_grads(&mut acc_b, inv);
                scale_grads(&mut acc_t, inv);
                let nb = acc_b.len();
                let mut joint: Vec<Option<Tensor<T>>> = acc_b.into_iter().chain(acc_t).collect();
                clip_grad_norm(&mut joint, CLIP_NORM);
                let acc_t: Vec<_> = joint.split_off(nb);
                opt_b.step(&mut ad_b.params, &joint);
                opt_t.step(&mut ad_t.params, &acc_t);
                step += 1;
            }
            log.epoch_loss.push(total / data.len() as f64);
            log.epoch_recon.push(recon_total / data.len() as f64);
        }
        Ok(log)
    }

    /// Fresh adapters with `hidden` units for both trained codebooks.
    pub fn init_adapters(&mut self, hidden: usize, seed: u64) -> Result<()> {
        let (b, t) = self
            .books
            .as_ref()
            .ok_or_else(|| Error::Sequencing("adapters need trained codebooks".into()))?;
        let d = self.codec.profile.latent_dim;
        let mk = |k: usize, seed: u64| AdapterModel::new(AdapterShape { hidden, ..AdapterShape::desk(d, k) }, seed);
        self.adapters = Some((mk(b.size(), seed)?, mk(t.size(), seed + 1)?));
        Ok(())
    }

    /// Stage-2 objective averaged over every image and every `(bottom, top)`
    /// size pair `sizes.0[i], sizes.1[i]`; a deterministic counterpart to
    /// the randomly sampled training trace.
    pub fn adapter_objective(&self, data: &[Sample<T>], sizes: &[(usize, usize)]) -> Result<f64> {
        let frame = self.check_data(data)?;
        let ctx = ReconContext::<T>::new(frame, &self.optics, self.weights)?;
        let (book_b, book_t) = self
            .books
            .as_ref()
            .ok_or_else(|| Error::Sequencing("codec has no trained codebooks".into()))?;
        let (ad_b, ad_t) = self
            .adapters
            .as_ref()
            .ok_or_else(|| Error::Sequencing("codec has no adapters".into()))?;
        let parts = Stage2 { codec: &self.codec, ctx: &ctx, books: (book_b, book_t), adapters: (ad_b, ad_t), beta: self.beta };
        let mut total = 0.0;
        for &k in sizes {
            for s in data {
                let g = Graph::new();
                total += parts.loss(&g, s, k, false)?.1;
            }
        }
        Ok(total / (sizes.len() * data.len()).max(1) as f64)
    }

    /// Native sizes return the trained codebooks; other sizes need adapters.
    pub fn books_for(&self, k_bottom: usize, k_top: usize) -> Result<(Codebook<T>, Codebook<T>)> {
        let (b, t) = self
            .books
            .as_ref()
            .ok_or_else(|| Error::Sequencing("codec has no trained codebooks".into()))?;
        match &self.adapters {
            Some((ab, at)) => Ok((adapt(b, k_bottom, ab)?, adapt(t, k_top, at)?)),
            None if k_bottom == b.size() && k_top == t.size() => Ok((b.clone(), t.clone())),
            None => Err(Error::Range {
                what: "codebook size without adapter",
                value: if k_bottom != b.size() { k_bottom } else { k_top },
                min: b.size().min(t.size()),
                max: b.size().max(t.size()),
            }),
        }
    }

    /// Compress, decompress and reconstruct one sample with given books.
    pub fn round_trip(
        &self,
        sample: &Sample<T>,
        bottom: &Codebook<T>,
        top: &Codebook<T>,
    ) -> Result<(IndexGrid, IndexGrid, PhaseMap<T>)> {
        let (ib, it) = self.codec.compress(&sample.input, bottom, top)?;
        let phase = self.codec.decompress(&ib, &it, bottom, top)?;
        Ok((ib, it, phase))
    }

    /// Reconstructed amplitude of a phase map on the roi.
    pub fn reconstruct(&self, phase: &PhaseMap<T>) -> Result<AmplitudeMap<T>> {
        crate::optics::reconstruct_amplitude(phase, &self.optics)
    }

    /// Fresh parameter store snapshot (for change detection in tests).
    pub fn params(&self) -> &ParamStore<T> {
        &self.codec.params
    }
}

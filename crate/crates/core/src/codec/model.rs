//! Network definition and forward passes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::CodecProfile;
use crate::nn::{Graph, ParamStore, Tensor, Var};
use crate::optics::PhaseMap;
use crate::vq::{Codebook, IndexGrid, LatentGrid};
use crate::{Error, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Level {
    Bottom,
    Top,
}

impl Level {
    pub fn name(self) -> &'static str {
        match self {
            Level::Bottom => "bottom",
            Level::Top => "top",
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Conv {
    w: usize,
    b: usize,
}

#[derive(Clone, Debug)]
struct Res {
    conv3: Conv,
    conv1: Conv,
    /// Offset predictor of the deformable variant.
    offsets: Option<Conv>,
}

#[derive(Clone, Debug)]
struct Stack {
    head: Conv,
    res: Vec<Res>,
}

#[derive(Clone, Debug)]
struct Layers {
    enc_down: Vec<Conv>,
    enc_b: Stack,
    proj_b: Conv,
    enc_t_down: Conv,
    enc_t: Stack,
    proj_t: Conv,
    dec_t: Stack,
    dec_t_up: Conv,
    fuse_b: Conv,
    up_t: Conv,
    dec: Stack,
    dec_up: Vec<Conv>,
}

struct Builder<'a, T: Scalar> {
    store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Builder<'_, T> {
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, gain: f64) -> Conv {
        let mut w = ParamStore::he_normal(&mut self.rng, &[cout, cin, k, k], cin * k * k);
        w = w.map(|v| v * T::of(gain));
        Conv {
            w: self.store.add(format!("{name}.w"), w),
            b: self.store.add(format!("{name}.b"), Tensor::zeros(&[cout])),
        }
    }

    fn convt(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> Conv {
        let w = ParamStore::he_normal(&mut self.rng, &[cin, cout, k, k], (cin * k * k / 4).max(1));
        Conv {
            w: self.store.add(format!("{name}.w"), w),
            b: self.store.add(format!("{name}.b"), Tensor::zeros(&[cout])),
        }
    }

    fn zero_conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> Conv {
        Conv {
            w: self.store.add(format!("{name}.w"), Tensor::zeros(&[cout, cin, k, k])),
            b: self.store.add(format!("{name}.b"), Tensor::zeros(&[cout])),
        }
    }

    fn stack(&mut self, name: &str, cin: usize, c: usize, blocks: usize, deformable: bool) -> Stack {
        let head = self.conv(&format!("{name}.head"), cin, c, 3, 1.0);
        let res = (0..blocks)
            .map(|i| Res {
                offsets: deformable.then(|| self.zero_conv(&format!("{name}.res{i}.offsets"), c, 18, 3)),
                conv3: self.conv(&format!("{name}.res{i}.conv3"), c, c, 3, 1.0),
                conv1: self.conv(&format!("{name}.res{i}.conv1"), c, c, 1, 0.1),
            })
            .collect();
        Stack { head, res }
    }
}

/// How the forward pass turns latents into decoder inputs.
pub enum QuantMode<'a, 'g, T: Scalar> {
    /// Nearest codevector with the straight-through gradient.
    Nearest { bottom: &'a Codebook<T>, top: &'a Codebook<T> },
    /// No quantization.
    Bypass,
    /// `q = z + r` with fixed residuals `r` (`[D,h,w]` tensors). With the
    /// residuals of a nearest-codevector pass this is the function whose
    /// exact gradient the straight-through estimator reports.
    Frozen { bottom: &'a Tensor<T>, top: &'a Tensor<T> },
    /// Codebooks that are themselves graph values (adapter outputs); the
    /// decoder sees the selected rows, so gradients reach the codebooks.
    Adapted { bottom: Var<'g, T>, top: Var<'g, T> },
}

/// Graph values produced by [`Codec::forward`].
pub struct Forward<'g, T: Scalar> {
    pub phase: Var<'g, T>,
    /// Encoder outputs that were quantized (top, and bottom after fusion
    /// with the decoded top level).
    pub z_top: Var<'g, T>,
    pub z_bottom: Var<'g, T>,
    pub q_top: Var<'g, T>,
    pub q_bottom: Var<'g, T>,
    pub idx_top: Option<IndexGrid>,
    pub idx_bottom: Option<IndexGrid>,
}

/// Network parameters for one profile.
#[derive(Clone, Debug)]
pub struct Codec<T: Scalar> {
    pub profile: CodecProfile,
    pub params: ParamStore<T>,
    layers: Layers,
}

struct Ctx<'g, 'm, T: Scalar> {
    g: &'g Graph<T>,
    store: &'m ParamStore<T>,
    trainable: bool,
}

impl<'g, T: Scalar> Ctx<'g, '_, T> {
    fn p(&self, id: usize) -> Var<'g, T> {
        if self.trainable {
            self.g.param(self.store, id)
        } else {
            self.g.constant(self.store.get(id).clone())
        }
    }

    fn conv(&self, l: Conv, x: Var<'g, T>, stride: usize, pad: usize) -> Var<'g, T> {
        x.conv2d(self.p(l.w), self.p(l.b), stride, pad)
    }

    fn convt(&self, l: Conv, x: Var<'g, T>) -> Var<'g, T> {
        x.conv_transpose2d(self.p(l.w), self.p(l.b), 2, 1)
    }

    fn res(&self, r: &Res, x: Var<'g, T>) -> Var<'g, T> {
        let a = x.silu();
        let h = match r.offsets {
            Some(o) => {
                let off = self.conv(o, a, 1, 1);
                a.deform_conv2d(off, self.p(r.conv3.w), self.p(r.conv3.b), 1, 1)
            }
            None => self.conv(r.conv3, a, 1, 1),
        };
        x.add(self.conv(r.conv1, h.silu(), 1, 0))
    }

    fn stack(&self, s: &Stack, x: Var<'g, T>) -> Var<'g, T> {
        let mut h = self.conv(s.head, x, 1, 1);
        for r in &s.res {
            h = self.res(r, h);
        }
        h.silu()
    }
}

fn check_books<T: Scalar>(d: usize, books: [&Codebook<T>; 2]) -> Result<()> {
    for b in books {
        if b.dim() != d {
            return Err(Error::Shape(format!("codebook dim {} vs latent dim {d}", b.dim())));
        }
    }
    Ok(())
}

/// Nearest-codevector selection on a `[D,h,w]` latent value.
fn select<T: Scalar>(z: &Tensor<T>, book: &Codebook<T>) -> IndexGrid {
    let grid = LatentGrid::from_tensor(z);
    let (h, w, _) = grid.data.dim();
    let mut idx = ndarray::Array2::zeros((h, w));
    for ((i, j), v) in idx.indexed_iter_mut() {
        *v = book.nearest(grid.data.slice(ndarray::s![i, j, ..])).0 as u32;
    }
    IndexGrid::new(idx)
}

impl<T: Scalar> Codec<T> {
    pub fn new(profile: CodecProfile, seed: u64) -> Result<Self> {
        profile.validate()?;
        let mut store = ParamStore::new();
        let layers = {
            let mut b = Builder {
                store: &mut store,
                rng: ChaCha8Rng::seed_from_u64(seed),
            };
            let (c, d, r, df) = (profile.channels, profile.latent_dim, profile.res_blocks, profile.deformable_conv);
            let steps = profile.bottom_factor.trailing_zeros() as usize;
            let enc_down = (0..steps)
                .map(|i| b.conv(&format!("enc.down{i}"), if i == 0 { 3 } else { c }, c, 4, 1.0))
                .collect();
            let enc_b = b.stack("enc.b", c, c, r, df);
            let proj_b = b.conv("enc.b.proj", c, d, 1, 1.0);
            let enc_t_down = b.conv("enc.t.down", c, c, 4, 1.0);
            let enc_t = b.stack("enc.t", c, c, r, df);
            let proj_t = b.conv("enc.t.proj", c, d, 1, 1.0);
            let dec_t = b.stack("dec.t", d, c, r, df);
            let dec_t_up = b.convt("dec.t.up", c, d, 4);
            let fuse_b = b.conv("fuse.b", 2 * d, d, 1, 1.0);
            let up_t = b.convt("up.t", d, d, 4);
            let dec = b.stack("dec", 2 * d, c, r, df);
            let dec_up = (0..steps)
                .map(|i| b.convt(&format!("dec.up{i}"), c, if i + 1 == steps { 1 } else { c }, 4))
                .collect();
            Layers {
                enc_down,
                enc_b,
                proj_b,
                enc_t_down,
                enc_t,
                proj_t,
                dec_t,
                dec_t_up,
                fuse_b,
                up_t,
                dec,
                dec_up,
            }
        };
        Ok(Self {
            profile,
            params: store,
            layers,
        })
    }

    /// Replaces parameters after checking names and shapes.
    pub fn with_params(profile: CodecProfile, params: ParamStore<T>) -> Result<Self> {
        let mut c = Self::new(profile, 0)?;
        if c.params.len() != params.len()
            || c.params.iter().zip(params.iter()).any(|(a, b)| a.0 != b.0 || a.1.shape() != b.1.shape())
        {
            return Err(Error::Format("codec parameters do not match the profile".into()));
        }
        c.params = params;
        Ok(c)
    }

    fn ctx<'g, 'm>(&'m self, g: &'g Graph<T>, trainable: bool) -> Ctx<'g, 'm, T> {
        Ctx {
            g,
            store: &self.params,
            trainable,
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(usize, usize)> {
        let s = x.shape();
        if s.len() != 3 || s[0] != 3 {
            return Err(Error::Shape(format!("codec input must be [3,H,W], got {s:?}")));
        }
        self.profile.check_frame((s[1], s[2]))?;
        Ok((s[1], s[2]))
    }

    /// Encoder: `[3,H,W]` input to `(bottom features, top latent)`.
    fn encode_var<'g>(&self, cx: &Ctx<'g, '_, T>, x: Var<'g, T>) -> (Var<'g, T>, Var<'g, T>) {
        let l = &self.layers;
        let mut h = x;
        for &c in &l.enc_down {
            h = cx.conv(c, h, 2, 1).silu();
        }
        let hb = cx.stack(&l.enc_b, h);
        let zb = cx.conv(l.proj_b, hb, 1, 0);
        let ht = cx.conv(l.enc_t_down, hb, 2, 1).silu();
        let zt = cx.conv(l.proj_t, cx.stack(&l.enc_t, ht), 1, 0);
        (zb, zt)
    }

    /// Bottom latent after fusion with the decoded top level.
    fn fuse_bottom<'g>(&self, cx: &Ctx<'g, '_, T>, zb: Var<'g, T>, qt: Var<'g, T>) -> Var<'g, T> {
        let l = &self.layers;
        let dt = cx.convt(l.dec_t_up, cx.stack(&l.dec_t, qt));
        cx.conv(l.fuse_b, Var::concat(&[zb, dt]), 1, 0)
    }

    /// Decoder: quantized bottom and top latents to the `[1,H,W]` phase.
    fn decode_var<'g>(&self, cx: &Ctx<'g, '_, T>, qb: Var<'g, T>, qt: Var<'g, T>) -> Var<'g, T> {
        let l = &self.layers;
        let up = cx.convt(l.up_t, qt);
        let mut h = cx.stack(&l.dec, Var::concat(&[qb, up]));
        let n = l.dec_up.len();
        for (i, &c) in l.dec_up.iter().enumerate() {
            h = cx.convt(c, h);
            if i + 1 < n {
                h = h.silu();
            }
        }
        h.tanh().scale(T::PI())
    }

    fn quantize_level<'g>(
        &self,
        mode: &QuantMode<'_, 'g, T>,
        level: Level,
        z: Var<'g, T>,
    ) -> (Var<'g, T>, Option<IndexGrid>) {
        let g = z.graph();
        match mode {
            QuantMode::Bypass => (z, None),
            QuantMode::Nearest { bottom, top } => {
                let book = if level == Level::Bottom { *bottom } else { *top };
                let idx = select(&z.value(), book);
                let (_, h, w) = z.value().dims3();
                let q = g.constant(book.to_tensor()).gather_rows(&idx.to_vec(), h, w);
                (z.straight_through(q), Some(idx))
            }
            QuantMode::Frozen { bottom, top } => {
                let r = if level == Level::Bottom { *bottom } else { *top };
                (z.add(g.constant(r.clone())), None)
            }
            QuantMode::Adapted { bottom, top } => {
                let book = if level == Level::Bottom { *bottom } else { *top };
                let bv = book.value();
                let cb = Codebook::new(
                    ndarray::Array2::from_shape_vec((bv.shape()[0], bv.shape()[1]), bv.data().to_vec())
                        .expect("[K,D] codebook"),
                )
                .expect("finite adapted codebook");
                let idx = select(&z.value(), &cb);
                let (_, h, w) = z.value().dims3();
                (book.gather_rows(&idx.to_vec(), h, w), Some(idx))
            }
        }
    }

    /// Full forward pass on graph `g`. `trainable` binds codec weights as
    /// parameters (else constants).
    pub fn forward<'g>(
        &self,
        g: &'g Graph<T>,
        input: &Tensor<T>,
        mode: QuantMode<'_, 'g, T>,
        trainable: bool,
    ) -> Result<Forward<'g, T>> {
        self.check_input(input)?;
        if let QuantMode::Nearest { bottom, top } = &mode {
            check_books(self.profile.latent_dim, [bottom, top])?;
        }
        let cx = self.ctx(g, trainable);
        let (zb, zt) = self.encode_var(&cx, g.constant(input.clone()));
        let (qt, idx_top) = self.quantize_level(&mode, Level::Top, zt);
        let zb = self.fuse_bottom(&cx, zb, qt);
        let (qb, idx_bottom) = self.quantize_level(&mode, Level::Bottom, zb);
        let phase = self.decode_var(&cx, qb, qt);
        Ok(Forward {
            phase,
            z_top: zt,
            z_bottom: zb,
            q_top: qt,
            q_bottom: qb,
            idx_top,
            idx_bottom,
        })
    }

    /// Encoder outputs `(bottom, top)` before any quantization, as grids.
    pub fn encode(&self, input: &Tensor<T>) -> Result<(LatentGrid<T>, LatentGrid<T>)> {
        self.check_input(input)?;
        let g = Graph::new();
        let cx = self.ctx(&g, false);
        let (zb, zt) = self.encode_var(&cx, g.constant(input.clone()));
        Ok((LatentGrid::from_tensor(&zb.value()), LatentGrid::from_tensor(&zt.value())))
    }

    /// Top level quantized first, decoded and fused into the bottom level,
    /// which is then quantized. Returns `(bottom, top)` indices.
    pub fn compress(&self, input: &Tensor<T>, bottom: &Codebook<T>, top: &Codebook<T>) -> Result<(IndexGrid, IndexGrid)> {
        let g = Graph::new();
        let f = self.forward(&g, input, QuantMode::Nearest { bottom, top }, false)?;
        Ok((f.idx_bottom.expect("nearest mode"), f.idx_top.expect("nearest mode")))
    }

    /// Receiver side: phase map from indices and the matching codebooks.
    pub fn decompress(
        &self,
        idx_bottom: &IndexGrid,
        idx_top: &IndexGrid,
        bottom: &Codebook<T>,
        top: &Codebook<T>,
    ) -> Result<PhaseMap<T>> {
        check_books(self.profile.latent_dim, [bottom, top])?;
        idx_bottom.check_below(bottom.size())?;
        idx_top.check_below(top.size())?;
        let (bh, bw) = idx_bottom.shape();
        let (th, tw) = idx_top.shape();
        if (bh, bw) != (2 * th, 2 * tw) {
            return Err(Error::Shape(format!(
                "bottom grid {:?} is not twice the top grid {:?}",
                (bh, bw),
                (th, tw)
            )));
        }
        let g = Graph::new();
        let cx = self.ctx(&g, false);
        let qb = g.constant(bottom.to_tensor()).gather_rows(&idx_bottom.to_vec(), bh, bw);
        let qt = g.constant(top.to_tensor()).gather_rows(&idx_top.to_vec(), th, tw);
        let phase = self.decode_var(&cx, qb, qt).value();
        let (_, h, w) = phase.dims3();
        let arr = ndarray::Array2::from_shape_vec((h, w), phase.data().to_vec()).expect("phase shape");
        PhaseMap::wrapped(arr).map_err(|_| Error::NumericFailure {
            iteration: 0,
            reason: "decoder produced a non-finite phase".into(),
        })
    }

    /// Phase from a decoder-input pair `(q_bottom, q_top)` given as grids.
    pub fn decode(&self, q_bottom: &LatentGrid<T>, q_top: &LatentGrid<T>) -> Result<PhaseMap<T>> {
        let d = self.profile.latent_dim;
        if q_bottom.dim() != d || q_top.dim() != d {
            return Err(Error::Shape("fused latents do not match the latent dim".into()));
        }
        if (q_bottom.height(), q_bottom.width()) != (2 * q_top.height(), 2 * q_top.width()) {
            return Err(Error::Shape("bottom grid must be twice the top grid".into()));
        }
        let g = Graph::new();
        let cx = self.ctx(&g, false);
        let phase = self
            .decode_var(&cx, g.constant(q_bottom.to_tensor()), g.constant(q_top.to_tensor()))
            .value();
        let (_, h, w) = phase.dims3();
        PhaseMap::wrapped(ndarray::Array2::from_shape_vec((h, w), phase.data().to_vec()).expect("phase shape"))
    }
}

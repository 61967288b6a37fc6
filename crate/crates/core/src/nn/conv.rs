//! Convolutions on `[C, H, W]` tensors via im2col and matrix products.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

use super::graph::Var;
use super::tensor::Tensor;
use crate::Scalar;

/// `c += a · b` with optional transposes; shapes are of the stored matrices.
#[allow(clippy::too_many_arguments)]
fn gemm<T: Scalar>(
    a: &[T],
    a_shape: (usize, usize),
    ta: bool,
    b: &[T],
    b_shape: (usize, usize),
    tb: bool,
    c: &mut [T],
    c_shape: (usize, usize),
) {
    let a = ArrayView2::from_shape(a_shape, a).expect("gemm a");
    let b = ArrayView2::from_shape(b_shape, b).expect("gemm b");
    let mut c = ArrayViewMut2::from_shape(c_shape, c).expect("gemm c");
    let a = if ta { a.t() } else { a };
    let b = if tb { b.t() } else { b };
    general_mat_mul(T::one(), &a, &b, T::one(), &mut c);
}

/// Sliding-window geometry of a convolution over a `c x h x w` image.
#[derive(Clone, Copy, Debug)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geom {
    fn new(c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Self {
        assert!(stride >= 1 && k >= 1);
        assert!(h + 2 * pad >= k && w + 2 * pad >= k, "kernel larger than padded input");
        Self {
            c,
            h,
            w,
            k,
            stride,
            pad,
            oh: (h + 2 * pad - k) / stride + 1,
            ow: (w + 2 * pad - k) / stride + 1,
        }
    }

    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Source pixel of tap `(ky, kx)` at output `(oy, ox)`, if inside.
    #[inline]
    fn src(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ky).checked_sub(self.pad)?;
        let x = (ox * self.stride + kx).checked_sub(self.pad)?;
        (y < self.h && x < self.w).then_some((y, x))
    }

    fn im2col<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let n = self.cols();
        let mut cols = vec![T::zero(); self.rows() * n];
        for ci in 0..self.c {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let r = (ci * self.k + ky) * self.k + kx;
                    let row = &mut cols[r * n..(r + 1) * n];
                    for oy in 0..self.oh {
                        for ox in 0..self.ow {
                            if let Some((y, xx)) = self.src(oy, ox, ky, kx) {
                                row[oy * self.ow + ox] = x[(ci * self.h + y) * self.w + xx];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im<T: Scalar>(&self, cols: &[T]) -> Vec<T> {
        let n = self.cols();
        let mut x = vec![T::zero(); self.c * self.h * self.w];
        for ci in 0..self.c {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let r = (ci * self.k + ky) * self.k + kx;
                    let row = &cols[r * n..(r + 1) * n];
                    for oy in 0..self.oh {
                        for ox in 0..self.ow {
                            if let Some((y, xx)) = self.src(oy, ox, ky, kx) {
                                let i = (ci * self.h + y) * self.w + xx;
                                x[i] = x[i] + row[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
        x
    }
}

fn add_bias<T: Scalar>(out: &mut [T], b: &[T], plane: usize) {
    for (chunk, &bv) in out.chunks_mut(plane).zip(b) {
        for v in chunk {
            *v = *v + bv;
        }
    }
}

fn bias_grad<T: Scalar>(g: &[T], channels: usize, plane: usize) -> Tensor<T> {
    Tensor::new(
        &[channels],
        g.chunks(plane).map(|c| c.iter().copied().sum()).collect(),
    )
}

/// Bilinear sample of one channel plane with zeros outside; returns the value
/// and its derivatives along y and x.
#[inline]
fn bilinear<T: Scalar>(plane: &[T], h: usize, w: usize, y: T, x: T) -> (T, T, T) {
    let y0 = y.floor();
    let x0 = x.floor();
    let (wy, wx) = (y - y0, x - x0);
    let at = |yy: T, xx: T| -> T {
        match (yy.to_isize(), xx.to_isize()) {
            (Some(a), Some(b)) if a >= 0 && b >= 0 && (a as usize) < h && (b as usize) < w => {
                plane[a as usize * w + b as usize]
            }
            _ => T::zero(),
        }
    };
    let one = T::one();
    let v00 = at(y0, x0);
    let v01 = at(y0, x0 + one);
    let v10 = at(y0 + one, x0);
    let v11 = at(y0 + one, x0 + one);
    let v = (one - wy) * ((one - wx) * v00 + wx * v01) + wy * ((one - wx) * v10 + wx * v11);
    let dy = (one - wx) * (v10 - v00) + wx * (v11 - v01);
    let dx = (one - wy) * (v01 - v00) + wy * (v11 - v10);
    (v, dy, dx)
}

/// Scatters `g` into the four bilinear neighbours of `(y, x)`.
#[inline]
fn bilinear_scatter<T: Scalar>(plane: &mut [T], h: usize, w: usize, y: T, x: T, g: T) {
    let y0 = y.floor();
    let x0 = x.floor();
    let (wy, wx) = (y - y0, x - x0);
    let one = T::one();
    for (dy, dx, wgt) in [
        (0, 0, (one - wy) * (one - wx)),
        (0, 1, (one - wy) * wx),
        (1, 0, wy * (one - wx)),
        (1, 1, wy * wx),
    ] {
        if let (Some(a), Some(b)) = (y0.to_isize(), x0.to_isize()) {
            let (a, b) = (a + dy, b + dx);
            if a >= 0 && b >= 0 && (a as usize) < h && (b as usize) < w {
                let i = a as usize * w + b as usize;
                plane[i] = plane[i] + g * wgt;
            }
        }
    }
}

impl<'g, T: Scalar> Var<'g, T> {
    /// Cross-correlation of `[Cin,H,W]` with weights `[Cout,Cin,k,k]` and
    /// bias `[Cout]`.
    pub fn conv2d(self, w: Var<'g, T>, b: Var<'g, T>, stride: usize, pad: usize) -> Var<'g, T> {
        let (x, wv) = (self.value(), w.value());
        let (c, h, ww) = x.dims3();
        let ws = wv.shape();
        assert_eq!(ws.len(), 4, "conv2d weight must be [Cout,Cin,k,k]");
        assert_eq!(ws[1], c, "conv2d: input channels");
        assert_eq!(ws[2], ws[3], "conv2d: square kernels only");
        let cout = ws[0];
        let geom = Geom::new(c, h, ww, ws[2], stride, pad);
        let cols = geom.im2col(x.data());
        let n = geom.cols();
        let mut out = vec![T::zero(); cout * n];
        gemm(wv.data(), (cout, geom.rows()), false, &cols, (geom.rows(), n), false, &mut out, (cout, n));
        add_bias(&mut out, b.value().data(), n);
        self.graph.op(
            Tensor::new(&[cout, geom.oh, geom.ow], out),
            &[self, w, b],
            Box::new(move |a| {
                let g = a.grad.data();
                let wv = &a.inputs[1];
                let gx = a.needs[0].then(|| {
                    let mut gcols = vec![T::zero(); geom.rows() * n];
                    gemm(wv.data(), (cout, geom.rows()), true, g, (cout, n), false, &mut gcols, (geom.rows(), n));
                    Tensor::new(&[c, h, ww], geom.col2im(&gcols))
                });
                let gw = a.needs[1].then(|| {
                    let cols = geom.im2col(a.inputs[0].data());
                    let mut gw = vec![T::zero(); cout * geom.rows()];
                    gemm(g, (cout, n), false, &cols, (geom.rows(), n), true, &mut gw, (cout, geom.rows()));
                    Tensor::new(wv.shape(), gw)
                });
                let gb = a.needs[2].then(|| bias_grad(g, cout, n));
                vec![gx, gw, gb]
            }),
        )
    }

    /// Transposed convolution (adjoint of [`Var::conv2d`] in the input)
    /// with weights `[Cin,Cout,k,k]`. Output side is `(H-1)*stride - 2*pad + k`.
    pub fn conv_transpose2d(self, w: Var<'g, T>, b: Var<'g, T>, stride: usize, pad: usize) -> Var<'g, T> {
        let (x, wv) = (self.value(), w.value());
        let (cin, h, ww) = x.dims3();
        let ws = wv.shape();
        assert_eq!(ws.len(), 4, "conv_transpose2d weight must be [Cin,Cout,k,k]");
        assert_eq!(ws[0], cin, "conv_transpose2d: input channels");
        let (cout, k) = (ws[1], ws[2]);
        let oh = (h - 1) * stride + k - 2 * pad;
        let ow = (ww - 1) * stride + k - 2 * pad;
        let geom = Geom::new(cout, oh, ow, k, stride, pad);
        assert_eq!((geom.oh, geom.ow), (h, ww), "conv_transpose2d geometry");
        let n = h * ww;
        let mut cols = vec![T::zero(); geom.rows() * n];
        gemm(wv.data(), (cin, geom.rows()), true, x.data(), (cin, n), false, &mut cols, (geom.rows(), n));
        let mut out = geom.col2im(&cols);
        add_bias(&mut out, b.value().data(), oh * ow);
        self.graph.op(
            Tensor::new(&[cout, oh, ow], out),
            &[self, w, b],
            Box::new(move |a| {
                let g = a.grad.data();
                let gcols = geom.im2col(g);
                let wv = &a.inputs[1];
                let gx = a.needs[0].then(|| {
                    let mut gx = vec![T::zero(); cin * n];
                    gemm(wv.data(), (cin, geom.rows()), false, &gcols, (geom.rows(), n), false, &mut gx, (cin, n));
                    Tensor::new(&[cin, h, ww], gx)
                });
                let gw = a.needs[1].then(|| {
                    let mut gw = vec![T::zero(); cin * geom.rows()];
                    gemm(a.inputs[0].data(), (cin, n), false, &gcols, (geom.rows(), n), true, &mut gw, (cin, geom.rows()));
                    Tensor::new(wv.shape(), gw)
                });
                let gb = a.needs[2].then(|| bias_grad(g, cout, oh * ow));
                vec![gx, gw, gb]
            }),
        )
    }

    /// Deformable convolution: tap `(ky, kx)` at output `(oy, ox)` samples
    /// the input bilinearly at its regular position shifted by
    /// `offsets[2*(ky*k+kx) .. +2, oy, ox]` (dy, dx).
    pub fn deform_conv2d(
        self,
        offsets: Var<'g, T>,
        w: Var<'g, T>,
        b: Var<'g, T>,
        stride: usize,
        pad: usize,
    ) -> Var<'g, T> {
        let (x, off, wv) = (self.value(), offsets.value(), w.value());
        let (c, h, ww) = x.dims3();
        let ws = wv.shape();
        assert_eq!(ws.len(), 4);
        assert_eq!(ws[1], c, "deform_conv2d: input channels");
        let (cout, k) = (ws[0], ws[2]);
        let geom = Geom::new(c, h, ww, k, stride, pad);
        assert_eq!(off.shape(), &[2 * k * k, geom.oh, geom.ow], "deform_conv2d: offsets shape");
        let n = geom.cols();
        let pos = move |off: &[T], tap: usize, oy: usize, ox: usize| -> (T, T) {
            let (ky, kx) = (tap / k, tap % k);
            let cell = oy * geom.ow + ox;
            let base_y = T::of_usize(oy * stride + ky) - T::of_usize(pad);
            let base_x = T::of_usize(ox * stride + kx) - T::of_usize(pad);
            (base_y + off[(2 * tap) * n + cell], base_x + off[(2 * tap + 1) * n + cell])
        };
        let sample = move |x: &[T], off: &[T]| -> Vec<T> {
            let mut cols = vec![T::zero(); geom.rows() * n];
            for ci in 0..c {
                let plane = &x[ci * h * ww..(ci + 1) * h * ww];
                for tap in 0..k * k {
                    let r = ci * k * k + tap;
                    for oy in 0..geom.oh {
                        for ox in 0..geom.ow {
                            let (py, px) = pos(off, tap, oy, ox);
                            cols[r * n + oy * geom.ow + ox] = bilinear(plane, h, ww, py, px).0;
                        }
                    }
                }
            }
            cols
        };
        let cols = sample(x.data(), off.data());
        let mut out = vec![T::zero(); cout * n];
        gemm(wv.data(), (cout, geom.rows()), false, &cols, (geom.rows(), n), false, &mut out, (cout, n));
        add_bias(&mut out, b.value().data(), n);
        self.graph.op(
            Tensor::new(&[cout, geom.oh, geom.ow], out),
            &[self, offsets, w, b],
            Box::new(move |a| {
                let g = a.grad.data();
                let (x, off, wv) = (&a.inputs[0], &a.inputs[1], &a.inputs[2]);
                let mut gcols = vec![T::zero(); geom.rows() * n];
                gemm(wv.data(), (cout, geom.rows()), true, g, (cout, n), false, &mut gcols, (geom.rows(), n));
                let gx = a.needs[0].then(|| {
                    let mut gx = vec![T::zero(); c * h * ww];
                    for ci in 0..c {
                        let plane = &mut gx[ci * h * ww..(ci + 1) * h * ww];
                        for tap in 0..k * k {
                            let r = ci * k * k + tap;
                            for oy in 0..geom.oh {
                                for ox in 0..geom.ow {
                                    let (py, px) = pos(off.data(), tap, oy, ox);
                                    bilinear_scatter(plane, h, ww, py, px, gcols[r * n + oy * geom.ow + ox]);
                                }
                            }
                        }
                    }
                    Tensor::new(&[c, h, ww], gx)
                });
                let goff = a.needs[1].then(|| {
                    let mut go = vec![T::zero(); 2 * k * k * n];
                    for ci in 0..c {
                        let plane = &x.data()[ci * h * ww..(ci + 1) * h * ww];
                        for tap in 0..k * k {
                            let r = ci * k * k + tap;
                            for oy in 0..geom.oh {
                                for ox in 0..geom.ow {
                                    let cell = oy * geom.ow + ox;
                                    let (py, px) = pos(off.data(), tap, oy, ox);
                                    let (_, dy, dx) = bilinear(plane, h, ww, py, px);
                                    let gc = gcols[r * n + cell];
                                    go[2 * tap * n + cell] = go[2 * tap * n + cell] + gc * dy;
                                    go[(2 * tap + 1) * n + cell] = go[(2 * tap + 1) * n + cell] + gc * dx;
                                }
                            }
                        }
                    }
                    Tensor::new(off.shape(), go)
                });
                let gw = a.needs[2].then(|| {
                    let cols = sample(x.data(), off.data());
                    let mut gw = vec![T::zero(); cout * geom.rows()];
                    gemm(g, (cout, n), false, &cols, (geom.rows(), n), true, &mut gw, (cout, geom.rows()));
                    Tensor::new(wv.shape(), gw)
                });
                let gb = a.needs[3].then(|| bias_grad(g, cout, n));
                vec![gx, goff, gw, gb]
            }),
        )
    }
}

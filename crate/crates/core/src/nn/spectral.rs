//! Differentiable optics and image-filtering operations.
//!
//! Complex fields are carried as `[2, H, W]` tensors (real plane, imaginary
//! plane).

use std::rc::Rc;

use num_complex::Complex;

use super::graph::Var;
use super::tensor::Tensor;
use crate::optics::fft::Fft2;
use crate::optics::Propagator;
use crate::Scalar;

fn to_complex<T: Scalar>(t: &Tensor<T>) -> Vec<Complex<T>> {
    let n = t.len() / 2;
    let (re, im) = t.data().split_at(n);
    re.iter().zip(im).map(|(&r, &i)| Complex::new(r, i)).collect()
}

fn from_complex<T: Scalar>(v: &[Complex<T>], h: usize, w: usize) -> Tensor<T> {
    let mut data: Vec<T> = v.iter().map(|c| c.re).collect();
    data.extend(v.iter().map(|c| c.im));
    Tensor::new(&[2, h, w], data)
}

/// Normalized 1D Gaussian taps.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

impl<'g, T: Scalar> Var<'g, T> {
    /// `[1,H,W]` phase to the unit-amplitude field `[2,H,W]`.
    pub fn phase_to_field(self) -> Var<'g, T> {
        Var::concat(&[self.cos(), self.sin()])
    }

    /// Applies a propagator to a `[2,H,W]` field; the backward pass applies
    /// its adjoint.
    pub fn propagate(self, prop: Rc<Propagator<T>>) -> Var<'g, T> {
        let x = self.value();
        let (two, h, w) = x.dims3();
        assert_eq!(two, 2, "propagate expects a [2,H,W] field");
        assert_eq!(prop.frame(), (h, w), "propagate: frame mismatch");
        let run = move |t: &Tensor<T>, adjoint: bool| {
            let arr = ndarray::Array2::from_shape_vec((h, w), to_complex(t)).expect("frame shape");
            let out = if adjoint { prop.adjoint(arr.view()) } else { prop.apply(arr.view()) };
            from_complex(out.as_slice().expect("standard layout"), h, w)
        };
        let y = run(&x, false);
        self.graph.op(
            y,
            &[self],
            Box::new(move |a| vec![Some(run(a.grad, true))]),
        )
    }

    /// Modulus of a `[2,H,W]` field as `[1,H,W]`; the gradient at a zero
    /// sample is taken as zero.
    pub fn complex_abs(self) -> Var<'g, T> {
        let x = self.value();
        let (two, h, w) = x.dims3();
        assert_eq!(two, 2, "complex_abs expects a [2,H,W] field");
        let n = h * w;
        let d = x.data();
        let y: Vec<T> = (0..n).map(|i| d[i].hypot(d[n + i])).collect();
        self.graph.op(
            Tensor::new(&[1, h, w], y),
            &[self],
            Box::new(move |a| {
                let d = a.inputs[0].data();
                let m = a.output.data();
                let g = a.grad.data();
                let mut out = vec![T::zero(); 2 * n];
                for i in 0..n {
                    if m[i] > T::zero() {
                        out[i] = g[i] * d[i] / m[i];
                        out[n + i] = g[i] * d[n + i] / m[i];
                    }
                }
                vec![Some(Tensor::new(&[2, h, w], out))]
            }),
        )
    }

    /// `sum_k weights[k] * |DFT(x)_k|^2 / N^2` of a real single-plane input,
    /// with weights in corner-origin frequency order.
    pub fn spectral_energy(self, fft: Rc<Fft2<T>>, weights: Rc<Vec<T>>) -> Var<'g, T> {
        let x = self.value();
        let (h, w) = fft.shape();
        assert_eq!(x.len(), h * w, "spectral_energy: size mismatch");
        assert_eq!(weights.len(), h * w, "spectral_energy: weight count");
        let n2 = T::of_usize(h * w) * T::of_usize(h * w);
        let spectrum = |fft: &Fft2<T>, x: &Tensor<T>| {
            let mut buf: Vec<Complex<T>> = x.data().iter().map(|&v| Complex::new(v, T::zero())).collect();
            fft.forward(&mut buf);
            buf
        };
        let spec = spectrum(&fft, &x);
        let e: T = spec.iter().zip(weights.iter()).map(|(c, &wk)| wk * c.norm_sqr()).sum::<T>() / n2;
        self.graph.op(
            Tensor::scalar(e),
            &[self],
            Box::new(move |a| {
                let mut buf = spectrum(&fft, &a.inputs[0]);
                for (c, &wk) in buf.iter_mut().zip(weights.iter()) {
                    *c = *c * wk;
                }
                fft.inverse_unnormalized(&mut buf);
                let s = a.grad.item() * T::of(2.0) / n2;
                let g: Vec<T> = buf.iter().map(|c| c.re * s).collect();
                vec![Some(Tensor::new(a.inputs[0].shape(), g))]
            }),
        )
    }

    /// Separable "valid" correlation of every plane of `[C,H,W]` with the
    /// given symmetric taps.
    pub fn filter_valid(self, taps: Rc<Vec<T>>) -> Var<'g, T> {
        let x = self.value();
        let (c, h, w) = x.dims3();
        let k = taps.len();
        assert!(h >= k && w >= k, "filter_valid: image {h}x{w} smaller than {k} taps");
        let (oh, ow) = (h - k + 1, w - k + 1);
        let forward = {
            let taps = Rc::clone(&taps);
            move |x: &[T]| {
                let mut rows = vec![T::zero(); c * h * ow];
                for ci in 0..c {
                    for i in 0..h {
                        let src = &x[(ci * h + i) * w..(ci * h + i + 1) * w];
                        let dst = &mut rows[(ci * h + i) * ow..(ci * h + i + 1) * ow];
                        for (j, d) in dst.iter_mut().enumerate() {
                            *d = taps.iter().zip(&src[j..j + k]).map(|(&t, &v)| t * v).sum();
                        }
                    }
                }
                let mut out = vec![T::zero(); c * oh * ow];
                for ci in 0..c {
                    for i in 0..oh {
                        for (t, &tv) in taps.iter().enumerate() {
                            let src = &rows[(ci * h + i + t) * ow..(ci * h + i + t + 1) * ow];
                            let dst = &mut out[(ci * oh + i) * ow..(ci * oh + i + 1) * ow];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d = *d + tv * s;
                            }
                        }
                    }
                }
                out
            }
        };
        let y = forward(x.data());
        self.graph.op(
            Tensor::new(&[c, oh, ow], y),
            &[self],
            Box::new(move |a| {
                let g = a.grad.data();
                let mut rows = vec![T::zero(); c * h * ow];
                for ci in 0..c {
                    for i in 0..oh {
                        for (t, &tv) in taps.iter().enumerate() {
                            let src = &g[(ci * oh + i) * ow..(ci * oh + i + 1) * ow];
                            let dst = &mut rows[(ci * h + i + t) * ow..(ci * h + i + t + 1) * ow];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d = *d + tv * s;
                            }
                        }
                    }
                }
                let mut gx = vec![T::zero(); c * h * w];
                for ci in 0..c {
                    for i in 0..h {
                        let src = &rows[(ci * h + i) * ow..(ci * h + i + 1) * ow];
                        let dst = &mut gx[(ci * h + i) * w..(ci * h + i + 1) * w];
                        for (j, &s) in src.iter().enumerate() {
                            for (t, &tv) in taps.iter().enumerate() {
                                dst[j + t] = dst[j + t] + tv * s;
                            }
                        }
                    }
                }
                vec![Some(Tensor::new(&[c, h, w], gx))]
            }),
        )
    }

    /// 2x2 average pooling of `[C,H,W]`; a trailing odd row/column is dropped.
    pub fn avg_pool2(self) -> Var<'g, T> {
        let x = self.value();
        let (c, h, w) = x.dims3();
        let (oh, ow) = (h / 2, w / 2);
        let q = T::of(0.25);
        let d = x.data();
        let mut y = vec![T::zero(); c * oh * ow];
        for ci in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let at = |di: usize, dj: usize| d[(ci * h + 2 * i + di) * w + 2 * j + dj];
                    y[(ci * oh + i) * ow + j] = (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) * q;
                }
            }
        }
        self.graph.op(
            Tensor::new(&[c, oh, ow], y),
            &[self],
            Box::new(move |a| {
                let g = a.grad.data();
                let mut gx = vec![T::zero(); c * h * w];
                for ci in 0..c {
                    for i in 0..oh {
                        for j in 0..ow {
                            let v = g[(ci * oh + i) * ow + j] * q;
                            for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                                gx[(ci * h + 2 * i + di) * w + 2 * j + dj] = v;
                            }
                        }
                    }
                }
                vec![Some(Tensor::new(&[c, h, w], gx))]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::super::testing::check_grad;
    use super::*;
    use crate::optics::OpticsConfig;

    fn ramp(shape: &[usize], seed: f64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|i| ((i as f64 + 1.0) * seed).sin()).collect())
    }

    fn cfg() -> OpticsConfig {
        OpticsConfig {
            wavelength: 520e-9,
            pixel_pitch: 6.4e-6,
            distance: 0.002,
            pad_factor: 2.0,
            roi: (4, 4),
        }
    }

    #[test]
    fn propagation_chain_gradient() {
        let prop = Rc::new(Propagator::new((5, 6), &cfg(), -0.002).unwrap());
        let target = ramp(&[1, 5, 6], 0.4).map(|v| v.abs());
        check_grad(&[ramp(&[1, 5, 6], 1.7)], move |g, v| {
            let amp = v[0].phase_to_field().propagate(Rc::clone(&prop)).complex_abs();
            amp.sub(g.constant(target.clone())).square().mean()
        });
    }

    #[test]
    fn spectral_energy_matches_naive_and_gradient() {
        let (h, w) = (4, 5);
        let fft = Rc::new(Fft2::new(h, w));
        let weights: Vec<f64> = (0..h * w).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let x = ramp(&[1, h, w], 0.9);
        let g = super::super::graph::Graph::new();
        let e = g.constant(x.clone()).spectral_energy(Rc::clone(&fft), Rc::new(weights.clone())).item();
        let mut naive = 0.0;
        for u in 0..h {
            for v in 0..w {
                let mut acc = Complex::new(0.0, 0.0);
                for i in 0..h {
                    for j in 0..w {
                        let ang = -2.0 * std::f64::consts::PI * ((u * i) as f64 / h as f64 + (v * j) as f64 / w as f64);
                        acc += Complex::from_polar(x.data()[i * w + j], ang);
                    }
                }
                naive += weights[u * w + v] * acc.norm_sqr();
            }
        }
        naive /= ((h * w) as f64).powi(2);
        assert!((e - naive).abs() < 1e-12);
        let wts = Rc::new(weights);
        check_grad(&[x], move |_, v| v[0].spectral_energy(Rc::clone(&fft), Rc::clone(&wts)));
    }

    #[test]
    fn filtering_and_pooling_gradients() {
        let taps = Rc::new(gaussian_taps(3, 1.0));
        check_grad(&[ramp(&[2, 6, 7], 0.3)], move |_, v| {
            v[0].filter_valid(Rc::clone(&taps)).avg_pool2().square().sum()
        });
    }

    #[test]
    fn gaussian_taps_are_normalized_and_symmetric() {
        let t = gaussian_taps(11, 1.5);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..5 {
            assert_eq!(t[i], t[10 - i]);
        }
    }
}

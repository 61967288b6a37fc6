//! Elementwise, reduction and structural operations.

use super::graph::Var;
use super::tensor::Tensor;
use crate::Scalar;

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, op: &str) {
    assert_eq!(a.shape(), b.shape(), "{op}: shape mismatch");
}

impl<'g, T: Scalar> Var<'g, T> {
    /// Elementwise map with derivative `df(x, y)` where `y = f(x)`.
    pub fn unary(
        self,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + 'static,
    ) -> Var<'g, T> {
        let x = self.value();
        let y = x.map(f);
        self.graph.op(
            y,
            &[self],
            Box::new(move |a| {
                let x = &a.inputs[0];
                let g = Tensor::new(
                    x.shape(),
                    a.grad
                        .data()
                        .iter()
                        .zip(x.data())
                        .zip(a.output.data())
                        .map(|((&g, &x), &y)| g * df(x, y))
                        .collect(),
                );
                vec![Some(g)]
            }),
        )
    }

    pub fn add(self, other: Var<'g, T>) -> Var<'g, T> {
        let (a, b) = (self.value(), other.value());
        same_shape(&a, &b, "add");
        let mut y = (*a).clone();
        y.add_assign(&b);
        self.graph.op(
            y,
            &[self, other],
            Box::new(|a| vec![Some(a.grad.clone()), Some(a.grad.clone())]),
        )
    }

    pub fn sub(self, other: Var<'g, T>) -> Var<'g, T> {
        let (a, b) = (self.value(), other.value());
        same_shape(&a, &b, "sub");
        let y = Tensor::new(
            a.shape(),
            a.data().iter().zip(b.data()).map(|(&x, &y)| x - y).collect(),
        );
        self.graph.op(
            y,
            &[self, other],
            Box::new(|a| vec![Some(a.grad.clone()), Some(a.grad.map(|v| -v))]),
        )
    }

    pub fn mul(self, other: Var<'g, T>) -> Var<'g, T> {
        let (a, b) = (self.value(), other.value());
        same_shape(&a, &b, "mul");
        let y = Tensor::new(
            a.shape(),
            a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect(),
        );
        self.graph.op(
            y,
            &[self, other],
            Box::new(|a| {
                let (x, y) = (&a.inputs[0], &a.inputs[1]);
                let gx = a.needs[0].then(|| {
                    Tensor::new(
                        x.shape(),
                        a.grad.data().iter().zip(y.data()).map(|(&g, &y)| g * y).collect(),
                    )
                });
                let gy = a.needs[1].then(|| {
                    Tensor::new(
                        y.shape(),
                        a.grad.data().iter().zip(x.data()).map(|(&g, &x)| g * x).collect(),
                    )
                });
                vec![gx, gy]
            }),
        )
    }

    pub fn div(self, other: Var<'g, T>) -> Var<'g, T> {
        let (a, b) = (self.value(), other.value());
        same_shape(&a, &b, "div");
        let y = Tensor::new(
            a.shape(),
            a.data().iter().zip(b.data()).map(|(&x, &y)| x / y).collect(),
        );
        self.graph.op(
            y,
            &[self, other],
            Box::new(|a| {
                let (x, y) = (&a.inputs[0], &a.inputs[1]);
                let gx = a.needs[0].then(|| {
                    Tensor::new(
                        x.shape(),
                        a.grad.data().iter().zip(y.data()).map(|(&g, &y)| g / y).collect(),
                    )
                });
                let gy = a.needs[1].then(|| {
                    Tensor::new(
                        y.shape(),
                        a.grad
                            .data()
                            .iter()
                            .zip(x.data())
                            .zip(y.data())
                            .map(|((&g, &x), &y)| -g * x / (y * y))
                            .collect(),
                    )
                });
                vec![gx, gy]
            }),
        )
    }

    pub fn scale(self, c: T) -> Var<'g, T> {
        self.unary(move |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(self, c: T) -> Var<'g, T> {
        self.unary(move |x| x + c, |_, _| T::one())
    }

    pub fn neg(self) -> Var<'g, T> {
        self.scale(-T::one())
    }

    pub fn square(self) -> Var<'g, T> {
        self.unary(|x| x * x, |x, _| x + x)
    }

    pub fn sqrt(self) -> Var<'g, T> {
        self.unary(
            |x| x.sqrt(),
            |_, y| if y > T::zero() { T::of(0.5) / y } else { T::zero() },
        )
    }

    pub fn powf(self, p: T) -> Var<'g, T> {
        self.unary(move |x| x.powf(p), move |x, _| p * x.powf(p - T::one()))
    }

    pub fn tanh(self) -> Var<'g, T> {
        self.unary(|x| x.tanh(), |_, y| T::one() - y * y)
    }

    pub fn sigmoid(self) -> Var<'g, T> {
        self.unary(
            |x| T::one() / (T::one() + (-x).exp()),
            |_, y| y * (T::one() - y),
        )
    }

    /// `x * sigmoid(x)`.
    pub fn silu(self) -> Var<'g, T> {
        self.unary(
            |x| x / (T::one() + (-x).exp()),
            |x, _| {
                let s = T::one() / (T::one() + (-x).exp());
                s * (T::one() + x * (T::one() - s))
            },
        )
    }

    pub fn cos(self) -> Var<'g, T> {
        self.unary(|x| x.cos(), |x, _| -x.sin())
    }

    pub fn sin(self) -> Var<'g, T> {
        self.unary(|x| x.sin(), |x, _| x.cos())
    }

    /// `max(x, m)`; gradient passes only where `x > m`.
    pub fn clamp_min(self, m: T) -> Var<'g, T> {
        self.unary(
            move |x| if x > m { x } else { m },
            move |x, _| if x > m { T::one() } else { T::zero() },
        )
    }

    /// Elementwise product with a constant tensor of the same shape.
    pub fn mul_const(self, c: &Tensor<T>) -> Var<'g, T> {
        let c = self.graph.constant(c.clone());
        self.mul(c)
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(self) -> Var<'g, T> {
        let s = self.value().sum();
        self.graph.op(
            Tensor::scalar(s),
            &[self],
            Box::new(|a| vec![Some(Tensor::full(a.inputs[0].shape(), a.grad.item()))]),
        )
    }

    pub fn mean(self) -> Var<'g, T> {
        let n = T::of_usize(self.value().len().max(1));
        self.sum().scale(T::one() / n)
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'g, T> {
        let y = (*self.value()).clone().reshaped(shape);
        self.graph.op(
            y,
            &[self],
            Box::new(|a| vec![Some(a.grad.clone().reshaped(a.inputs[0].shape()))]),
        )
    }

    /// Concatenation along the leading axis.
    pub fn concat(parts: &[Var<'g, T>]) -> Var<'g, T> {
        assert!(!parts.is_empty(), "concat of nothing");
        let g = parts[0].graph;
        let vals: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let tail = vals[0].shape()[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for v in &vals {
            assert_eq!(&v.shape()[1..], &tail[..], "concat: trailing shape mismatch");
            lead += v.shape()[0];
            data.extend_from_slice(v.data());
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(&tail);
        g.op(
            Tensor::new(&shape, data),
            parts,
            Box::new(|a| {
                let mut off = 0;
                a.inputs
                    .iter()
                    .map(|inp| {
                        let n = inp.len();
                        let t = Tensor::new(inp.shape(), a.grad.data()[off..off + n].to_vec());
                        off += n;
                        Some(t)
                    })
                    .collect()
            }),
        )
    }

    /// Rows `start..end` of the leading axis.
    pub fn slice(self, start: usize, end: usize) -> Var<'g, T> {
        let x = self.value();
        let lead = x.shape()[0];
        assert!(start <= end && end <= lead, "slice {start}..{end} of {lead}");
        let inner: usize = x.shape()[1..].iter().product();
        let mut shape = x.shape().to_vec();
        shape[0] = end - start;
        let y = Tensor::new(&shape, x.data()[start * inner..end * inner].to_vec());
        self.graph.op(
            y,
            &[self],
            Box::new(move |a| {
                let mut g = Tensor::zeros(a.inputs[0].shape());
                g.data_mut()[start * inner..end * inner].copy_from_slice(a.grad.data());
                vec![Some(g)]
            }),
        )
    }

    /// Spatial window `[oy..oy+h, ox..ox+w]` of a `[C,H,W]` tensor.
    pub fn crop_hw(self, oy: usize, ox: usize, h: usize, w: usize) -> Var<'g, T> {
        let x = self.value();
        let (c, hh, ww) = x.dims3();
        assert!(oy + h <= hh && ox + w <= ww, "crop out of bounds");
        let mut data = Vec::with_capacity(c * h * w);
        for ci in 0..c {
            for i in 0..h {
                let row = (ci * hh + oy + i) * ww + ox;
                data.extend_from_slice(&x.data()[row..row + w]);
            }
        }
        self.graph.op(
            Tensor::new(&[c, h, w], data),
            &[self],
            Box::new(move |a| {
                let mut g = Tensor::zeros(&[c, hh, ww]);
                let gd = g.data_mut();
                for ci in 0..c {
                    for i in 0..h {
                        let row = (ci * hh + oy + i) * ww + ox;
                        let src = (ci * h + i) * w;
                        gd[row..row + w].copy_from_slice(&a.grad.data()[src..src + w]);
                    }
                }
                vec![Some(g)]
            }),
        )
    }

    /// Dense layer on a vector: `w [m, n] * x [n] + b [m]`.
    pub fn linear(self, w: Var<'g, T>, b: Var<'g, T>) -> Var<'g, T> {
        let (x, wv, bv) = (self.value(), w.value(), b.value());
        let (m, n) = (wv.shape()[0], wv.shape()[1]);
        assert_eq!(x.len(), n, "linear: input length");
        assert_eq!(bv.len(), m, "linear: bias length");
        let y: Vec<T> = (0..m)
            .map(|i| {
                let row = &wv.data()[i * n..(i + 1) * n];
                row.iter().zip(x.data()).map(|(&a, &b)| a * b).sum::<T>() + bv.data()[i]
            })
            .collect();
        self.graph.op(
            Tensor::new(&[m], y),
            &[self, w, b],
            Box::new(move |a| {
                let (x, w) = (&a.inputs[0], &a.inputs[1]);
                let g = a.grad.data();
                let gx = a.needs[0].then(|| {
                    let mut gx = vec![T::zero(); n];
                    for i in 0..m {
                        let row = &w.data()[i * n..(i + 1) * n];
                        for (acc, &wij) in gx.iter_mut().zip(row) {
                            *acc = *acc + g[i] * wij;
                        }
                    }
                    Tensor::new(x.shape(), gx)
                });
                let gw = a.needs[1].then(|| {
                    let mut gw = Vec::with_capacity(m * n);
                    for &gi in g.iter().take(m) {
                        gw.extend(x.data().iter().map(|&xj| gi * xj));
                    }
                    Tensor::new(&[m, n], gw)
                });
                let gb = a.needs[2].then(|| a.grad.clone());
                vec![gx, gw, gb]
            }),
        )
    }

    /// Picks codebook rows: `out[d, y, x] = book[idx[y * w + x], d]` for a
    /// `[K, D]` book, producing a `[D, h, w]` latent.
    pub fn gather_rows(self, idx: &[usize], h: usize, w: usize) -> Var<'g, T> {
        let book = self.value();
        let (k, d) = (book.shape()[0], book.shape()[1]);
        assert_eq!(idx.len(), h * w, "gather: index count");
        let hw = h * w;
        let mut data = vec![T::zero(); d * hw];
        for (cell, &i) in idx.iter().enumerate() {
            assert!(i < k, "gather: index {i} >= {k}");
            for j in 0..d {
                data[j * hw + cell] = book.data()[i * d + j];
            }
        }
        let idx = idx.to_vec();
        self.graph.op(
            Tensor::new(&[d, h, w], data),
            &[self],
            Box::new(move |a| {
                let mut g = Tensor::zeros(&[k, d]);
                let gd = g.data_mut();
                for (cell, &i) in idx.iter().enumerate() {
                    for j in 0..d {
                        gd[i * d + j] = gd[i * d + j] + a.grad.data()[j * hw + cell];
                    }
                }
                vec![Some(g)]
            }),
        )
    }

    /// Straight-through estimator: forward value is `quantized`, the
    /// backward Jacobian is the identity towards both `self` (encoder output)
    /// and `quantized` (which only matters when the codebook is itself a
    /// differentiable function, e.g. an adapter output).
    pub fn straight_through(self, quantized: Var<'g, T>) -> Var<'g, T> {
        let q = quantized.value();
        assert_eq!(self.value().shape(), q.shape(), "straight_through: shape mismatch");
        self.graph.op(
            (*q).clone(),
            &[self, quantized],
            Box::new(|a| vec![Some(a.grad.clone()), Some(a.grad.clone())]),
        )
    }

    /// Blocks gradient flow.
    pub fn detach(self) -> Var<'g, T> {
        self.graph.constant((*self.value()).clone())
    }
}

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::tensor::{numel, strides, Tensor};

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let da = if i + a.len() >= nd { a[i + a.len() - nd] } else { 1 };
        let db = if i + b.len() >= nd { b[i + b.len() - nd] } else { 1 };
        out[i] = if da == db || db == 1 {
            da
        } else if da == 1 {
            db
        } else {
            panic!("shapes {a:?} and {b:?} do not broadcast");
        };
    }
    out
}

/// Strides of `src` expressed in the coordinates of `out`, zero along
/// broadcast dimensions.
fn broadcast_strides(src: &[usize], out: &[usize]) -> Vec<usize> {
    let nd = out.len();
    assert!(src.len() <= nd, "cannot broadcast {src:?} to {out:?}");
    let st = strides(src);
    let mut res = vec![0; nd];
    for i in 0..src.len() {
        let od = i + nd - src.len();
        if src[i] == out[od] {
            res[od] = st[i];
        } else {
            assert_eq!(src[i], 1, "cannot broadcast {src:?} to {out:?}");
        }
    }
    res
}

/// Walks every index of `shape`, handing the running offsets of two strided
/// sources to `f`.
fn for_each_offset2(shape: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize)) {
    let n = numel(shape);
    if n == 0 {
        return;
    }
    let nd = shape.len();
    let mut idx = vec![0usize; nd];
    let (mut oa, mut ob) = (0usize, 0usize);
    for _ in 0..n {
        f(oa, ob);
        let mut d = nd;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < shape[d] {
                break;
            }
            oa -= sa[d] * shape[d];
            ob -= sb[d] * shape[d];
            idx[d] = 0;
        }
    }
}

fn binary_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> (Vec<f64>, Vec<usize>) {
    let (ad, bd) = (a.data(), b.data());
    if a.shape() == b.shape() {
        let out = ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect();
        return (out, a.shape().to_vec());
    }
    let shape = broadcast_shape(a.shape(), b.shape());
    if b.numel() == 1 && shape == a.shape() {
        let y = bd[0];
        return (ad.iter().map(|&x| f(x, y)).collect(), shape);
    }
    if a.numel() == 1 && shape == b.shape() {
        let x = ad[0];
        return (bd.iter().map(|&y| f(x, y)).collect(), shape);
    }
    let sa = broadcast_strides(a.shape(), &shape);
    let sb = broadcast_strides(b.shape(), &shape);
    let mut out = Vec::with_capacity(numel(&shape));
    for_each_offset2(&shape, &sa, &sb, |oa, ob| out.push(f(ad[oa], bd[ob])));
    (out, shape)
}

fn reduce_like(g: &Tensor, like: &Tensor) -> Tensor {
    if g.shape() == like.shape() {
        g.clone()
    } else {
        g.sum_to(like.shape())
    }
}

fn unary<F, B>(x: &Tensor, name: &'static str, f: F, backward: B) -> Tensor
where
    F: Fn(f64) -> f64,
    B: Fn(&Tensor, &Tensor, &Tensor) -> Tensor + Send + Sync + 'static,
{
    let data = x.data().iter().map(|&v| f(v)).collect();
    Tensor::from_op(data, x.shape().to_vec(), name, vec![x.clone()], move |ctx, g| {
        vec![Some(backward(&ctx.inputs[0], ctx.output, g))]
    })
}

/// Layout of an unfold: `[outer, len, rest, chan]` in, `[outer, len_out, rest, k, chan]` out.
#[derive(Clone, Copy)]
struct UnfoldGeom {
    outer: usize,
    len: usize,
    rest: usize,
    chan: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    len_out: usize,
}

impl UnfoldGeom {
    fn new(shape: &[usize], axis: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        assert!(
            axis + 1 < shape.len(),
            "unfold axis {axis} must precede the channel axis of {shape:?}"
        );
        assert!(kernel >= 1 && stride >= 1);
        let len = shape[axis];
        assert!(
            len + 2 * pad >= kernel,
            "unfold kernel {kernel} longer than padded axis {len}+2*{pad}"
        );
        UnfoldGeom {
            outer: shape[..axis].iter().product(),
            len,
            rest: shape[axis + 1..shape.len() - 1].iter().product(),
            chan: shape[shape.len() - 1],
            kernel,
            stride,
            pad,
            len_out: (len + 2 * pad - kernel) / stride + 1,
        }
    }

    /// Calls `f(out_offset, in_offset)` for every in-range element pair.
    fn walk(&self, mut f: impl FnMut(usize, usize)) {
        let UnfoldGeom {
            outer,
            len,
            rest,
            chan,
            kernel,
            stride,
            pad,
            len_out,
        } = *self;
        let mut o = 0;
        for a in 0..outer {
            for lo in 0..len_out {
                for r in 0..rest {
                    for j in 0..kernel {
                        let li = (lo * stride + j) as isize - pad as isize;
                        if li < 0 || li as usize >= len {
                            o += chan;
                            continue;
                        }
                        let base = ((a * len + li as usize) * rest + r) * chan;
                        for c in 0..chan {
                            f(o + c, base + c);
                        }
                        o += chan;
                    }
                }
            }
        }
    }
}

fn gemm(
    a: &[f64],
    b: &[f64],
    m: usize,
    k: usize,
    n: usize,
    (rsa, csa): (usize, usize),
    (rsb, csb): (usize, usize),
) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    // SAFETY: the slices cover every element addressed by the given
    // dimensions and strides, and `c` is a dense m×n row-major buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Tensor {
        let (data, shape) = binary_map(self, other, |x, y| x + y);
        Tensor::from_op(data, shape, "add", vec![self.clone(), other.clone()], |ctx, g| {
            vec![
                ctx.needs[0].then(|| reduce_like(g, &ctx.inputs[0])),
                ctx.needs[1].then(|| reduce_like(g, &ctx.inputs[1])),
            ]
        })
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        let (data, shape) = binary_map(self, other, |x, y| x - y);
        Tensor::from_op(data, shape, "sub", vec![self.clone(), other.clone()], |ctx, g| {
            vec![
                ctx.needs[0].then(|| reduce_like(g, &ctx.inputs[0])),
                ctx.needs[1].then(|| reduce_like(&g.neg(), &ctx.inputs[1])),
            ]
        })
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        let (data, shape) = binary_map(self, other, |x, y| x * y);
        Tensor::from_op(data, shape, "mul", vec![self.clone(), other.clone()], |ctx, g| {
            let (a, b) = (&ctx.inputs[0], &ctx.inputs[1]);
            vec![
                ctx.needs[0].then(|| reduce_like(&g.mul(b), a)),
                ctx.needs[1].then(|| reduce_like(&g.mul(a), b)),
            ]
        })
    }

    pub fn div(&self, other: &Tensor) -> Tensor {
        let (data, shape) = binary_map(self, other, |x, y| x / y);
        Tensor::from_op(data, shape, "div", vec![self.clone(), other.clone()], |ctx, g| {
            let (a, b) = (&ctx.inputs[0], &ctx.inputs[1]);
            vec![
                ctx.needs[0].then(|| reduce_like(&g.div(b), a)),
                ctx.needs[1].then(|| reduce_like(&g.mul(a).div(&b.mul(b)).neg(), b)),
            ]
        })
    }

    pub fn neg(&self) -> Tensor {
        unary(self, "neg", |v| -v, |_, _, g| g.neg())
    }

    pub fn add_scalar(&self, s: f64) -> Tensor {
        unary(self, "add_scalar", move |v| v + s, |_, _, g| g.clone())
    }

    pub fn mul_scalar(&self, s: f64) -> Tensor {
        unary(self, "mul_scalar", move |v| v * s, move |_, _, g| g.mul_scalar(s))
    }

    pub fn square(&self) -> Tensor {
        self.mul(self)
    }

    pub fn exp(&self) -> Tensor {
        unary(self, "exp", f64::exp, |_, y, g| g.mul(y))
    }

    pub fn ln(&self) -> Tensor {
        unary(self, "ln", f64::ln, |x, _, g| g.div(x))
    }

    pub fn sqrt(&self) -> Tensor {
        unary(self, "sqrt", f64::sqrt, |_, y, g| g.div(&y.mul_scalar(2.0)))
    }

    pub fn tanh(&self) -> Tensor {
        unary(self, "tanh", f64::tanh, |_, y, g| {
            g.mul(&y.square().neg().add_scalar(1.0))
        })
    }

    pub fn sigmoid(&self) -> Tensor {
        unary(
            self,
            "sigmoid",
            |v| {
                if v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                }
            },
            |_, y, g| g.mul(&y.mul(&y.neg().add_scalar(1.0))),
        )
    }

    /// Elementwise product with a constant mask built from this tensor's values.
    fn masked_grad(x: &Tensor, g: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
        let mask = Tensor::from_vec(x.data().iter().map(|&v| f(v)).collect(), x.shape());
        g.mul(&mask)
    }

    pub fn relu(&self) -> Tensor {
        unary(
            self,
            "relu",
            |v| v.max(0.0),
            |x, _, g| Tensor::masked_grad(x, g, |v| if v > 0.0 { 1.0 } else { 0.0 }),
        )
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        unary(
            self,
            "leaky_relu",
            move |v| if v > 0.0 { v } else { slope * v },
            move |x, _, g| Tensor::masked_grad(x, g, |v| if v > 0.0 { 1.0 } else { slope }),
        )
    }

    pub fn abs(&self) -> Tensor {
        unary(self, "abs", f64::abs, |x, _, g| {
            Tensor::masked_grad(x, g, |v| {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            })
        })
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        unary(
            self,
            "clamp",
            move |v| v.clamp(lo, hi),
            move |x, _, g| Tensor::masked_grad(x, g, |v| if v >= lo && v <= hi { 1.0 } else { 0.0 }),
        )
    }

    /// Matrix product of two 2-D tensors.
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        self.matmul_t(other, false, false)
    }

    /// `op(self) @ op(other)` where `op` optionally transposes a 2-D tensor.
    pub fn matmul_t(&self, other: &Tensor, ta: bool, tb: bool) -> Tensor {
        assert_eq!(self.ndim(), 2, "matmul lhs must be 2-D, got {:?}", self.shape());
        assert_eq!(other.ndim(), 2, "matmul rhs must be 2-D, got {:?}", other.shape());
        let (ar, ac) = (self.dim(0), self.dim(1));
        let (br, bc) = (other.dim(0), other.dim(1));
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        assert_eq!(k, k2, "matmul inner dims differ: {:?} x {:?} (ta={ta}, tb={tb})", self.shape(), other.shape());
        let sa = if ta { (1, ac) } else { (ac, 1) };
        let sb = if tb { (1, bc) } else { (bc, 1) };
        let data = gemm(self.data(), other.data(), m, k, n, sa, sb);
        Tensor::from_op(
            data,
            vec![m, n],
            "matmul",
            vec![self.clone(), other.clone()],
            move |ctx, g| {
                let (a, b) = (&ctx.inputs[0], &ctx.inputs[1]);
                let (ga, gb) = match (ta, tb) {
                    (false, false) => (
                        ctx.needs[0].then(|| g.matmul_t(b, false, true)),
                        ctx.needs[1].then(|| a.matmul_t(g, true, false)),
                    ),
                    (false, true) => (
                        ctx.needs[0].then(|| g.matmul_t(b, false, false)),
                        ctx.needs[1].then(|| g.matmul_t(a, true, false)),
                    ),
                    (true, false) => (
                        ctx.needs[0].then(|| b.matmul_t(g, false, true)),
                        ctx.needs[1].then(|| a.matmul_t(g, false, false)),
                    ),
                    (true, true) => (
                        ctx.needs[0].then(|| b.matmul_t(g, true, true)),
                        ctx.needs[1].then(|| g.matmul_t(a, true, true)),
                    ),
                };
                vec![ga, gb]
            },
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        assert_eq!(
            numel(shape),
            self.numel(),
            "cannot reshape {:?} to {:?}",
            self.shape(),
            shape
        );
        let in_shape = self.shape().to_vec();
        Tensor::from_op_shared(
            self.data_arc(),
            shape.to_vec(),
            "reshape",
            vec![self.clone()],
            move |_, g| vec![Some(g.reshape(&in_shape))],
        )
    }

    pub fn flatten(&self) -> Tensor {
        self.reshape(&[self.numel()])
    }

    pub fn permute(&self, axes: &[usize]) -> Tensor {
        let nd = self.ndim();
        assert_eq!(axes.len(), nd);
        let mut seen = vec![false; nd];
        for &a in axes {
            assert!(a < nd && !seen[a], "invalid permutation {axes:?}");
            seen[a] = true;
        }
        let in_strides = strides(self.shape());
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.dim(a)).collect();
        let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let zero = vec![0; nd];
        let src = self.data();
        let mut data = Vec::with_capacity(self.numel());
        for_each_offset2(&out_shape, &src_strides, &zero, |o, _| data.push(src[o]));
        let mut inverse = vec![0; nd];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        Tensor::from_op(data, out_shape, "permute", vec![self.clone()], move |_, g| {
            vec![Some(g.permute(&inverse))]
        })
    }

    /// Swaps the two axes of a 2-D tensor.
    pub fn t(&self) -> Tensor {
        assert_eq!(self.ndim(), 2);
        self.permute(&[1, 0])
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Tensor {
        if self.shape() == shape {
            return self.clone();
        }
        let st = broadcast_strides(self.shape(), shape);
        let zero = vec![0; shape.len()];
        let src = self.data();
        let mut data = Vec::with_capacity(numel(shape));
        for_each_offset2(shape, &st, &zero, |o, _| data.push(src[o]));
        let in_shape = self.shape().to_vec();
        Tensor::from_op(data, shape.to_vec(), "broadcast_to", vec![self.clone()], move |_, g| {
            vec![Some(g.sum_to(&in_shape))]
        })
    }

    /// Sums over broadcast dimensions so the result has `shape`; the adjoint
    /// of [`Tensor::broadcast_to`].
    pub fn sum_to(&self, shape: &[usize]) -> Tensor {
        if self.shape() == shape {
            return self.clone();
        }
        let st = broadcast_strides(shape, self.shape());
        let zero = vec![0; self.ndim()];
        let src = self.data();
        let mut data = vec![0.0; numel(shape)];
        let mut i = 0;
        for_each_offset2(self.shape(), &st, &zero, |o, _| {
            data[o] += src[i];
            i += 1;
        });
        let in_shape = self.shape().to_vec();
        Tensor::from_op(data, shape.to_vec(), "sum_to", vec![self.clone()], move |_, g| {
            vec![Some(g.broadcast_to(&in_shape))]
        })
    }

    pub fn sum(&self) -> Tensor {
        let s: f64 = self.data().iter().sum();
        let in_shape = self.shape().to_vec();
        Tensor::from_op(vec![s], vec![], "sum", vec![self.clone()], move |_, g| {
            vec![Some(g.broadcast_to(&in_shape))]
        })
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel().max(1) as f64;
        self.sum().mul_scalar(1.0 / n)
    }

    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Tensor {
        let mut kept = self.shape().to_vec();
        kept[axis] = 1;
        let s = self.sum_to(&kept);
        if keepdim {
            s
        } else {
            let mut dropped = self.shape().to_vec();
            dropped.remove(axis);
            s.reshape(&dropped)
        }
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Tensor {
        let n = self.dim(axis) as f64;
        self.sum_axis(axis, keepdim).mul_scalar(1.0 / n)
    }

    /// Constant (non-differentiable) maximum along `axis`, kept as size 1.
    fn max_axis_const(&self, axis: usize) -> Tensor {
        let shape = self.shape();
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.data();
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        for a in 0..outer {
            for l in 0..len {
                for i in 0..inner {
                    let v = src[(a * len + l) * inner + i];
                    let o = &mut out[a * inner + i];
                    if v > *o {
                        *o = v;
                    }
                }
            }
        }
        let mut kept = shape.to_vec();
        kept[axis] = 1;
        Tensor::from_vec(out, &kept)
    }

    pub fn softmax(&self, axis: usize) -> Tensor {
        let shifted = self.sub(&self.max_axis_const(axis));
        let e = shifted.exp();
        e.div(&e.sum_axis(axis, true))
    }

    pub fn log_softmax(&self, axis: usize) -> Tensor {
        let shifted = self.sub(&self.max_axis_const(axis));
        shifted.sub(&shifted.exp().sum_axis(axis, true).ln())
    }

    /// Slice of `len` entries along `axis` starting at `start`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Tensor {
        let shape = self.shape();
        let full = shape[axis];
        assert!(start + len <= full, "narrow {start}+{len} exceeds axis of {full}");
        if start == 0 && len == full {
            return self.clone();
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for a in 0..outer {
            let base = (a * full + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        Tensor::from_op(data, out_shape, "narrow", vec![self.clone()], move |_, g| {
            vec![Some(g.pad_axis(axis, start, full))]
        })
    }

    /// Places this tensor at `start` inside a zero tensor whose `axis` has
    /// length `full`; the adjoint of [`Tensor::narrow`].
    pub fn pad_axis(&self, axis: usize, start: usize, full: usize) -> Tensor {
        let shape = self.shape();
        let len = shape[axis];
        assert!(start + len <= full);
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.data();
        let mut data = vec![0.0; outer * full * inner];
        for a in 0..outer {
            let dst = (a * full + start) * inner;
            let s = a * len * inner;
            data[dst..dst + len * inner].copy_from_slice(&src[s..s + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = full;
        Tensor::from_op(data, out_shape, "pad_axis", vec![self.clone()], move |_, g| {
            vec![Some(g.narrow(axis, start, len))]
        })
    }

    /// Drops `axis` by taking entry `index` along it.
    pub fn select(&self, axis: usize, index: usize) -> Tensor {
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        self.narrow(axis, index, 1).reshape(&shape)
    }

    pub fn cat(tensors: &[Tensor], axis: usize) -> Tensor {
        assert!(!tensors.is_empty(), "cat of no tensors");
        let first = tensors[0].shape();
        for t in tensors {
            assert_eq!(t.ndim(), first.len());
            for (d, (&x, &y)) in t.shape().iter().zip(first).enumerate() {
                assert!(d == axis || x == y, "cat shape mismatch {:?} vs {:?}", t.shape(), first);
            }
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let lens: Vec<usize> = tensors.iter().map(|t| t.dim(axis)).collect();
        let total: usize = lens.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for a in 0..outer {
            for (t, &len) in tensors.iter().zip(&lens) {
                let s = a * len * inner;
                data.extend_from_slice(&t.data()[s..s + len * inner]);
            }
        }
        let mut out_shape = first.to_vec();
        out_shape[axis] = total;
        Tensor::from_op(data, out_shape, "cat", tensors.to_vec(), move |ctx, g| {
            let mut off = 0;
            lens.iter()
                .zip(ctx.needs)
                .map(|(&len, &need)| {
                    let r = need.then(|| g.narrow(axis, off, len));
                    off += len;
                    r
                })
                .collect()
        })
    }

    /// Stacks equally shaped tensors along a new `axis`.
    pub fn stack(tensors: &[Tensor], axis: usize) -> Tensor {
        let expanded: Vec<Tensor> = tensors
            .iter()
            .map(|t| {
                let mut s = t.shape().to_vec();
                s.insert(axis, 1);
                t.reshape(&s)
            })
            .collect();
        Tensor::cat(&expanded, axis)
    }

    /// Sliding windows along `axis` (zero padded by `pad` on both ends).
    ///
    /// The last axis is treated as channels: an input of shape
    /// `[..pre, L, ..rest, C]` becomes `[..pre, L_out, ..rest, kernel, C]` with
    /// `L_out = (L + 2 pad - kernel) / stride + 1`.
    pub fn unfold(&self, axis: usize, kernel: usize, stride: usize, pad: usize) -> Tensor {
        let geom = UnfoldGeom::new(self.shape(), axis, kernel, stride, pad);
        let shape = self.shape();
        let mut out_shape = shape[..axis].to_vec();
        out_shape.push(geom.len_out);
        out_shape.extend_from_slice(&shape[axis + 1..shape.len() - 1]);
        out_shape.push(kernel);
        out_shape.push(geom.chan);
        let src = self.data();
        let mut data = vec![0.0; numel(&out_shape)];
        geom.walk(|o, i| data[o] = src[i]);
        let in_shape = shape.to_vec();
        Tensor::from_op(data, out_shape, "unfold", vec![self.clone()], move |_, g| {
            vec![Some(g.fold_into(&in_shape, axis, kernel, stride, pad))]
        })
    }

    /// Adjoint of [`Tensor::unfold`]: scatter-adds windows back into a tensor
    /// of shape `in_shape`.
    pub fn fold_into(
        &self,
        in_shape: &[usize],
        axis: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Tensor {
        let geom = UnfoldGeom::new(in_shape, axis, kernel, stride, pad);
        let src = self.data();
        let mut data = vec![0.0; numel(in_shape)];
        geom.walk(|o, i| data[i] += src[o]);
        Tensor::from_op(data, in_shape.to_vec(), "fold", vec![self.clone()], move |_, g| {
            vec![Some(g.unfold(axis, kernel, stride, pad))]
        })
    }
}

// Only reference receivers: an owned-receiver operator impl would shadow the
// inherent `&self` methods of the same name during method lookup.
macro_rules! impl_binary {
    ($trait:ident, $method:ident) => {
        impl $trait<&Tensor> for &Tensor {
            type Output = Tensor;
            fn $method(self, rhs: &Tensor) -> Tensor {
                Tensor::$method(self, rhs)
            }
        }
        impl $trait<Tensor> for &Tensor {
            type Output = Tensor;
            fn $method(self, rhs: Tensor) -> Tensor {
                Tensor::$method(self, &rhs)
            }
        }
    };
}

impl_binary!(Add, add);
impl_binary!(Sub, sub);
impl_binary!(Mul, mul);
impl_binary!(Div, div);

impl Add<f64> for &Tensor {
    type Output = Tensor;
    fn add(self, rhs: f64) -> Tensor {
        self.add_scalar(rhs)
    }
}

impl Sub<f64> for &Tensor {
    type Output = Tensor;
    fn sub(self, rhs: f64) -> Tensor {
        self.add_scalar(-rhs)
    }
}

impl Mul<f64> for &Tensor {
    type Output = Tensor;
    fn mul(self, rhs: f64) -> Tensor {
        self.mul_scalar(rhs)
    }
}

impl Neg for &Tensor {
    type Output = Tensor;
    fn neg(self) -> Tensor {
        Tensor::neg(self)
    }
}

//! Shape-generic differentiable primitives.

use super::core::numel;
use super::element::gemm;
use super::{Element, Tensor};
use crate::error::{Error, Result};

fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides into `src` for every axis of `out`; broadcast axes get 0.
fn broadcast_strides(src: &[usize], out: &[usize]) -> Vec<usize> {
    let src_strides = strides_of(src);
    let offset = out.len() - src.len();
    (0..out.len())
        .map(|i| {
            if i < offset || src[i - offset] == 1 {
                0
            } else {
                src_strides[i - offset]
            }
        })
        .collect()
}

/// Visits every element of `out_shape` with the matching offsets in two
/// strided sources.
fn for_each_offset2(out_shape: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let n = numel(out_shape);
    if n == 0 {
        return;
    }
    let nd = out_shape.len();
    let mut idx = vec![0usize; nd];
    let (mut oa, mut ob) = (0usize, 0usize);
    for o in 0..n {
        f(o, oa, ob);
        for d in (0..nd).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            oa -= sa[d] * out_shape[d];
            ob -= sb[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}

/// Sums `grad` (shaped like `out`) down to `src` under broadcasting.
fn reduce_to<T: Element>(grad: &[T], out: &[usize], src: &[usize]) -> Vec<T> {
    if out == src {
        return grad.to_vec();
    }
    let s = broadcast_strides(src, out);
    let zeros = vec![0; out.len()];
    let mut acc = vec![T::zero(); numel(src)];
    for_each_offset2(out, &s, &zeros, |o, a, _| acc[a] += grad[o]);
    acc
}

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

fn binary<T: Element>(a: &Tensor<T>, b: &Tensor<T>, op: BinOp, name: &'static str) -> Result<Tensor<T>> {
    let out_shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| Error::shape(name, a.shape(), b.shape()))?;
    let f = |x: T, y: T| match op {
        BinOp::Add => x + y,
        BinOp::Sub => x - y,
        BinOp::Mul => x * y,
        BinOp::Div => x / y,
    };
    let av = a.data();
    let bv = b.data();
    let data: Vec<T> = if a.shape() == b.shape() {
        av.iter().zip(bv.iter()).map(|(&x, &y)| f(x, y)).collect()
    } else {
        let sa = broadcast_strides(a.shape(), &out_shape);
        let sb = broadcast_strides(b.shape(), &out_shape);
        let mut out = vec![T::zero(); numel(&out_shape)];
        for_each_offset2(&out_shape, &sa, &sb, |o, i, j| out[o] = f(av[i], bv[j]));
        out
    };
    drop((av, bv));

    let (ac, bc) = (a.clone(), b.clone());
    let shape = out_shape.clone();
    Ok(Tensor::from_op(data, out_shape, &[a, b], move |g, need| {
        if matches!(op, BinOp::Add | BinOp::Sub) {
            let ga = need[0].then(|| reduce_to(g, &shape, ac.shape()));
            let gb = need[1].then(|| {
                let mut gb = reduce_to(g, &shape, bc.shape());
                if matches!(op, BinOp::Sub) {
                    gb.iter_mut().for_each(|v| *v = -*v);
                }
                gb
            });
            return vec![ga, gb];
        }
        let sa = broadcast_strides(ac.shape(), &shape);
        let sb = broadcast_strides(bc.shape(), &shape);
        let mut ga = need[0].then(|| vec![T::zero(); ac.numel()]);
        let mut gb = need[1].then(|| vec![T::zero(); bc.numel()]);
        let av = ac.data();
        let bv = bc.data();
        for_each_offset2(&shape, &sa, &sb, |o, i, j| {
            let (da, db) = match op {
                BinOp::Add => (g[o], g[o]),
                BinOp::Sub => (g[o], -g[o]),
                BinOp::Mul => (g[o] * bv[j], g[o] * av[i]),
                BinOp::Div => (g[o] / bv[j], -g[o] * av[i] / (bv[j] * bv[j])),
            };
            if let Some(ga) = ga.as_mut() {
                ga[i] += da;
            }
            if let Some(gb) = gb.as_mut() {
                gb[j] += db;
            }
        });
        vec![ga, gb]
    }))
}

/// Element-wise `a + b` with NumPy broadcasting.
pub fn add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary(a, b, BinOp::Add, "add")
}

pub fn sub<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary(a, b, BinOp::Sub, "sub")
}

pub fn mul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary(a, b, BinOp::Mul, "mul")
}

pub fn div<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary(a, b, BinOp::Div, "div")
}

/// Applies `f` element-wise; `df(x, y)` is the local derivative.
pub(crate) fn unary<T: Element>(
    x: &Tensor<T>,
    f: impl Fn(T) -> T,
    df: impl Fn(T, T) -> T + Send + Sync + 'static,
) -> Tensor<T> {
    let y: Vec<T> = x.data().iter().map(|&v| f(v)).collect();
    let xc = x.clone();
    let yc = y.clone();
    Tensor::from_op(y, x.shape().to_vec(), &[x], move |g, _| {
        let xv = xc.data();
        vec![Some(
            g.iter()
                .zip(xv.iter())
                .zip(&yc)
                .map(|((&g, &x), &y)| g * df(x, y))
                .collect(),
        )]
    })
}

pub fn scale<T: Element>(x: &Tensor<T>, s: T) -> Tensor<T> {
    unary(x, |v| v * s, move |_, _| s)
}

pub fn add_scalar<T: Element>(x: &Tensor<T>, s: T) -> Tensor<T> {
    unary(x, |v| v + s, |_, _| T::one())
}

pub fn neg<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    scale(x, -T::one())
}

pub fn relu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    unary(
        x,
        |v| if v > T::zero() { v } else { T::zero() },
        |x, _| {
            if x > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        },
    )
}

/// Exact (erf-based) GELU.
pub fn gelu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let half = T::from_f64_lossy(0.5);
    let inv_sqrt2 = T::from_f64_lossy(std::f64::consts::FRAC_1_SQRT_2);
    let inv_sqrt_2pi = T::from_f64_lossy(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    unary(
        x,
        move |v| half * v * (T::one() + (v * inv_sqrt2).erf()),
        move |x, _| half * (T::one() + (x * inv_sqrt2).erf()) + x * inv_sqrt_2pi * (-half * x * x).exp(),
    )
}

pub(crate) fn sigmoid_scalar<T: Element>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    unary(x, sigmoid_scalar, |_, y| y * (T::one() - y))
}

pub fn tanh<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    unary(x, |v| v.tanh(), |_, y| T::one() - y * y)
}

/// Matrix product over the last two axes. Leading axes must agree, or
/// `b` may be a plain matrix shared across all of `a`'s batch.
pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    let err = || Error::shape("matmul", sa, sb);
    if sa.len() < 2 || sb.len() < 2 {
        return Err(err());
    }
    let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
    let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
    if k != k2 {
        return Err(err());
    }
    let shared_b = sb.len() == 2 && sa.len() > 2;
    if !shared_b && sa[..sa.len() - 2] != sb[..sb.len() - 2] {
        return Err(err());
    }
    let batch: usize = sa[..sa.len() - 2].iter().product();
    let mut out_shape = sa[..sa.len() - 2].to_vec();
    out_shape.extend([m, n]);

    let mut out = vec![T::zero(); batch * m * n];
    {
        let av = a.data();
        let bv = b.data();
        for i in 0..batch {
            let bi = if shared_b { 0 } else { i };
            gemm(
                false,
                false,
                m,
                k,
                n,
                &av[i * m * k..],
                &bv[bi * k * n..],
                T::zero(),
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
    }
    let (ac, bc) = (a.clone(), b.clone());
    Ok(Tensor::from_op(out, out_shape, &[a, b], move |g, need| {
        let av = ac.data();
        let bv = bc.data();
        let mut ga = need[0].then(|| vec![T::zero(); batch * m * k]);
        let mut gb = need[1].then(|| vec![T::zero(); bc.numel()]);
        for i in 0..batch {
            let bi = if shared_b { 0 } else { i };
            let gi = &g[i * m * n..(i + 1) * m * n];
            if let Some(ga) = ga.as_mut() {
                gemm(
                    false,
                    true,
                    m,
                    n,
                    k,
                    gi,
                    &bv[bi * k * n..],
                    T::zero(),
                    &mut ga[i * m * k..(i + 1) * m * k],
                );
            }
            if let Some(gb) = gb.as_mut() {
                let beta = if shared_b { T::one() } else { T::zero() };
                gemm(
                    true,
                    false,
                    k,
                    m,
                    n,
                    &av[i * m * k..],
                    gi,
                    beta,
                    &mut gb[bi * k * n..(bi + 1) * k * n],
                );
            }
        }
        vec![ga, gb]
    }))
}

fn permute_data<T: Element>(data: &[T], shape: &[usize], axes: &[usize]) -> (Vec<T>, Vec<usize>) {
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let in_strides = strides_of(shape);
    let src: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let zeros = vec![0; shape.len()];
    let mut out = vec![T::zero(); data.len()];
    for_each_offset2(&out_shape, &src, &zeros, |o, i, _| out[o] = data[i]);
    (out, out_shape)
}

/// Reorders axes: output axis `i` is input axis `axes[i]`.
pub fn permute<T: Element>(x: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
    let nd = x.ndim();
    let mut seen = vec![false; nd];
    if axes.len() != nd || axes.iter().any(|&a| a >= nd || std::mem::replace(&mut seen[a], true)) {
        return Err(Error::shape("permute", x.shape(), axes));
    }
    let (data, out_shape) = permute_data(&x.data(), x.shape(), axes);
    let mut inverse = vec![0; nd];
    for (i, &a) in axes.iter().enumerate() {
        inverse[a] = i;
    }
    let gshape = out_shape.clone();
    Ok(Tensor::from_op(data, out_shape, &[x], move |g, _| {
        vec![Some(permute_data(g, &gshape, &inverse).0)]
    }))
}

pub fn transpose<T: Element>(x: &Tensor<T>, d0: usize, d1: usize) -> Result<Tensor<T>> {
    if d0 >= x.ndim() || d1 >= x.ndim() {
        return Err(Error::shape("transpose", x.shape(), &[d0, d1]));
    }
    let mut axes: Vec<usize> = (0..x.ndim()).collect();
    axes.swap(d0, d1);
    permute(x, &axes)
}

pub fn reshape<T: Element>(x: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    if numel(shape) != x.numel() {
        return Err(Error::shape("reshape", x.shape(), shape));
    }
    Ok(Tensor::from_op(x.to_vec(), shape.to_vec(), &[x], |g, _| {
        vec![Some(g.to_vec())]
    }))
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    (shape[..axis].iter().product(), shape[axis + 1..].iter().product())
}

/// Joins tensors along `axis`; all other axes must agree.
pub fn concat<T: Element>(xs: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::Param("concat of zero tensors".into()))?;
    let base = first.shape();
    if axis >= base.len() {
        return Err(Error::shape("concat", base, &[axis]));
    }
    for x in xs {
        let s = x.shape();
        if s.len() != base.len() || s.iter().zip(base).enumerate().any(|(i, (a, b))| i != axis && a != b) {
            return Err(Error::shape("concat", base, s));
        }
    }
    let lens: Vec<usize> = xs.iter().map(|x| x.shape()[axis]).collect();
    let total: usize = lens.iter().sum();
    let (outer, inner) = outer_inner(base, axis);
    let mut out_shape = base.to_vec();
    out_shape[axis] = total;
    let mut out = Vec::with_capacity(numel(&out_shape));
    let datas: Vec<_> = xs.iter().map(|x| x.data()).collect();
    for o in 0..outer {
        for (d, &len) in datas.iter().zip(&lens) {
            out.extend_from_slice(&d[o * len * inner..(o + 1) * len * inner]);
        }
    }
    drop(datas);
    Ok(Tensor::from_op(out, out_shape, xs, move |g, need| {
        let mut grads: Vec<Option<Vec<T>>> = need
            .iter()
            .zip(&lens)
            .map(|(&n, &len)| n.then(|| Vec::with_capacity(outer * len * inner)))
            .collect();
        let mut pos = 0;
        for _ in 0..outer {
            for (gi, &len) in grads.iter_mut().zip(&lens) {
                if let Some(v) = gi.as_mut() {
                    v.extend_from_slice(&g[pos..pos + len * inner]);
                }
                pos += len * inner;
            }
        }
        grads
    }))
}

/// Elements `start..end` along `axis`.
pub fn slice<T: Element>(x: &Tensor<T>, axis: usize, start: usize, end: usize) -> Result<Tensor<T>> {
    let shape = x.shape();
    if axis >= shape.len() || start >= end || end > shape[axis] {
        return Err(Error::shape("slice", shape, &[axis, start, end]));
    }
    let (outer, inner) = outer_inner(shape, axis);
    let len = shape[axis];
    let width = (end - start) * inner;
    let mut out = Vec::with_capacity(outer * width);
    {
        let d = x.data();
        for o in 0..outer {
            let base = o * len * inner + start * inner;
            out.extend_from_slice(&d[base..base + width]);
        }
    }
    let mut out_shape = shape.to_vec();
    out_shape[axis] = end - start;
    let n_in = x.numel();
    Ok(Tensor::from_op(out, out_shape, &[x], move |g, _| {
        let mut gx = vec![T::zero(); n_in];
        for o in 0..outer {
            let base = o * len * inner + start * inner;
            gx[base..base + width].copy_from_slice(&g[o * width..(o + 1) * width]);
        }
        vec![Some(gx)]
    }))
}

/// Sum of all elements, as a scalar tensor.
pub fn sum<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let s: T = x.data().iter().copied().sum();
    let n = x.numel();
    Tensor::from_op(vec![s], vec![], &[x], move |g, _| vec![Some(vec![g[0]; n])])
}

pub fn mean<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let n = T::from_usize(x.numel()).unwrap();
    scale(&sum(x), T::one() / n)
}

/// Sum along one axis.
pub fn sum_axis<T: Element>(x: &Tensor<T>, axis: usize, keepdim: bool) -> Result<Tensor<T>> {
    let shape = x.shape();
    if axis >= shape.len() {
        return Err(Error::shape("sum_axis", shape, &[axis]));
    }
    let (outer, inner) = outer_inner(shape, axis);
    let len = shape[axis];
    let mut out = vec![T::zero(); outer * inner];
    {
        let d = x.data();
        for o in 0..outer {
            for l in 0..len {
                let row = &d[(o * len + l) * inner..(o * len + l + 1) * inner];
                out[o * inner..(o + 1) * inner]
                    .iter_mut()
                    .zip(row)
                    .for_each(|(a, &b)| *a += b);
            }
        }
    }
    let mut out_shape = shape.to_vec();
    if keepdim {
        out_shape[axis] = 1;
    } else {
        out_shape.remove(axis);
    }
    Ok(Tensor::from_op(out, out_shape, &[x], move |g, _| {
        let mut gx = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            for _ in 0..len {
                gx.extend_from_slice(&g[o * inner..(o + 1) * inner]);
            }
        }
        vec![Some(gx)]
    }))
}

pub fn mean_axis<T: Element>(x: &Tensor<T>, axis: usize, keepdim: bool) -> Result<Tensor<T>> {
    let len = *x
        .shape()
        .get(axis)
        .ok_or_else(|| Error::shape("mean_axis", x.shape(), &[axis]))?;
    Ok(scale(
        &sum_axis(x, axis, keepdim)?,
        T::one() / T::from_usize(len).unwrap(),
    ))
}

/// Maximum along one axis; the gradient goes to the first maximal entry.
pub fn max_axis<T: Element>(x: &Tensor<T>, axis: usize, keepdim: bool) -> Result<Tensor<T>> {
    let shape = x.shape();
    if axis >= shape.len() || shape[axis] == 0 {
        return Err(Error::shape("max_axis", shape, &[axis]));
    }
    let (outer, inner) = outer_inner(shape, axis);
    let len = shape[axis];
    let mut out = vec![T::zero(); outer * inner];
    let mut arg = vec![0usize; outer * inner];
    {
        let d = x.data();
        for o in 0..outer {
            for i in 0..inner {
                let mut best = o * len * inner + i;
                for l in 1..len {
                    let idx = (o * len + l) * inner + i;
                    if d[idx] > d[best] {
                        best = idx;
                    }
                }
                out[o * inner + i] = d[best];
                arg[o * inner + i] = best;
            }
        }
    }
    let mut out_shape = shape.to_vec();
    if keepdim {
        out_shape[axis] = 1;
    } else {
        out_shape.remove(axis);
    }
    let n_in = x.numel();
    Ok(Tensor::from_op(out, out_shape, &[x], move |g, _| {
        let mut gx = vec![T::zero(); n_in];
        for (&a, &gv) in arg.iter().zip(g) {
            gx[a] += gv;
        }
        vec![Some(gx)]
    }))
}

/// Expands size-1 (or missing leading) axes to `shape`.
pub fn broadcast_to<T: Element>(x: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    match broadcast_shape(x.shape(), shape) {
        Some(s) if s == shape => {}
        _ => return Err(Error::shape("broadcast_to", x.shape(), shape)),
    }
    let src = broadcast_strides(x.shape(), shape);
    let zeros = vec![0; shape.len()];
    let mut out = vec![T::zero(); numel(shape)];
    {
        let d = x.data();
        for_each_offset2(shape, &src, &zeros, |o, i, _| out[o] = d[i]);
    }
    let out_shape = shape.to_vec();
    let in_shape = x.shape().to_vec();
    Ok(Tensor::from_op(out, shape.to_vec(), &[x], move |g, _| {
        vec![Some(reduce_to(g, &out_shape, &in_shape))]
    }))
}

/// Softmax along `axis`.
pub fn softmax<T: Element>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let shape = x.shape();
    if axis >= shape.len() {
        return Err(Error::shape("softmax", shape, &[axis]));
    }
    let (outer, inner) = outer_inner(shape, axis);
    let len = shape[axis];
    let mut y = x.to_vec();
    for o in 0..outer {
        for i in 0..inner {
            let at = |l: usize| (o * len + l) * inner + i;
            let mut mx = T::neg_infinity();
            for l in 0..len {
                mx = mx.max(y[at(l)]);
            }
            let mut total = T::zero();
            for l in 0..len {
                let e = (y[at(l)] - mx).exp();
                y[at(l)] = e;
                total += e;
            }
            for l in 0..len {
                y[at(l)] /= total;
            }
        }
    }
    let yc = y.clone();
    Ok(Tensor::from_op(y, shape.to_vec(), &[x], move |g, _| {
        let mut gx = vec![T::zero(); yc.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let mut dot = T::zero();
                for l in 0..len {
                    dot += g[at(l)] * yc[at(l)];
                }
                for l in 0..len {
                    gx[at(l)] = yc[at(l)] * (g[at(l)] - dot);
                }
            }
        }
        vec![Some(gx)]
    }))
}

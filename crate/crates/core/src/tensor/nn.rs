//! Neural-network primitives with hand-written backward passes.

use rand::Rng;

use super::element::gemm;
use super::{Element, Tensor};
use crate::error::{Error, Result};

/// `x · wᵀ + b` over the last axis. `w` is `[out, in]`.
pub fn linear<T: Element>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let xs = x.shape();
    let ws = w.shape();
    if xs.is_empty() || ws.len() != 2 || xs[xs.len() - 1] != ws[1] {
        return Err(Error::shape("linear", xs, ws));
    }
    let (n_out, n_in) = (ws[0], ws[1]);
    if let Some(b) = b {
        if b.shape() != [n_out] {
            return Err(Error::shape("linear bias", b.shape(), &[n_out]));
        }
    }
    let rows = x.numel() / n_in;
    let mut out = vec![T::zero(); rows * n_out];
    gemm(
        false,
        true,
        rows,
        n_in,
        n_out,
        &x.data(),
        &w.data(),
        T::zero(),
        &mut out,
    );
    if let Some(b) = b {
        let bv = b.data();
        for row in out.chunks_mut(n_out) {
            row.iter_mut().zip(bv.iter()).for_each(|(o, &bb)| *o += bb);
        }
    }
    let mut out_shape = xs.to_vec();
    *out_shape.last_mut().unwrap() = n_out;

    let (xc, wc) = (x.clone(), w.clone());
    let parents: Vec<&Tensor<T>> = match b {
        Some(b) => vec![x, w, b],
        None => vec![x, w],
    };
    let has_bias = b.is_some();
    Ok(Tensor::from_op(out, out_shape, &parents, move |g, need| {
        let mut grads = Vec::with_capacity(3);
        grads.push(need[0].then(|| {
            let mut gx = vec![T::zero(); rows * n_in];
            gemm(false, false, rows, n_out, n_in, g, &wc.data(), T::zero(), &mut gx);
            gx
        }));
        grads.push(need[1].then(|| {
            let mut gw = vec![T::zero(); n_out * n_in];
            gemm(true, false, n_out, rows, n_in, g, &xc.data(), T::zero(), &mut gw);
            gw
        }));
        if has_bias {
            grads.push(need[2].then(|| {
                let mut gb = vec![T::zero(); n_out];
                for row in g.chunks(n_out) {
                    gb.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
                }
                gb
            }));
        }
        grads
    }))
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    h_out: usize,
    w_out: usize,
}

impl ConvGeom {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.sh == 1 && self.sw == 1 && self.ph == 0 && self.pw == 0
    }

    fn k(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.h_out * self.w_out
    }
}

/// Output columns `ox` whose input column `ox * stride + k - pad` lies in
/// `0..w`.
fn valid_range(w: usize, w_out: usize, stride: usize, k: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if w + pad > k {
        ((w + pad - k - 1) / stride + 1).min(w_out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

fn im2col<T: Element>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let p = g.p();
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                let (lo, hi) = valid_range(g.w, g.w_out, g.sw, kj, g.pw);
                for oy in 0..g.h_out {
                    let iy = (oy * g.sh + ki) as isize - g.ph as isize;
                    let seg = &mut dst[oy * g.w_out..(oy + 1) * g.w_out];
                    if iy < 0 || iy >= g.h as isize {
                        seg.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    seg[..lo].fill(T::zero());
                    seg[hi..].fill(T::zero());
                    let base = lo * g.sw + kj - g.pw;
                    if g.sw == 1 {
                        seg[lo..hi].copy_from_slice(&src[base..base + hi - lo]);
                    } else {
                        for (v, s) in seg[lo..hi].iter_mut().zip(src[base..].iter().step_by(g.sw)) {
                            *v = *s;
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Element>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let p = g.p();
    for c in 0..g.c_in {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                let (lo, hi) = valid_range(g.w, g.w_out, g.sw, kj, g.pw);
                if lo >= hi {
                    continue;
                }
                for oy in 0..g.h_out {
                    let iy = (oy * g.sh + ki) as isize - g.ph as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let seg = &src[oy * g.w_out + lo..oy * g.w_out + hi];
                    let base = lo * g.sw + kj - g.pw;
                    if g.sw == 1 {
                        for (d, s) in dst[base..base + hi - lo].iter_mut().zip(seg) {
                            *d += *s;
                        }
                    } else {
                        for (d, s) in dst[base..].iter_mut().step_by(g.sw).zip(seg) {
                            *d += *s;
                        }
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation. `x` is `[B, C_in, H, W]`, `weight` is
/// `[C_out, C_in, kh, kw]`.
pub fn conv2d<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<Tensor<T>> {
    let xs = x.shape();
    let ws = weight.shape();
    if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || stride.0 == 0 || stride.1 == 0 {
        return Err(Error::shape("conv2d", xs, ws));
    }
    let (b, c_in, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (c_out, kh, kw) = (ws[0], ws[2], ws[3]);
    if h + 2 * padding.0 < kh || w + 2 * padding.1 < kw {
        return Err(Error::shape("conv2d (kernel larger than padded input)", xs, ws));
    }
    if let Some(bb) = bias {
        if bb.shape() != [c_out] {
            return Err(Error::shape("conv2d bias", bb.shape(), &[c_out]));
        }
    }
    let g = ConvGeom {
        c_in,
        h,
        w,
        kh,
        kw,
        sh: stride.0,
        sw: stride.1,
        ph: padding.0,
        pw: padding.1,
        h_out: (h + 2 * padding.0 - kh) / stride.0 + 1,
        w_out: (w + 2 * padding.1 - kw) / stride.1 + 1,
    };
    let (k, p) = (g.k(), g.p());
    let in_plane = c_in * h * w;
    let mut out = vec![T::zero(); b * c_out * p];
    {
        let xv = x.data();
        let wv = weight.data();
        let mut cols = if g.is_pointwise() {
            Vec::new()
        } else {
            vec![T::zero(); k * p]
        };
        for bi in 0..b {
            let xb = &xv[bi * in_plane..(bi + 1) * in_plane];
            let src: &[T] = if g.is_pointwise() {
                xb
            } else {
                im2col(xb, &g, &mut cols);
                &cols
            };
            gemm(
                false,
                false,
                c_out,
                k,
                p,
                &wv,
                src,
                T::zero(),
                &mut out[bi * c_out * p..(bi + 1) * c_out * p],
            );
        }
        if let Some(bb) = bias {
            let bv = bb.data();
            for plane in out.chunks_mut(p).enumerate() {
                let (idx, plane) = plane;
                let bval = bv[idx % c_out];
                plane.iter_mut().for_each(|v| *v += bval);
            }
        }
    }

    let (xc, wc) = (x.clone(), weight.clone());
    let parents: Vec<&Tensor<T>> = match bias {
        Some(bb) => vec![x, weight, bb],
        None => vec![x, weight],
    };
    let has_bias = bias.is_some();
    Ok(Tensor::from_op(
        out,
        vec![b, c_out, g.h_out, g.w_out],
        &parents,
        move |gout, need| {
            let xv = xc.data();
            let wv = wc.data();
            let mut gx = need[0].then(|| vec![T::zero(); b * in_plane]);
            let mut gw = need[1].then(|| vec![T::zero(); c_out * k]);
            let mut cols = if g.is_pointwise() {
                Vec::new()
            } else {
                vec![T::zero(); k * p]
            };
            let mut dcols = if gx.is_some() && !g.is_pointwise() {
                vec![T::zero(); k * p]
            } else {
                Vec::new()
            };
            for bi in 0..b {
                let gb = &gout[bi * c_out * p..(bi + 1) * c_out * p];
                let xb = &xv[bi * in_plane..(bi + 1) * in_plane];
                if let Some(gw) = gw.as_mut() {
                    let src: &[T] = if g.is_pointwise() {
                        xb
                    } else {
                        im2col(xb, &g, &mut cols);
                        &cols
                    };
                    gemm(false, true, c_out, p, k, gb, src, T::one(), gw);
                }
                if let Some(gx) = gx.as_mut() {
                    let dst = &mut gx[bi * in_plane..(bi + 1) * in_plane];
                    if g.is_pointwise() {
                        gemm(true, false, k, c_out, p, &wv, gb, T::zero(), dst);
                    } else {
                        gemm(true, false, k, c_out, p, &wv, gb, T::zero(), &mut dcols);
                        col2im(&dcols, &g, dst);
                    }
                }
            }
            let mut grads = vec![gx, gw];
            if has_bias {
                grads.push(need[2].then(|| {
                    let mut gbias = vec![T::zero(); c_out];
                    for (idx, plane) in gout.chunks(p).enumerate() {
                        gbias[idx % c_out] += plane.iter().copied().sum::<T>();
                    }
                    gbias
                }));
            }
            grads
        },
    ))
}

/// Max pooling over `[B, C, H, W]` without padding. Ties route the
/// gradient to the first maximal element in row-major window order.
pub fn max_pool2d<T: Element>(x: &Tensor<T>, kernel: (usize, usize), stride: (usize, usize)) -> Result<Tensor<T>> {
    let xs = x.shape();
    if xs.len() != 4 || kernel.0 == 0 || kernel.1 == 0 || stride.0 == 0 || stride.1 == 0 {
        return Err(Error::shape("max_pool2d", xs, &[kernel.0, kernel.1]));
    }
    let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    if h < kernel.0 || w < kernel.1 {
        return Err(Error::shape(
            "max_pool2d (window larger than input)",
            xs,
            &[kernel.0, kernel.1],
        ));
    }
    let h_out = (h - kernel.0) / stride.0 + 1;
    let w_out = (w - kernel.1) / stride.1 + 1;
    let planes = b * c;
    let mut out = vec![T::zero(); planes * h_out * w_out];
    let mut arg = vec![0usize; out.len()];
    {
        let xv = x.data();
        for pl in 0..planes {
            let base = pl * h * w;
            for oy in 0..h_out {
                for ox in 0..w_out {
                    let mut best = base + oy * stride.0 * w + ox * stride.1;
                    for ky in 0..kernel.0 {
                        for kx in 0..kernel.1 {
                            let idx = base + (oy * stride.0 + ky) * w + ox * stride.1 + kx;
                            if xv[idx] > xv[best] {
                                best = idx;
                            }
                        }
                    }
                    let o = (pl * h_out + oy) * w_out + ox;
                    out[o] = xv[best];
                    arg[o] = best;
                }
            }
        }
    }
    let n_in = x.numel();
    Ok(Tensor::from_op(out, vec![b, c, h_out, w_out], &[x], move |g, _| {
        let mut gx = vec![T::zero(); n_in];
        for (&a, &gv) in arg.iter().zip(g) {
            gx[a] += gv;
        }
        vec![Some(gx)]
    }))
}

/// Batch normalization over `[B, C, H, W]` per channel.
///
/// In training mode batch statistics are used and the running buffers
/// are updated in place (`momentum` weights the new batch); in eval mode
/// the running buffers are used. Buffers never receive gradients.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm2d<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    training: bool,
    momentum: T,
    eps: T,
) -> Result<Tensor<T>> {
    let xs = x.shape();
    if xs.len() != 4 {
        return Err(Error::shape("batch_norm2d", xs, gamma.shape()));
    }
    let (b, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
    for t in [gamma, beta, running_mean, running_var] {
        if t.shape() != [c] {
            return Err(Error::shape("batch_norm2d", xs, t.shape()));
        }
    }
    let count = b * hw;
    let n = T::from_usize(count).unwrap();
    let xv = x.data();
    let (mean, var): (Vec<T>, Vec<T>) = if training {
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut s = T::zero();
            for bi in 0..b {
                s += xv[(bi * c + ch) * hw..(bi * c + ch + 1) * hw]
                    .iter()
                    .copied()
                    .sum::<T>();
            }
            let m = s / n;
            let mut v = T::zero();
            for bi in 0..b {
                for &e in &xv[(bi * c + ch) * hw..(bi * c + ch + 1) * hw] {
                    v += (e - m) * (e - m);
                }
            }
            mean[ch] = m;
            var[ch] = v / n;
        }
        {
            let mut rm = running_mean.data_mut();
            let mut rv = running_var.data_mut();
            let unbias = if count > 1 { n / (n - T::one()) } else { T::one() };
            for ch in 0..c {
                rm[ch] = (T::one() - momentum) * rm[ch] + momentum * mean[ch];
                rv[ch] = (T::one() - momentum) * rv[ch] + momentum * var[ch] * unbias;
            }
        }
        (mean, var)
    } else {
        (running_mean.to_vec(), running_var.to_vec())
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let gv = gamma.data();
    let bv = beta.data();
    let mut xhat = vec![T::zero(); xv.len()];
    let mut out = vec![T::zero(); xv.len()];
    for bi in 0..b {
        for ch in 0..c {
            let r = (bi * c + ch) * hw..(bi * c + ch + 1) * hw;
            for i in r {
                let h = (xv[i] - mean[ch]) * inv_std[ch];
                xhat[i] = h;
                out[i] = gv[ch] * h + bv[ch];
            }
        }
    }
    drop((xv, gv, bv));

    let gc = gamma.clone();
    Ok(Tensor::from_op(out, xs.to_vec(), &[x, gamma, beta], move |g, need| {
        let gam = gc.data();
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for bi in 0..b {
            for ch in 0..c {
                for i in (bi * c + ch) * hw..(bi * c + ch + 1) * hw {
                    dgamma[ch] += g[i] * xhat[i];
                    dbeta[ch] += g[i];
                }
            }
        }
        let gx = need[0].then(|| {
            let mut gx = vec![T::zero(); g.len()];
            for bi in 0..b {
                for ch in 0..c {
                    for i in (bi * c + ch) * hw..(bi * c + ch + 1) * hw {
                        gx[i] = if training {
                            // dxhat = g·γ; dx = invstd/N · (N·dxhat − Σdxhat − xhat·Σ(dxhat·xhat))
                            gam[ch] * inv_std[ch] / n * (n * g[i] - dbeta[ch] - xhat[i] * dgamma[ch])
                        } else {
                            g[i] * gam[ch] * inv_std[ch]
                        };
                    }
                }
            }
            gx
        });
        vec![gx, need[1].then_some(dgamma), need[2].then_some(dbeta)]
    }))
}

/// Layer normalization over the last axis with affine `gamma`, `beta`.
pub fn layer_norm<T: Element>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    let xs = x.shape();
    let d = *xs.last().ok_or_else(|| Error::shape("layer_norm", xs, gamma.shape()))?;
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(Error::shape("layer_norm", xs, gamma.shape()));
    }
    let n = T::from_usize(d).unwrap();
    let rows = x.numel() / d;
    let xv = x.data();
    let gv = gamma.data();
    let bv = beta.data();
    let mut xhat = vec![T::zero(); xv.len()];
    let mut inv_std = vec![T::zero(); rows];
    let mut out = vec![T::zero(); xv.len()];
    for r in 0..rows {
        let row = &xv[r * d..(r + 1) * d];
        let m = row.iter().copied().sum::<T>() / n;
        let v = row.iter().map(|&e| (e - m) * (e - m)).sum::<T>() / n;
        let is = T::one() / (v + eps).sqrt();
        inv_std[r] = is;
        for j in 0..d {
            let h = (row[j] - m) * is;
            xhat[r * d + j] = h;
            out[r * d + j] = gv[j] * h + bv[j];
        }
    }
    drop((xv, gv, bv));
    let gc = gamma.clone();
    Ok(Tensor::from_op(out, xs.to_vec(), &[x, gamma, beta], move |g, need| {
        let gam = gc.data();
        let mut dgamma = vec![T::zero(); d];
        let mut dbeta = vec![T::zero(); d];
        for r in 0..rows {
            for j in 0..d {
                dgamma[j] += g[r * d + j] * xhat[r * d + j];
                dbeta[j] += g[r * d + j];
            }
        }
        let gx = need[0].then(|| {
            let mut gx = vec![T::zero(); g.len()];
            for r in 0..rows {
                let (mut s1, mut s2) = (T::zero(), T::zero());
                for j in 0..d {
                    let dh = g[r * d + j] * gam[j];
                    s1 += dh;
                    s2 += dh * xhat[r * d + j];
                }
                for j in 0..d {
                    let dh = g[r * d + j] * gam[j];
                    gx[r * d + j] = inv_std[r] / n * (n * dh - s1 - xhat[r * d + j] * s2);
                }
            }
            gx
        });
        vec![gx, need[1].then_some(dgamma), need[2].then_some(dbeta)]
    }))
}

/// Inverted dropout; identity when not training or `p == 0`.
pub fn dropout<T: Element>(x: &Tensor<T>, p: f64, training: bool, rng: &mut impl Rng) -> Result<Tensor<T>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Param(format!("dropout probability {p} outside [0, 1)")));
    }
    if !training || p == 0.0 {
        return Ok(x.clone());
    }
    let keep = T::from_f64_lossy(1.0 / (1.0 - p));
    let mask: Vec<T> = (0..x.numel())
        .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
        .collect();
    let out: Vec<T> = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Ok(Tensor::from_op(out, x.shape().to_vec(), &[x], move |g, _| {
        vec![Some(g.iter().zip(&mask).map(|(&g, &m)| g * m).collect())]
    }))
}

/// Rows of `table` (`[n, d]`) selected by `indices`, giving `[len, d]`.
pub fn embedding<T: Element>(table: &Tensor<T>, indices: &[usize]) -> Result<Tensor<T>> {
    let ts = table.shape();
    if ts.len() != 2 {
        return Err(Error::shape("embedding", ts, &[indices.len()]));
    }
    let (rows, d) = (ts[0], ts[1]);
    if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
        return Err(Error::Param(format!(
            "embedding index {bad} out of range for {rows} rows"
        )));
    }
    let tv = table.data();
    let mut out = Vec::with_capacity(indices.len() * d);
    for &i in indices {
        out.extend_from_slice(&tv[i * d..(i + 1) * d]);
    }
    drop(tv);
    let idx = indices.to_vec();
    Ok(Tensor::from_op(out, vec![indices.len(), d], &[table], move |g, _| {
        let mut gt = vec![T::zero(); rows * d];
        for (k, &i) in idx.iter().enumerate() {
            gt[i * d..(i + 1) * d]
                .iter_mut()
                .zip(&g[k * d..(k + 1) * d])
                .for_each(|(a, &b)| *a += b);
        }
        vec![Some(gt)]
    }))
}

/// Clamp applied to predictions inside the binary cross entropy.
pub const BCE_CLAMP: f64 = 1e-7;

/// Mean binary cross entropy between probabilities and (soft) targets.
pub fn bce_loss<T: Element>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("bce_loss", pred.shape(), target.shape()));
    }
    let lo = T::from_f64_lossy(BCE_CLAMP);
    let hi = T::one() - lo;
    let n = T::from_usize(pred.numel().max(1)).unwrap();
    let pv = pred.data();
    let tv = target.data();
    let mut total = T::zero();
    for (&p, &t) in pv.iter().zip(tv.iter()) {
        // `max`/`min` would silently replace NaN with a bound.
        let p = if p.is_nan() { p } else { p.max(lo).min(hi) };
        total -= t * p.ln() + (T::one() - t) * (T::one() - p).ln();
    }
    drop((pv, tv));
    let (pc, tc) = (pred.clone(), target.clone());
    Ok(Tensor::from_op(
        vec![total / n],
        vec![],
        &[pred, target],
        move |g, need| {
            let pv = pc.data();
            let tv = tc.data();
            let g0 = g[0] / n;
            let gp = need[0].then(|| {
                pv.iter()
                    .zip(tv.iter())
                    .map(|(&p, &t)| {
                        if p < lo || p > hi {
                            T::zero()
                        } else {
                            g0 * (p - t) / (p * (T::one() - p))
                        }
                    })
                    .collect()
            });
            let gt = need[1].then(|| {
                pv.iter()
                    .map(|&p| {
                        let p = p.max(lo).min(hi);
                        g0 * ((T::one() - p).ln() - p.ln())
                    })
                    .collect()
            });
            vec![gp, gt]
        },
    ))
}

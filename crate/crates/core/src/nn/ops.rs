//! Layer primitives and their hand-derived backward passes.

use serde::{Deserialize, Serialize};

use super::tensor::{gemm, Scalar, Tensor4};
use crate::error::{invalid, shape, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub k: usize,
    pub cin: usize,
    pub cout: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(x_shape: [usize; 4], k: usize, cin: usize, cout: usize, padding: Padding) -> Result<Self> {
        let [_, h, w, c] = x_shape;
        if c != cin {
            return Err(shape(format!("kernel expects {cin} input channels, tensor has {c}")));
        }
        if k == 0 || cout == 0 {
            return Err(invalid("kernel size and output channels must be positive"));
        }
        let (pad, ho, wo) = match padding {
            Padding::Same => {
                if k % 2 == 0 {
                    return Err(invalid(format!("same padding needs an odd kernel, got {k}")));
                }
                ((k - 1) / 2, h, w)
            }
            Padding::Valid => {
                if h < k || w < k {
                    return Err(shape(format!("{h}x{w} input is smaller than a {k}x{k} kernel")));
                }
                (0, h - k + 1, w - k + 1)
            }
        };
        Ok(Self { k, cin, cout, pad, ho, wo })
    }

    fn patch(&self) -> usize {
        self.k * self.k * self.cin
    }
}

/// Zero-pads the spatial dims of an NHWC tensor by `pad` on every side.
fn pad_spatial<T: Scalar>(x: &Tensor4<T>, pad: usize) -> (Vec<T>, usize, usize) {
    let [n, h, w, c] = x.shape;
    if pad == 0 {
        return (x.data.clone(), h, w);
    }
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![T::zero(); n * hp * wp * c];
    for b in 0..n {
        for y in 0..h {
            let src = ((b * h + y) * w) * c;
            let dst = ((b * hp + y + pad) * wp + pad) * c;
            out[dst..dst + w * c].copy_from_slice(&x.data[src..src + w * c]);
        }
    }
    (out, hp, wp)
}

#[derive(Clone, Copy)]
struct Dims {
    n: usize,
    hp: usize,
    wp: usize,
    cin: usize,
    k: usize,
    ho: usize,
    wo: usize,
    cout: usize,
}

/// Output channels `[c0, c0 + C)` of `P` adjacent pixels starting at `ox`.
#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn fwd_tile<T: Scalar, const C: usize, const P: usize>(
    xpad: &[T],
    d: &Dims,
    w: &[T],
    bias: Option<&[T]>,
    c0: usize,
    out: &mut [T],
    b: usize,
    oy: usize,
    ox: usize,
) {
    let mut acc = [[T::zero(); C]; P];
    if let Some(bias) = bias {
        for a in acc.iter_mut() {
            a.copy_from_slice(&bias[c0..c0 + C]);
        }
    }
    for ky in 0..d.k {
        let row = ((b * d.hp + oy + ky) * d.wp) * d.cin;
        for kx in 0..d.k {
            let wk = &w[(ky * d.k + kx) * d.cin * d.cout..(ky * d.k + kx + 1) * d.cin * d.cout];
            let xs = row + (ox + kx) * d.cin;
            let xb = &xpad[xs..xs + P * d.cin];
            for ci in 0..d.cin {
                let wr: &[T; C] = wk[ci * d.cout + c0..ci * d.cout + c0 + C].try_into().expect("C values");
                for p in 0..P {
                    let xv = xb[p * d.cin + ci];
                    for c in 0..C {
                        acc[p][c] += xv * wr[c];
                    }
                }
            }
        }
    }
    for (p, a) in acc.iter().enumerate() {
        let o = ((b * d.ho + oy) * d.wo + ox + p) * d.cout + c0;
        out[o..o + C].copy_from_slice(a);
    }
}

fn fwd_block<T: Scalar, const C: usize, const P: usize>(
    xpad: &[T],
    d: &Dims,
    w: &[T],
    bias: Option<&[T]>,
    c0: usize,
    out: &mut [T],
) {
    for b in 0..d.n {
        for oy in 0..d.ho {
            let mut ox = 0;
            while ox + P <= d.wo {
                fwd_tile::<T, C, P>(xpad, d, w, bias, c0, out, b, oy, ox);
                ox += P;
            }
            while ox < d.wo {
                fwd_tile::<T, C, 1>(xpad, d, w, bias, c0, out, b, oy, ox);
                ox += 1;
            }
        }
    }
}

/// Valid correlation of an already padded input; output channels are
/// processed in register-sized blocks.
fn conv_padded<T: Scalar>(xpad: &[T], d: &Dims, w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let mut out = vec![T::zero(); d.n * d.ho * d.wo * d.cout];
    let mut c0 = 0;
    while c0 < d.cout {
        let left = d.cout - c0;
        let step = match left {
            12.. if left % 12 == 0 => {
                fwd_block::<T, 12, 4>(xpad, d, w, bias, c0, &mut out);
                12
            }
            8.. => {
                fwd_block::<T, 8, 4>(xpad, d, w, bias, c0, &mut out);
                8
            }
            4.. => {
                fwd_block::<T, 4, 8>(xpad, d, w, bias, c0, &mut out);
                4
            }
            2.. => {
                fwd_block::<T, 2, 8>(xpad, d, w, bias, c0, &mut out);
                2
            }
            _ => {
                fwd_block::<T, 1, 8>(xpad, d, w, bias, c0, &mut out);
                1
            }
        };
        c0 += step;
    }
    out
}

fn dw_block<T: Scalar, const C: usize>(xpad: &[T], d: &Dims, dy: &[T], c0: usize, dw: &mut [T]) {
    for b in 0..d.n {
        for oy in 0..d.ho {
            for ox in 0..d.wo {
                let o = ((b * d.ho + oy) * d.wo + ox) * d.cout + c0;
                let g: &[T; C] = dy[o..o + C].try_into().expect("C values");
                if g.iter().all(|v| *v == T::zero()) {
                    continue;
                }
                for ky in 0..d.k {
                    let row = ((b * d.hp + oy + ky) * d.wp + ox) * d.cin;
                    for kx in 0..d.k {
                        let xb = &xpad[row + kx * d.cin..row + (kx + 1) * d.cin];
                        let wk = (ky * d.k + kx) * d.cin * d.cout;
                        for (ci, &xv) in xb.iter().enumerate() {
                            let r = wk + ci * d.cout + c0;
                            let dr: &mut [T; C] = (&mut dw[r..r + C]).try_into().expect("C values");
                            for c in 0..C {
                                dr[c] += xv * g[c];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_dw<T: Scalar>(xpad: &[T], d: &Dims, dy: &[T]) -> Vec<T> {
    let mut dw = vec![T::zero(); d.k * d.k * d.cin * d.cout];
    let mut c0 = 0;
    while c0 < d.cout {
        let left = d.cout - c0;
        let step = match left {
            8.. => {
                dw_block::<T, 8>(xpad, d, dy, c0, &mut dw);
                8
            }
            4.. => {
                dw_block::<T, 4>(xpad, d, dy, c0, &mut dw);
                4
            }
            2.. => {
                dw_block::<T, 2>(xpad, d, dy, c0, &mut dw);
                2
            }
            _ => {
                dw_block::<T, 1>(xpad, d, dy, c0, &mut dw);
                1
            }
        };
        c0 += step;
    }
    dw
}

/// 2-D convolution (cross-correlation), stride 1. `kernel` is laid out
/// `[k][k][cin][cout]`, `bias` has `cout` entries.
pub fn conv2d<T: Scalar>(
    x: &Tensor4<T>,
    kernel: &[T],
    k: usize,
    cout: usize,
    bias: Option<&[T]>,
    padding: Padding,
) -> Result<Tensor4<T>> {
    let g = ConvGeom::new(x.shape, k, x.channels(), cout, padding)?;
    if kernel.len() != g.patch() * cout {
        return Err(shape(format!("kernel has {} values, expected {}", kernel.len(), g.patch() * cout)));
    }
    if bias.is_some_and(|b| b.len() != cout) {
        return Err(shape("bias length differs from output channels"));
    }
    Ok(conv2d_geom(x, kernel, bias, &g))
}

pub(crate) fn conv2d_geom<T: Scalar>(x: &Tensor4<T>, kernel: &[T], bias: Option<&[T]>, g: &ConvGeom) -> Tensor4<T> {
    let (xpad, hp, wp) = pad_spatial(x, g.pad);
    let d = Dims { n: x.batch(), hp, wp, cin: g.cin, k: g.k, ho: g.ho, wo: g.wo, cout: g.cout };
    Tensor4 { shape: [x.batch(), g.ho, g.wo, g.cout], data: conv_padded(&xpad, &d, kernel, bias) }
}

/// Returns `(dx, dkernel, dbias)` for upstream gradient `dy`. `dx` is only
/// computed when `need_dx` is set.
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &Tensor4<T>,
    kernel: &[T],
    dy: &Tensor4<T>,
    g: &ConvGeom,
    need_dx: bool,
) -> (Option<Tensor4<T>>, Vec<T>, Vec<T>) {
    let mut db = vec![0.0f64; g.cout];
    for r in dy.data.chunks_exact(g.cout) {
        for (a, v) in db.iter_mut().zip(r) {
            *a += v.as_f64();
        }
    }
    let db = db.into_iter().map(T::of).collect();
    let (xpad, hp, wp) = pad_spatial(x, g.pad);
    let d = Dims { n: x.batch(), hp, wp, cin: g.cin, k: g.k, ho: g.ho, wo: g.wo, cout: g.cout };
    let dk = conv_dw(&xpad, &d, &dy.data);
    let dx = need_dx.then(|| {
        // Full correlation of dy with the spatially flipped, channel-transposed kernel.
        let k = g.k;
        let mut flipped = vec![T::zero(); kernel.len()];
        for ky in 0..k {
            for kx in 0..k {
                for ci in 0..g.cin {
                    for co in 0..g.cout {
                        flipped[((ky * k + kx) * g.cout + co) * g.cin + ci] =
                            kernel[(((k - 1 - ky) * k + (k - 1 - kx)) * g.cin + ci) * g.cout + co];
                    }
                }
            }
        }
        let [n, h, w, _] = x.shape;
        let back_pad = k - 1 - g.pad;
        let (dypad, hp, wp) = pad_spatial(dy, back_pad);
        let d = Dims { n, hp, wp, cin: g.cout, k, ho: h, wo: w, cout: g.cin };
        Tensor4 { shape: x.shape, data: conv_padded(&dypad, &d, &flipped, None) }
    });
    (dx, dk, db)
}

pub fn relu<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    relu_owned(x.clone())
}

pub(crate) fn relu_owned<T: Scalar>(mut x: Tensor4<T>) -> Tensor4<T> {
    x.data.iter_mut().for_each(|v| *v = v.max(T::zero()));
    x
}

/// Gradient through a ReLU given its output.
pub(crate) fn relu_backward<T: Scalar>(y: &Tensor4<T>, dy: &mut Tensor4<T>) {
    for (d, &o) in dy.data.iter_mut().zip(&y.data) {
        if o <= T::zero() {
            *d = T::zero();
        }
    }
}

/// 2x2 max pooling, stride 2, odd trailing rows/columns dropped. Also returns
/// the flat input index of each selected maximum.
pub fn maxpool2<T: Scalar>(x: &Tensor4<T>) -> Result<(Tensor4<T>, Vec<u32>)> {
    let [n, h, w, c] = x.shape;
    if h < 2 || w < 2 {
        return Err(shape(format!("{h}x{w} input is too small for 2x2 pooling")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * ho * wo * c);
    let mut arg = Vec::with_capacity(out.capacity());
    for b in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                for ch in 0..c {
                    let mut best = usize::MAX;
                    let mut best_v = T::neg_infinity();
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let i = ((b * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                        if x.data[i] > best_v {
                            best_v = x.data[i];
                            best = i;
                        }
                    }
                    out.push(best_v);
                    arg.push(best as u32);
                }
            }
        }
    }
    Ok((Tensor4 { shape: [n, ho, wo, c], data: out }, arg))
}

pub(crate) fn maxpool2_backward<T: Scalar>(x_shape: [usize; 4], arg: &[u32], dy: &Tensor4<T>) -> Tensor4<T> {
    let mut dx = Tensor4::zeros(x_shape);
    for (&i, &d) in arg.iter().zip(&dy.data) {
        dx.data[i as usize] += d;
    }
    dx
}

pub const BN_EPS: f64 = 1e-5;

/// Per-channel `(mean, biased variance)` over batch and spatial positions.
pub fn channel_stats<T: Scalar>(x: &Tensor4<T>) -> (Vec<f64>, Vec<f64>) {
    let c = x.channels();
    let count = (x.data.len() / c) as f64;
    let mut mean = vec![0.0; c];
    for px in x.data.chunks_exact(c) {
        for (m, v) in mean.iter_mut().zip(px) {
            *m += v.as_f64();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0; c];
    for px in x.data.chunks_exact(c) {
        for ((s, v), m) in var.iter_mut().zip(px).zip(&mean) {
            let d = v.as_f64() - m;
            *s += d * d;
        }
    }
    var.iter_mut().for_each(|s| *s /= count);
    (mean, var)
}

/// `gamma * (x - mean) / sqrt(var + eps) + beta` with the given statistics.
pub fn batchnorm<T: Scalar>(x: &Tensor4<T>, gamma: &[T], beta: &[T], mean: &[f64], var: &[f64]) -> Tensor4<T> {
    batchnorm_owned(x.clone(), gamma, beta, mean, var)
}

pub(crate) fn batchnorm_owned<T: Scalar>(
    mut x: Tensor4<T>,
    gamma: &[T],
    beta: &[T],
    mean: &[f64],
    var: &[f64],
) -> Tensor4<T> {
    let c = x.channels();
    let scale: Vec<f64> = (0..c).map(|i| gamma[i].as_f64() / (var[i] + BN_EPS).sqrt()).collect();
    let shift: Vec<f64> = (0..c).map(|i| beta[i].as_f64() - mean[i] * scale[i]).collect();
    let (scale, shift): (Vec<T>, Vec<T>) = (scale.into_iter().map(T::of).collect(), shift.into_iter().map(T::of).collect());
    for px in x.data.chunks_exact_mut(c) {
        for ((v, s), t) in px.iter_mut().zip(&scale).zip(&shift) {
            *v = *v * *s + *t;
        }
    }
    x
}

pub(crate) struct BnCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<f64>,
}

/// Training-mode batch norm. Returns the output, the cache for the backward
/// pass and the batch statistics.
pub(crate) fn batchnorm_train<T: Scalar>(
    x: &Tensor4<T>,
    gamma: &[T],
    beta: &[T],
) -> (Tensor4<T>, BnCache<T>, Vec<f64>, Vec<f64>) {
    let c = x.channels();
    let (mean, var) = channel_stats(x);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = x.data.clone();
    let mut y = x.data.clone();
    for (hp, yp) in xhat.chunks_exact_mut(c).zip(y.chunks_exact_mut(c)) {
        for i in 0..c {
            let h = (hp[i].as_f64() - mean[i]) * inv_std[i];
            hp[i] = T::of(h);
            yp[i] = T::of(h * gamma[i].as_f64() + beta[i].as_f64());
        }
    }
    (Tensor4 { shape: x.shape, data: y }, BnCache { xhat, inv_std }, mean, var)
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn batchnorm_backward<T: Scalar>(
    cache: &BnCache<T>,
    gamma: &[T],
    dy: &Tensor4<T>,
) -> (Tensor4<T>, Vec<T>, Vec<T>) {
    let c = dy.channels();
    let count = (dy.data.len() / c) as f64;
    let mut dgamma = vec![0.0f64; c];
    let mut dbeta = vec![0.0f64; c];
    for (d, h) in dy.data.chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
        for i in 0..c {
            dbeta[i] += d[i].as_f64();
            dgamma[i] += d[i].as_f64() * h[i].as_f64();
        }
    }
    let mut dx = dy.data.clone();
    for (d, h) in dx.chunks_exact_mut(c).zip(cache.xhat.chunks_exact(c)) {
        for i in 0..c {
            let g = gamma[i].as_f64();
            let v = g * cache.inv_std[i] / count
                * (count * d[i].as_f64() - dbeta[i] - h[i].as_f64() * dgamma[i]);
            d[i] = T::of(v);
        }
    }
    (
        Tensor4 { shape: dy.shape, data: dx },
        dgamma.into_iter().map(T::of).collect(),
        dbeta.into_iter().map(T::of).collect(),
    )
}

/// `y = x W + b` on the flattened batch items; `w` is `[inp][out]`.
pub fn dense<T: Scalar>(x: &Tensor4<T>, w: &[T], b: &[T], out: usize) -> Result<Tensor4<T>> {
    let n = x.batch();
    let inp = x.item_len();
    if w.len() != inp * out || b.len() != out {
        return Err(shape(format!("dense layer expects {} inputs, got {inp}", w.len() / out.max(1))));
    }
    let mut y = Vec::with_capacity(n * out);
    for _ in 0..n {
        y.extend_from_slice(b);
    }
    gemm(n, inp, out, &x.data, false, w, false, T::one(), &mut y);
    Ok(Tensor4 { shape: [n, 1, 1, out], data: y })
}

/// Returns `(dx, dw, db)`; `dx` takes the shape of `x`.
pub(crate) fn dense_backward<T: Scalar>(x: &Tensor4<T>, w: &[T], dy: &Tensor4<T>) -> (Tensor4<T>, Vec<T>, Vec<T>) {
    let n = x.batch();
    let inp = x.item_len();
    let out = dy.channels();
    let mut dw = vec![T::zero(); inp * out];
    gemm(inp, n, out, &x.data, true, &dy.data, false, T::zero(), &mut dw);
    let mut dx = vec![T::zero(); n * inp];
    gemm(n, out, inp, &dy.data, false, w, true, T::zero(), &mut dx);
    let mut db = vec![0.0f64; out];
    for r in dy.data.chunks_exact(out) {
        for (a, v) in db.iter_mut().zip(r) {
            *a += v.as_f64();
        }
    }
    (Tensor4 { shape: x.shape, data: dx }, dw, db.into_iter().map(T::of).collect())
}

/// Numerically stable softmax of one row of logits.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<f64> {
    let m = logits.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v.as_f64() - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Concatenates tensors with equal batch and spatial dims along channels.
pub fn concat_channels<T: Scalar>(parts: &[Tensor4<T>]) -> Result<Tensor4<T>> {
    let first = parts.first().ok_or_else(|| invalid("nothing to concatenate"))?;
    let [n, h, w, _] = first.shape;
    if parts.iter().any(|p| p.shape[..3] != [n, h, w]) {
        return Err(shape("concatenated tensors differ in batch or spatial dims"));
    }
    let total: usize = parts.iter().map(|p| p.channels()).sum();
    let mut data = Vec::with_capacity(n * h * w * total);
    for px in 0..n * h * w {
        for p in parts {
            let c = p.channels();
            data.extend_from_slice(&p.data[px * c..(px + 1) * c]);
        }
    }
    Ok(Tensor4 { shape: [n, h, w, total], data })
}

/// Inverse of [`concat_channels`] for gradients.
pub(crate) fn split_channels<T: Scalar>(x: &Tensor4<T>, widths: &[usize]) -> Vec<Tensor4<T>> {
    let [n, h, w, c] = x.shape;
    let mut out: Vec<Tensor4<T>> = widths.iter().map(|&k| Tensor4::zeros([n, h, w, k])).collect();
    for px in 0..n * h * w {
        let mut off = px * c;
        for (o, &k) in out.iter_mut().zip(widths) {
            o.data[px * k..(px + 1) * k].copy_from_slice(&x.data[off..off + k]);
            off += k;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ones_valid_conv_is_nine() {
        let x = Tensor4::new([1, 3, 3, 1], vec![1.0f64; 9]).unwrap();
        let y = conv2d(&x, &[1.0; 9], 3, 1, None, Padding::Valid).unwrap();
        assert_eq!(y.shape, [1, 1, 1, 1]);
        assert_eq!(y.data, vec![9.0]);
    }

    #[test]
    fn identity_one_by_one_kernel() {
        let x = Tensor4::new([2, 3, 4, 2], (0..48).map(|v| v as f64).collect()).unwrap();
        let y = conv2d(&x, &[1.0, 0.0, 0.0, 1.0], 1, 2, None, Padding::Same).unwrap();
        assert_eq!(y, x);
        let swap = conv2d(&x, &[0.0, 1.0, 1.0, 0.0], 1, 2, None, Padding::Same).unwrap();
        assert_eq!(swap.at(1, 2, 3, 0), x.at(1, 2, 3, 1));
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor4::<f64>::zeros([1, 4, 4, 2]);
        assert!(conv2d(&x, &[0.0; 9], 3, 1, None, Padding::Same).is_err());
        assert!(conv2d(&x, &[0.0; 16], 2, 2, None, Padding::Same).is_err());
    }

    #[test]
    fn pool_picks_maximum() {
        let x = Tensor4::new([1, 2, 3, 1], vec![1.0f64, 5.0, 9.0, 3.0, 2.0, 7.0]).unwrap();
        let (y, arg) = maxpool2(&x).unwrap();
        assert_eq!((y.shape, y.data.clone()), ([1, 1, 1, 1], vec![5.0]));
        assert_eq!(arg, vec![1]);
        assert!(maxpool2(&Tensor4::<f64>::zeros([1, 1, 4, 1])).is_err());
    }

    #[test]
    fn concat_then_split() {
        let a = Tensor4::new([1, 1, 2, 1], vec![1.0f64, 2.0]).unwrap();
        let b = Tensor4::new([1, 1, 2, 2], vec![3.0f64, 4.0, 5.0, 6.0]).unwrap();
        let c = concat_channels(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(c.data, vec![1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        assert_eq!(split_channels(&c, &[1, 2]), vec![a, b]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let p = softmax(&[3.0f32; 5]);
        assert!(p.iter().all(|v| (v - 0.2).abs() < 1e-12));
    }
}

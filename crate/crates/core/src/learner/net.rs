//! Forward and backward passes of the fixed two-conv network, generic over
//! the float type so the gradient checker can run the same code in `f64`.
//!
//! ```text
//! conv3x3(c→16, pad 1) → ReLU → maxpool 2×2
//! conv3x3(16→32, pad 1) → ReLU → maxpool 2×2
//! flatten → linear(→64) → ReLU → linear(→classes) → softmax
//! ```
//!
//! All parameters live in one flat vector; [`Layout`] names the ranges.

use std::fmt::Debug;
use std::ops::{AddAssign, Range};

use num_traits::Float;

pub const CONV1: usize = 16;
pub const CONV2: usize = 32;
pub const HIDDEN: usize = 64;
const K: usize = 3;

pub trait Scalar: Float + AddAssign + Default + Debug + Send + Sync + 'static {
    fn from_f32(v: f32) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f32(v: f32) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    fn from_f32(v: f32) -> Self {
        f64::from(v)
    }
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arch {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub conv1_w: Range<usize>,
    pub conv1_b: Range<usize>,
    pub conv2_w: Range<usize>,
    pub conv2_b: Range<usize>,
    pub fc1_w: Range<usize>,
    pub fc1_b: Range<usize>,
    pub fc2_w: Range<usize>,
    pub fc2_b: Range<usize>,
}

impl Arch {
    pub fn flat(&self) -> usize {
        CONV2 * (self.height / 4) * (self.width / 4)
    }

    pub fn layout(&self) -> Layout {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        Layout {
            conv1_w: take(CONV1 * self.channels * K * K),
            conv1_b: take(CONV1),
            conv2_w: take(CONV2 * CONV1 * K * K),
            conv2_b: take(CONV2),
            fc1_w: take(HIDDEN * self.flat()),
            fc1_b: take(HIDDEN),
            fc2_w: take(self.classes * HIDDEN),
            fc2_b: take(self.classes),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().fc2_b.end
    }

    /// `(range, fan_in)` of every weight tensor, for initialization.
    pub fn weight_fans(&self) -> [(Range<usize>, usize); 4] {
        let l = self.layout();
        [
            (l.conv1_w, self.channels * K * K),
            (l.conv2_w, CONV1 * K * K),
            (l.fc1_w, self.flat()),
            (l.fc2_w, HIDDEN),
        ]
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
/// The summation order is fixed, so results are reproducible.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += a · x`
#[inline]
fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Columns of 3×3 patches with zero padding: `cols[(ch·9 + ky·3 + kx), y·w + x]`.
fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, cols: &mut [T]) {
    let hw = h * w;
    for ch in 0..c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        for ky in 0..K {
            for kx in 0..K {
                let row = &mut cols[((ch * K + ky) * K + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = T::zero();
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`].
fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, dx: &mut [T]) {
    let hw = h * w;
    dx.fill(T::zero());
    for ch in 0..c {
        let plane = &mut dx[ch * hw..(ch + 1) * hw];
        for ky in 0..K {
            for kx in 0..K {
                let row = &cols[((ch * K + ky) * K + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            for x in 1..w {
                                dst[x - 1] += src[x];
                            }
                        }
                        1 => {
                            for x in 0..w {
                                dst[x] += src[x];
                            }
                        }
                        _ => {
                            for x in 0..w - 1 {
                                dst[x + 1] += src[x];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `out[o, :] = b[o] + Σ_p W[o, p] · cols[p, :]`
fn conv_forward<T: Scalar>(weights: &[T], bias: &[T], cols: &[T], n: usize, out: &mut [T]) {
    let taps = cols.len() / n;
    for (o, row) in out.chunks_exact_mut(n).enumerate() {
        row.fill(bias[o]);
        let wrow = &weights[o * taps..(o + 1) * taps];
        for (p, &wv) in wrow.iter().enumerate() {
            axpy(row, wv, &cols[p * n..(p + 1) * n]);
        }
    }
}

/// 2×2 max pooling; records the winning input index of every output.
fn maxpool<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, out: &mut [T], arg: &mut [u32]) {
    let (oh, ow) = (h / 2, w / 2);
    for ch in 0..c {
        for y in 0..oh {
            for xo in 0..ow {
                let base = ch * h * w + 2 * y * w + 2 * xo;
                let mut best = base;
                for cand in [base + 1, base + w, base + w + 1] {
                    if x[cand] > x[best] {
                        best = cand;
                    }
                }
                let o = (ch * oh + y) * ow + xo;
                out[o] = x[best];
                arg[o] = best as u32;
            }
        }
    }
}

/// Activations kept for the backward pass of one sample.
#[derive(Debug, Clone, Default)]
pub struct Trace<T> {
    cols1: Vec<T>,
    z1: Vec<T>,
    arg1: Vec<u32>,
    p1: Vec<T>,
    cols2: Vec<T>,
    z2: Vec<T>,
    arg2: Vec<u32>,
    flat: Vec<T>,
    z3: Vec<T>,
    a3: Vec<T>,
    pub probs: Vec<T>,
}

/// Scratch buffers for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct Scratch<T> {
    dz3: Vec<T>,
    da3: Vec<T>,
    dflat: Vec<T>,
    dz2: Vec<T>,
    dcols2: Vec<T>,
    dp1: Vec<T>,
    dz1: Vec<T>,
}

fn resize<T: Scalar>(v: &mut Vec<T>, n: usize) {
    v.clear();
    v.resize(n, T::zero());
}

/// Forward pass; fills `trace` and returns nothing, `trace.probs` holds the
/// softmax output.
pub fn forward<T: Scalar>(arch: &Arch, params: &[T], input: &[T], trace: &mut Trace<T>) {
    let l = arch.layout();
    let (c, h, w) = (arch.channels, arch.height, arch.width);
    let (h2, w2) = (h / 2, w / 2);
    let (h4, w4) = (h / 4, w / 4);

    resize(&mut trace.cols1, c * K * K * h * w);
    im2col(input, c, h, w, &mut trace.cols1);
    resize(&mut trace.z1, CONV1 * h * w);
    conv_forward(&params[l.conv1_w], &params[l.conv1_b], &trace.cols1, h * w, &mut trace.z1);
    let a1: Vec<T> = trace.z1.iter().map(|&v| v.max(T::zero())).collect();
    resize(&mut trace.p1, CONV1 * h2 * w2);
    trace.arg1.clear();
    trace.arg1.resize(CONV1 * h2 * w2, 0);
    maxpool(&a1, CONV1, h, w, &mut trace.p1, &mut trace.arg1);

    resize(&mut trace.cols2, CONV1 * K * K * h2 * w2);
    im2col(&trace.p1, CONV1, h2, w2, &mut trace.cols2);
    resize(&mut trace.z2, CONV2 * h2 * w2);
    conv_forward(&params[l.conv2_w], &params[l.conv2_b], &trace.cols2, h2 * w2, &mut trace.z2);
    let a2: Vec<T> = trace.z2.iter().map(|&v| v.max(T::zero())).collect();
    resize(&mut trace.flat, CONV2 * h4 * w4);
    trace.arg2.clear();
    trace.arg2.resize(CONV2 * h4 * w4, 0);
    maxpool(&a2, CONV2, h2, w2, &mut trace.flat, &mut trace.arg2);

    let flat_n = arch.flat();
    let fc1_w = &params[l.fc1_w];
    let fc1_b = &params[l.fc1_b];
    trace.z3 = (0..HIDDEN)
        .map(|o| fc1_b[o] + dot(&fc1_w[o * flat_n..(o + 1) * flat_n], &trace.flat))
        .collect();
    trace.a3 = trace.z3.iter().map(|&v| v.max(T::zero())).collect();

    let fc2_w = &params[l.fc2_w];
    let fc2_b = &params[l.fc2_b];
    let logits: Vec<T> = (0..arch.classes)
        .map(|o| fc2_b[o] + dot(&fc2_w[o * HIDDEN..(o + 1) * HIDDEN], &trace.a3))
        .collect();
    trace.probs = softmax(&logits);
}

pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s = e.iter().fold(T::zero(), |a, &b| a + b);
    e.into_iter().map(|v| v / s).collect()
}

/// Cross-entropy of the softmax output against `label`.
pub fn loss<T: Scalar>(probs: &[T], label: usize) -> T {
    let p = probs[label];
    if p.is_nan() {
        return p;
    }
    -(p.max(T::min_positive_value())).ln()
}

#[allow(clippy::too_many_arguments)]
/// Accumulates `scale · ∂loss/∂θ` into `grad`. With `head_only`, only the
/// final linear layer receives gradient.
pub fn backward<T: Scalar>(
    arch: &Arch,
    params: &[T],
    trace: &Trace<T>,
    label: usize,
    scale: T,
    head_only: bool,
    grad: &mut [T],
    s: &mut Scratch<T>,
) {
    let l = arch.layout();
    let (h, w) = (arch.height, arch.width);
    let (h2, w2) = (h / 2, w / 2);
    let flat_n = arch.flat();

    // softmax + cross-entropy
    let dz4: Vec<T> = trace
        .probs
        .iter()
        .enumerate()
        .map(|(o, &p)| scale * if o == label { p - T::one() } else { p })
        .collect();
    for (o, &d) in dz4.iter().enumerate() {
        axpy(&mut grad[l.fc2_w.start + o * HIDDEN..][..HIDDEN], d, &trace.a3);
        grad[l.fc2_b.start + o] += d;
    }
    if head_only {
        return;
    }

    let fc2_w = &params[l.fc2_w.clone()];
    resize(&mut s.da3, HIDDEN);
    for (o, &d) in dz4.iter().enumerate() {
        axpy(&mut s.da3, d, &fc2_w[o * HIDDEN..(o + 1) * HIDDEN]);
    }
    resize(&mut s.dz3, HIDDEN);
    for i in 0..HIDDEN {
        s.dz3[i] = if trace.z3[i] > T::zero() { s.da3[i] } else { T::zero() };
    }

    let fc1_w = &params[l.fc1_w.clone()];
    resize(&mut s.dflat, flat_n);
    for o in 0..HIDDEN {
        let d = s.dz3[o];
        if d == T::zero() {
            continue;
        }
        axpy(&mut grad[l.fc1_w.start + o * flat_n..][..flat_n], d, &trace.flat);
        grad[l.fc1_b.start + o] += d;
        axpy(&mut s.dflat, d, &fc1_w[o * flat_n..(o + 1) * flat_n]);
    }

    // unpool 2 + ReLU 2
    resize(&mut s.dz2, CONV2 * h2 * w2);
    for (&idx, &d) in trace.arg2.iter().zip(&s.dflat) {
        let idx = idx as usize;
        if trace.z2[idx] > T::zero() {
            s.dz2[idx] += d;
        }
    }
    let n2 = h2 * w2;
    let taps2 = CONV1 * K * K;
    let conv2_w = &params[l.conv2_w.clone()];
    resize(&mut s.dcols2, taps2 * n2);
    for o in 0..CONV2 {
        let dz = &s.dz2[o * n2..(o + 1) * n2];
        let gw = &mut grad[l.conv2_w.start + o * taps2..][..taps2];
        for (p, g) in gw.iter_mut().enumerate() {
            *g += dot(dz, &trace.cols2[p * n2..(p + 1) * n2]);
        }
        grad[l.conv2_b.start + o] += dz.iter().fold(T::zero(), |a, &b| a + b);
        for p in 0..taps2 {
            axpy(&mut s.dcols2[p * n2..(p + 1) * n2], conv2_w[o * taps2 + p], dz);
        }
    }
    resize(&mut s.dp1, CONV1 * n2);
    col2im(&s.dcols2, CONV1, h2, w2, &mut s.dp1);

    // unpool 1 + ReLU 1
    resize(&mut s.dz1, CONV1 * h * w);
    for (&idx, &d) in trace.arg1.iter().zip(&s.dp1) {
        let idx = idx as usize;
        if trace.z1[idx] > T::zero() {
            s.dz1[idx] += d;
        }
    }
    let n1 = h * w;
    let taps1 = arch.channels * K * K;
    for o in 0..CONV1 {
        let dz = &s.dz1[o * n1..(o + 1) * n1];
        let gw = &mut grad[l.conv1_w.start + o * taps1..][..taps1];
        for (p, g) in gw.iter_mut().enumerate() {
            *g += dot(dz, &trace.cols1[p * n1..(p + 1) * n1]);
        }
        grad[l.conv1_b.start + o] += dz.iter().fold(T::zero(), |a, &b| a + b);
    }
}

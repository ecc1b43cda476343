use rayon::prelude::*;

use super::{Arith, NumericEvents, Precision, Tensor};
use crate::b16::{quantize, HalfOp};
use crate::error::{Error, Result};

// Below this many multiply-adds a matmul stays on the calling thread.
const PARALLEL_WORK: usize = 1 << 18;

/// `a [m x k] * b [k x n]` on binary32 carriers.
///
/// Each output accumulates from +0 over ascending `k`; with a narrow
/// arithmetic the product and the running sum are both rounded to binary16
/// at every step. Returns the output and the number of products that
/// flushed a nonzero exact value to zero.
pub(crate) fn matmul_raw(arith: Arith, a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> (Vec<f32>, u64) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    if arith.is_narrow() {
        matmul_impl::<true>(a, b, m, k, n)
    } else {
        matmul_impl::<false>(a, b, m, k, n)
    }
}

#[inline(always)]
fn mac<const NARROW: bool, const COUNT: bool>(acc: f32, av: f32, bv: f32, flushed: &mut u32) -> f32 {
    let p = av * bv;
    if NARROW {
        let pr = quantize(p);
        if COUNT {
            *flushed = flushed.wrapping_add(((pr == 0.0) & (bv != 0.0) & (av != 0.0)) as u32);
        }
        quantize(acc + pr)
    } else {
        if COUNT {
            *flushed = flushed.wrapping_add(((p == 0.0) & (bv != 0.0) & (av != 0.0)) as u32);
        }
        acc + p
    }
}

// Products at least this large in magnitude cannot round to zero: the
// smallest subnormal of the carrier format, which leaves a margin over the
// true threshold of half that value.
const fn flush_limit(narrow: bool) -> f64 {
    if narrow {
        5.9604644775390625e-8
    } else {
        1.401298464324817e-45
    }
}

fn matmul_impl<const NARROW: bool>(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> (Vec<f32>, u64) {
    let mut out = vec![0f32; m * n];
    if n == 0 {
        return (out, 0);
    }
    // A zero left operand only adds signed zeros to the row, which cannot
    // change a sum that starts at +0, unless the right row holds inf/NaN.
    let b_row_finite: Vec<bool> = b.chunks(n).map(|r| r.iter().all(|v| v.is_finite())).collect();
    // Smallest nonzero magnitude per right row, to tell when no product of
    // a row can flush to zero and counting can be skipped.
    let b_row_min: Vec<f64> = b
        .chunks(n)
        .map(|r| r.iter().filter(|v| **v != 0.0).fold(f64::INFINITY, |m, v| m.min(v.abs() as f64)))
        .collect();
    let limit = flush_limit(NARROW);
    let row_kernel = |(i, row): (usize, &mut [f32])| -> u64 {
        let a_row = &a[i * k..(i + 1) * k];
        let ks: Vec<usize> = (0..k).filter(|&kk| a_row[kk] != 0.0 || !b_row_finite[kk]).collect();
        let b_row = |kk: usize| &b[kk * n..(kk + 1) * n];
        let may_flush = |kk: usize| a_row[kk] != 0.0 && (a_row[kk].abs() as f64) * b_row_min[kk] < limit;
        let mut flushed = 0u64;
        // Four k steps per pass keep the running sums in registers; each
        // element still accumulates in ascending k.
        let mut groups = ks.chunks_exact(4);
        for g in &mut groups {
            let (a0, a1, a2, a3) = (a_row[g[0]], a_row[g[1]], a_row[g[2]], a_row[g[3]]);
            let (b0, b1, b2, b3) = (b_row(g[0]), b_row(g[1]), b_row(g[2]), b_row(g[3]));
            let mut f = 0u32;
            if g.iter().any(|&kk| may_flush(kk)) {
                for j in 0..n {
                    let mut acc = row[j];
                    acc = mac::<NARROW, true>(acc, a0, b0[j], &mut f);
                    acc = mac::<NARROW, true>(acc, a1, b1[j], &mut f);
                    acc = mac::<NARROW, true>(acc, a2, b2[j], &mut f);
                    acc = mac::<NARROW, true>(acc, a3, b3[j], &mut f);
                    row[j] = acc;
                }
            } else {
                for j in 0..n {
                    let mut acc = row[j];
                    acc = mac::<NARROW, false>(acc, a0, b0[j], &mut f);
                    acc = mac::<NARROW, false>(acc, a1, b1[j], &mut f);
                    acc = mac::<NARROW, false>(acc, a2, b2[j], &mut f);
                    acc = mac::<NARROW, false>(acc, a3, b3[j], &mut f);
                    row[j] = acc;
                }
            }
            flushed += f as u64;
        }
        for &kk in groups.remainder() {
            let av = a_row[kk];
            let mut f = 0u32;
            for (acc, &bv) in row.iter_mut().zip(b_row(kk)) {
                *acc = mac::<NARROW, true>(*acc, av, bv, &mut f);
            }
            flushed += f as u64;
        }
        flushed
    };
    let flushed = if m * n * k >= PARALLEL_WORK && m > 1 {
        out.par_chunks_mut(n).enumerate().map(row_kernel).sum()
    } else {
        out.chunks_mut(n).enumerate().map(row_kernel).sum()
    };
    (out, flushed)
}

fn same_precision(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Precision> {
    if a.precision() != b.precision() {
        return Err(Error::PrecisionMismatch { op });
    }
    Ok(a.precision())
}

/// Matrix product of two rank-2 tensors with equal tags.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<(Tensor, NumericEvents)> {
    let precision = same_precision("matmul", a, b)?;
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
        return Err(Error::ShapeMismatch { op: "matmul", left: sa.to_vec(), right: sb.to_vec() });
    }
    let (m, k, n) = (sa[0], sa[1], sb[1]);
    let (out, flushed) = matmul_raw(precision.arith(), &a.values(), &b.values(), m, k, n);
    let t = Tensor::from_carriers(vec![m, n], out, precision);
    let ev = t.events().with_underflows(flushed);
    Ok((t, ev))
}

/// Transpose of a rank-2 tensor.
pub fn transpose(t: &Tensor) -> Result<Tensor> {
    let s = t.shape();
    if s.len() != 2 {
        return Err(Error::contract(format!("transpose needs rank 2, got {s:?}")));
    }
    let (r, c) = (s[0], s[1]);
    Ok(Tensor::from_carriers(vec![c, r], transpose_raw(&t.values(), r, c), t.precision()))
}

pub(crate) fn transpose_raw(v: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut out = vec![0f32; v.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = v[i * cols + j];
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Conv2dParams {
    pub stride: usize,
    pub padding: usize,
}

impl Default for Conv2dParams {
    fn default() -> Self {
        Conv2dParams { stride: 1, padding: 0 }
    }
}

/// Output extent along one spatial axis, or `None` if no window fits.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

pub(crate) struct ConvGeometry {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(x: &[usize], kh: usize, kw: usize, p: Conv2dParams) -> Result<ConvGeometry> {
        if x.len() != 4 {
            return Err(Error::contract(format!("conv input must be N x C x H x W, got {x:?}")));
        }
        let oh = conv_output_extent(x[2], kh, p.stride, p.padding);
        let ow = conv_output_extent(x[3], kw, p.stride, p.padding);
        match (oh, ow) {
            (Some(oh), Some(ow)) => Ok(ConvGeometry {
                n: x[0],
                c: x[1],
                h: x[2],
                w: x[3],
                kh,
                kw,
                oh,
                ow,
                stride: p.stride,
                padding: p.padding,
            }),
            _ => Err(Error::contract(format!("no output position for input {x:?}, kernel {kh}x{kw}, {p:?}"))),
        }
    }

    pub fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn positions(&self) -> usize {
        self.n * self.oh * self.ow
    }

    /// Input offset feeding patch row `r` at output column `col`, if not padding.
    #[inline]
    fn source(&self, r: usize, col: usize) -> Option<usize> {
        let (c, rem) = (r / (self.kh * self.kw), r % (self.kh * self.kw));
        let (i, j) = (rem / self.kw, rem % self.kw);
        let (n, p) = (col / (self.oh * self.ow), col % (self.oh * self.ow));
        let (oy, ox) = (p / self.ow, p % self.ow);
        let y = (oy * self.stride + i) as isize - self.padding as isize;
        let x = (ox * self.stride + j) as isize - self.padding as isize;
        if y < 0 || x < 0 || y as usize >= self.h || x as usize >= self.w {
            return None;
        }
        Some(((n * self.c + c) * self.h + y as usize) * self.w + x as usize)
    }
}

/// Unfold `x` into a `[C*kh*kw, N*OH*OW]` patch matrix (padding as zeros).
pub fn im2col(x: &Tensor, kh: usize, kw: usize, params: Conv2dParams) -> Result<Tensor> {
    let g = ConvGeometry::new(x.shape(), kh, kw, params)?;
    let col = im2col_raw(&g, &x.values());
    Ok(Tensor::from_carriers(vec![g.patch(), g.positions()], col, x.precision()))
}

pub(crate) fn im2col_raw(g: &ConvGeometry, x: &[f32]) -> Vec<f32> {
    let cols = g.positions();
    let mut out = vec![0f32; g.patch() * cols];
    for r in 0..g.patch() {
        for col in 0..cols {
            if let Some(src) = g.source(r, col) {
                out[r * cols + col] = x[src];
            }
        }
    }
    out
}

/// Fold a patch-matrix gradient back onto the input, accumulating in
/// ascending (patch row, column) order at the given arithmetic.
pub(crate) fn col2im(arith: Arith, g: &ConvGeometry, dcol: &[f32]) -> Vec<f32> {
    let cols = g.positions();
    let mut dx = vec![0f32; g.n * g.c * g.h * g.w];
    for r in 0..g.patch() {
        for col in 0..cols {
            if let Some(dst) = g.source(r, col) {
                dx[dst] = arith.add(dx[dst], dcol[r * cols + col]);
            }
        }
    }
    dx
}

/// Cross-correlation of `x [N x C x H x W]` with `w [F x C x kh x kw]`.
///
/// Each output accumulates over (c, kh, kw) ascending at the tag's width.
pub fn conv2d(x: &Tensor, w: &Tensor, params: Conv2dParams) -> Result<(Tensor, NumericEvents)> {
    let precision = same_precision("conv2d", x, w)?;
    let ws = w.shape();
    if ws.len() != 4 || x.shape().len() != 4 || ws[1] != x.shape()[1] {
        return Err(Error::ShapeMismatch { op: "conv2d", left: x.shape().to_vec(), right: ws.to_vec() });
    }
    let g = ConvGeometry::new(x.shape(), ws[2], ws[3], params)?;
    let (out, flushed) = conv2d_raw(precision.arith(), &g, &x.values(), &w.values(), ws[0]);
    let t = Tensor::from_carriers(vec![g.n, ws[0], g.oh, g.ow], out, precision);
    let ev = t.events().with_underflows(flushed);
    Ok((t, ev))
}

/// Returns `[N, F, OH, OW]` carriers.
pub(crate) fn conv2d_raw(arith: Arith, g: &ConvGeometry, x: &[f32], w: &[f32], filters: usize) -> (Vec<f32>, u64) {
    let col = im2col_raw(g, x);
    let (fp, flushed) = matmul_raw(arith, w, &col, filters, g.patch(), g.positions());
    (filters_major_to_batch_major(&fp, filters, g.n, g.oh * g.ow), flushed)
}

/// `[F, N, P]` -> `[N, F, P]`.
pub(crate) fn filters_major_to_batch_major(v: &[f32], f: usize, n: usize, p: usize) -> Vec<f32> {
    let mut out = vec![0f32; v.len()];
    for fi in 0..f {
        for ni in 0..n {
            let src = &v[(fi * n + ni) * p..(fi * n + ni + 1) * p];
            out[(ni * f + fi) * p..(ni * f + fi + 1) * p].copy_from_slice(src);
        }
    }
    out
}

/// `[N, F, P]` -> `[F, N, P]`.
pub(crate) fn batch_major_to_filters_major(v: &[f32], n: usize, f: usize, p: usize) -> Vec<f32> {
    let mut out = vec![0f32; v.len()];
    for ni in 0..n {
        for fi in 0..f {
            let src = &v[(ni * f + fi) * p..(ni * f + fi + 1) * p];
            out[(fi * n + ni) * p..(fi * n + ni + 1) * p].copy_from_slice(src);
        }
    }
    out
}

/// Sum along `axis`, sequentially in ascending index order.
///
/// The axis is removed from the shape; reducing a rank-1 tensor yields `[1]`.
pub fn reduce_sum(x: &Tensor, axis: usize) -> Result<(Tensor, NumericEvents)> {
    let s = x.shape();
    if axis >= s.len() {
        return Err(Error::contract(format!("axis {axis} out of range for {s:?}")));
    }
    let outer: usize = s[..axis].iter().product();
    let len = s[axis];
    let inner: usize = s[axis + 1..].iter().product();
    let arith = x.precision().arith();
    let v = x.values();
    let mut out = vec![0f32; outer * inner];
    for o in 0..outer {
        for i in 0..inner {
            out[o * inner + i] = arith.sum((0..len).map(|j| v[(o * len + j) * inner + i]));
        }
    }
    let mut shape: Vec<usize> = s.iter().enumerate().filter(|&(d, _)| d != axis).map(|(_, &e)| e).collect();
    if shape.is_empty() {
        shape.push(1);
    }
    let t = Tensor::from_carriers(shape, out, x.precision());
    let ev = t.events();
    Ok((t, ev))
}

fn flushed(op: HalfOp, a: f32, b: f32, r: f32) -> bool {
    r == 0.0
        && match op {
            HalfOp::Mul => a != 0.0 && b != 0.0,
            HalfOp::Div => a != 0.0 && b.is_finite(),
            HalfOp::Exp => a.is_finite(),
            _ => false,
        }
}

fn apply(arith: Arith, op: HalfOp, a: f32, b: f32) -> f32 {
    match op {
        HalfOp::Add => arith.add(a, b),
        HalfOp::Sub => arith.sub(a, b),
        HalfOp::Mul => arith.mul(a, b),
        HalfOp::Div => arith.div(a, b),
        HalfOp::Sqrt => arith.sqrt(a),
        HalfOp::Exp => arith.exp(a),
        HalfOp::Log => arith.ln(a),
        HalfOp::Neg => -a,
        HalfOp::Abs => a.abs(),
        HalfOp::Max => {
            if a == b {
                if a.is_sign_negative() {
                    b
                } else {
                    a
                }
            } else {
                arith.max(a, b)
            }
        }
        HalfOp::Min => {
            if a.is_nan() || b.is_nan() {
                f32::NAN
            } else if a == b {
                if a.is_sign_negative() {
                    a
                } else {
                    b
                }
            } else if a < b {
                a
            } else {
                b
            }
        }
        HalfOp::Compare => match a.partial_cmp(&b) {
            Some(std::cmp::Ordering::Less) => -1.0,
            Some(std::cmp::Ordering::Equal) => 0.0,
            Some(std::cmp::Ordering::Greater) => 1.0,
            None => f32::NAN,
        },
    }
}

fn elementwise_result(x: &Tensor, out: Vec<f32>, flushed: u64) -> (Tensor, NumericEvents) {
    let t = Tensor::from_carriers(x.shape().to_vec(), out, x.precision());
    let ev = t.events().with_underflows(flushed);
    (t, ev)
}

/// Apply a unary elementary operation to every element.
pub fn map_elementwise(x: &Tensor, op: HalfOp) -> Result<(Tensor, NumericEvents)> {
    if op.is_binary() {
        return Err(Error::contract(format!("{} is not a unary operation", op.name())));
    }
    let arith = x.precision().arith();
    let narrow_store = x.precision().stores_half();
    let mut count = 0u64;
    let out: Vec<f32> = x
        .values()
        .iter()
        .map(|&a| {
            let r = apply(arith, op, a, 0.0);
            let stored = if narrow_store { quantize(r) } else { r };
            count += flushed(op, a, 0.0, stored) as u64;
            r
        })
        .collect();
    Ok(elementwise_result(x, out, count))
}

/// Apply a binary elementary operation to corresponding elements.
pub fn zip_elementwise(x: &Tensor, y: &Tensor, op: HalfOp) -> Result<(Tensor, NumericEvents)> {
    same_precision("zip_elementwise", x, y)?;
    if !op.is_binary() {
        return Err(Error::contract(format!("{} is not a binary operation", op.name())));
    }
    if x.shape() != y.shape() {
        return Err(Error::ShapeMismatch {
            op: "zip_elementwise",
            left: x.shape().to_vec(),
            right: y.shape().to_vec(),
        });
    }
    let arith = x.precision().arith();
    let narrow_store = x.precision().stores_half();
    let mut count = 0u64;
    let out: Vec<f32> = x
        .values()
        .iter()
        .zip(y.values().iter())
        .map(|(&a, &b)| {
            let r = apply(arith, op, a, b);
            let stored = if narrow_store { quantize(r) } else { r };
            count += flushed(op, a, b, stored) as u64;
            r
        })
        .collect();
    Ok(elementwise_result(x, out, count))
}

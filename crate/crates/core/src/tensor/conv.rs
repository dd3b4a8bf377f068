//! im2col/col2im convolution kernels on raw NCHW buffers.

use super::real::{gemm, Mat};
use super::Real;
use crate::error::{Error, Result};

/// Stride and zero-padding of a 2-D convolution. `out_pad` only applies to
/// transposed convolutions, where it resolves the output-size ambiguity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
    pub out_pad: usize,
}

impl ConvGeom {
    pub fn new(stride: usize, pad: usize) -> Self {
        ConvGeom { stride, pad, out_pad: 0 }
    }

    pub fn transposed(stride: usize, pad: usize, out_pad: usize) -> Self {
        ConvGeom { stride, pad, out_pad }
    }
}

/// Spatial bookkeeping shared by forward and backward passes.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Plan {
    pub n: usize,
    /// Channels of the dense (large) side of the im2col mapping.
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    /// Spatial size of the strided (small) side.
    pub ho: usize,
    pub wo: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Plan {
    pub fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.ho * self.wo
    }
}

pub(crate) fn conv_out_size(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if stride == 0 || padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Validates `x: [N, Cin, H, W]`, `w: [Cout, Cin, kh, kw]` and returns the plan
/// plus `Cout`.
pub(crate) fn plan_conv2d(x: &[usize], w: &[usize], bias: Option<&[usize]>, geom: ConvGeom) -> Result<(Plan, usize)> {
    if x.len() != 4 || w.len() != 4 || x[1] != w[1] {
        return Err(Error::ShapeMismatch { op: "conv2d", lhs: x.to_vec(), rhs: w.to_vec() });
    }
    if let Some(b) = bias {
        if b != [w[0]] {
            return Err(Error::ShapeMismatch { op: "conv2d", lhs: w.to_vec(), rhs: b.to_vec() });
        }
    }
    let bad = |reason: &str| Error::InvalidShape { op: "conv2d", shape: x.to_vec(), reason: reason.to_string() };
    if geom.stride == 0 {
        return Err(bad("stride must be positive"));
    }
    let ho = conv_out_size(x[2], w[2], geom.stride, geom.pad).ok_or_else(|| bad("kernel larger than padded input"))?;
    let wo = conv_out_size(x[3], w[3], geom.stride, geom.pad).ok_or_else(|| bad("kernel larger than padded input"))?;
    Ok((
        Plan { n: x[0], c: x[1], h: x[2], w: x[3], kh: w[2], kw: w[3], ho, wo, stride: geom.stride, pad: geom.pad },
        w[0],
    ))
}

/// Validates `x: [N, Cin, Hi, Wi]`, `w: [Cin, Cout, kh, kw]` for a transposed
/// convolution. The returned plan describes the equivalent forward
/// convolution from the `[Cout, Ho, Wo]` output back to the input grid.
pub(crate) fn plan_conv2d_transpose(
    x: &[usize],
    w: &[usize],
    bias: Option<&[usize]>,
    geom: ConvGeom,
) -> Result<(Plan, usize)> {
    if x.len() != 4 || w.len() != 4 || x[1] != w[0] {
        return Err(Error::ShapeMismatch { op: "conv2d_transpose", lhs: x.to_vec(), rhs: w.to_vec() });
    }
    if let Some(b) = bias {
        if b != [w[1]] {
            return Err(Error::ShapeMismatch { op: "conv2d_transpose", lhs: w.to_vec(), rhs: b.to_vec() });
        }
    }
    let bad =
        |reason: &str| Error::InvalidShape { op: "conv2d_transpose", shape: x.to_vec(), reason: reason.to_string() };
    if geom.stride == 0 || geom.out_pad >= geom.stride {
        return Err(bad("need stride > 0 and output padding < stride"));
    }
    let size = |len: usize, k: usize| -> Result<usize> {
        let full = (len - 1) * geom.stride + k + geom.out_pad;
        full.checked_sub(2 * geom.pad).filter(|&v| v > 0).ok_or_else(|| bad("padding larger than output"))
    };
    let h = size(x[2], w[2])?;
    let wd = size(x[3], w[3])?;
    Ok((
        Plan { n: x[0], c: w[1], h, w: wd, kh: w[2], kw: w[3], ho: x[2], wo: x[3], stride: geom.stride, pad: geom.pad },
        w[1],
    ))
}

/// Gathers the `[C, H, W]` image into `[C*kh*kw, ho*wo]` columns.
pub(crate) fn im2col<T: Real>(p: &Plan, img: &[T], cols: &mut [T]) {
    let area = p.ho * p.wo;
    debug_assert_eq!(cols.len(), p.col_rows() * area);
    for c in 0..p.c {
        let plane = &img[c * p.h * p.w..(c + 1) * p.h * p.w];
        for ki in 0..p.kh {
            for kj in 0..p.kw {
                let row = (c * p.kh + ki) * p.kw + kj;
                let dst = &mut cols[row * area..(row + 1) * area];
                for oy in 0..p.ho {
                    let iy = (oy * p.stride + ki) as isize - p.pad as isize;
                    let line = &mut dst[oy * p.wo..(oy + 1) * p.wo];
                    if iy < 0 || iy >= p.h as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * p.w..(iy as usize + 1) * p.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * p.stride + kj) as isize - p.pad as isize;
                        *v = if ix >= 0 && ix < p.w as isize { src[ix as usize] } else { T::zero() };
                    }
                }
            }
        }
    }
}

/// Scatter-adds columns back onto the `[C, H, W]` image (adjoint of [`im2col`]).
pub(crate) fn col2im<T: Real>(p: &Plan, cols: &[T], img: &mut [T]) {
    let area = p.ho * p.wo;
    for c in 0..p.c {
        let plane = &mut img[c * p.h * p.w..(c + 1) * p.h * p.w];
        for ki in 0..p.kh {
            for kj in 0..p.kw {
                let row = (c * p.kh + ki) * p.kw + kj;
                let src = &cols[row * area..(row + 1) * area];
                for oy in 0..p.ho {
                    let iy = (oy * p.stride + ki) as isize - p.pad as isize;
                    if iy < 0 || iy >= p.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * p.w..(iy as usize + 1) * p.w];
                    let line = &src[oy * p.wo..(oy + 1) * p.wo];
                    for (ox, &v) in line.iter().enumerate() {
                        let ix = (ox * p.stride + kj) as isize - p.pad as isize;
                        if ix >= 0 && ix < p.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Real>(p: &Plan, cout: usize, x: &[T], w: &[T], b: Option<&[T]>) -> Vec<T> {
    let area = p.col_cols();
    let in_stride = p.c * p.h * p.w;
    let mut out = vec![T::zero(); p.n * cout * area];
    let mut cols = vec![T::zero(); p.col_rows() * area];
    for n in 0..p.n {
        im2col(p, &x[n * in_stride..(n + 1) * in_stride], &mut cols);
        let dst = &mut out[n * cout * area..(n + 1) * cout * area];
        if let Some(b) = b {
            for (co, chunk) in dst.chunks_mut(area).enumerate() {
                chunk.iter_mut().for_each(|v| *v = b[co]);
            }
        }
        gemm(
            Mat::new(w, cout, p.col_rows()),
            Mat::new(&cols, p.col_rows(), area),
            if b.is_some() { T::one() } else { T::zero() },
            dst,
        );
    }
    out
}

/// Accumulates input, weight and bias gradients of a convolution.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Real>(
    p: &Plan,
    cout: usize,
    x: &[T],
    w: &[T],
    g: &[T],
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let area = p.col_cols();
    let in_stride = p.c * p.h * p.w;
    let rows = p.col_rows();
    if let Some(db) = db {
        for n in 0..p.n {
            for (co, d) in db.iter_mut().enumerate().take(cout) {
                let start = (n * cout + co) * area;
                *d += g[start..start + area].iter().copied().sum::<T>();
            }
        }
    }
    let mut cols = vec![T::zero(); rows * area];
    if let Some(dw) = dw {
        for n in 0..p.n {
            im2col(p, &x[n * in_stride..(n + 1) * in_stride], &mut cols);
            let gn = &g[n * cout * area..(n + 1) * cout * area];
            gemm(Mat::new(gn, cout, area), Mat::new(&cols, rows, area).t(), T::one(), dw);
        }
    }
    if let Some(dx) = dx {
        for n in 0..p.n {
            let gn = &g[n * cout * area..(n + 1) * cout * area];
            gemm(Mat::new(w, cout, rows).t(), Mat::new(gn, cout, area), T::zero(), &mut cols);
            col2im(p, &cols, &mut dx[n * in_stride..(n + 1) * in_stride]);
        }
    }
}

/// Transposed convolution; `p` is the plan from [`plan_conv2d_transpose`].
pub(crate) fn conv2d_transpose_forward<T: Real>(p: &Plan, cin: usize, x: &[T], w: &[T], b: Option<&[T]>) -> Vec<T> {
    let in_area = p.col_cols();
    let out_stride = p.c * p.h * p.w;
    let rows = p.col_rows();
    let mut out = vec![T::zero(); p.n * out_stride];
    let mut cols = vec![T::zero(); rows * in_area];
    for n in 0..p.n {
        let xn = &x[n * cin * in_area..(n + 1) * cin * in_area];
        gemm(Mat::new(w, cin, rows).t(), Mat::new(xn, cin, in_area), T::zero(), &mut cols);
        let dst = &mut out[n * out_stride..(n + 1) * out_stride];
        col2im(p, &cols, dst);
        if let Some(b) = b {
            for (co, chunk) in dst.chunks_mut(p.h * p.w).enumerate() {
                chunk.iter_mut().for_each(|v| *v += b[co]);
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_transpose_backward<T: Real>(
    p: &Plan,
    cin: usize,
    x: &[T],
    w: &[T],
    g: &[T],
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let in_area = p.col_cols();
    let out_stride = p.c * p.h * p.w;
    let rows = p.col_rows();
    if let Some(db) = db {
        for n in 0..p.n {
            for (co, chunk) in g[n * out_stride..(n + 1) * out_stride].chunks(p.h * p.w).enumerate() {
                db[co] += chunk.iter().copied().sum::<T>();
            }
        }
    }
    if dx.is_none() && dw.is_none() {
        return;
    }
    let mut gcols = vec![T::zero(); rows * in_area];
    let mut dx = dx;
    let mut dw = dw;
    for n in 0..p.n {
        im2col(p, &g[n * out_stride..(n + 1) * out_stride], &mut gcols);
        if let Some(dx) = dx.as_deref_mut() {
            let dst = &mut dx[n * cin * in_area..(n + 1) * cin * in_area];
            gemm(Mat::new(w, cin, rows), Mat::new(&gcols, rows, in_area), T::one(), dst);
        }
        if let Some(dw) = dw.as_deref_mut() {
            let xn = &x[n * cin * in_area..(n + 1) * cin * in_area];
            gemm(Mat::new(xn, cin, in_area), Mat::new(&gcols, rows, in_area).t(), T::one(), dw);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct seven-loop convolution.
    fn naive_conv(
        x: &[f64],
        xs: [usize; 4],
        w: &[f64],
        ws: [usize; 4],
        stride: usize,
        pad: usize,
    ) -> (Vec<f64>, usize, usize) {
        let [n, c, h, wd] = xs;
        let [co, _, kh, kw] = ws;
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wd + 2 * pad - kw) / stride + 1;
        let mut out = vec![0.0; n * co * ho * wo];
        for b in 0..n {
            for o in 0..co {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let iy = (oy * stride + ki) as isize - pad as isize;
                                    let ix = (ox * stride + kj) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc += x[((b * c + ci) * h + iy as usize) * wd + ix as usize]
                                            * w[((o * c + ci) * kh + ki) * kw + kj];
                                    }
                                }
                            }
                        }
                        out[((b * co + o) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        (out, ho, wo)
    }

    #[test]
    fn conv_matches_direct_loops() {
        let xs = [2, 3, 7, 6];
        let ws = [4, 3, 3, 3];
        let x: Vec<f64> = (0..xs.iter().product()).map(|i| ((i * 7) % 13) as f64 - 6.0).collect();
        let w: Vec<f64> = (0..ws.iter().product()).map(|i| ((i * 5) % 11) as f64 * 0.1).collect();
        for (stride, pad) in [(1, 0), (1, 1), (2, 1), (3, 2)] {
            let (plan, co) = plan_conv2d(&xs, &ws, None, ConvGeom::new(stride, pad)).unwrap();
            let got = conv2d_forward(&plan, co, &x, &w, None);
            let (want, ho, wo) = naive_conv(&x, xs, &w, ws, stride, pad);
            assert_eq!((plan.ho, plan.wo), (ho, wo));
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn transpose_is_adjoint_of_conv() {
        // <conv(x), y> == <x, conv_t(y)> with shared weights.
        let xs = [1, 2, 8, 8];
        let ws = [3, 2, 3, 3];
        let x: Vec<f64> = (0..128).map(|i| (i as f64 * 0.37).sin()).collect();
        let w: Vec<f64> = (0..54).map(|i| (i as f64 * 0.11).cos()).collect();
        let (plan, co) = plan_conv2d(&xs, &ws, None, ConvGeom::new(2, 1)).unwrap();
        let y_shape = [1, co, plan.ho, plan.wo];
        let y: Vec<f64> = (0..y_shape.iter().product()).map(|i| (i as f64 * 0.23).sin()).collect();
        let cx = conv2d_forward(&plan, co, &x, &w, None);
        let lhs: f64 = cx.iter().zip(&y).map(|(a, b)| a * b).sum();

        // transposed weight layout [Cin_t = co, Cout_t = 2, 3, 3] is the same buffer
        let (tplan, cout_t) = plan_conv2d_transpose(&y_shape, &ws, None, ConvGeom::transposed(2, 1, 1)).unwrap();
        assert_eq!((cout_t, tplan.h, tplan.w), (2, 8, 8));
        let ty = conv2d_transpose_forward(&tplan, co, &y, &w, None);
        let rhs: f64 = ty.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }
}

//! Slice-level forward/backward kernels. Shapes are validated by the tape
//! before any of these run.

use super::Scalar;
use crate::error::{Error, Result};

/// `floor((size + 2·pad − k) / stride) + 1`, or `None` when the padded input
/// is smaller than the kernel.
pub fn conv_out_dim(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    (stride > 0 && padded >= k).then(|| (padded - k) / stride + 1)
}

/// Resolved dimensions of one conv2d call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl Conv2dGeometry {
    pub fn new(input: [usize; 4], weight: [usize; 4], stride: usize, pad: usize) -> Result<Self> {
        let [n, c_in, h, w] = input;
        let [c_out, wc_in, kh, kw] = weight;
        if stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be positive"));
        }
        if wc_in != c_in {
            return Err(Error::shape("conv2d", format!("input has Cin={c_in} but weight expects Cin={wc_in}")));
        }
        let oh = conv_out_dim(h, kh, stride, pad)
            .ok_or_else(|| Error::shape("conv2d", format!("H={h} with pad {pad} is smaller than kh={kh}")))?;
        let ow = conv_out_dim(w, kw, stride, pad)
            .ok_or_else(|| Error::shape("conv2d", format!("W={w} with pad {pad} is smaller than kw={kw}")))?;
        Ok(Conv2dGeometry { n, c_in, h, w, c_out, kh, kw, stride, pad, oh, ow })
    }

    /// Rows of the unfolded patch matrix.
    pub fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    pub fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.n, self.c_out, self.oh, self.ow]
    }

    /// Source coordinate for output position `o` and kernel tap `k`.
    #[inline]
    fn src(&self, o: usize, k: usize, limit: usize) -> Option<usize> {
        (o * self.stride + k).checked_sub(self.pad).filter(|&i| i < limit)
    }
}

/// Unfolds one sample (`Cin×H×W`) into `cols` (`Cin·kh·kw × OH·OW`).
fn im2col<T: Scalar>(g: &Conv2dGeometry, x: &[T], cols: &mut [T]) {
    let plane = g.out_plane();
    let mut row = 0;
    for c in 0..g.c_in {
        let xc = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    match g.src(oy, ki, g.h) {
                        None => line.fill(T::zero()),
                        Some(iy) => {
                            let src = &xc[iy * g.w..(iy + 1) * g.w];
                            for (ox, v) in line.iter_mut().enumerate() {
                                *v = g.src(ox, kj, g.w).map_or(T::zero(), |ix| src[ix]);
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto one sample.
fn col2im_add<T: Scalar>(g: &Conv2dGeometry, cols: &[T], dx: &mut [T]) {
    let plane = g.out_plane();
    let mut row = 0;
    for c in 0..g.c_in {
        let dxc = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let Some(iy) = g.src(oy, ki, g.h) else { continue };
                    let line = &src[oy * g.ow..(oy + 1) * g.ow];
                    let dst = &mut dxc[iy * g.w..(iy + 1) * g.w];
                    for (ox, &v) in line.iter().enumerate() {
                        if let Some(ix) = g.src(ox, kj, g.w) {
                            dst[ix] += v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(g: &Conv2dGeometry, x: &[T], weight: &[T], bias: Option<&[T]>, out: &mut [T]) {
    let k = g.patch_len();
    let plane = g.out_plane();
    let in_sample = g.c_in * g.h * g.w;
    let out_sample = g.c_out * plane;
    let mut cols = vec![T::zero(); k * plane];
    for n in 0..g.n {
        im2col(g, &x[n * in_sample..(n + 1) * in_sample], &mut cols);
        let y = &mut out[n * out_sample..(n + 1) * out_sample];
        T::gemm(
            g.c_out,
            k,
            plane,
            T::one(),
            (weight, k as isize, 1),
            (&cols, plane as isize, 1),
            T::zero(),
            (y, plane as isize, 1),
        );
        if let Some(b) = bias {
            for (co, &bv) in b.iter().enumerate() {
                y[co * plane..(co + 1) * plane].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
}

/// Accumulates gradients (`+=`) into whichever of `dx`, `dw`, `db` are given.
pub(crate) fn conv2d_backward<T: Scalar>(
    g: &Conv2dGeometry,
    x: &[T],
    weight: &[T],
    dy: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let k = g.patch_len();
    let plane = g.out_plane();
    let in_sample = g.c_in * g.h * g.w;
    let out_sample = g.c_out * plane;
    let mut cols = vec![T::zero(); k * plane];
    let mut dcols = vec![T::zero(); k * plane];
    for n in 0..g.n {
        let dy_n = &dy[n * out_sample..(n + 1) * out_sample];
        if let Some(dw) = dw.as_deref_mut() {
            im2col(g, &x[n * in_sample..(n + 1) * in_sample], &mut cols);
            // dW (Cout×K) += dY (Cout×P) · colsᵀ (P×K)
            T::gemm(
                g.c_out,
                plane,
                k,
                T::one(),
                (dy_n, plane as isize, 1),
                (&cols, 1, plane as isize),
                T::one(),
                (dw, k as isize, 1),
            );
        }
        if let Some(dx) = dx.as_deref_mut() {
            // dcols (K×P) = Wᵀ (K×Cout) · dY (Cout×P)
            T::gemm(
                k,
                g.c_out,
                plane,
                T::one(),
                (weight, 1, k as isize),
                (dy_n, plane as isize, 1),
                T::zero(),
                (&mut dcols, plane as isize, 1),
            );
            col2im_add(g, &dcols, &mut dx[n * in_sample..(n + 1) * in_sample]);
        }
    }
    if let Some(db) = db {
        for n in 0..g.n {
            for (co, acc) in db.iter_mut().enumerate() {
                let s = n * out_sample + co * plane;
                *acc += dy[s..s + plane].iter().copied().sum::<T>();
            }
        }
    }
}

/// Per-channel statistics of an N×C×H×W tensor: (mean, biased variance).
pub(crate) fn channel_stats<T: Scalar>(x: &[T], [n, c, h, w]: [usize; 4]) -> (Vec<f64>, Vec<f64>) {
    let plane = h * w;
    let count = (n * plane) as f64;
    let mut mean = vec![0.0f64; c];
    let mut var = vec![0.0f64; c];
    for ch in 0..c {
        let mut s = 0.0;
        for b in 0..n {
            let o = (b * c + ch) * plane;
            s += x[o..o + plane].iter().map(|v| v.as_f64()).sum::<f64>();
        }
        let m = s / count;
        let mut q = 0.0;
        for b in 0..n {
            let o = (b * c + ch) * plane;
            q += x[o..o + plane]
                .iter()
                .map(|v| {
                    let d = v.as_f64() - m;
                    d * d
                })
                .sum::<f64>();
        }
        mean[ch] = m;
        var[ch] = q / count;
    }
    (mean, var)
}

/// `out = gamma·(x − mean)·inv_std + beta`, per channel.
pub(crate) fn batch_norm_apply<T: Scalar>(
    x: &[T],
    dims: [usize; 4],
    mean: &[T],
    inv_std: &[T],
    gamma: &[T],
    beta: &[T],
    out: &mut [T],
) {
    let [n, c, h, w] = dims;
    let plane = h * w;
    for b in 0..n {
        for ch in 0..c {
            let o = (b * c + ch) * plane;
            let scale = gamma[ch] * inv_std[ch];
            let shift = beta[ch] - mean[ch] * scale;
            for (y, &v) in out[o..o + plane].iter_mut().zip(&x[o..o + plane]) {
                *y = v * scale + shift;
            }
        }
    }
}

/// Batch norm backward. With `train`, the statistics are treated as functions
/// of the batch; otherwise they are constants.
#[allow(clippy::too_many_arguments)]
pub(crate) fn batch_norm_backward<T: Scalar>(
    x: &[T],
    dims: [usize; 4],
    mean: &[T],
    inv_std: &[T],
    gamma: &[T],
    dy: &[T],
    train: bool,
    dx: Option<&mut [T]>,
    dgamma: Option<&mut [T]>,
    dbeta: Option<&mut [T]>,
) {
    let [n, c, h, w] = dims;
    let plane = h * w;
    let count = T::from_f64((n * plane) as f64);
    let mut sum_dy = vec![T::zero(); c];
    let mut sum_dy_xhat = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let o = (b * c + ch) * plane;
            let (m, s) = (mean[ch], inv_std[ch]);
            for (&g, &v) in dy[o..o + plane].iter().zip(&x[o..o + plane]) {
                sum_dy[ch] += g;
                sum_dy_xhat[ch] += g * (v - m) * s;
            }
        }
    }
    if let Some(dx) = dx {
        for b in 0..n {
            for ch in 0..c {
                let o = (b * c + ch) * plane;
                let (m, s) = (mean[ch], inv_std[ch]);
                let k = gamma[ch] * s;
                let (mdy, mdyx) = (sum_dy[ch] / count, sum_dy_xhat[ch] / count);
                for ((d, &g), &v) in dx[o..o + plane].iter_mut().zip(&dy[o..o + plane]).zip(&x[o..o + plane]) {
                    *d += if train { k * (g - mdy - (v - m) * s * mdyx) } else { k * g };
                }
            }
        }
    }
    if let Some(dg) = dgamma {
        dg.iter_mut().zip(&sum_dy_xhat).for_each(|(d, &v)| *d += v);
    }
    if let Some(db) = dbeta {
        db.iter_mut().zip(&sum_dy).for_each(|(d, &v)| *d += v);
    }
}

/// `out (N×O) = x (N×F) · wᵀ + b`.
pub(crate) fn dense_forward<T: Scalar>(x: &[T], w: &[T], b: &[T], n: usize, f: usize, o: usize, out: &mut [T]) {
    for row in out.chunks_mut(o) {
        row.copy_from_slice(b);
    }
    T::gemm(n, f, o, T::one(), (x, f as isize, 1), (w, 1, f as isize), T::one(), (out, o as isize, 1));
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dy: &[T],
    n: usize,
    f: usize,
    o: usize,
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    if let Some(dx) = dx {
        // dx (N×F) += dy (N×O) · w (O×F)
        T::gemm(n, o, f, T::one(), (dy, o as isize, 1), (w, f as isize, 1), T::one(), (dx, f as isize, 1));
    }
    if let Some(dw) = dw {
        // dw (O×F) += dyᵀ (O×N) · x (N×F)
        T::gemm(o, n, f, T::one(), (dy, 1, o as isize), (x, f as isize, 1), T::one(), (dw, f as isize, 1));
    }
    if let Some(db) = db {
        for row in dy.chunks(o) {
            db.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_dims() {
        assert_eq!(conv_out_dim(64, 3, 2, 1), Some(32));
        assert_eq!(conv_out_dim(32, 1, 2, 0), Some(16));
        assert_eq!(conv_out_dim(3, 3, 1, 0), Some(1));
        assert_eq!(conv_out_dim(2, 3, 1, 0), None);
    }

    #[test]
    fn geometry_rejects_channel_mismatch() {
        let err = Conv2dGeometry::new([1, 3, 8, 8], [4, 2, 3, 3], 1, 1).unwrap_err();
        assert!(err.to_string().contains("Cin=3"), "{err}");
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), c> == <x, col2im(c)> for arbitrary x, c.
        let g = Conv2dGeometry::new([1, 2, 5, 4], [3, 2, 3, 3], 2, 1).unwrap();
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let c: Vec<f64> = (0..g.patch_len() * g.out_plane()).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut cols = vec![0.0; c.len()];
        im2col(&g, &x, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im_add(&g, &c, &mut back);
        let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}

//! Per-layer kernels. Activations are row-major `[time][channel]`.

use rayon::prelude::*;

use super::{ConvSpec, Scalar};

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

#[inline]
pub(crate) fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + a * xi;
    }
}

/// Dot product with eight independent accumulators so it vectorizes
/// without reassociation; the summation order is fixed.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] = acc[k] + x[k] * y[k];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (&x, &y) in ra.iter().zip(rb) {
        s = s + x * y;
    }
    s
}

/// Geometry of a "same"-padded dilated convolution over time.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Conv {
    pub spec: ConvSpec,
    pub c_in: usize,
    pub frames: usize,
}

impl Conv {
    /// Time offset of tap `j`.
    #[inline]
    fn offset(&self, j: usize) -> isize {
        let half = (self.spec.kernel as isize - 1) / 2;
        (j as isize - half) * self.spec.dilation as isize
    }

    /// Output steps `t` for which tap `j` reads a real input row.
    #[inline]
    fn valid(&self, j: usize) -> (usize, usize, isize) {
        let off = self.offset(j);
        let t = self.frames as isize;
        let lo = (-off).clamp(0, t) as usize;
        let hi = (t - off).clamp(0, t) as usize;
        (lo, hi.max(lo), off)
    }

    pub fn forward<T: Scalar>(&self, x: &[T], w: &[T], b: &[T]) -> Vec<T> {
        let (f, c_in) = (self.spec.filters, self.c_in);
        let mut out = Vec::with_capacity(self.frames * f);
        for _ in 0..self.frames {
            out.extend_from_slice(b);
        }
        for j in 0..self.spec.kernel {
            let (lo, hi, off) = self.valid(j);
            let wj = &w[j * c_in * f..(j + 1) * c_in * f];
            for t in lo..hi {
                let s = (t as isize + off) as usize;
                let xs = &x[s * c_in..(s + 1) * c_in];
                let o = &mut out[t * f..(t + 1) * f];
                for (c, &a) in xs.iter().enumerate() {
                    if a != T::zero() {
                        axpy(a, &wj[c * f..(c + 1) * f], o);
                    }
                }
            }
        }
        out
    }

    pub fn backward_input<T: Scalar>(&self, dout: &[T], w: &[T]) -> Vec<T> {
        let (f, c_in) = (self.spec.filters, self.c_in);
        let mut dx = vec![T::zero(); self.frames * c_in];
        for j in 0..self.spec.kernel {
            let (lo, hi, off) = self.valid(j);
            let wj = &w[j * c_in * f..(j + 1) * c_in * f];
            for t in lo..hi {
                let s = (t as isize + off) as usize;
                let d = &dout[t * f..(t + 1) * f];
                let row = &mut dx[s * c_in..(s + 1) * c_in];
                for (c, v) in row.iter_mut().enumerate() {
                    *v = *v + dot(&wj[c * f..(c + 1) * f], d);
                }
            }
        }
        dx
    }

    /// Accumulates weight and bias gradients over the batch. Rows of the
    /// weight gradient are independent, so they are filled in parallel, each
    /// summed in sample-then-time order.
    pub fn weight_grad<T: Scalar>(&self, xs: &[&[T]], douts: &[&[T]], dw: &mut [T], db: &mut [T]) {
        let (f, c_in) = (self.spec.filters, self.c_in);
        dw.par_chunks_mut(f).enumerate().for_each(|(r, row)| {
            let (j, c) = (r / c_in, r % c_in);
            let (lo, hi, off) = self.valid(j);
            for (x, d) in xs.iter().zip(douts) {
                for t in lo..hi {
                    let s = (t as isize + off) as usize;
                    let a = x[s * c_in + c];
                    if a != T::zero() {
                        axpy(a, &d[t * f..(t + 1) * f], row);
                    }
                }
            }
        });
        for d in douts {
            for frame in d.chunks_exact(f) {
                for (b, &v) in db.iter_mut().zip(frame) {
                    *b = *b + v;
                }
            }
        }
    }
}

/// Fully connected layer with `[in][out]` weights.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Dense {
    pub n_out: usize,
}

impl Dense {
    pub fn forward<T: Scalar>(&self, x: &[T], w: &[T], b: &[T]) -> Vec<T> {
        let mut out = b.to_vec();
        for (i, &a) in x.iter().enumerate() {
            if a != T::zero() {
                axpy(a, &w[i * self.n_out..(i + 1) * self.n_out], &mut out);
            }
        }
        out
    }

    pub fn backward_input<T: Scalar>(&self, dout: &[T], w: &[T]) -> Vec<T> {
        w.chunks_exact(self.n_out)
            .map(|row| dot(row, dout))
            .collect()
    }

    pub fn weight_grad<T: Scalar>(&self, xs: &[&[T]], douts: &[&[T]], dw: &mut [T], db: &mut [T]) {
        let n_out = self.n_out;
        dw.par_chunks_mut(n_out).enumerate().for_each(|(i, row)| {
            for (x, d) in xs.iter().zip(douts) {
                if x[i] != T::zero() {
                    axpy(x[i], d, row);
                }
            }
        });
        for d in douts {
            for (b, &v) in db.iter_mut().zip(d.iter()) {
                *b = *b + v;
            }
        }
    }
}

/// Per-channel statistics of a batch-norm forward pass.
#[derive(Debug, Clone)]
pub(crate) struct BnPass<T> {
    pub mean: Vec<T>,
    /// Biased variance over batch and time.
    pub var: Vec<T>,
    pub inv_std: Vec<T>,
    pub batch_stats: bool,
}

/// Normalizes `zs` in place to `xhat` and returns the statistics used.
/// With `running = Some(..)` the frozen statistics are used instead of the
/// batch's.
pub(crate) fn bn_normalize<T: Scalar>(
    zs: &mut [Vec<T>],
    channels: usize,
    running: Option<(&[T], &[T])>,
) -> BnPass<T> {
    let eps: T = super::cast(BN_EPS);
    let (mean, var, batch_stats) = match running {
        Some((m, v)) => (m.to_vec(), v.to_vec(), false),
        None => {
            let count = zs.iter().map(|z| z.len() / channels).sum::<usize>();
            let n: T = super::cast(count as f64);
            let mut mean = vec![T::zero(); channels];
            for z in zs.iter() {
                for frame in z.chunks_exact(channels) {
                    for (m, &v) in mean.iter_mut().zip(frame) {
                        *m = *m + v;
                    }
                }
            }
            mean.iter_mut().for_each(|m| *m = *m / n);
            let mut var = vec![T::zero(); channels];
            for z in zs.iter() {
                for frame in z.chunks_exact(channels) {
                    for ((s, &v), &m) in var.iter_mut().zip(frame).zip(&mean) {
                        *s = *s + (v - m) * (v - m);
                    }
                }
            }
            var.iter_mut().for_each(|s| *s = *s / n);
            (mean, var, true)
        }
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    for z in zs.iter_mut() {
        for frame in z.chunks_exact_mut(channels) {
            for ((v, &m), &is) in frame.iter_mut().zip(&mean).zip(&inv_std) {
                *v = (*v - m) * is;
            }
        }
    }
    BnPass {
        mean,
        var,
        inv_std,
        batch_stats,
    }
}

/// `y = gamma xhat + beta`.
pub(crate) fn bn_affine<T: Scalar>(xhat: &[T], gamma: &[T], beta: &[T]) -> Vec<T> {
    let c = gamma.len();
    let mut y = Vec::with_capacity(xhat.len());
    for frame in xhat.chunks_exact(c) {
        y.extend(
            frame
                .iter()
                .zip(gamma)
                .zip(beta)
                .map(|((&x, &g), &b)| g * x + b),
        );
    }
    y
}

/// Backward through normalization and affine map. `dys` is overwritten with
/// the gradient with respect to the pre-normalization input.
pub(crate) fn bn_backward<T: Scalar>(
    dys: &mut [Vec<T>],
    xhats: &[Vec<T>],
    gamma: &[T],
    pass: &BnPass<T>,
    dgamma: &mut [T],
    dbeta: &mut [T],
) {
    let c = gamma.len();
    let mut sum_dxhat = vec![T::zero(); c];
    let mut sum_dxhat_xhat = vec![T::zero(); c];
    for (dy, xh) in dys.iter().zip(xhats) {
        for (dfr, xfr) in dy.chunks_exact(c).zip(xh.chunks_exact(c)) {
            for k in 0..c {
                dgamma[k] = dgamma[k] + dfr[k] * xfr[k];
                dbeta[k] = dbeta[k] + dfr[k];
                let dxh = dfr[k] * gamma[k];
                sum_dxhat[k] = sum_dxhat[k] + dxh;
                sum_dxhat_xhat[k] = sum_dxhat_xhat[k] + dxh * xfr[k];
            }
        }
    }
    let count = dys.iter().map(|d| d.len() / c).sum::<usize>();
    let m: T = super::cast(count as f64);
    for (dy, xh) in dys.iter_mut().zip(xhats) {
        for (dfr, xfr) in dy.chunks_exact_mut(c).zip(xh.chunks_exact(c)) {
            for k in 0..c {
                let dxh = dfr[k] * gamma[k];
                dfr[k] = if pass.batch_stats {
                    pass.inv_std[k] * (dxh - sum_dxhat[k] / m - xfr[k] * sum_dxhat_xhat[k] / m)
                } else {
                    pass.inv_std[k] * dxh
                };
            }
        }
    }
}

/// ReLU followed by non-overlapping max pooling over time. Returns the pooled
/// activations and, per output, the index (within its window) of the first
/// maximal element.
pub(crate) fn relu_pool<T: Scalar>(y: &[T], channels: usize, pool: usize) -> (Vec<T>, Vec<u8>) {
    let t_out = y.len() / channels / pool;
    let mut out = vec![T::zero(); t_out * channels];
    let mut arg = vec![0u8; t_out * channels];
    for t in 0..t_out {
        for c in 0..channels {
            let mut best = y[t * pool * channels + c].max(T::zero());
            let mut bi = 0;
            for k in 1..pool {
                let v = y[(t * pool + k) * channels + c].max(T::zero());
                if v > best {
                    best = v;
                    bi = k;
                }
            }
            out[t * channels + c] = best;
            arg[t * channels + c] = bi as u8;
        }
    }
    (out, arg)
}

/// Routes pooled gradients back to the winning element, through the ReLU.
pub(crate) fn relu_pool_backward<T: Scalar>(
    dpooled: &[T],
    y: &[T],
    arg: &[u8],
    channels: usize,
    pool: usize,
) -> Vec<T> {
    let mut dy = vec![T::zero(); y.len()];
    for (i, (&d, &a)) in dpooled.iter().zip(arg).enumerate() {
        let (t, c) = (i / channels, i % channels);
        let src = (t * pool + a as usize) * channels + c;
        if y[src] > T::zero() {
            dy[src] = d;
        }
    }
    dy
}

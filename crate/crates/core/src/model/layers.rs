//! Layer kernels. Activations are stored channel-major (`[C][N][H][W]`) so a
//! convolution over a batch is a single `W * im2col(x)` product and batch
//! norm sees each channel as one contiguous row.

use crate::tensor::{gemm, MatRef, Real, Tensor4};

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Act<T> {
    pub c: usize,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Real> Act<T> {
    pub fn zeros(c: usize, n: usize, h: usize, w: usize) -> Self {
        Act {
            c,
            n,
            h,
            w,
            data: vec![T::zero(); c * n * h * w],
        }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Elements per channel row.
    pub fn row(&self) -> usize {
        self.n * self.h * self.w
    }

    pub fn from_nchw(t: &Tensor4<T>) -> Self {
        let [n, c, h, w] = t.shape;
        let plane = h * w;
        let mut out = Self::zeros(c, n, h, w);
        for i in 0..n {
            for ch in 0..c {
                let src = &t.data[(i * c + ch) * plane..][..plane];
                out.data[(ch * n + i) * plane..][..plane].copy_from_slice(src);
            }
        }
        out
    }

    #[cfg(test)]
    pub fn to_nchw(&self) -> Tensor4<T> {
        let plane = self.plane();
        let mut out = Tensor4::zeros([self.n, self.c, self.h, self.w]);
        for i in 0..self.n {
            for ch in 0..self.c {
                out.data[(i * self.c + ch) * plane..][..plane]
                    .copy_from_slice(&self.data[(ch * self.n + i) * plane..][..plane]);
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            super::spec::conv_out(h, self.kernel, self.stride, self.pad),
            super::spec::conv_out(w, self.kernel, self.stride, self.pad),
        )
    }

    fn patch(&self) -> usize {
        self.c_in * self.kernel * self.kernel
    }
}

/// Upper bound on elements in one im2col buffer.
const COL_BUDGET: usize = 1 << 22;

fn chunk_samples(patch: usize, out_plane: usize, n: usize) -> usize {
    (COL_BUDGET / (patch * out_plane).max(1)).clamp(1, n.max(1))
}

fn im2col<T: Real>(x: &Act<T>, g: &ConvGeom, n0: usize, n1: usize, ho: usize, wo: usize, col: &mut Vec<T>) {
    let cols = (n1 - n0) * ho * wo;
    col.clear();
    col.resize(g.patch() * cols, T::zero());
    let k = g.kernel;
    let (h, w) = (x.h as isize, x.w as isize);
    for ci in 0..g.c_in {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for i in n0..n1 {
                    let src = &x.data[(ci * x.n + i) * x.plane()..][..x.plane()];
                    let base = (i - n0) * ho * wo;
                    for oy in 0..ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        let srow = &src[iy as usize * x.w..][..x.w];
                        let drow = &mut dst[base + oy * wo..][..wo];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < w {
                                *d = srow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(col: &[T], g: &ConvGeom, n0: usize, n1: usize, ho: usize, wo: usize, dx: &mut Act<T>) {
    let cols = (n1 - n0) * ho * wo;
    let k = g.kernel;
    let (h, w) = (dx.h as isize, dx.w as isize);
    let (plane, n, dw) = (dx.plane(), dx.n, dx.w);
    for ci in 0..g.c_in {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * cols..(row + 1) * cols];
                for i in n0..n1 {
                    let dst = &mut dx.data[(ci * n + i) * plane..][..plane];
                    let base = (i - n0) * ho * wo;
                    for oy in 0..ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        let drow = &mut dst[iy as usize * dw..][..dw];
                        let srow = &src[base + oy * wo..][..wo];
                        for (ox, &v) in srow.iter().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < w {
                                drow[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `weight` is `[c_out][c_in][k][k]`.
pub(crate) fn conv_forward<T: Real>(x: &Act<T>, weight: &[T], bias: Option<&[T]>, g: &ConvGeom) -> Act<T> {
    debug_assert_eq!(x.c, g.c_in);
    let (ho, wo) = g.out_size(x.h, x.w);
    let mut y = Act::zeros(g.c_out, x.n, ho, wo);
    let out_plane = ho * wo;
    let row = x.n * out_plane;
    let step = chunk_samples(g.patch(), out_plane, x.n);
    let mut col = Vec::new();
    let mut n0 = 0;
    while n0 < x.n {
        let n1 = (n0 + step).min(x.n);
        let cols = (n1 - n0) * out_plane;
        im2col(x, g, n0, n1, ho, wo, &mut col);
        gemm(
            T::one(),
            weight,
            MatRef::dense(g.c_out, g.patch()),
            &col,
            MatRef::dense(g.patch(), cols),
            T::zero(),
            &mut y.data,
            MatRef::dense(g.c_out, cols).with_rs(row).at(n0 * out_plane),
        );
        n0 = n1;
    }
    if let Some(b) = bias {
        for (co, &bv) in b.iter().enumerate() {
            y.data[co * row..(co + 1) * row].iter_mut().for_each(|v| *v += bv);
        }
    }
    y
}

/// Accumulates into `dweight`/`dbias` and returns the input gradient.
pub(crate) fn conv_backward<T: Real>(
    x: &Act<T>,
    weight: &[T],
    g: &ConvGeom,
    dy: &Act<T>,
    dweight: &mut [T],
    dbias: Option<&mut [T]>,
    need_dx: bool,
) -> Option<Act<T>> {
    let (ho, wo) = (dy.h, dy.w);
    let out_plane = ho * wo;
    let row = dy.n * out_plane;
    let step = chunk_samples(g.patch(), out_plane, x.n);
    let mut dx = need_dx.then(|| Act::zeros(x.c, x.n, x.h, x.w));
    let mut col = Vec::new();
    let mut dcol = Vec::new();
    let mut n0 = 0;
    while n0 < x.n {
        let n1 = (n0 + step).min(x.n);
        let cols = (n1 - n0) * out_plane;
        im2col(x, g, n0, n1, ho, wo, &mut col);
        let dy_view = MatRef::dense(g.c_out, cols).with_rs(row).at(n0 * out_plane);
        gemm(
            T::one(),
            &dy.data,
            dy_view,
            &col,
            MatRef::dense(g.patch(), cols).t(),
            T::one(),
            dweight,
            MatRef::dense(g.c_out, g.patch()),
        );
        if let Some(dx) = dx.as_mut() {
            dcol.clear();
            dcol.resize(g.patch() * cols, T::zero());
            gemm(
                T::one(),
                weight,
                MatRef::dense(g.c_out, g.patch()).t(),
                &dy.data,
                dy_view,
                T::zero(),
                &mut dcol,
                MatRef::dense(g.patch(), cols),
            );
            col2im(&dcol, g, n0, n1, ho, wo, dx);
        }
        n0 = n1;
    }
    if let Some(db) = dbias {
        for (co, d) in db.iter_mut().enumerate() {
            *d += dy.data[co * row..(co + 1) * row].iter().copied().sum::<T>();
        }
    }
    dx
}

pub(crate) const BN_EPSILON: f64 = 1e-5;

pub(crate) struct BnCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Batch statistics of one BN layer: per-channel mean and unbiased variance.
#[derive(Clone, Debug)]
pub(crate) struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub(crate) fn bn_forward_train<T: Real>(x: &Act<T>, gamma: &[T], beta: &[T]) -> (Act<T>, BnCache<T>, BnStats) {
    let m = x.row();
    let mut y = Act::zeros(x.c, x.n, x.h, x.w);
    let mut xhat = vec![T::zero(); x.data.len()];
    let mut inv_std = Vec::with_capacity(x.c);
    let mut stats = BnStats {
        mean: Vec::with_capacity(x.c),
        var: Vec::with_capacity(x.c),
    };
    for c in 0..x.c {
        let src = &x.data[c * m..(c + 1) * m];
        let mean = src.iter().map(|v| v.to_f64().unwrap()).sum::<f64>() / m as f64;
        let var = src
            .iter()
            .map(|v| {
                let d = v.to_f64().unwrap() - mean;
                d * d
            })
            .sum::<f64>()
            / m as f64;
        let istd = 1.0 / (var + BN_EPSILON).sqrt();
        let (mean_t, istd_t) = (T::lit(mean), T::lit(istd));
        let (gm, bt) = (gamma[c], beta[c]);
        let xh = &mut xhat[c * m..(c + 1) * m];
        let yr = &mut y.data[c * m..(c + 1) * m];
        for ((xv, h), yv) in src.iter().zip(xh.iter_mut()).zip(yr.iter_mut()) {
            *h = (*xv - mean_t) * istd_t;
            *yv = gm * *h + bt;
        }
        inv_std.push(istd_t);
        stats.mean.push(mean);
        stats.var.push(if m > 1 { var * m as f64 / (m - 1) as f64 } else { var });
    }
    (y, BnCache { xhat, inv_std }, stats)
}

pub(crate) fn bn_forward_eval<T: Real>(x: &Act<T>, gamma: &[T], beta: &[T], mean: &[T], var: &[T]) -> Act<T> {
    let m = x.row();
    let mut y = Act::zeros(x.c, x.n, x.h, x.w);
    for c in 0..x.c {
        let istd = T::one() / (var[c] + T::lit(BN_EPSILON)).sqrt();
        let scale = gamma[c] * istd;
        let shift = beta[c] - mean[c] * scale;
        for (yv, &xv) in y.data[c * m..(c + 1) * m].iter_mut().zip(&x.data[c * m..(c + 1) * m]) {
            *yv = xv * scale + shift;
        }
    }
    y
}

pub(crate) fn bn_backward<T: Real>(
    cache: &BnCache<T>,
    gamma: &[T],
    dy: &Act<T>,
    dgamma: &mut [T],
    dbeta: &mut [T],
) -> Act<T> {
    let m = dy.row();
    let mf = T::lit(m as f64);
    let mut dx = Act::zeros(dy.c, dy.n, dy.h, dy.w);
    for c in 0..dy.c {
        let d = &dy.data[c * m..(c + 1) * m];
        let xh = &cache.xhat[c * m..(c + 1) * m];
        let sum_dy: T = d.iter().copied().sum();
        let sum_dy_xh: T = d.iter().zip(xh).map(|(&a, &b)| a * b).sum();
        dgamma[c] += sum_dy_xh;
        dbeta[c] += sum_dy;
        let k = gamma[c] * cache.inv_std[c] / mf;
        for ((o, &dv), &h) in dx.data[c * m..(c + 1) * m].iter_mut().zip(d).zip(xh) {
            *o = k * (mf * dv - sum_dy - h * sum_dy_xh);
        }
    }
    dx
}

pub(crate) fn relu_inplace<T: Real>(x: &mut Act<T>) {
    x.data.iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = T::zero()
        }
    });
}

/// Masks `dy` where the ReLU output was not positive.
pub(crate) fn relu_backward<T: Real>(out: &Act<T>, dy: &mut Act<T>) {
    for (d, &o) in dy.data.iter_mut().zip(&out.data) {
        if o <= T::zero() {
            *d = T::zero();
        }
    }
}

/// 3x3 stride-2 max pool with one pixel of implicit `-inf` padding. Returns
/// the flat input index of every output's maximum (first on ties).
pub(crate) fn maxpool_forward<T: Real>(x: &Act<T>) -> (Act<T>, Vec<u32>) {
    let g = ConvGeom {
        c_in: x.c,
        c_out: x.c,
        kernel: 3,
        stride: 2,
        pad: 1,
    };
    let (ho, wo) = g.out_size(x.h, x.w);
    let mut y = Act::zeros(x.c, x.n, ho, wo);
    let mut arg = vec![0u32; y.data.len()];
    let (plane, oplane) = (x.plane(), ho * wo);
    for p in 0..x.c * x.n {
        let src = &x.data[p * plane..(p + 1) * plane];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = T::neg_infinity();
                let mut best_i = 0usize;
                for ky in 0..3 {
                    let iy = (oy * 2 + ky) as isize - 1;
                    if iy < 0 || iy >= x.h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let ix = (ox * 2 + kx) as isize - 1;
                        if ix < 0 || ix >= x.w as isize {
                            continue;
                        }
                        let i = iy as usize * x.w + ix as usize;
                        if src[i] > best {
                            best = src[i];
                            best_i = i;
                        }
                    }
                }
                let o = p * oplane + oy * wo + ox;
                y.data[o] = best;
                arg[o] = (p * plane + best_i) as u32;
            }
        }
    }
    (y, arg)
}

pub(crate) fn maxpool_backward<T: Real>(arg: &[u32], input: (usize, usize, usize, usize), dy: &Act<T>) -> Act<T> {
    let (c, n, h, w) = input;
    let mut dx = Act::zeros(c, n, h, w);
    for (&a, &d) in arg.iter().zip(&dy.data) {
        dx.data[a as usize] += d;
    }
    dx
}

/// Identity shortcut that subsamples by `stride` and zero-fills channels
/// beyond the input's.
pub(crate) fn zero_pad_forward<T: Real>(x: &Act<T>, c_out: usize, stride: usize) -> Act<T> {
    let (ho, wo) = ((x.h - 1) / stride + 1, (x.w - 1) / stride + 1);
    let mut y = Act::zeros(c_out, x.n, ho, wo);
    for c in 0..x.c.min(c_out) {
        for i in 0..x.n {
            let src = &x.data[(c * x.n + i) * x.plane()..][..x.plane()];
            let dst = &mut y.data[(c * x.n + i) * ho * wo..][..ho * wo];
            for oy in 0..ho {
                for ox in 0..wo {
                    dst[oy * wo + ox] = src[oy * stride * x.w + ox * stride];
                }
            }
        }
    }
    y
}

pub(crate) fn zero_pad_backward<T: Real>(dy: &Act<T>, input: (usize, usize, usize, usize), stride: usize) -> Act<T> {
    let (c_in, n, h, w) = input;
    let mut dx = Act::zeros(c_in, n, h, w);
    let oplane = dy.plane();
    for c in 0..c_in.min(dy.c) {
        for i in 0..n {
            let src = &dy.data[(c * n + i) * oplane..][..oplane];
            let dst = &mut dx.data[(c * n + i) * h * w..][..h * w];
            for oy in 0..dy.h {
                for ox in 0..dy.w {
                    dst[oy * stride * w + ox * stride] += src[oy * dy.w + ox];
                }
            }
        }
    }
    dx
}

/// Mean over each sample's spatial plane; returns row-major `N x C`.
pub(crate) fn global_avg_pool<T: Real>(x: &Act<T>) -> Vec<T> {
    let plane = x.plane();
    let scale = T::one() / T::lit(plane as f64);
    let mut out = vec![T::zero(); x.n * x.c];
    for c in 0..x.c {
        for i in 0..x.n {
            let s: T = x.data[(c * x.n + i) * plane..][..plane].iter().copied().sum();
            out[i * x.c + c] = s * scale;
        }
    }
    out
}

pub(crate) fn global_avg_pool_backward<T: Real>(dfeat: &[T], shape: (usize, usize, usize, usize)) -> Act<T> {
    let (c, n, h, w) = shape;
    let plane = h * w;
    let scale = T::one() / T::lit(plane as f64);
    let mut dx = Act::zeros(c, n, h, w);
    for ch in 0..c {
        for i in 0..n {
            let g = dfeat[i * c + ch] * scale;
            dx.data[(ch * n + i) * plane..][..plane].iter_mut().for_each(|v| *v = g);
        }
    }
    dx
}

/// `logits = feats * W^T + b` with `W` stored `[out][in]`.
pub(crate) fn linear_forward<T: Real>(feats: &[T], n: usize, weight: &[T], bias: &[T], fin: usize, fout: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * fout];
    for i in 0..n {
        out[i * fout..(i + 1) * fout].copy_from_slice(bias);
    }
    gemm(
        T::one(),
        feats,
        MatRef::dense(n, fin),
        weight,
        MatRef::dense(fout, fin).t(),
        T::one(),
        &mut out,
        MatRef::dense(n, fout),
    );
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_backward<T: Real>(
    feats: &[T],
    n: usize,
    weight: &[T],
    fin: usize,
    fout: usize,
    dlogits: &[T],
    dweight: &mut [T],
    dbias: &mut [T],
) -> Vec<T> {
    gemm(
        T::one(),
        dlogits,
        MatRef::dense(n, fout).t(),
        feats,
        MatRef::dense(n, fin),
        T::one(),
        dweight,
        MatRef::dense(fout, fin),
    );
    for i in 0..n {
        for (db, &d) in dbias.iter_mut().zip(&dlogits[i * fout..(i + 1) * fout]) {
            *db += d;
        }
    }
    let mut dfeat = vec![T::zero(); n * fin];
    gemm(
        T::one(),
        dlogits,
        MatRef::dense(n, fout),
        weight,
        MatRef::dense(fout, fin),
        T::zero(),
        &mut dfeat,
        MatRef::dense(n, fin),
    );
    dfeat
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct seven-loop convolution.
    fn naive_conv(x: &Act<f64>, w: &[f64], g: &ConvGeom) -> Act<f64> {
        let (ho, wo) = g.out_size(x.h, x.w);
        let mut y = Act::zeros(g.c_out, x.n, ho, wo);
        for co in 0..g.c_out {
            for i in 0..x.n {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut s = 0.0;
                        for ci in 0..g.c_in {
                            for ky in 0..g.kernel {
                                for kx in 0..g.kernel {
                                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < x.h && (ix as usize) < x.w {
                                        s += w[((co * g.c_in + ci) * g.kernel + ky) * g.kernel + kx]
                                            * x.data[((ci * x.n + i) * x.h + iy as usize) * x.w + ix as usize];
                                    }
                                }
                            }
                        }
                        y.data[((co * x.n + i) * ho + oy) * wo + ox] = s;
                    }
                }
            }
        }
        y
    }

    fn filled(c: usize, n: usize, h: usize, w: usize, seed: f64) -> Act<f64> {
        let mut a = Act::zeros(c, n, h, w);
        for (i, v) in a.data.iter_mut().enumerate() {
            *v = ((i as f64 + seed) * 0.731).sin();
        }
        a
    }

    #[test]
    fn conv_matches_naive() {
        for g in [
            ConvGeom { c_in: 3, c_out: 4, kernel: 3, stride: 1, pad: 1 },
            ConvGeom { c_in: 2, c_out: 5, kernel: 7, stride: 2, pad: 3 },
            ConvGeom { c_in: 4, c_out: 6, kernel: 1, stride: 2, pad: 0 },
        ] {
            let x = filled(g.c_in, 3, 9, 8, 0.5);
            let w: Vec<f64> = (0..g.c_out * g.c_in * g.kernel * g.kernel)
                .map(|i| (i as f64 * 0.37).cos())
                .collect();
            let fast = conv_forward(&x, &w, None, &g);
            let slow = naive_conv(&x, &w, &g);
            assert_eq!((fast.h, fast.w), (slow.h, slow.w));
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nchw_round_trip() {
        let t = Tensor4::from_vec([2, 3, 2, 2], (0..24).map(|i| i as f64).collect()).unwrap();
        let a = Act::from_nchw(&t);
        assert_eq!(a.data[4], 12.0);
        assert_eq!(a.to_nchw(), t);
    }

    #[test]
    fn maxpool_sizes_and_values() {
        let x = filled(2, 1, 7, 6, 0.1);
        let (y, arg) = maxpool_forward(&x);
        assert_eq!((y.h, y.w), (4, 3));
        for (o, &a) in arg.iter().enumerate() {
            assert_eq!(y.data[o], x.data[a as usize]);
        }
    }

    #[test]
    fn zero_pad_keeps_and_fills() {
        let x = filled(2, 2, 4, 4, 0.0);
        let y = zero_pad_forward(&x, 3, 2);
        assert_eq!((y.c, y.h, y.w), (3, 2, 2));
        assert_eq!(y.data[0], x.data[0]);
        assert_eq!(y.data[1], x.data[2]);
        assert!(y.data[2 * 2 * 4..].iter().all(|&v| v == 0.0));
    }
}

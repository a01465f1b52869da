//! Forward and backward kernels for the layers of the residual U-Net.
//!
//! Convolutions lower to GEMM through im2col; backward recomputes the column
//! buffer from the cached input instead of storing it.

use super::tensor::{Float, Mat, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub k: usize,
    pub stride: usize,
}

impl ConvGeom {
    pub fn pad(&self) -> usize {
        self.k / 2
    }

    pub fn out_dim(&self, n: usize) -> usize {
        (n + 2 * self.pad() - self.k) / self.stride + 1
    }

    pub fn out_shape(&self, s: [usize; 3]) -> [usize; 3] {
        s.map(|n| self.out_dim(n))
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1
    }
}

/// Output columns per GEMM call; keeps the column buffer cache-resident.
const CHUNK_COLUMNS: usize = 1024;

fn chunks(o: [usize; 3]) -> impl Iterator<Item = (usize, usize)> {
    let plane = o[1] * o[2];
    let step = (CHUNK_COLUMNS / plane).max(1);
    (0..o[0]).step_by(step).map(move |z0| (z0, (z0 + step).min(o[0])))
}

/// Output positions `lo..hi` along one axis whose input index `o·st + k − p` lies in `0..n`.
fn valid_range(out: usize, n: usize, st: usize, k: usize, p: isize) -> (usize, usize) {
    let (st_i, k_i) = (st as isize, k as isize);
    let lo = ((p - k_i).max(0) + st_i - 1) / st_i;
    let hi = ((n as isize - 1 + p - k_i).div_euclid(st_i) + 1).clamp(0, out as isize);
    let lo = (lo as usize).min(hi as usize);
    (lo, hi as usize)
}

/// Column buffer for output planes `z0..z1`: one row per `(ci, kz, ky, kx)`.
#[allow(clippy::too_many_arguments)]
fn im2col<F: Float>(x: &[F], c: usize, s: [usize; 3], g: ConvGeom, o: [usize; 3], z0: usize, z1: usize, col: &mut [F]) {
    let [d, h, w] = s;
    let [_, oh, ow] = o;
    let (k, st, p) = (g.k, g.stride, g.pad() as isize);
    let ncol = (z1 - z0) * oh * ow;
    let mut row = 0;
    for ci in 0..c {
        let xc = &x[ci * d * h * w..(ci + 1) * d * h * w];
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    let dst = &mut col[row * ncol..(row + 1) * ncol];
                    row += 1;
                    for oz in z0..z1 {
                        let iz = (oz * st + kz) as isize - p;
                        for oy in 0..oh {
                            let iy = (oy * st + ky) as isize - p;
                            let at = ((oz - z0) * oh + oy) * ow;
                            let line = &mut dst[at..at + ow];
                            if iz < 0 || iz >= d as isize || iy < 0 || iy >= h as isize {
                                line.fill(F::zero());
                                continue;
                            }
                            let base = (iz as usize * h + iy as usize) * w;
                            let src = &xc[base..base + w];
                            let (lo, hi) = valid_range(ow, w, st, kx, p);
                            line[..lo].fill(F::zero());
                            line[hi..].fill(F::zero());
                            if st == 1 {
                                let ix0 = (lo + kx) as isize - p;
                                line[lo..hi].copy_from_slice(&src[ix0 as usize..ix0 as usize + hi - lo]);
                            } else {
                                for (ox, v) in line.iter_mut().enumerate().take(hi).skip(lo) {
                                    *v = src[((ox * st + kx) as isize - p) as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im<F: Float>(col: &[F], c: usize, s: [usize; 3], g: ConvGeom, o: [usize; 3], z0: usize, z1: usize, dx: &mut [F]) {
    let [d, h, w] = s;
    let [_, oh, ow] = o;
    let (k, st, p) = (g.k, g.stride, g.pad() as isize);
    let ncol = (z1 - z0) * oh * ow;
    let mut row = 0;
    for ci in 0..c {
        let xc = &mut dx[ci * d * h * w..(ci + 1) * d * h * w];
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    let src = &col[row * ncol..(row + 1) * ncol];
                    row += 1;
                    for oz in z0..z1 {
                        let iz = (oz * st + kz) as isize - p;
                        if iz < 0 || iz >= d as isize {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = (oy * st + ky) as isize - p;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let at = ((oz - z0) * oh + oy) * ow;
                            let line = &src[at..at + ow];
                            let base = (iz as usize * h + iy as usize) * w;
                            let (lo, hi) = valid_range(ow, w, st, kx, p);
                            if st == 1 {
                                let ix0 = base + ((lo + kx) as isize - p) as usize;
                                for (d, &v) in xc[ix0..ix0 + hi - lo].iter_mut().zip(&line[lo..hi]) {
                                    *d = *d + v;
                                }
                            } else {
                                for (ox, &v) in line.iter().enumerate().take(hi).skip(lo) {
                                    let i = base + ((ox * st + kx) as isize - p) as usize;
                                    xc[i] = xc[i] + v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `w` has shape `(c_out, c_in, k, k, k)`.
pub fn conv3d_forward<F: Float>(x: &Tensor<F>, w: &[F], bias: Option<&[F]>, c_out: usize, g: ConvGeom) -> Tensor<F> {
    let c_in = x.channels();
    let kk = c_in * g.k * g.k * g.k;
    assert_eq!(w.len(), c_out * kk, "conv weight shape");
    let o = g.out_shape(x.spatial());
    let nout: usize = o.iter().product();
    let plane = o[1] * o[2];
    let mut y = Tensor::zeros([x.batch(), c_out, o[0], o[1], o[2]]);
    let mut col = Vec::new();
    let wm = Mat::dense(w, c_out, kk, false);
    for n in 0..x.batch() {
        let xs = x.sample(n);
        let ys = y.sample_mut(n);
        for (z0, z1) in chunks(o) {
            let (off, ncol) = (z0 * plane, (z1 - z0) * plane);
            let b = if g.is_pointwise() {
                Mat { data: &xs[off..], rs: nout, cs: 1 }
            } else {
                col.resize(kk * ncol, F::zero());
                im2col(xs, c_in, x.spatial(), g, o, z0, z1, &mut col);
                Mat::dense(&col, kk, ncol, false)
            };
            F::gemm_strided(c_out, kk, ncol, wm, b, &mut ys[off..], (nout, 1), false);
        }
        if let Some(bias) = bias {
            for (co, &bv) in bias.iter().enumerate() {
                for v in &mut ys[co * nout..(co + 1) * nout] {
                    *v = *v + bv;
                }
            }
        }
    }
    y
}

/// Accumulates weight (and bias) gradients; returns the input gradient when requested.
pub fn conv3d_backward<F: Float>(
    x: &Tensor<F>,
    w: &[F],
    dy: &Tensor<F>,
    g: ConvGeom,
    dw: &mut [F],
    dbias: Option<&mut [F]>,
    need_dx: bool,
) -> Option<Tensor<F>> {
    let c_in = x.channels();
    let c_out = dy.channels();
    let kk = c_in * g.k * g.k * g.k;
    let o = dy.spatial();
    let nout: usize = o.iter().product();
    let plane = o[1] * o[2];
    // Stride-1 input gradients are a forward conv of dy with the flipped kernel.
    let flipped = (need_dx && g.stride == 1 && !g.is_pointwise()).then(|| flip_kernel(w, c_out, c_in, g.k));
    let wt = Mat::dense(w, kk, c_out, true);
    let mut col = Vec::new();
    let mut dcol = Vec::new();
    let mut dx = (need_dx && flipped.is_none()).then(|| Tensor::zeros(x.shape()));
    for n in 0..x.batch() {
        let (xs, dys) = (x.sample(n), dy.sample(n));
        for (z0, z1) in chunks(o) {
            let (off, ncol) = (z0 * plane, (z1 - z0) * plane);
            let dyc = Mat { data: &dys[off..], rs: nout, cs: 1 };
            let cols = if g.is_pointwise() {
                Mat { data: &xs[off..], rs: nout, cs: 1 }
            } else {
                col.resize(kk * ncol, F::zero());
                im2col(xs, c_in, x.spatial(), g, o, z0, z1, &mut col);
                Mat::dense(&col, kk, ncol, false)
            };
            // dwᵀ += cols · dyᵀ, which keeps the long column buffer in row-major order.
            let dyt = Mat { data: &dys[off..], rs: 1, cs: nout };
            F::gemm_strided(kk, ncol, c_out, cols, dyt, dw, (1, kk), true);
            if let Some(dx) = dx.as_mut() {
                if g.is_pointwise() {
                    F::gemm_strided(kk, c_out, ncol, wt, dyc, &mut dx.sample_mut(n)[off..], (nout, 1), false);
                } else {
                    dcol.resize(kk * ncol, F::zero());
                    F::gemm_strided(kk, c_out, ncol, wt, dyc, &mut dcol, (ncol, 1), false);
                    col2im(&dcol, c_in, x.spatial(), g, o, z0, z1, dx.sample_mut(n));
                }
            }
        }
    }
    if let Some(db) = dbias {
        accumulate_channel_sums(dy, db);
    }
    match flipped {
        Some(wf) => Some(conv3d_forward(dy, &wf, None, c_in, g)),
        None => dx,
    }
}

/// `(c_out, c_in, k³)` → `(c_in, c_out, k³)` with every spatial axis reversed.
fn flip_kernel<F: Float>(w: &[F], c_out: usize, c_in: usize, k: usize) -> Vec<F> {
    let k3 = k * k * k;
    let mut out = vec![F::zero(); w.len()];
    for co in 0..c_out {
        for ci in 0..c_in {
            let src = &w[(co * c_in + ci) * k3..][..k3];
            let dst = &mut out[(ci * c_out + co) * k3..][..k3];
            for (i, &v) in src.iter().enumerate() {
                dst[k3 - 1 - i] = v;
            }
        }
    }
    out
}

fn accumulate_channel_sums<F: Float>(dy: &Tensor<F>, db: &mut [F]) {
    let v = dy.voxels();
    for n in 0..dy.batch() {
        let s = dy.sample(n);
        for (c, d) in db.iter_mut().enumerate() {
            *d = *d + s[c * v..(c + 1) * v].iter().copied().sum::<F>();
        }
    }
}

/// Kernel-2 stride-2 transposed convolution; `w` has shape `(c_in, c_out, 2, 2, 2)`.
pub fn conv_transpose2_forward<F: Float>(x: &Tensor<F>, w: &[F], bias: &[F], c_out: usize) -> Tensor<F> {
    let c_in = x.channels();
    assert_eq!(w.len(), c_in * c_out * 8, "transposed conv weight shape");
    let [d, h, wd] = x.spatial();
    let nin = d * h * wd;
    let mut y = Tensor::zeros([x.batch(), c_out, 2 * d, 2 * h, 2 * wd]);
    let mut ycol = vec![F::zero(); c_out * 8 * nin];
    for n in 0..x.batch() {
        F::gemm(c_out * 8, c_in, nin, w, true, x.sample(n), false, &mut ycol, false);
        let ys = y.sample_mut(n);
        for co in 0..c_out {
            for t in 0..8 {
                let (a, b, c) = (t >> 2, (t >> 1) & 1, t & 1);
                let src = &ycol[(co * 8 + t) * nin..(co * 8 + t + 1) * nin];
                for z in 0..d {
                    for yy in 0..h {
                        let row = ((co * 2 * d + 2 * z + a) * 2 * h + 2 * yy + b) * 2 * wd + c;
                        for xx in 0..wd {
                            ys[row + 2 * xx] = src[(z * h + yy) * wd + xx] + bias[co];
                        }
                    }
                }
            }
        }
    }
    y
}

pub fn conv_transpose2_backward<F: Float>(
    x: &Tensor<F>,
    w: &[F],
    dy: &Tensor<F>,
    dw: &mut [F],
    dbias: &mut [F],
) -> Tensor<F> {
    let c_in = x.channels();
    let c_out = dy.channels();
    let [d, h, wd] = x.spatial();
    let nin = d * h * wd;
    let mut dycol = vec![F::zero(); c_out * 8 * nin];
    let mut dx = Tensor::zeros(x.shape());
    for n in 0..x.batch() {
        let dys = dy.sample(n);
        for co in 0..c_out {
            for t in 0..8 {
                let (a, b, c) = (t >> 2, (t >> 1) & 1, t & 1);
                let dst = &mut dycol[(co * 8 + t) * nin..(co * 8 + t + 1) * nin];
                for z in 0..d {
                    for yy in 0..h {
                        let row = ((co * 2 * d + 2 * z + a) * 2 * h + 2 * yy + b) * 2 * wd + c;
                        for xx in 0..wd {
                            dst[(z * h + yy) * wd + xx] = dys[row + 2 * xx];
                        }
                    }
                }
            }
        }
        let xt = Mat { data: x.sample(n), rs: 1, cs: nin };
        F::gemm_strided(c_out * 8, nin, c_in, Mat::dense(&dycol, c_out * 8, nin, false), xt, dw, (1, c_out * 8), true);
        F::gemm(c_in, c_out * 8, nin, w, false, &dycol, false, dx.sample_mut(n), false);
    }
    accumulate_channel_sums(dy, dbias);
    dx
}

pub const NORM_EPS: f64 = 1e-5;

/// Per-sample, per-channel normalization state kept for the backward pass.
#[derive(Debug, Clone)]
pub struct NormCache<F> {
    xhat: Tensor<F>,
    inv_std: Vec<F>,
}

pub fn instance_norm_forward<F: Float>(x: &Tensor<F>, gamma: &[F], beta: &[F]) -> (Tensor<F>, NormCache<F>) {
    let c = x.channels();
    let v = x.voxels();
    let mut xhat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    let mut inv_std = Vec::with_capacity(x.batch() * c);
    for n in 0..x.batch() {
        let xs = x.sample(n);
        let hs = xhat.sample_mut(n);
        for ch in 0..c {
            let src = &xs[ch * v..(ch + 1) * v];
            let mean = src.iter().map(|a| a.f64()).sum::<f64>() / v as f64;
            let var = src.iter().map(|a| (a.f64() - mean).powi(2)).sum::<f64>() / v as f64;
            let is = 1.0 / (var + NORM_EPS).sqrt();
            let (m, isf) = (F::of(mean), F::of(is));
            for (dst, &a) in hs[ch * v..(ch + 1) * v].iter_mut().zip(src) {
                *dst = (a - m) * isf;
            }
            inv_std.push(isf);
        }
        let ys = y.sample_mut(n);
        for ch in 0..c {
            for (dst, &hv) in ys[ch * v..(ch + 1) * v].iter_mut().zip(&hs[ch * v..(ch + 1) * v]) {
                *dst = gamma[ch] * hv + beta[ch];
            }
        }
    }
    (y, NormCache { xhat, inv_std })
}

pub fn instance_norm_backward<F: Float>(
    cache: &NormCache<F>,
    gamma: &[F],
    dy: &Tensor<F>,
    dgamma: &mut [F],
    dbeta: &mut [F],
) -> Tensor<F> {
    let c = dy.channels();
    let v = dy.voxels();
    let vf = F::of(v as f64);
    let mut dx = Tensor::zeros(dy.shape());
    for n in 0..dy.batch() {
        let (dys, hs) = (dy.sample(n), cache.xhat.sample(n));
        let dxs = dx.sample_mut(n);
        for ch in 0..c {
            let r = ch * v..(ch + 1) * v;
            let (g, h) = (&dys[r.clone()], &hs[r.clone()]);
            let sum_g: F = g.iter().copied().sum();
            let sum_gh: F = g.iter().zip(h).map(|(&a, &b)| a * b).sum();
            dgamma[ch] = dgamma[ch] + sum_gh;
            dbeta[ch] = dbeta[ch] + sum_g;
            let k = gamma[ch] * cache.inv_std[n * c + ch] / vf;
            for ((dst, &gv), &hv) in dxs[r].iter_mut().zip(g).zip(h) {
                *dst = k * (vf * gv - sum_g - hv * sum_gh);
            }
        }
    }
    dx
}

pub fn leaky_relu_forward<F: Float>(x: &mut Tensor<F>, slope: F) {
    for v in x.data_mut() {
        if *v < F::zero() {
            *v = *v * slope;
        }
    }
}

/// Uses the forward output: its sign equals the input's sign.
pub fn leaky_relu_backward<F: Float>(y: &Tensor<F>, dy: &mut Tensor<F>, slope: F) {
    for (g, &o) in dy.data_mut().iter_mut().zip(y.data()) {
        if o < F::zero() {
            *g = *g * slope;
        }
    }
}

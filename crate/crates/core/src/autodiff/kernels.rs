//! Hot numeric kernels shared by the graph ops.
//!
//! Everything here is plain scalar f64 code arranged so the inner loops run
//! over contiguous output slices and autovectorize.

/// c += a (m,k) * b (k,n), row-major.
pub fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    matmul_acc(a, b, &mut c, m, k, n);
    c
}

/// c += a^T (stored (m,k)) * b (m,n) -> (k,n). Used for weight gradients.
pub fn matmul_at_b_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[kk * n..(kk + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// c += a (m,k) * b^T (stored (n,k)) -> (m,n). Transposes b once so the
/// inner loop runs over contiguous output lanes.
pub fn matmul_a_bt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    let bt = transpose(b, n, k);
    matmul_acc(a, &bt, c, m, k, n);
}

/// Row-major transpose of an (r, c) buffer into (c, r).
pub fn transpose(src: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = src[i * c + j];
        }
    }
    out
}

/// "Same" padding for kernel size `k` and stride `s`: output size ceil(n/s),
/// extra padding (when the total is odd) goes before the data.
pub fn same_padding(n: usize, k: usize, s: usize) -> (usize, usize, usize) {
    let out = n.div_ceil(s);
    let total = ((out - 1) * s + k).saturating_sub(n);
    let before = total.div_ceil(2);
    (out, before, total - before)
}

/// Layout of one convolution: all sizes derived from input/weight shapes.
#[derive(Clone, Copy, Debug)]
pub struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub c_out: usize,
    pub ksize: usize,
    pub stride: usize,
    pub h_out: usize,
    pub w_out: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvDims {
    pub fn new(batch: usize, c_in: usize, h_in: usize, w_in: usize, c_out: usize, ksize: usize, stride: usize) -> Self {
        let (h_out, pad_top, _) = same_padding(h_in, ksize, stride);
        let (w_out, pad_left, _) = same_padding(w_in, ksize, stride);
        ConvDims { batch, c_in, h_in, w_in, c_out, ksize, stride, h_out, w_out, pad_top, pad_left }
    }
}

/// Scatters one image (c_in, h_in, w_in) into patch-major columns
/// (h_out*w_out, c_in*ksize*ksize). Out-of-bounds taps stay zero.
fn im2col(img: &[f64], d: &ConvDims, cols: &mut [f64]) {
    let patch = d.c_in * d.ksize * d.ksize;
    cols.fill(0.0);
    for oy in 0..d.h_out {
        for ox in 0..d.w_out {
            let col = &mut cols[(oy * d.w_out + ox) * patch..][..patch];
            let iy0 = (oy * d.stride) as isize - d.pad_top as isize;
            let ix0 = (ox * d.stride) as isize - d.pad_left as isize;
            for c in 0..d.c_in {
                let plane = &img[c * d.h_in * d.w_in..][..d.h_in * d.w_in];
                for ky in 0..d.ksize {
                    let iy = iy0 + ky as isize;
                    if iy < 0 || iy >= d.h_in as isize {
                        continue;
                    }
                    let row = &plane[iy as usize * d.w_in..][..d.w_in];
                    let dst = &mut col[(c * d.ksize + ky) * d.ksize..][..d.ksize];
                    for (kx, slot) in dst.iter_mut().enumerate() {
                        let ix = ix0 + kx as isize;
                        if ix >= 0 && ix < d.w_in as isize {
                            *slot = row[ix as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates patch-major columns back into an image; adjoint of `im2col`.
fn col2im_acc(cols: &[f64], d: &ConvDims, img: &mut [f64]) {
    let patch = d.c_in * d.ksize * d.ksize;
    for oy in 0..d.h_out {
        for ox in 0..d.w_out {
            let col = &cols[(oy * d.w_out + ox) * patch..][..patch];
            let iy0 = (oy * d.stride) as isize - d.pad_top as isize;
            let ix0 = (ox * d.stride) as isize - d.pad_left as isize;
            for c in 0..d.c_in {
                let plane = &mut img[c * d.h_in * d.w_in..][..d.h_in * d.w_in];
                for ky in 0..d.ksize {
                    let iy = iy0 + ky as isize;
                    if iy < 0 || iy >= d.h_in as isize {
                        continue;
                    }
                    let row = &mut plane[iy as usize * d.w_in..][..d.w_in];
                    let src = &col[(c * d.ksize + ky) * d.ksize..][..d.ksize];
                    for (kx, &v) in src.iter().enumerate() {
                        let ix = ix0 + kx as isize;
                        if ix >= 0 && ix < d.w_in as isize {
                            row[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution. `x` is (batch, c_in, h, w), `w` is (c_out, c_in, k, k)
/// flattened to (c_out, patch) for the matmul; output is (batch, c_out, h', w').
pub fn conv2d_forward(x: &[f64], w: &[f64], d: &ConvDims) -> Vec<f64> {
    let patch = d.c_in * d.ksize * d.ksize;
    let opix = d.h_out * d.w_out;
    let mut out = vec![0.0; d.batch * d.c_out * opix];
    let mut cols = vec![0.0; opix * patch];
    let mut prod = vec![0.0; opix * d.c_out];
    // (c_out, patch) -> (patch, c_out) once; the per-image matmul then runs
    // its inner loop over contiguous output channels.
    let wt = transpose(w, d.c_out, patch);
    for b in 0..d.batch {
        let img = &x[b * d.c_in * d.h_in * d.w_in..][..d.c_in * d.h_in * d.w_in];
        im2col(img, d, &mut cols);
        prod.fill(0.0);
        matmul_acc(&cols, &wt, &mut prod, opix, patch, d.c_out);
        let dst = &mut out[b * d.c_out * opix..][..d.c_out * opix];
        for p in 0..opix {
            for co in 0..d.c_out {
                dst[co * opix + p] = prod[p * d.c_out + co];
            }
        }
    }
    out
}

/// Gradients of the convolution w.r.t. input and weights.
pub fn conv2d_backward(x: &[f64], w: &[f64], grad_out: &[f64], d: &ConvDims) -> (Vec<f64>, Vec<f64>) {
    let patch = d.c_in * d.ksize * d.ksize;
    let opix = d.h_out * d.w_out;
    let mut grad_x = vec![0.0; x.len()];
    let mut grad_w = vec![0.0; w.len()];
    let mut cols = vec![0.0; opix * patch];
    let mut go_pm = vec![0.0; opix * d.c_out]; // patch-major grad_out
    let mut gcols = vec![0.0; opix * patch];
    for b in 0..d.batch {
        let img = &x[b * d.c_in * d.h_in * d.w_in..][..d.c_in * d.h_in * d.w_in];
        let go = &grad_out[b * d.c_out * opix..][..d.c_out * opix];
        for p in 0..opix {
            for co in 0..d.c_out {
                go_pm[p * d.c_out + co] = go[co * opix + p];
            }
        }
        // grad_w += go_pm^T (opix, c_out) x cols (opix, patch)
        im2col(img, d, &mut cols);
        matmul_at_b_acc(&go_pm, &cols, &mut grad_w, opix, d.c_out, patch);
        // grad_cols = go_pm (opix, c_out) x w (c_out, patch)
        gcols.fill(0.0);
        matmul_acc(&go_pm, w, &mut gcols, opix, d.c_out, patch);
        let gx = &mut grad_x[b * d.c_in * d.h_in * d.w_in..][..d.c_in * d.h_in * d.w_in];
        col2im_acc(&gcols, d, gx);
    }
    (grad_x, grad_w)
}

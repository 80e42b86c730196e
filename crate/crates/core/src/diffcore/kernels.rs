//! Dense inner loops shared by forward and backward passes.
//!
//! Every kernel computes each output row with a sequential inner sum and
//! parallelizes only across rows, so results are bit-identical regardless of
//! thread count.

use crate::par;

/// `out[bi] = a[bi] · b[bi or shared]` for `batch` products of `m×k · k×n`.
pub fn matmul(a: &[f64], b: &[f64], batch: usize, m: usize, k: usize, n: usize, shared_b: bool) -> Vec<f64> {
    let mut out = vec![0.0; batch * m * n];
    par::for_each_chunk(&mut out, n, batch * m * k * n, |row, dst| {
        let bi = row / m;
        let a_row = &a[row * k..(row + 1) * k];
        let b_mat = if shared_b { b } else { &b[bi * k * n..(bi + 1) * k * n] };
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b_mat[p * n..(p + 1) * n];
            for (d, &bv) in dst.iter_mut().zip(b_row) {
                *d += av * bv;
            }
        }
    });
    out
}

/// `out[bi] = g[bi] · b[bi]ᵀ` where `g` is `m×n` and `b` is `k×n`; result `m×k`.
pub fn matmul_nt(g: &[f64], b: &[f64], batch: usize, m: usize, n: usize, k: usize, shared_b: bool) -> Vec<f64> {
    let mut out = vec![0.0; batch * m * k];
    par::for_each_chunk(&mut out, k, batch * m * k * n, |row, dst| {
        let bi = row / m;
        let g_row = &g[row * n..(row + 1) * n];
        let b_mat = if shared_b { b } else { &b[bi * k * n..(bi + 1) * k * n] };
        for (p, d) in dst.iter_mut().enumerate() {
            let b_row = &b_mat[p * n..(p + 1) * n];
            *d = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    });
    out
}

/// `out[bi] = a[bi]ᵀ · g[bi]` where `a` is `m×k`, `g` is `m×n`; result `k×n`.
pub fn matmul_tn(a: &[f64], g: &[f64], batch: usize, m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; batch * k * n];
    par::for_each_chunk(&mut out, n, batch * m * k * n, |row, dst| {
        let bi = row / k;
        let p = row % k;
        for i in 0..m {
            let av = a[(bi * m + i) * k + p];
            if av == 0.0 {
                continue;
            }
            let g_row = &g[(bi * m + i) * n..(bi * m + i + 1) * n];
            for (d, &gv) in dst.iter_mut().zip(g_row) {
                *d += av * gv;
            }
        }
    });
    out
}

/// Geometry of a length-preserving 1-D convolution over `series` sequences.
#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub series: usize,
    pub len: usize,
    pub cin: usize,
    pub cout: usize,
    pub ksize: usize,
}

impl ConvDims {
    fn pad(&self) -> isize {
        (self.ksize / 2) as isize
    }

    fn work(&self) -> usize {
        self.series * self.len * self.ksize * self.cin * self.cout
    }
}

/// Cross-correlation with zero padding so the output keeps the input length.
pub fn conv1d_same(x: &[f64], w: &[f64], d: ConvDims) -> Vec<f64> {
    let mut out = vec![0.0; d.series * d.len * d.cout];
    let pad = d.pad();
    par::for_each_chunk(&mut out, d.cout, d.work(), |row, dst| {
        let s = row / d.len;
        let t = (row % d.len) as isize;
        for tau in 0..d.ksize {
            let src = t + tau as isize - pad;
            if src < 0 || src >= d.len as isize {
                continue;
            }
            let x_row = &x[(s * d.len + src as usize) * d.cin..][..d.cin];
            for (ci, &xv) in x_row.iter().enumerate() {
                let w_row = &w[(tau * d.cin + ci) * d.cout..][..d.cout];
                for (o, &wv) in dst.iter_mut().zip(w_row) {
                    *o += xv * wv;
                }
            }
        }
    });
    out
}

pub fn conv1d_grad_input(g: &[f64], w: &[f64], d: ConvDims) -> Vec<f64> {
    let mut out = vec![0.0; d.series * d.len * d.cin];
    let pad = d.pad();
    par::for_each_chunk(&mut out, d.cin, d.work(), |row, dst| {
        let s = row / d.len;
        let t_in = (row % d.len) as isize;
        for tau in 0..d.ksize {
            let t_out = t_in - tau as isize + pad;
            if t_out < 0 || t_out >= d.len as isize {
                continue;
            }
            let g_row = &g[(s * d.len + t_out as usize) * d.cout..][..d.cout];
            for (ci, o) in dst.iter_mut().enumerate() {
                let w_row = &w[(tau * d.cin + ci) * d.cout..][..d.cout];
                *o += g_row.iter().zip(w_row).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    });
    out
}

pub fn conv1d_grad_kernel(x: &[f64], g: &[f64], d: ConvDims) -> Vec<f64> {
    let mut out = vec![0.0; d.ksize * d.cin * d.cout];
    let pad = d.pad();
    par::for_each_chunk(&mut out, d.cout, d.work(), |row, dst| {
        let tau = (row / d.cin) as isize;
        let ci = row % d.cin;
        for s in 0..d.series {
            for t in 0..d.len as isize {
                let src = t + tau - pad;
                if src < 0 || src >= d.len as isize {
                    continue;
                }
                let xv = x[(s * d.len + src as usize) * d.cin + ci];
                if xv == 0.0 {
                    continue;
                }
                let g_row = &g[(s * d.len + t as usize) * d.cout..][..d.cout];
                for (o, &gv) in dst.iter_mut().zip(g_row) {
                    *o += xv * gv;
                }
            }
        }
    });
    out
}

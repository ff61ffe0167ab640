//! Real SVD of a 1-D circulant convolution matrix.
//!
//! A real circulant `C` with kernel `k` (odd length, centred) acts on the
//! Fourier pair `(cos_k, sin_k)` as a scaled rotation by the phase of its
//! eigenvalue `lambda_k`. Taking `V` = the orthonormal real Fourier basis and
//! `U` = that basis rotated by `arg(lambda_k)` gives `C = U diag(|lambda|) V^T`
//! with nonnegative singular values and no numerical SVD.

use std::f64::consts::PI;

use nalgebra::DMatrix;

#[derive(Debug, Clone)]
pub(crate) struct CirculantSvd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub v: DMatrix<f64>,
}

/// `(C x)[i] = sum_a k[a] x[(i + a - h) mod n]` with `h = (len - 1) / 2`.
pub(crate) fn convolve(kernel: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    let h = (kernel.len() - 1) / 2;
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (a, &k) in kernel.iter().enumerate() {
            let idx = (i + a + n * kernel.len() - h) % n;
            acc += k * x[idx];
        }
        *o = acc;
    }
}

/// Adjoint of [`convolve`].
pub(crate) fn convolve_transpose(kernel: &[f64], y: &[f64], out: &mut [f64]) {
    let n = y.len();
    let h = (kernel.len() - 1) / 2;
    for (j, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (a, &k) in kernel.iter().enumerate() {
            let idx = (j + h + n * kernel.len() - a) % n;
            acc += k * y[idx];
        }
        *o = acc;
    }
}

fn eigenvalue(kernel: &[f64], n: usize, freq: usize) -> (f64, f64) {
    let h = (kernel.len() - 1) as f64 / 2.0;
    kernel.iter().enumerate().fold((0.0, 0.0), |(re, im), (a, &k)| {
        let phase = 2.0 * PI * (a as f64 - h) * freq as f64 / n as f64;
        (re + k * phase.cos(), im + k * phase.sin())
    })
}

pub(crate) fn circulant_svd(kernel: &[f64], n: usize) -> CirculantSvd {
    let mut u = DMatrix::zeros(n, n);
    let mut v = DMatrix::zeros(n, n);
    let mut s = vec![0.0; n];
    let nf = n as f64;

    let mut col = 0;
    // frequency 0, and n/2 for even n, have real eigenvalues
    let real_column = |col: usize, freq: usize, u: &mut DMatrix<f64>, v: &mut DMatrix<f64>, s: &mut [f64]| {
        let (re, _) = eigenvalue(kernel, n, freq);
        let sign = if re < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            let val = if freq == 0 {
                1.0 / nf.sqrt()
            } else if i % 2 == 0 {
                1.0 / nf.sqrt()
            } else {
                -1.0 / nf.sqrt()
            };
            v[(i, col)] = val;
            u[(i, col)] = sign * val;
        }
        s[col] = re.abs();
    };
    real_column(col, 0, &mut u, &mut v, &mut s);
    col += 1;

    let scale = (2.0 / nf).sqrt();
    for freq in 1..n.div_ceil(2) {
        let (re, im) = eigenvalue(kernel, n, freq);
        let mag = re.hypot(im);
        let (cos_t, sin_t) = if mag > 0.0 { (re / mag, im / mag) } else { (1.0, 0.0) };
        for i in 0..n {
            let angle = 2.0 * PI * (i * freq) as f64 / nf;
            let (c, sn) = (scale * angle.cos(), scale * angle.sin());
            v[(i, col)] = c;
            v[(i, col + 1)] = sn;
            u[(i, col)] = cos_t * c - sin_t * sn;
            u[(i, col + 1)] = sin_t * c + cos_t * sn;
        }
        s[col] = mag;
        s[col + 1] = mag;
        col += 2;
    }
    if n % 2 == 0 {
        real_column(col, n / 2, &mut u, &mut v, &mut s);
    }
    CirculantSvd { u, s, v }
}

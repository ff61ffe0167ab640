//! Linear measurement operators `A` and their singular value decompositions.
//!
//! Image-shaped vectors use planar layout: entry `(c, i, j)` of a
//! `channels x height x width` image lives at `c * height * width + i * width + j`.
//!
//! Every operator exposes its SVD `A = U diag(s) V^T` through the four factor
//! products `U^T y`, `U z`, `V^T x`, `V z`, with rank `r = min(M, N)`. The
//! structured kinds never materialize `U` or `V` as `N x N` matrices.

mod circulant;

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, DmpsError, Result};
use circulant::{circulant_svd, convolve, convolve_transpose, CirculantSvd};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn new(height: usize, width: usize, channels: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(DmpsError::InvalidRange(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(DmpsError::ChannelCount {
                expected: 3,
                got: channels,
            });
        }
        Ok(Self {
            height,
            width,
            channels,
        })
    }

    pub fn gray(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            channels: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    Identity,
    Mask,
    BlockAvgSr,
    SeparableBlur,
    ColorizeAvg,
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    #[default]
    Circular,
}

#[derive(Debug, Clone)]
enum Repr {
    Identity,
    Mask { kept: Vec<usize> },
    BlockAvg { shape: ImageShape, factor: usize },
    Blur { shape: ImageShape, kernel: Vec<f64> },
    Colorize { shape: ImageShape },
    Dense { matrix: DMatrix<f64> },
}

/// Singular values plus the structure needed to apply the singular vectors.
#[derive(Debug, Clone)]
pub struct Svd {
    singular_values: Vec<f64>,
    factors: Factors,
}

#[derive(Debug, Clone)]
enum Factors {
    /// Rows of `A` are orthogonal with common norm `scale`: `U = I`, `V^T = A / scale`.
    RowOrthogonal { scale: f64 },
    /// `A = I_c (x) C_h (x) C_w`; `order[p]` is the flat `(c, i, j)` index of
    /// the `p`-th largest singular value.
    Kronecker {
        shape: ImageShape,
        rows: CirculantSvd,
        cols: CirculantSvd,
        order: Vec<usize>,
    },
    Dense { u: DMatrix<f64>, vt: DMatrix<f64> },
}

impl Svd {
    /// Singular values, nonincreasing, length `min(M, N)`.
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }
}

#[derive(Debug)]
pub struct LinearOperator {
    rows: usize,
    cols: usize,
    repr: Repr,
    svd: OnceLock<Svd>,
}

impl Clone for LinearOperator {
    fn clone(&self) -> Self {
        let svd = OnceLock::new();
        if let Some(s) = self.svd.get() {
            let _ = svd.set(s.clone());
        }
        Self {
            rows: self.rows,
            cols: self.cols,
            repr: self.repr.clone(),
            svd,
        }
    }
}

/// Normalized box kernel of the given (odd) length.
pub fn uniform_kernel(len: usize) -> Vec<f64> {
    vec![1.0 / len as f64; len]
}

/// Gaussian kernel of the given (odd) length, truncated and renormalized.
pub fn gaussian_kernel(len: usize, std: f64) -> Vec<f64> {
    let h = (len as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..len)
        .map(|i| {
            let d = i as f64 - h;
            (-0.5 * d * d / (std * std)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

impl LinearOperator {
    fn build(rows: usize, cols: usize, repr: Repr) -> Self {
        Self {
            rows,
            cols,
            repr,
            svd: OnceLock::new(),
        }
    }

    /// `A = I_n`.
    pub fn identity(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(DmpsError::InvalidRange("identity operator needs n >= 1".into()));
        }
        Ok(Self::build(n, n, Repr::Identity))
    }

    /// Row-selection operator keeping the listed coordinates (inpainting).
    pub fn mask(n: usize, kept: Vec<usize>) -> Result<Self> {
        if kept.is_empty() {
            return Err(DmpsError::InvalidRange("mask keeps no coordinates".into()));
        }
        for (pos, &idx) in kept.iter().enumerate() {
            if idx >= n {
                return Err(DmpsError::IndexOutOfRange { index: idx, len: n });
            }
            if pos > 0 && idx <= kept[pos - 1] {
                return Err(DmpsError::DuplicateIndex(idx));
            }
        }
        Ok(Self::build(kept.len(), n, Repr::Mask { kept }))
    }

    /// Super-resolution by `factor x factor` block averaging, per channel.
    pub fn block_avg_sr(shape: ImageShape, factor: usize) -> Result<Self> {
        if factor == 0 || shape.height % factor != 0 || shape.width % factor != 0 {
            return Err(DmpsError::Divisibility(format!(
                "factor {factor} does not divide {}x{}",
                shape.height, shape.width
            )));
        }
        let rows = shape.len() / (factor * factor);
        Ok(Self::build(rows, shape.len(), Repr::BlockAvg { shape, factor }))
    }

    /// Grayscale from RGB by averaging the three channels of each pixel.
    pub fn colorize_avg(shape: ImageShape) -> Result<Self> {
        if shape.channels != 3 {
            return Err(DmpsError::ChannelCount {
                expected: 3,
                got: shape.channels,
            });
        }
        Ok(Self::build(shape.plane(), shape.len(), Repr::Colorize { shape }))
    }

    /// Separable 2-D blur `k k^T` applied per channel with circular boundary.
    pub fn separable_blur(shape: ImageShape, kernel: Vec<f64>, _boundary: Boundary) -> Result<Self> {
        if kernel.is_empty() || kernel.len() % 2 == 0 {
            return Err(DmpsError::Kernel(format!(
                "kernel length must be odd, got {}",
                kernel.len()
            )));
        }
        if kernel.len() > shape.height.min(shape.width) {
            return Err(DmpsError::Kernel(format!(
                "kernel length {} exceeds image side {}",
                kernel.len(),
                shape.height.min(shape.width)
            )));
        }
        if kernel.iter().any(|k| !k.is_finite()) {
            return Err(DmpsError::Kernel("kernel has non-finite entries".into()));
        }
        let total: f64 = kernel.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(DmpsError::Kernel(format!("kernel sums to {total}, not 1")));
        }
        Ok(Self::build(shape.len(), shape.len(), Repr::Blur { shape, kernel }))
    }

    /// Generic dense matrix, e.g. a compressed-sensing design.
    pub fn dense(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(DmpsError::InvalidRange("dense operator needs M, N >= 1".into()));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(DmpsError::NonFinite("dense operator entry".into()));
        }
        Ok(Self::build(matrix.nrows(), matrix.ncols(), Repr::Dense { matrix }))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rank(&self) -> usize {
        self.rows.min(self.cols)
    }

    pub fn kind(&self) -> OperatorKind {
        match self.repr {
            Repr::Identity => OperatorKind::Identity,
            Repr::Mask { .. } => OperatorKind::Mask,
            Repr::BlockAvg { .. } => OperatorKind::BlockAvgSr,
            Repr::Blur { .. } => OperatorKind::SeparableBlur,
            Repr::Colorize { .. } => OperatorKind::ColorizeAvg,
            Repr::Dense { .. } => OperatorKind::Dense,
        }
    }

    /// `A x`.
    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("operator input", self.cols, x.len())?;
        Ok(match &self.repr {
            Repr::Identity => x.clone(),
            Repr::Mask { kept } => DVector::from_iterator(kept.len(), kept.iter().map(|&i| x[i])),
            Repr::BlockAvg { shape, factor } => block_average(shape, *factor, x),
            Repr::Colorize { shape } => {
                let plane = shape.plane();
                DVector::from_fn(plane, |p, _| (x[p] + x[p + plane] + x[p + 2 * plane]) / 3.0)
            }
            Repr::Blur { shape, kernel } => blur(shape, kernel, x, false),
            Repr::Dense { matrix } => matrix * x,
        })
    }

    /// `A^T y`.
    pub fn apply_transpose(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("operator adjoint input", self.rows, y.len())?;
        Ok(match &self.repr {
            Repr::Identity => y.clone(),
            Repr::Mask { kept } => {
                let mut out = DVector::zeros(self.cols);
                for (k, &i) in kept.iter().enumerate() {
                    out[i] = y[k];
                }
                out
            }
            Repr::BlockAvg { shape, factor } => block_spread(shape, *factor, y),
            Repr::Colorize { shape } => {
                let plane = shape.plane();
                DVector::from_fn(shape.len(), |idx, _| y[idx % plane] / 3.0)
            }
            Repr::Blur { shape, kernel } => blur(shape, kernel, y, true),
            Repr::Dense { matrix } => matrix.tr_mul(y),
        })
    }

    /// Materializes `A` as a dense matrix. Intended for small instances.
    pub fn to_dense(&self) -> DMatrix<f64> {
        if let Repr::Dense { matrix } = &self.repr {
            return matrix.clone();
        }
        let mut out = DMatrix::zeros(self.rows, self.cols);
        let mut e = DVector::zeros(self.cols);
        for j in 0..self.cols {
            e[j] = 1.0;
            let col = self.apply(&e).expect("length matches");
            out.set_column(j, &col);
            e[j] = 0.0;
        }
        out
    }

    /// Squared row norms when `A A^T` is diagonal (off-diagonal mass at most
    /// `1e-10` relative to the largest diagonal entry).
    pub fn row_orthogonal_norms(&self) -> Result<DVector<f64>> {
        let constant = |v: f64| Ok(DVector::from_element(self.rows, v));
        match &self.repr {
            Repr::Identity | Repr::Mask { .. } => constant(1.0),
            Repr::BlockAvg { factor, .. } => constant(1.0 / (factor * factor) as f64),
            Repr::Colorize { .. } => constant(1.0 / 3.0),
            Repr::Blur { .. } | Repr::Dense { .. } => {
                let a = self.to_dense();
                let gram = &a * a.transpose();
                let diag = gram.diagonal();
                let scale = diag.amax().max(f64::MIN_POSITIVE);
                let mut off = 0.0f64;
                for i in 0..gram.nrows() {
                    for j in 0..gram.ncols() {
                        if i != j {
                            off = off.max(gram[(i, j)].abs());
                        }
                    }
                }
                if off > 1e-10 * scale {
                    return Err(DmpsError::NotRowOrthogonal(off / scale));
                }
                Ok(diag)
            }
        }
    }

    /// The cached SVD, computed on first use.
    pub fn svd(&self) -> &Svd {
        self.svd.get_or_init(|| self.compute_svd())
    }

    fn compute_svd(&self) -> Svd {
        match &self.repr {
            Repr::Identity | Repr::Mask { .. } => row_orthogonal(self.rows, 1.0),
            Repr::BlockAvg { factor, .. } => row_orthogonal(self.rows, 1.0 / *factor as f64),
            Repr::Colorize { .. } => row_orthogonal(self.rows, 1.0 / 3f64.sqrt()),
            Repr::Blur { shape, kernel } => {
                let rows = circulant_svd(kernel, shape.height);
                let cols = circulant_svd(kernel, shape.width);
                let mut values = Vec::with_capacity(shape.len());
                for _ in 0..shape.channels {
                    for i in 0..shape.height {
                        for j in 0..shape.width {
                            values.push(rows.s[i] * cols.s[j]);
                        }
                    }
                }
                let order = descending_order(&values);
                let singular_values = order.iter().map(|&k| values[k]).collect();
                Svd {
                    singular_values,
                    factors: Factors::Kronecker {
                        shape: *shape,
                        rows,
                        cols,
                        order,
                    },
                }
            }
            Repr::Dense { matrix } => dense_svd(matrix),
        }
    }

    /// `U^T y` (length `r`).
    pub fn svd_ut(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("U^T input", self.rows, y.len())?;
        Ok(match &self.svd().factors {
            Factors::RowOrthogonal { .. } => y.clone(),
            Factors::Kronecker {
                shape,
                rows,
                cols,
                order,
            } => gather(order, &kron_apply(shape, &rows.u, &cols.u, y, true)),
            Factors::Dense { u, .. } => u.tr_mul(y),
        })
    }

    /// `U z` for `z` of length `r`.
    pub fn svd_u(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("U input", self.rank(), z.len())?;
        Ok(match &self.svd().factors {
            Factors::RowOrthogonal { .. } => z.clone(),
            Factors::Kronecker {
                shape,
                rows,
                cols,
                order,
            } => kron_apply(shape, &rows.u, &cols.u, &scatter(order, z), false),
            Factors::Dense { u, .. } => u * z,
        })
    }

    /// `V^T x` (length `r`).
    pub fn svd_vt(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("V^T input", self.cols, x.len())?;
        Ok(match &self.svd().factors {
            Factors::RowOrthogonal { scale } => self.apply(x)? / *scale,
            Factors::Kronecker {
                shape,
                rows,
                cols,
                order,
            } => gather(order, &kron_apply(shape, &rows.v, &cols.v, x, true)),
            Factors::Dense { vt, .. } => vt * x,
        })
    }

    /// `V z` for `z` of length `r`.
    pub fn svd_v(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("V input", self.rank(), z.len())?;
        Ok(match &self.svd().factors {
            Factors::RowOrthogonal { scale } => self.apply_transpose(z)? / *scale,
            Factors::Kronecker {
                shape,
                rows,
                cols,
                order,
            } => kron_apply(shape, &rows.v, &cols.v, &scatter(order, z), false),
            Factors::Dense { vt, .. } => vt.tr_mul(z),
        })
    }

    /// Materializes `(U, s, V^T)` with shapes `M x r`, `r`, `r x N`.
    pub fn svd_dense_factors(&self) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
        let r = self.rank();
        let mut u = DMatrix::zeros(self.rows, r);
        let mut vt = DMatrix::zeros(r, self.cols);
        let mut e = DVector::zeros(r);
        for p in 0..r {
            e[p] = 1.0;
            u.set_column(p, &self.svd_u(&e).expect("rank-length input"));
            vt.set_row(p, &self.svd_v(&e).expect("rank-length input").transpose());
            e[p] = 0.0;
        }
        (u, self.svd().singular_values.clone(), vt)
    }
}

fn row_orthogonal(rank: usize, scale: f64) -> Svd {
    Svd {
        singular_values: vec![scale; rank],
        factors: Factors::RowOrthogonal { scale },
    }
}

/// Indices sorted by value, largest first; ties keep their original order.
fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    order
}

fn dense_svd(matrix: &DMatrix<f64>) -> Svd {
    let svd = matrix.clone().svd(true, true);
    let u = svd.u.expect("U requested");
    let vt = svd.v_t.expect("V^T requested");
    let values: Vec<f64> = svd.singular_values.iter().copied().collect();
    let order = descending_order(&values);
    let r = values.len();
    let mut u_sorted = DMatrix::zeros(u.nrows(), r);
    let mut vt_sorted = DMatrix::zeros(r, vt.ncols());
    let mut singular_values = Vec::with_capacity(r);
    for (p, &k) in order.iter().enumerate() {
        // negative values are folded into the U column
        let sign = if values[k] < 0.0 { -1.0 } else { 1.0 };
        singular_values.push(values[k].abs());
        u_sorted.set_column(p, &(u.column(k) * sign));
        vt_sorted.set_row(p, &vt.row(k));
    }
    Svd {
        singular_values,
        factors: Factors::Dense {
            u: u_sorted,
            vt: vt_sorted,
        },
    }
}

fn gather(order: &[usize], full: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(order.len(), order.iter().map(|&k| full[k]))
}

fn scatter(order: &[usize], z: &DVector<f64>) -> DVector<f64> {
    let mut full = DVector::zeros(order.len());
    for (p, &k) in order.iter().enumerate() {
        full[k] = z[p];
    }
    full
}

/// Per channel: `left^T X right` when `transpose`, else `left X right^T`.
fn kron_apply(
    shape: &ImageShape,
    left: &DMatrix<f64>,
    right: &DMatrix<f64>,
    x: &DVector<f64>,
    transpose: bool,
) -> DVector<f64> {
    let (h, w) = (shape.height, shape.width);
    let mut out = DVector::zeros(shape.len());
    for c in 0..shape.channels {
        let plane = DMatrix::from_row_slice(h, w, &x.as_slice()[c * h * w..(c + 1) * h * w]);
        let result = if transpose {
            left.tr_mul(&plane) * right
        } else {
            left * plane * right.transpose()
        };
        let dst = &mut out.as_mut_slice()[c * h * w..(c + 1) * h * w];
        for i in 0..h {
            for j in 0..w {
                dst[i * w + j] = result[(i, j)];
            }
        }
    }
    out
}

fn block_average(shape: &ImageShape, factor: usize, x: &DVector<f64>) -> DVector<f64> {
    let (oh, ow) = (shape.height / factor, shape.width / factor);
    let norm = 1.0 / (factor * factor) as f64;
    let mut out = DVector::zeros(shape.channels * oh * ow);
    for c in 0..shape.channels {
        for i in 0..shape.height {
            for j in 0..shape.width {
                out[c * oh * ow + (i / factor) * ow + j / factor] +=
                    norm * x[c * shape.plane() + i * shape.width + j];
            }
        }
    }
    out
}

fn block_spread(shape: &ImageShape, factor: usize, y: &DVector<f64>) -> DVector<f64> {
    let (oh, ow) = (shape.height / factor, shape.width / factor);
    let norm = 1.0 / (factor * factor) as f64;
    DVector::from_fn(shape.len(), |idx, _| {
        let c = idx / shape.plane();
        let rem = idx % shape.plane();
        let (i, j) = (rem / shape.width, rem % shape.width);
        norm * y[c * oh * ow + (i / factor) * ow + j / factor]
    })
}

fn blur(shape: &ImageShape, kernel: &[f64], x: &DVector<f64>, adjoint: bool) -> DVector<f64> {
    let (h, w) = (shape.height, shape.width);
    let pass = if adjoint { convolve_transpose } else { convolve };
    let mut out = DVector::zeros(shape.len());
    let mut tmp = vec![0.0; h * w];
    let mut line_in = vec![0.0; h.max(w)];
    let mut line_out = vec![0.0; h.max(w)];
    for c in 0..shape.channels {
        let src = &x.as_slice()[c * h * w..(c + 1) * h * w];
        // along each row (width direction)
        for i in 0..h {
            pass(kernel, &src[i * w..(i + 1) * w], &mut tmp[i * w..(i + 1) * w]);
        }
        // along each column (height direction)
        let dst = &mut out.as_mut_slice()[c * h * w..(c + 1) * h * w];
        for j in 0..w {
            for i in 0..h {
                line_in[i] = tmp[i * w + j];
            }
            pass(kernel, &line_in[..h], &mut line_out[..h]);
            for i in 0..h {
                dst[i * w + j] = line_out[i];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests;

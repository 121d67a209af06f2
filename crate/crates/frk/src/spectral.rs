//! Orthonormal DCT-II / inverse DCT and zigzag coefficient ordering.
//!
//! The 2-D transform is separable: an orthonormal 1-D DCT-II along rows, then
//! along columns. With orthonormal scaling the inverse is the transpose, the
//! transform preserves the L2 norm exactly (Parseval), and the adjoint
//! identity `⟨dct2(x), c⟩ == ⟨x, idct2(c)⟩` holds — which is what makes the
//! frequency-domain gradient rule a plain forward DCT.
//!
//! Axes up to [`DIRECT_LIMIT`] use a cached transform matrix; longer axes go
//! through an FFT-based path (even/odd permutation + complex twiddle). Both
//! paths implement the same transform and are cross-checked in tests.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use num_complex::Complex;
use once_cell::sync::Lazy;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Longest axis handled by the cached-matrix path.
const DIRECT_LIMIT: usize = 512;

/// Row count below which per-row FFTs are not worth parallelizing.
const PAR_ROWS_MIN: usize = 16;

static DCT_MATS: Lazy<Mutex<HashMap<usize, Arc<Vec<f64>>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

static FFT_PLANS: Lazy<Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

static ZIGZAGS: Lazy<Mutex<HashMap<(usize, usize), Arc<ZigzagOrder>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

/// Orthonormal DCT-II matrix of size `n`, row-major:
/// `D[k][j] = a(k) · cos(π(2j+1)k / 2n)` with `a(0)=√(1/n)`, `a(k)=√(2/n)`.
fn dct_matrix(n: usize) -> Arc<Vec<f64>> {
    let mut cache = DCT_MATS.lock().unwrap();
    cache
        .entry(n)
        .or_insert_with(|| {
            let mut m = vec![0.0; n * n];
            let a0 = (1.0 / n as f64).sqrt();
            let ak = (2.0 / n as f64).sqrt();
            for k in 0..n {
                let scale = if k == 0 { a0 } else { ak };
                for j in 0..n {
                    let angle = std::f64::consts::PI * (2 * j + 1) as f64 * k as f64
                        / (2 * n) as f64;
                    m[k * n + j] = scale * angle.cos();
                }
            }
            Arc::new(m)
        })
        .clone()
}

fn fft_plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut cache = FFT_PLANS.lock().unwrap();
    cache
        .entry((n, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if inverse {
                planner.plan_fft_inverse(n)
            } else {
                planner.plan_fft_forward(n)
            }
        })
        .clone()
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub(crate) enum Direction {
    Forward,
    Inverse,
}

/// Transforms each length-`n` row of `data` (a `rows`×`n` row-major matrix).
fn transform_rows(data: &mut [f64], rows: usize, n: usize, dir: Direction) {
    if n == 1 {
        return; // 1-point DCT is the identity
    }
    if n <= DIRECT_LIMIT {
        transform_rows_direct(data, rows, n, dir);
    } else {
        transform_rows_fft(data, rows, n, dir);
    }
}

pub(crate) fn transform_rows_direct(data: &mut [f64], rows: usize, n: usize, dir: Direction) {
    let d = dct_matrix(n);
    let mut scratch = vec![0.0; n];
    for r in 0..rows {
        let row = &mut data[r * n..(r + 1) * n];
        scratch.copy_from_slice(row);
        if dir == Direction::Forward {
            // y[k] = Σ_j D[k][j] x[j]
            for k in 0..n {
                let dk = &d[k * n..(k + 1) * n];
                row[k] = dk.iter().zip(&scratch).map(|(a, b)| a * b).sum();
            }
        } else {
            // y[j] = Σ_k D[k][j] x[k]
            row.fill(0.0);
            for (k, &c) in scratch.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                let dk = &d[k * n..(k + 1) * n];
                for (y, &dkj) in row.iter_mut().zip(dk) {
                    *y += c * dkj;
                }
            }
        }
    }
}

pub(crate) fn transform_rows_fft(data: &mut [f64], rows: usize, n: usize, dir: Direction) {
    let fft = fft_plan(n, dir == Direction::Inverse);
    let scratch_len = fft.get_inplace_scratch_len();
    let work = |row: &mut [f64], buf: &mut Vec<Complex<f64>>, scratch: &mut Vec<Complex<f64>>| {
        buf.resize(n, Complex::new(0.0, 0.0));
        scratch.resize(scratch_len, Complex::new(0.0, 0.0));
        match dir {
            Direction::Forward => dct1d_fft(row, buf, scratch, &*fft),
            Direction::Inverse => idct1d_fft(row, buf, scratch, &*fft),
        }
    };
    if rows >= PAR_ROWS_MIN {
        data.par_chunks_mut(n).for_each(|row| {
            let mut buf = Vec::new();
            let mut scratch = Vec::new();
            work(row, &mut buf, &mut scratch);
        });
    } else {
        let mut buf = Vec::new();
        let mut scratch = Vec::new();
        for row in data.chunks_mut(n) {
            work(row, &mut buf, &mut scratch);
        }
    }
}

/// Orthonormal DCT-II of one row via a complex FFT.
///
/// Even/odd permutation v[j] = x[2j], v[n-1-j] = x[2j+1]; then
/// `c[k] = Re(e^{-iπk/2n} · FFT(v)[k])` is the unscaled DCT-II.
fn dct1d_fft(
    row: &mut [f64],
    buf: &mut [Complex<f64>],
    scratch: &mut [Complex<f64>],
    fft: &dyn Fft<f64>,
) {
    let n = row.len();
    for j in 0..n.div_ceil(2) {
        buf[j] = Complex::new(row[2 * j], 0.0);
    }
    for j in 0..n / 2 {
        buf[n - 1 - j] = Complex::new(row[2 * j + 1], 0.0);
    }
    fft.process_with_scratch(buf, scratch);
    let a0 = (1.0 / n as f64).sqrt();
    let ak = (2.0 / n as f64).sqrt();
    row[0] = buf[0].re * a0;
    for k in 1..n {
        let theta = std::f64::consts::PI * k as f64 / (2 * n) as f64;
        let tw = Complex::from_polar(1.0, -theta);
        row[k] = (buf[k] * tw).re * ak;
    }
}

/// Inverse of [`dct1d_fft`]: rebuild the Hermitian spectrum from the
/// coefficients (`V[k] = e^{iπk/2n}(c[k] − i·c[n−k])`), inverse FFT,
/// undo the even/odd permutation.
fn idct1d_fft(
    row: &mut [f64],
    buf: &mut [Complex<f64>],
    scratch: &mut [Complex<f64>],
    fft: &dyn Fft<f64>,
) {
    let n = row.len();
    let a0 = (1.0 / n as f64).sqrt();
    let ak = (2.0 / n as f64).sqrt();
    buf[0] = Complex::new(row[0] / a0, 0.0);
    for k in 1..n {
        let ck = row[k] / ak;
        let cnk = row[n - k] / ak;
        let theta = std::f64::consts::PI * k as f64 / (2 * n) as f64;
        buf[k] = Complex::from_polar(1.0, theta) * Complex::new(ck, -cnk);
    }
    fft.process_with_scratch(buf, scratch);
    let inv_n = 1.0 / n as f64;
    for j in 0..n.div_ceil(2) {
        row[2 * j] = buf[j].re * inv_n;
    }
    for j in 0..n / 2 {
        row[2 * j + 1] = buf[n - 1 - j].re * inv_n;
    }
}

fn transpose_flat(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

fn require_2d(x: &Tensor, what: &str) -> Result<(usize, usize)> {
    if x.rank() != 2 {
        return Err(Error::Shape(format!(
            "{what} requires a 2-D tensor, got shape {:?}",
            x.shape()
        )));
    }
    Ok((x.shape()[0], x.shape()[1]))
}

fn transform2(x: &Tensor, dir: Direction, what: &str) -> Result<Tensor> {
    let (rows, cols) = require_2d(x, what)?;
    let mut m = x.data().to_vec();
    transform_rows(&mut m, rows, cols, dir);
    let mut t = transpose_flat(&m, rows, cols);
    transform_rows(&mut t, cols, rows, dir);
    Tensor::from_vec(&[rows, cols], transpose_flat(&t, cols, rows))
}

/// Orthonormal type-II DCT along rows then columns. Linear, norm-preserving.
pub fn dct2(x: &Tensor) -> Result<Tensor> {
    transform2(x, Direction::Forward, "dct2")
}

/// Exact inverse of [`dct2`].
pub fn idct2(c: &Tensor) -> Result<Tensor> {
    transform2(c, Direction::Inverse, "idct2")
}

/// Yields `(row, col)` positions in anti-diagonal zigzag order. The first
/// step from (0,0) moves right, matching the standard image-coding scan.
pub fn zigzag_scan(rows: usize, cols: usize) -> impl Iterator<Item = (usize, usize)> {
    debug_assert!(rows >= 1 && cols >= 1);
    (0..rows + cols - 1).flat_map(move |s| {
        let lo = s.saturating_sub(cols - 1);
        let hi = s.min(rows - 1);
        let range: Box<dyn Iterator<Item = usize>> = if s % 2 == 1 {
            Box::new(lo..=hi)
        } else {
            Box::new((lo..=hi).rev())
        };
        range.map(move |i| (i, s - i))
    })
}

/// Materialized zigzag permutation over a `rows`×`cols` grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZigzagOrder {
    rows: usize,
    cols: usize,
    order: Vec<usize>,
}

impl ZigzagOrder {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!(
                "zigzag order needs dimensions >= 1, got {rows}x{cols}"
            )));
        }
        let order = zigzag_scan(rows, cols).map(|(r, c)| r * cols + c).collect();
        Ok(Self { rows, cols, order })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Flat row-major indices in scan sequence; a bijection on `[0, rows·cols)`.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// `(row, col)` of the k-th scan position.
    pub fn position(&self, k: usize) -> (usize, usize) {
        let flat = self.order[k];
        (flat / self.cols, flat % self.cols)
    }
}

/// Cached zigzag order for a grid size.
pub fn zigzag_order(rows: usize, cols: usize) -> Result<Arc<ZigzagOrder>> {
    if rows == 0 || cols == 0 {
        return Err(Error::Shape(format!(
            "zigzag order needs dimensions >= 1, got {rows}x{cols}"
        )));
    }
    let mut cache = ZIGZAGS.lock().unwrap();
    if let Some(z) = cache.get(&(rows, cols)) {
        return Ok(z.clone());
    }
    let z = Arc::new(ZigzagOrder::new(rows, cols)?);
    cache.insert((rows, cols), z.clone());
    Ok(z)
}

/// Binary mask with ones at the first `keep` zigzag positions.
pub fn zigzag_mask(rows: usize, cols: usize, keep: usize) -> Result<Tensor> {
    if rows == 0 || cols == 0 {
        return Err(Error::Shape(format!(
            "zigzag mask needs dimensions >= 1, got {rows}x{cols}"
        )));
    }
    if keep > rows * cols {
        return Err(Error::Argument(format!(
            "keep {keep} exceeds grid size {}",
            rows * cols
        )));
    }
    let mut mask = Tensor::zeros(&[rows, cols])?;
    for (r, c) in zigzag_scan(rows, cols).take(keep) {
        mask.data_mut()[r * cols + c] = 1.0;
    }
    Ok(mask)
}

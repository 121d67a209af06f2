//! Trainable parameters stored as zigzag-truncated DCT coefficients.
//!
//! A [`FreqParam`] keeps a parameter tensor in the frequency domain: the
//! spatial tensor is folded to a 2-D matrix, transformed with the orthonormal
//! DCT, and only a zigzag prefix of `keep` coefficients may be non-zero.
//! Reconstruction is the inverse DCT; the loss gradient with respect to the
//! kept coefficients is the forward DCT of the spatial gradient (orthonormal
//! transforms are self-adjoint up to transposition), masked to the prefix.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectral::{dct2, idct2, zigzag_scan};
use crate::tensor::{param_count, validate_shape, Tensor};
use crate::rng::Rng;

const MAGIC: &[u8; 4] = b"FRP1";

/// Canonical 2-D folding of a parameter shape: rank-1 tensors become a single
/// row; higher ranks keep the leading dimension as rows (output channels) and
/// flatten the rest.
pub fn fold_shape(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (1, *n),
        _ => (shape[0], shape[1..].iter().product()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FreqParam {
    spatial_shape: Vec<usize>,
    rows: usize,
    cols: usize,
    coeffs: Tensor,
    keep: usize,
}

impl FreqParam {
    /// Builds a parameter from a spatial-domain tensor; starts untruncated.
    pub fn from_spatial(spatial: &Tensor) -> Result<Self> {
        let (rows, cols) = fold_shape(spatial.shape());
        let folded = spatial.reshape(&[rows, cols])?;
        // DCT of the zero tensor is zero; skip the transform for the common
        // zero-initialized biases.
        let coeffs = if folded.data().iter().all(|&v| v == 0.0) {
            folded
        } else {
            dct2(&folded)?
        };
        Ok(Self {
            spatial_shape: spatial.shape().to_vec(),
            rows,
            cols,
            coeffs,
            keep: rows * cols,
        })
    }

    /// He-style random initialization: normal spatial values scaled by
    /// `init_scale`, transformed into the frequency domain. No truncation.
    pub fn init(spatial_shape: &[usize], init_scale: f64, rng: &mut Rng) -> Result<Self> {
        validate_shape(spatial_shape)?;
        let spatial = Tensor::rand_normal(spatial_shape, init_scale, rng)?;
        Self::from_spatial(&spatial)
    }

    pub fn spatial_shape(&self) -> &[usize] {
        &self.spatial_shape
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Total coefficient count (== spatial element count).
    pub fn total(&self) -> usize {
        self.rows * self.cols
    }

    pub fn keep(&self) -> usize {
        self.keep
    }

    pub fn coeffs(&self) -> &Tensor {
        &self.coeffs
    }

    /// Mutable coefficient access. Callers must preserve the invariant that
    /// coefficients outside the zigzag prefix of length `keep` stay zero;
    /// masked gradients do this by construction.
    pub fn coeffs_mut(&mut self) -> &mut Tensor {
        &mut self.coeffs
    }

    /// Inverse DCT of the (masked) coefficients, reshaped to the spatial
    /// shape. Coefficients beyond the prefix are zero by invariant, so no
    /// explicit mask multiply is needed.
    pub fn reconstruct(&self) -> Tensor {
        idct2(&self.coeffs)
            .and_then(|m| m.reshaped(&self.spatial_shape))
            .expect("valid FreqParam state")
    }

    /// Maps a spatial-domain gradient to the gradient with respect to the
    /// kept coefficients: `mask ⊙ dct2(fold(spatial_grad))`.
    pub fn grad_to_freq(&self, spatial_grad: &Tensor) -> Result<Tensor> {
        if spatial_grad.shape() != self.spatial_shape.as_slice() {
            return Err(Error::Shape(format!(
                "gradient shape {:?} does not match parameter shape {:?}",
                spatial_grad.shape(),
                self.spatial_shape
            )));
        }
        let folded = spatial_grad.reshape(&[self.rows, self.cols])?;
        let mut g = dct2(&folded)?;
        for (k, (r, c)) in zigzag_scan(self.rows, self.cols).enumerate() {
            if k >= self.keep {
                g.data_mut()[r * self.cols + c] = 0.0;
            }
        }
        Ok(g)
    }

    /// Zeroes every coefficient beyond the new zigzag prefix. Truncation
    /// never regrows: `new_keep` must not exceed the current keep.
    pub fn apply_truncation(&mut self, new_keep: usize) -> Result<()> {
        if new_keep > self.keep {
            return Err(Error::Argument(format!(
                "truncation never regrows: new keep {new_keep} > current {}",
                self.keep
            )));
        }
        if new_keep == 0 {
            return Err(Error::Argument(
                "keep must stay >= 1 so the DC term survives".into(),
            ));
        }
        if new_keep == self.keep {
            return Ok(());
        }
        for (k, (r, c)) in zigzag_scan(self.rows, self.cols).enumerate() {
            if k >= new_keep {
                self.coeffs.data_mut()[r * self.cols + c] = 0.0;
            }
        }
        self.keep = new_keep;
        Ok(())
    }

    /// Kept coefficients in zigzag order.
    pub fn kept_coeffs(&self) -> Vec<f64> {
        zigzag_scan(self.rows, self.cols)
            .take(self.keep)
            .map(|(r, c)| self.coeffs.data()[r * self.cols + c])
            .collect()
    }

    /// Binary payload: magic, shape header, then exactly `keep` half-precision
    /// coefficients in zigzag order (little-endian throughout).
    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * (4 + self.spatial_shape.len()) + 2 * self.keep);
        out.write_all(MAGIC).unwrap();
        out.extend((self.spatial_shape.len() as u32).to_le_bytes());
        for &d in &self.spatial_shape {
            out.extend((d as u32).to_le_bytes());
        }
        out.extend((self.rows as u32).to_le_bytes());
        out.extend((self.cols as u32).to_le_bytes());
        out.extend((self.keep as u32).to_le_bytes());
        for v in self.kept_coeffs() {
            out.extend(half::f16::from_f64(v).to_bits().to_le_bytes());
        }
        out
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(4)?;
        if magic != MAGIC {
            return Err(Error::Format("bad magic, expected FRP1".into()));
        }
        let rank = cur.u32()? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::Format(format!("unreasonable rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = cur.u32()? as usize;
            if d == 0 {
                return Err(Error::Format("zero dimension in header".into()));
            }
            shape.push(d);
        }
        let rows = cur.u32()? as usize;
        let cols = cur.u32()? as usize;
        let keep = cur.u32()? as usize;
        if rows == 0 || cols == 0 || rows * cols != param_count(&shape) {
            return Err(Error::Format(format!(
                "fold {rows}x{cols} does not match shape {shape:?}"
            )));
        }
        if (rows, cols) != fold_shape(&shape) {
            return Err(Error::Format(format!(
                "fold {rows}x{cols} is not the canonical folding of {shape:?}"
            )));
        }
        if keep == 0 || keep > rows * cols {
            return Err(Error::Format(format!(
                "keep {keep} out of range for {rows}x{cols}"
            )));
        }
        let payload = cur.take(2 * keep)?;
        if cur.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after payload",
                bytes.len() - cur.pos
            )));
        }
        let mut coeffs = Tensor::zeros(&[rows, cols])?;
        for (k, (r, c)) in zigzag_scan(rows, cols).take(keep).enumerate() {
            let bits = u16::from_le_bytes([payload[2 * k], payload[2 * k + 1]]);
            coeffs.data_mut()[r * cols + c] = f64::from(half::f16::from_bits(bits));
        }
        Ok(Self {
            spatial_shape: shape,
            rows,
            cols,
            coeffs,
            keep,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "payload truncated: needed {n} bytes at offset {}, have {}",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Schedule that shrinks a keep count geometrically toward a target: each
/// step truncates `ceil(decay · (current − target))` coefficients, so the
/// per-step truncation counts are non-increasing and the target is reached
/// in finitely many steps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruncationSchedule {
    pub total_size: usize,
    pub target_keep: usize,
    pub decay: f64,
    pub current_keep: usize,
}

impl TruncationSchedule {
    pub fn new(total_size: usize, target_keep: usize, decay: f64) -> Result<Self> {
        if target_keep == 0 || target_keep > total_size {
            return Err(Error::Argument(format!(
                "target keep {target_keep} out of range for total {total_size}"
            )));
        }
        if !(0.0 < decay && decay < 1.0) {
            return Err(Error::Range(format!("decay must lie in (0,1), got {decay}")));
        }
        Ok(Self {
            total_size,
            target_keep,
            decay,
            current_keep: total_size,
        })
    }

    /// Advances one epoch; returns how many coefficients to truncate now
    /// (0 once the target is reached).
    pub fn step(&mut self) -> usize {
        let remaining = self.current_keep - self.target_keep;
        let truncate_now = (self.decay * remaining as f64).ceil() as usize;
        self.current_keep -= truncate_now;
        truncate_now
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CompressionEntry {
    pub name: String,
    pub original_count: usize,
    pub kept_count: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompressionReport {
    pub entries: Vec<CompressionEntry>,
    pub total_original: usize,
    pub total_kept: usize,
    pub ratio: f64,
}

/// Per-parameter kept counts plus the global original/kept ratio.
pub fn compression_report(params: &[(String, &FreqParam)]) -> Result<CompressionReport> {
    if params.is_empty() {
        return Err(Error::Argument("no parameters to report on".into()));
    }
    let entries: Vec<CompressionEntry> = params
        .iter()
        .map(|(name, p)| CompressionEntry {
            name: name.clone(),
            original_count: p.total(),
            kept_count: p.keep(),
        })
        .collect();
    let total_original: usize = entries.iter().map(|e| e.original_count).sum();
    let total_kept: usize = entries.iter().map(|e| e.kept_count).sum();
    Ok(CompressionReport {
        entries,
        total_original,
        total_kept,
        ratio: total_original as f64 / total_kept as f64,
    })
}

/// Per-parameter keep floors for a global keep fraction: `max(1,
/// ceil(fraction · size))`, so the DC term always survives.
pub fn keep_floors(sizes: &[usize], keep_fraction: f64) -> Vec<usize> {
    sizes
        .iter()
        .map(|&s| ((keep_fraction * s as f64).ceil() as usize).clamp(1, s))
        .collect()
}

/// Splits an exact total keep budget across parameters proportionally to
/// size (largest-remainder rounding, minimum 1 each). The result sums to
/// exactly `keep_total`.
pub fn allocate_keep_total(sizes: &[usize], keep_total: usize) -> Result<Vec<usize>> {
    let total: usize = sizes.iter().sum();
    if keep_total < sizes.len() || keep_total > total {
        return Err(Error::Argument(format!(
            "keep total {keep_total} must lie in [{}, {total}]",
            sizes.len()
        )));
    }
    let mut alloc: Vec<usize> = Vec::with_capacity(sizes.len());
    let mut fracs: Vec<(usize, f64)> = Vec::with_capacity(sizes.len());
    for (i, &s) in sizes.iter().enumerate() {
        let exact = keep_total as f64 * s as f64 / total as f64;
        let fl = exact.floor() as usize;
        alloc.push(fl.min(s));
        fracs.push((i, exact - fl as f64));
    }
    // hand out the remainder by largest fraction, deterministically
    let mut assigned: usize = alloc.iter().sum();
    fracs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut fi = 0;
    while assigned < keep_total && fi < fracs.len() {
        let i = fracs[fi].0;
        if alloc[i] < sizes[i] {
            alloc[i] += 1;
            assigned += 1;
        }
        fi += 1;
    }
    // any leftover (caps hit) goes to the largest headroom
    while assigned < keep_total {
        let i = (0..sizes.len())
            .filter(|&i| alloc[i] < sizes[i])
            .max_by_key(|&i| sizes[i] - alloc[i])
            .expect("keep_total <= total guarantees headroom");
        alloc[i] += 1;
        assigned += 1;
    }
    // raise zeros to the minimum of 1, stealing from the largest allocations
    for i in 0..alloc.len() {
        while alloc[i] < 1 {
            let j = (0..alloc.len())
                .filter(|&j| alloc[j] > 1)
                .max_by_key(|&j| alloc[j])
                .expect("keep_total >= n_params guarantees a donor");
            alloc[j] -= 1;
            alloc[i] += 1;
        }
    }
    debug_assert_eq!(alloc.iter().sum::<usize>(), keep_total);
    Ok(alloc)
}

/// Apportions one epoch's truncation count across parameters proportionally
/// to each one's remaining headroom above its floor (largest remainder,
/// deterministic index tie-break). Returns the per-parameter truncation.
pub fn apportion_truncation(
    keeps: &[usize],
    floors: &[usize],
    truncate_now: usize,
) -> Vec<usize> {
    assert_eq!(keeps.len(), floors.len());
    let headroom: Vec<usize> = keeps
        .iter()
        .zip(floors)
        .map(|(&k, &f)| k.saturating_sub(f))
        .collect();
    let total_headroom: usize = headroom.iter().sum();
    let t = truncate_now.min(total_headroom);
    if t == 0 {
        return vec![0; keeps.len()];
    }
    let mut cut: Vec<usize> = Vec::with_capacity(keeps.len());
    let mut fracs: Vec<(usize, f64)> = Vec::new();
    for (i, &h) in headroom.iter().enumerate() {
        let exact = t as f64 * h as f64 / total_headroom as f64;
        let fl = exact.floor() as usize;
        cut.push(fl);
        fracs.push((i, exact - fl as f64));
    }
    let mut assigned: usize = cut.iter().sum();
    fracs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut fi = 0;
    while assigned < t && fi < fracs.len() {
        let i = fracs[fi].0;
        if cut[i] < headroom[i] {
            cut[i] += 1;
            assigned += 1;
        }
        fi += 1;
    }
    while assigned < t {
        let i = (0..cut.len())
            .filter(|&i| cut[i] < headroom[i])
            .max_by_key(|&i| headroom[i] - cut[i])
            .expect("t <= total headroom");
        cut[i] += 1;
        assigned += 1;
    }
    cut
}

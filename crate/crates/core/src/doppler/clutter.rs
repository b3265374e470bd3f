//! Casorati-matrix clutter rejection.
//!
//! The window is reshaped to a pixels × frames matrix `C`. Its right singular
//! vectors are the eigenvectors of the frames × frames Gram matrix `CᴴC`, so
//! removing the `n` largest singular components amounts to
//! `C ← C − (C V) Vᴴ` with `V` the top-`n` eigenvectors of the Gram matrix.
//! The Gram matrix is accumulated over fixed-size pixel chunks in a fixed
//! order, which keeps the result independent of the thread count.

use nalgebra::DMatrix;
use num_complex::{Complex32, Complex64};

use crate::error::{Error, Result};
use crate::image::Image;

/// Pixels per Gram accumulation block. Fixed so results never depend on scheduling.
pub const CHUNK_PIXELS: usize = 1024;

/// Space × time matrix: one row per pixel, holding that pixel's time series.
#[derive(Debug, Clone, PartialEq)]
pub struct Casorati {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// Pixel-major: `data[p * frames + t]`.
    pub data: Vec<Complex64>,
}

impl Casorati {
    pub fn zeros(width: usize, height: usize, frames: usize) -> Self {
        Self {
            width,
            height,
            frames,
            data: vec![Complex64::default(); width * height * frames],
        }
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Builds the matrix from frame-major single-precision frames.
    pub fn from_frames(width: usize, height: usize, frames: usize, data: &[Complex32]) -> Self {
        let mut out = Self::zeros(width, height, frames);
        fill_rows(data, width * height, frames, 0, &mut out.data);
        out
    }

    pub fn row(&self, pixel: usize) -> &[Complex64] {
        &self.data[pixel * self.frames..(pixel + 1) * self.frames]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Per-pixel temporal energy.
    pub fn row_energy(&self) -> Image<f64> {
        let e = (0..self.pixels())
            .map(|p| self.row(p).iter().map(|c| c.norm_sqr()).sum())
            .collect();
        Image::from_vec(self.width, self.height, e)
    }
}

/// Copies pixels `first..first + rows.len() / frames` out of frame-major data.
pub(crate) fn fill_rows(
    frame_major: &[Complex32],
    pixels: usize,
    frames: usize,
    first: usize,
    rows: &mut [Complex64],
) {
    let count = rows.len() / frames;
    for t in 0..frames {
        let frame = &frame_major[t * pixels + first..t * pixels + first + count];
        for (i, c) in frame.iter().enumerate() {
            rows[i * frames + t] = Complex64::new(c.re as f64, c.im as f64);
        }
    }
}

/// Running `CᴴC` over pixel blocks.
pub struct GramAccumulator {
    frames: usize,
    real_part: Vec<f64>,
    /// `Σ Reᵀ·Im`, antisymmetrised at the end.
    cross: Vec<f64>,
    complex: bool,
    re_buf: Vec<f64>,
    im_buf: Vec<f64>,
}

impl GramAccumulator {
    pub fn new(frames: usize) -> Self {
        Self {
            frames,
            real_part: vec![0.0; frames * frames],
            cross: vec![0.0; frames * frames],
            complex: false,
            re_buf: Vec::new(),
            im_buf: Vec::new(),
        }
    }

    /// Adds the contribution of pixel rows (pixel-major, `frames` samples each).
    pub fn add_rows(&mut self, rows: &[Complex64]) {
        let t = self.frames;
        let n = rows.len() / t;
        if n == 0 {
            return;
        }
        self.re_buf.clear();
        self.re_buf.extend(rows.iter().map(|c| c.re));
        let has_imag = rows.iter().any(|c| c.im != 0.0);
        syrk_accumulate(&self.re_buf, &self.re_buf, n, t, &mut self.real_part);
        if has_imag {
            self.complex = true;
            self.im_buf.clear();
            self.im_buf.extend(rows.iter().map(|c| c.im));
            syrk_accumulate(&self.im_buf, &self.im_buf, n, t, &mut self.real_part);
            syrk_accumulate(&self.re_buf, &self.im_buf, n, t, &mut self.cross);
        }
    }

    /// Adds another accumulator's sums; merge order fixes the rounding.
    pub fn merge(&mut self, other: &GramAccumulator) {
        assert_eq!(self.frames, other.frames);
        for (a, b) in self.real_part.iter_mut().zip(&other.real_part) {
            *a += b;
        }
        if other.complex {
            self.complex = true;
            for (a, b) in self.cross.iter_mut().zip(&other.cross) {
                *a += b;
            }
        }
    }

    pub fn is_complex(&self) -> bool {
        self.complex
    }

    /// Top-`count` eigenvectors of the accumulated Gram matrix.
    pub fn basis(&self, count: usize, window_index: usize) -> Result<ClutterBasis> {
        let t = self.frames;
        if count == 0 {
            return Ok(ClutterBasis {
                frames: t,
                vectors: Vec::new(),
            });
        }
        let max_iter = 200 * t.max(16);
        let mut vectors = Vec::with_capacity(count);
        if !self.complex {
            let g = DMatrix::from_row_slice(t, t, &self.real_part);
            let eig = g.try_symmetric_eigen(f64::EPSILON, max_iter).ok_or_else(|| {
                Error::numeric(format!("SVD did not converge for window {window_index}"))
            })?;
            for j in descending_order(eig.eigenvalues.as_slice()).into_iter().take(count) {
                vectors.push(
                    eig.eigenvectors
                        .column(j)
                        .iter()
                        .map(|&v| Complex64::new(v, 0.0))
                        .collect(),
                );
            }
        } else {
            let g = DMatrix::from_fn(t, t, |i, j| {
                Complex64::new(
                    self.real_part[i * t + j],
                    self.cross[i * t + j] - self.cross[j * t + i],
                )
            });
            let eig = g.try_symmetric_eigen(f64::EPSILON, max_iter).ok_or_else(|| {
                Error::numeric(format!("SVD did not converge for window {window_index}"))
            })?;
            for j in descending_order(eig.eigenvalues.as_slice()).into_iter().take(count) {
                vectors.push(eig.eigenvectors.column(j).iter().copied().collect());
            }
        }
        Ok(ClutterBasis { frames: t, vectors })
    }
}

fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

/// `out += Aᵀ B` for row-major `n × t` blocks `A`, `B`.
fn syrk_accumulate(a: &[f64], b: &[f64], n: usize, t: usize, out: &mut [f64]) {
    // SAFETY: `a` and `b` hold `n * t` elements laid out row-major with row
    // stride `t`; `out` holds `t * t` elements; the strides below address only
    // those ranges.
    unsafe {
        matrixmultiply::dgemm(
            t,
            n,
            t,
            1.0,
            a.as_ptr(),
            1,
            t as isize,
            b.as_ptr(),
            t as isize,
            1,
            1.0,
            out.as_mut_ptr(),
            t as isize,
            1,
        );
    }
}

/// Orthonormal temporal vectors spanning the removed clutter subspace.
#[derive(Debug, Clone)]
pub struct ClutterBasis {
    frames: usize,
    vectors: Vec<Vec<Complex64>>,
}

impl ClutterBasis {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Projects the clutter subspace out of every pixel row in place.
    pub fn remove_from(&self, rows: &mut [Complex64]) {
        let t = self.frames;
        let mut coeffs = vec![Complex64::default(); self.vectors.len()];
        for row in rows.chunks_exact_mut(t) {
            for (c, v) in coeffs.iter_mut().zip(&self.vectors) {
                *c = row.iter().zip(v).map(|(x, vi)| x * vi).sum();
            }
            for (c, v) in coeffs.iter().zip(&self.vectors) {
                for (x, vi) in row.iter_mut().zip(v) {
                    *x -= c * vi.conj();
                }
            }
        }
    }
}

/// Estimates the clutter basis of a whole window.
pub fn clutter_basis(window: &Casorati, n_remove: usize, window_index: usize) -> Result<ClutterBasis> {
    let mut acc = GramAccumulator::new(window.frames);
    for rows in window.data.chunks(CHUNK_PIXELS * window.frames) {
        acc.add_rows(rows);
    }
    acc.basis(n_remove, window_index)
}

fn check_window(frames: usize, n_remove: usize) -> Result<()> {
    if frames < 2 {
        return Err(Error::config(format!("clutter filter needs at least 2 frames, got {frames}")));
    }
    if n_remove >= frames {
        return Err(Error::config(format!(
            "cannot remove {n_remove} singular components from a {frames}-frame window"
        )));
    }
    Ok(())
}

/// Zeroes the `n_remove` largest singular values of the window's Casorati matrix.
pub fn svd_clutter_filter(window: &Casorati, n_remove: usize, window_index: usize) -> Result<Casorati> {
    check_window(window.frames, n_remove)?;
    let basis = clutter_basis(window, n_remove, window_index)?;
    let mut out = window.clone();
    basis.remove_from(&mut out.data);
    Ok(out)
}

pub const PREVIEW_FRAMES: usize = 16;

/// Real-time style preview: drop the first principal component of a
/// 16-frame stack and return each pixel's residual temporal energy.
pub fn pca_preview(stack: &Casorati) -> Result<Image<f64>> {
    if stack.frames != PREVIEW_FRAMES {
        return Err(Error::config(format!(
            "preview needs exactly {PREVIEW_FRAMES} frames, got {}",
            stack.frames
        )));
    }
    let filtered = svd_clutter_filter(stack, 1, 0)?;
    Ok(filtered.row_energy())
}

//! Hologram rendering: discrete single-FFT Fresnel propagation of raw
//! interferogram frames.
//!
//! The forward transform (z > 0) is
//!
//! ```text
//! U(ξ, η) = Q_out(ξ, η) · F{ Q_in(x, y) · u(x, y) }
//! Q_in  = exp(iπ (x² + y²) / (λ z))      on the camera grid (pitch p)
//! Q_out = exp(iπ (ξ² + η²) / (λ z))      on the output grid (pitch λz / (N p))
//! ```
//!
//! with `F` the centred, unitary 2D DFT. Both chirps have unit modulus so the
//! transform is unitary. A negative distance applies the exact adjoint of the
//! positive-distance transform, which maps a reconstruction back onto the
//! camera grid; `z = 0` is the identity.

use std::sync::Arc;

use num_complex::{Complex32, Complex64};
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::params::OpticalParams;

pub const MIN_FIELD_DIM: usize = 16;

/// Raw camera frames, frame-major and row-major within a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct InterferogramStack {
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
    pub bit_depth: u16,
    pub frames: Vec<u16>,
    pub params: OpticalParams,
}

impl InterferogramStack {
    pub fn new(
        width: usize,
        height: usize,
        frame_count: usize,
        frames: Vec<u16>,
        params: OpticalParams,
    ) -> Result<Self> {
        let stack = Self {
            width,
            height,
            frame_count,
            bit_depth: 16,
            frames,
            params,
        };
        stack.validate()?;
        Ok(stack)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.frame_count == 0 {
            return Err(Error::data("interferogram stack has a zero dimension"));
        }
        let expected = self.width * self.height * self.frame_count;
        if self.frames.len() != expected {
            return Err(Error::data(format!(
                "interferogram stack holds {} samples, expected {expected}",
                self.frames.len()
            )));
        }
        if self.bit_depth != 16 {
            return Err(Error::data(format!(
                "unsupported bit depth {} (only 16-bit stacks)",
                self.bit_depth
            )));
        }
        self.params.validate()
    }

    pub fn pixels_per_frame(&self) -> usize {
        self.width * self.height
    }

    pub fn frame(&self, index: usize) -> &[u16] {
        let n = self.pixels_per_frame();
        &self.frames[index * n..(index + 1) * n]
    }
}

/// Complex field frames after propagation; same spatial grid as the source.
#[derive(Debug, Clone, PartialEq)]
pub struct HologramStack {
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
    pub frames: Vec<Complex32>,
    pub params: OpticalParams,
}

impl HologramStack {
    pub fn pixels_per_frame(&self) -> usize {
        self.width * self.height
    }

    pub fn frame(&self, index: usize) -> &[Complex32] {
        let n = self.pixels_per_frame();
        &self.frames[index * n..(index + 1) * n]
    }

    pub fn frame_energy(&self, index: usize) -> f64 {
        self.frame(index).iter().map(|c| c.norm_sqr() as f64).sum()
    }
}

/// Anything that can hand out consecutive rendered frames.
pub trait FrameSource: Sync {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn frame_count(&self) -> usize;
    fn params(&self) -> &OpticalParams;
    /// Frames `start..start + count`, frame-major.
    fn read_frames(&self, start: usize, count: usize) -> Result<Vec<Complex32>>;
}

impl FrameSource for HologramStack {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn frame_count(&self) -> usize {
        self.frame_count
    }
    fn params(&self) -> &OpticalParams {
        &self.params
    }
    fn read_frames(&self, start: usize, count: usize) -> Result<Vec<Complex32>> {
        check_range(start, count, self.frame_count)?;
        let n = self.pixels_per_frame();
        Ok(self.frames[start * n..(start + count) * n].to_vec())
    }
}

pub(crate) fn check_range(start: usize, count: usize, total: usize) -> Result<()> {
    if start + count > total {
        return Err(Error::data(format!(
            "frame range {start}..{} exceeds stack length {total}",
            start + count
        )));
    }
    Ok(())
}

/// Renders interferogram frames on demand instead of materialising the
/// whole hologram stack.
pub struct LazyRenderer<'a> {
    stack: &'a InterferogramStack,
    propagator: FresnelPropagator,
}

impl<'a> LazyRenderer<'a> {
    pub fn new(stack: &'a InterferogramStack, z: f64) -> Result<Self> {
        stack.validate()?;
        let propagator = FresnelPropagator::new(stack.width, stack.height, &stack.params, z)?;
        Ok(Self { stack, propagator })
    }
}

impl FrameSource for LazyRenderer<'_> {
    fn width(&self) -> usize {
        self.stack.width
    }
    fn height(&self) -> usize {
        self.stack.height
    }
    fn frame_count(&self) -> usize {
        self.stack.frame_count
    }
    fn params(&self) -> &OpticalParams {
        &self.stack.params
    }
    fn read_frames(&self, start: usize, count: usize) -> Result<Vec<Complex32>> {
        check_range(start, count, self.stack.frame_count)?;
        let frames: Vec<Vec<Complex32>> = (start..start + count)
            .into_par_iter()
            .map(|i| render_frame(self.stack.frame(i), &self.propagator))
            .collect::<Result<_>>()?;
        Ok(frames.concat())
    }
}

/// Precomputed chirps and FFT plans for one grid size and distance.
pub struct FresnelPropagator {
    width: usize,
    height: usize,
    distance_m: f64,
    output_pitch_m: (f64, f64),
    /// Camera-grid chirp `Q_in` evaluated at |z|.
    camera_chirp: Vec<Complex64>,
    /// Output-grid chirp `Q_out` evaluated at |z|.
    output_chirp: Vec<Complex64>,
    row_fft: Arc<dyn Fft<f64>>,
    col_fft: Arc<dyn Fft<f64>>,
}

impl FresnelPropagator {
    pub fn new(width: usize, height: usize, params: &OpticalParams, z: f64) -> Result<Self> {
        if width < MIN_FIELD_DIM || height < MIN_FIELD_DIM {
            return Err(Error::data(format!(
                "field is {width}x{height}; Fresnel propagation needs at least \
                 {MIN_FIELD_DIM}x{MIN_FIELD_DIM}"
            )));
        }
        if !(params.wavelength_m > 0.0 && params.pixel_pitch_m > 0.0) {
            return Err(Error::config("wavelength and pixel pitch must be positive"));
        }
        if !z.is_finite() {
            return Err(Error::config(format!("propagation distance {z} is not finite")));
        }
        let lambda = params.wavelength_m;
        let pitch = params.pixel_pitch_m;
        let dist = z.abs();
        let (out_dx, out_dy) = if dist > 0.0 {
            (
                lambda * dist / (width as f64 * pitch),
                lambda * dist / (height as f64 * pitch),
            )
        } else {
            (pitch, pitch)
        };
        let chirp = |dx: f64, dy: f64| -> Vec<Complex64> {
            if dist == 0.0 {
                return Vec::new();
            }
            let k = std::f64::consts::PI / (lambda * dist);
            let (cx, cy) = ((width / 2) as f64, (height / 2) as f64);
            let mut out = Vec::with_capacity(width * height);
            for y in 0..height {
                let yy = (y as f64 - cy) * dy;
                for x in 0..width {
                    let xx = (x as f64 - cx) * dx;
                    out.push(Complex64::from_polar(1.0, k * (xx * xx + yy * yy)));
                }
            }
            out
        };
        let mut planner = FftPlanner::new();
        let (row_fft, col_fft) = if z >= 0.0 {
            (planner.plan_fft_forward(width), planner.plan_fft_forward(height))
        } else {
            (planner.plan_fft_inverse(width), planner.plan_fft_inverse(height))
        };
        Ok(Self {
            width,
            height,
            distance_m: z,
            output_pitch_m: (out_dx, out_dy),
            camera_chirp: chirp(pitch, pitch),
            output_chirp: chirp(out_dx, out_dy),
            row_fft,
            col_fft,
        })
    }

    pub fn distance_m(&self) -> f64 {
        self.distance_m
    }

    /// Sample spacing of the reconstructed plane for positive distances.
    pub fn output_pitch_m(&self) -> (f64, f64) {
        self.output_pitch_m
    }

    /// Propagates a row-major field in place.
    pub fn apply(&self, data: &mut [Complex64]) -> Result<()> {
        if data.len() != self.width * self.height {
            return Err(Error::data(format!(
                "field has {} samples, propagator expects {}x{}",
                data.len(),
                self.width,
                self.height
            )));
        }
        if let Some(i) = data.iter().position(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(Error::data(format!(
                "non-finite field value at pixel ({}, {})",
                i % self.width,
                i / self.width
            )));
        }
        if self.distance_m == 0.0 {
            return Ok(());
        }
        let mut buf = data.to_vec();
        if self.distance_m > 0.0 {
            for (v, q) in buf.iter_mut().zip(&self.camera_chirp) {
                *v *= q;
            }
            self.fft2_unitary(&mut buf);
            shift2(&buf, data, self.width, self.height, false);
            for (v, q) in data.iter_mut().zip(&self.output_chirp) {
                *v *= q;
            }
        } else {
            for (v, q) in buf.iter_mut().zip(&self.output_chirp) {
                *v *= q.conj();
            }
            shift2(&buf, data, self.width, self.height, true);
            self.fft2_unitary(data);
            for (v, q) in data.iter_mut().zip(&self.camera_chirp) {
                *v *= q.conj();
            }
        }
        Ok(())
    }

    fn fft2_unitary(&self, data: &mut [Complex64]) {
        let (w, h) = (self.width, self.height);
        self.row_fft.process(data);
        let mut t = vec![Complex64::default(); w * h];
        transpose(data, &mut t, w, h);
        self.col_fft.process(&mut t);
        transpose(&t, data, h, w);
        let scale = 1.0 / ((w * h) as f64).sqrt();
        for v in data.iter_mut() {
            *v *= scale;
        }
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], w: usize, h: usize) {
    for y in 0..h {
        for x in 0..w {
            dst[x * h + y] = src[y * w + x];
        }
    }
}

/// 2D circular shift by half the size in each axis (`inverse` undoes it for odd sizes).
fn shift2(src: &[Complex64], dst: &mut [Complex64], w: usize, h: usize, inverse: bool) {
    let (sx, sy) = (w / 2, h / 2);
    for y in 0..h {
        for x in 0..w {
            if inverse {
                dst[y * w + x] = src[((y + sy) % h) * w + (x + sx) % w];
            } else {
                dst[((y + sy) % h) * w + (x + sx) % w] = src[y * w + x];
            }
        }
    }
}

/// Propagates a complex field by `z` metres.
pub fn fresnel_propagate(
    field: &Image<Complex64>,
    params: &OpticalParams,
    z: f64,
) -> Result<Image<Complex64>> {
    let prop = FresnelPropagator::new(field.width(), field.height(), params, z)?;
    let mut data = field.as_slice().to_vec();
    prop.apply(&mut data)?;
    Ok(Image::from_vec(field.width(), field.height(), data))
}

/// Converts one raw frame to a complex field, removes its mean and propagates it.
pub fn render_frame(frame: &[u16], prop: &FresnelPropagator) -> Result<Vec<Complex32>> {
    let mean = frame.iter().map(|&v| v as f64).sum::<f64>() / frame.len() as f64;
    let mut field: Vec<Complex64> = frame
        .iter()
        .map(|&v| Complex64::new(v as f64 - mean, 0.0))
        .collect();
    prop.apply(&mut field)?;
    Ok(field
        .into_iter()
        .map(|c| Complex32::new(c.re as f32, c.im as f32))
        .collect())
}

pub fn render_hologram_stack(stack: &InterferogramStack, z: f64) -> Result<HologramStack> {
    let renderer = LazyRenderer::new(stack, z)?;
    let frames = renderer.read_frames(0, stack.frame_count)?;
    Ok(HologramStack {
        width: stack.width,
        height: stack.height,
        frame_count: stack.frame_count,
        frames,
        params: stack.params,
    })
}

//! Synthetic interferogram stacks with known vessel geometry and flow.
//!
//! Every pixel carries a scattered field whose power spectrum is Gaussian.
//! Background pixels use `background_sigma_hz`; vessel pixels use the width
//! whose in-band second moment exceeds the background's by `Δf²`, where `Δf`
//! follows a parabolic lumen profile and a sinusoidal cardiac modulation.
//! The recorded intensity is `|E_ref + s·E|²` plus sensor noise, quantized to
//! 16 bits. The stack is synthesized directly in the reconstruction plane,
//! so it renders with a zero propagation distance.

pub mod series;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::doppler::{velocity_from_delta_f, SpectralWindowConfig};
use crate::error::{Error, Result};
use crate::flow::{section_volume_rate, MeanVelocityRule, M3S_TO_UL_MIN};
use crate::image::{Image, Mask};
use crate::optics::{FresnelPropagator, InterferogramStack};
use crate::params::OpticalParams;
pub use series::{band_moment2, flat_band_moment2, gaussian_doppler_series, SeriesSynth, SigmaTable};

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-pixel generator seeded from `(seed, x, y)` only.
pub fn pixel_rng(seed: u64, x: usize, y: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(mix(seed) ^ x as u64) ^ y as u64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VesselSpec {
    /// Centreline vertices, px.
    pub centerline: Vec<(f64, f64)>,
    pub radius_px: f64,
    pub peak_delta_f_hz: f64,
    /// Relative amplitude of the cardiac modulation.
    #[serde(default)]
    pub pulsatility: f64,
    #[serde(default = "default_cardiac_hz")]
    pub cardiac_hz: f64,
    /// Phase of the modulation at `t = 0`.
    #[serde(default)]
    pub cardiac_phase_rad: f64,
    /// Zero gives a sinusoid; larger values narrow the systolic peak.
    #[serde(default)]
    pub pulse_sharpness: f64,
    /// Arteries enter the truth raster and the flow totals.
    #[serde(default = "default_true")]
    pub artery: bool,
}

fn default_cardiac_hz() -> f64 {
    1.2
}
fn default_true() -> bool {
    true
}

impl VesselSpec {
    /// Broadening scale factor at time `t`, between `1 − a` and `1 + a`.
    pub fn pulse(&self, t_s: f64) -> f64 {
        let phase = std::f64::consts::TAU * self.cardiac_hz * t_s + self.cardiac_phase_rad;
        1.0 + self.pulsatility * cardiac_waveform(phase, self.pulse_sharpness)
    }
}

/// Periodic waveform in `[-1, 1]` peaking at phase π/2.
///
/// `exp(κ (cos(φ − π/2) − 1))` rescaled to `[-1, 1]`; it tends to `sin φ` as
/// `κ → 0`.
pub fn cardiac_waveform(phase: f64, sharpness: f64) -> f64 {
    let c = (phase - std::f64::consts::FRAC_PI_2).cos();
    if sharpness <= 0.0 {
        return c;
    }
    let k = sharpness;
    let floor = (-2.0 * k).exp();
    2.0 * ((k * (c - 1.0)).exp() - floor) / (1.0 - floor) - 1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PapillaSpec {
    pub center_px: (f64, f64),
    pub radius_px: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
    pub params: OpticalParams,
    pub background_sigma_hz: f64,
    pub vessels: Vec<VesselSpec>,
    pub papilla: Option<PapillaSpec>,
    pub reference_amplitude: f64,
    pub scatter_amplitude: f64,
    /// Sensor noise standard deviation relative to the interference term.
    pub noise_floor: f64,
    pub rng_seed: u64,
    /// Band and window layout the truth is expressed in.
    pub analysis: SpectralWindowConfig,
    /// Hop of the crossfaded segments used for time-varying pixels.
    pub crossfade_hop: usize,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        let center = (64.0, 64.0);
        Self {
            width: 128,
            height: 128,
            frame_count: 2048,
            params: OpticalParams::default(),
            background_sigma_hz: 3000.0,
            vessels: radial_vessels(center, 3, 20.0, 62.0, &[3.0], &[4000.0], 0.33, 1.2, 0.3),
            papilla: Some(PapillaSpec {
                center_px: center,
                radius_px: 40.0,
            }),
            reference_amplitude: 32_768f64.sqrt(),
            scatter_amplitude: 32_768f64.sqrt() / 16.0,
            noise_floor: 0.01,
            rng_seed: 1,
            analysis: SpectralWindowConfig::default(),
            crossfade_hop: 256,
        }
    }
}

/// Straight vessels leaving `center` at evenly spread angles, from radius
/// `r_start` to `r_end`. Per-vessel radii and peaks cycle through the slices.
#[allow(clippy::too_many_arguments)]
pub fn radial_vessels(
    center: (f64, f64),
    count: usize,
    r_start: f64,
    r_end: f64,
    radii_px: &[f64],
    peaks_hz: &[f64],
    pulsatility: f64,
    cardiac_hz: f64,
    angle_offset_rad: f64,
) -> Vec<VesselSpec> {
    (0..count)
        .map(|i| {
            let a = angle_offset_rad + std::f64::consts::TAU * i as f64 / count as f64;
            let (s, c) = a.sin_cos();
            VesselSpec {
                centerline: vec![
                    (center.0 + r_start * c, center.1 + r_start * s),
                    (center.0 + r_end * c, center.1 + r_end * s),
                ],
                radius_px: radii_px[i % radii_px.len()],
                peak_delta_f_hz: peaks_hz[i % peaks_hz.len()],
                pulsatility,
                cardiac_hz,
                cardiac_phase_rad: 0.0,
                pulse_sharpness: 0.0,
                artery: true,
            }
        })
        .collect()
}

/// Distance from `p` to a polyline.
pub fn polyline_distance(p: (f64, f64), line: &[(f64, f64)]) -> f64 {
    if line.len() == 1 {
        return (p.0 - line[0].0).hypot(p.1 - line[0].1);
    }
    line.windows(2)
        .map(|s| {
            let (a, b) = (s[0], s[1]);
            let (dx, dy) = (b.0 - a.0, b.1 - a.1);
            let len2 = dx * dx + dy * dy;
            let t = if len2 > 0.0 {
                (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            (p.0 - a.0 - t * dx).hypot(p.1 - a.1 - t * dy)
        })
        .fold(f64::INFINITY, f64::min)
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.width == 0 || self.height == 0 || self.frame_count == 0 {
            return Err(Error::config("phantom dimensions must be positive"));
        }
        if self.params.propagation_distance_m != 0.0 {
            return Err(Error::config(
                "the phantom is synthesized in the reconstruction plane; set propagation_distance_m to 0",
            ));
        }
        let fs = self.params.frame_rate_hz;
        if !(self.background_sigma_hz > 0.0 && self.background_sigma_hz < fs / 2.0) {
            return Err(Error::config(format!(
                "background width must lie in (0, {}) Hz",
                fs / 2.0
            )));
        }
        self.analysis.validate(fs)?;
        if self.crossfade_hop == 0 {
            return Err(Error::config("crossfade hop must be positive"));
        }
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !(finite_nonneg(self.reference_amplitude) && finite_nonneg(self.scatter_amplitude) && finite_nonneg(self.noise_floor)) {
            return Err(Error::config("amplitudes and noise floor must be finite and non-negative"));
        }
        for (i, v) in self.vessels.iter().enumerate() {
            if v.centerline.is_empty() || !(v.radius_px > 0.0) || !(v.peak_delta_f_hz >= 0.0) {
                return Err(Error::config(format!(
                    "vessel {i} needs a centreline, a positive radius and a non-negative peak broadening"
                )));
            }
            if !(0.0..1.0).contains(&v.pulsatility) || !(v.cardiac_hz >= 0.0) {
                return Err(Error::config(format!("vessel {i} pulsatility must lie in [0, 1)")));
            }
        }
        if let Some(p) = self.papilla {
            if !(p.radius_px > 0.0) {
                return Err(Error::config("papilla radius must be positive"));
            }
        }
        Ok(())
    }

    /// Retinal-plane metres per pixel.
    pub fn pixel_scale_m_per_px(&self) -> f64 {
        match self.papilla {
            Some(p) => self.params.papilla_diameter_m / (2.0 * p.radius_px),
            None => self.params.pixel_pitch_m,
        }
    }

    /// Broadening at each vessel pixel before cardiac modulation: the
    /// strongest covering vessel wins, ties to the lower index.
    fn lumen_map(&self) -> Image<Option<(usize, f64)>> {
        Image::from_fn(self.width, self.height, |x, y| {
            let mut best: Option<(usize, f64)> = None;
            for (i, v) in self.vessels.iter().enumerate() {
                let r = polyline_distance((x as f64, y as f64), &v.centerline);
                if r < v.radius_px {
                    let u = r / v.radius_px;
                    let base = v.peak_delta_f_hz * (1.0 - u * u);
                    if best.is_none_or(|(_, b)| base > b) {
                        best = Some((i, base));
                    }
                }
            }
            best
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhantomTruth {
    pub width: usize,
    pub height: usize,
    #[serde(skip)]
    pub artery_raster: Mask,
    #[serde(skip)]
    pub vessel_raster: Mask,
    #[serde(skip)]
    pub papilla_mask: Option<Mask>,
    pub papilla_center_px: Option<(f64, f64)>,
    pub papilla_diameter_px: Option<f64>,
    pub pixel_scale_m_per_px: f64,
    pub window_times_s: Vec<f64>,
    /// Per window, Hz; zero off-vessel.
    #[serde(skip)]
    pub delta_f_field: Vec<Image<f64>>,
    /// Per window, m/s.
    #[serde(skip)]
    pub velocity_field: Vec<Image<f64>>,
    /// Per window, per artery (in vessel order), μL/min.
    pub section_flows_ul_min: Vec<Vec<f64>>,
    pub total_flow_ul_min: Vec<f64>,
    /// Solved Gaussian width per vessel at its unmodulated peak.
    pub peak_sigma_hz: Vec<f64>,
}

impl PhantomTruth {
    pub fn mean_total_flow(&self) -> f64 {
        self.total_flow_ul_min.iter().sum::<f64>() / self.total_flow_ul_min.len().max(1) as f64
    }
}

/// Pixels within half a pixel of vessel `index`'s centreline.
pub fn centerline_pixels(spec: &PhantomSpec, index: usize) -> Vec<(usize, usize)> {
    let v = &spec.vessels[index];
    let mut out = Vec::new();
    for y in 0..spec.height {
        for x in 0..spec.width {
            if polyline_distance((x as f64, y as f64), &v.centerline) <= 0.5 {
                out.push((x, y));
            }
        }
    }
    out
}

/// Ground truth without synthesizing the stack.
pub fn phantom_truth(spec: &PhantomSpec) -> Result<PhantomTruth> {
    spec.validate()?;
    let fs = spec.params.frame_rate_hz;
    let table = SigmaTable::new(spec.background_sigma_hz, spec.analysis.band_low_hz, spec.analysis.band_high_hz)?;
    let mut peak_sigma_hz = Vec::with_capacity(spec.vessels.len());
    for v in &spec.vessels {
        let top = v.peak_delta_f_hz * (1.0 + v.pulsatility);
        table.sigma_for(top)?;
        peak_sigma_hz.push(table.sigma_for(v.peak_delta_f_hz)?);
    }
    let lumen = spec.lumen_map();
    let artery_raster = lumen.map(|l| l.is_some_and(|(i, _)| spec.vessels[i].artery));
    let vessel_raster = lumen.map(|l| l.is_some());
    let papilla_mask = spec.papilla.map(|p| {
        Image::from_fn(spec.width, spec.height, |x, y| {
            (x as f64 - p.center_px.0).hypot(y as f64 - p.center_px.1) <= p.radius_px
        })
    });
    let scale = spec.pixel_scale_m_per_px();
    let n_windows = spec.analysis.window_count(spec.frame_count);
    let window_times_s: Vec<f64> = (0..n_windows).map(|k| spec.analysis.window_centre_s(k, fs)).collect();
    let mut delta_f_field = Vec::with_capacity(n_windows);
    let mut velocity_field = Vec::with_capacity(n_windows);
    let mut section_flows = Vec::with_capacity(n_windows);
    for &t in &window_times_s {
        let df = lumen.map(|l| match *l {
            Some((i, base)) => base * spec.vessels[i].pulse(t),
            None => 0.0,
        });
        velocity_field.push(df.map(|&d| velocity_from_delta_f(d, &spec.params)));
        delta_f_field.push(df);
        section_flows.push(
            spec.vessels
                .iter()
                .filter(|v| v.artery)
                .map(|v| {
                    let vmax = velocity_from_delta_f(v.peak_delta_f_hz * v.pulse(t), &spec.params);
                    section_volume_rate(vmax, v.radius_px, scale, MeanVelocityRule::HalfPeak) * M3S_TO_UL_MIN
                })
                .collect::<Vec<f64>>(),
        );
    }
    let total_flow_ul_min = section_flows.iter().map(|s| s.iter().sum()).collect();
    Ok(PhantomTruth {
        width: spec.width,
        height: spec.height,
        artery_raster,
        vessel_raster,
        papilla_diameter_px: papilla_mask.as_ref().map(|_| 2.0 * spec.papilla.unwrap().radius_px),
        papilla_center_px: spec.papilla.map(|p| p.center_px),
        papilla_mask,
        pixel_scale_m_per_px: scale,
        window_times_s,
        delta_f_field,
        velocity_field,
        section_flows_ul_min: section_flows,
        total_flow_ul_min,
        peak_sigma_hz,
    })
}

/// Sine crossfade window; squares of overlapping halves sum to one.
fn crossfade_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| (std::f64::consts::PI * (n as f64 + 0.5) / len as f64).sin())
        .collect()
}

struct Synth<'a> {
    spec: &'a PhantomSpec,
    table: SigmaTable,
    lumen: Image<Option<(usize, f64)>>,
    whole: SeriesSynth,
    segment: SeriesSynth,
    fade: Vec<f64>,
    background_filter: Vec<f64>,
}

impl Synth<'_> {
    /// Scattered field of one pixel over the whole stack.
    fn pixel_field(&self, rng: &mut ChaCha8Rng, x: usize, y: usize) -> Result<Vec<Complex64>> {
        let t_len = self.spec.frame_count;
        let fs = self.spec.params.frame_rate_hz;
        let mut out = Vec::with_capacity(t_len);
        match self.lumen[(x, y)] {
            None => self.whole.generate_into(rng, &self.background_filter, &mut out),
            Some((i, base)) => {
                let v = &self.spec.vessels[i];
                if v.pulsatility == 0.0 || v.cardiac_hz == 0.0 {
                    let sigma = self.table.sigma_for(base)?;
                    self.whole.generate_into(rng, &self.whole.filter(sigma), &mut out);
                } else {
                    let hop = self.spec.crossfade_hop;
                    out.resize(t_len, Complex64::default());
                    let mut seg = Vec::with_capacity(2 * hop);
                    let segments = t_len.div_ceil(hop);
                    for k in 0..=segments {
                        let centre = k * hop;
                        let sigma = self.table.sigma_for(base * v.pulse(centre as f64 / fs))?;
                        self.segment.generate_into(rng, &self.segment.filter(sigma), &mut seg);
                        for (n, (c, w)) in seg.iter().zip(&self.fade).enumerate() {
                            let t = (centre + n) as isize - hop as isize;
                            if t >= 0 && (t as usize) < t_len {
                                out[t as usize] += c * w;
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    fn pixel_intensity(&self, x: usize, y: usize) -> Result<Vec<u16>> {
        let spec = self.spec;
        let mut rng = pixel_rng(spec.rng_seed, x, y);
        let er = spec.reference_amplitude;
        let s = spec.scatter_amplitude;
        let noise_sd = spec.noise_floor * std::f64::consts::SQRT_2 * er * s;
        let field = if s > 0.0 {
            self.pixel_field(&mut rng, x, y)?
        } else {
            vec![Complex64::default(); spec.frame_count]
        };
        Ok(field
            .iter()
            .map(|e| {
                let total = Complex64::new(er, 0.0) + e * s;
                let n: f64 = if noise_sd > 0.0 { rng.sample::<f64, _>(StandardNormal) * noise_sd } else { 0.0 };
                (total.norm_sqr() + n).round().clamp(0.0, u16::MAX as f64) as u16
            })
            .collect())
    }
}

/// Synthesizes the interferogram stack and its ground truth.
///
/// Rows are generated in parallel; each pixel draws from its own seeded
/// generator, so the bytes do not depend on the thread count.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(InterferogramStack, PhantomTruth)> {
    let truth = phantom_truth(spec)?;
    let fs = spec.params.frame_rate_hz;
    let hop = spec.crossfade_hop;
    let synth = Synth {
        spec,
        table: SigmaTable::new(spec.background_sigma_hz, spec.analysis.band_low_hz, spec.analysis.band_high_hz)?,
        lumen: spec.lumen_map(),
        whole: SeriesSynth::new(spec.frame_count, fs),
        segment: SeriesSynth::new(2 * hop, fs),
        fade: crossfade_window(2 * hop),
        background_filter: series::shaping_filter(spec.background_sigma_hz, spec.frame_count, fs),
    };
    let (w, h, t_len) = (spec.width, spec.height, spec.frame_count);
    let mut frames = vec![0u16; w * h * t_len];
    for y in 0..h {
        let row: Vec<Vec<u16>> = (0..w)
            .into_par_iter()
            .map(|x| synth.pixel_intensity(x, y))
            .collect::<Result<_>>()?;
        for (x, series) in row.iter().enumerate() {
            for (t, &v) in series.iter().enumerate() {
                frames[t * w * h + y * w + x] = v;
            }
        }
    }
    let stack = InterferogramStack::new(w, h, t_len, frames, spec.params)?;
    Ok((stack, truth))
}

/// A point reflector in the reconstruction plane with a pure Doppler shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointScatterer {
    pub x: usize,
    pub y: usize,
    pub amplitude: f64,
    pub doppler_hz: f64,
}

/// Camera-plane interferograms of point scatterers seen through a Fresnel
/// distance `params.propagation_distance_m` (non-zero).
pub fn point_scatterer_stack(
    width: usize,
    height: usize,
    frame_count: usize,
    params: OpticalParams,
    reference_amplitude: f64,
    points: &[PointScatterer],
) -> Result<InterferogramStack> {
    let z = params.propagation_distance_m;
    if z == 0.0 {
        return Err(Error::config("point scatterer stacks need a non-zero propagation distance"));
    }
    let back = FresnelPropagator::new(width, height, &params, -z)?;
    let mut camera = Vec::with_capacity(points.len());
    for p in points {
        if p.x >= width || p.y >= height {
            return Err(Error::config(format!("scatterer ({}, {}) lies outside the field", p.x, p.y)));
        }
        let mut field = vec![Complex64::default(); width * height];
        field[p.y * width + p.x] = Complex64::new(p.amplitude, 0.0);
        back.apply(&mut field)?;
        camera.push(field);
    }
    let fs = params.frame_rate_hz;
    let n = width * height;
    let mut frames = vec![0u16; n * frame_count];
    frames.par_chunks_mut(n).enumerate().for_each(|(t, frame)| {
        for (i, out) in frame.iter_mut().enumerate() {
            let mut e = Complex64::new(reference_amplitude, 0.0);
            for (p, f) in points.iter().zip(&camera) {
                e += f[i] * Complex64::from_polar(1.0, std::f64::consts::TAU * p.doppler_hz * t as f64 / fs);
            }
            *out = e.norm_sqr().round().clamp(0.0, u16::MAX as f64) as u16;
        }
    });
    InterferogramStack::new(width, height, frame_count, frames, params)
}

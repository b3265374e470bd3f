//! Gaussian-spectrum Doppler series and band-limited moments.

use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::{Fft, FftPlanner};

use crate::doppler::spectrum::bin_frequencies;
use crate::error::{Error, Result};

/// Square-root Gaussian spectral shape, FFT order, scaled for unit expected power.
pub fn shaping_filter(sigma_hz: f64, n: usize, fs: f64) -> Vec<f64> {
    let g: Vec<f64> = bin_frequencies(n, fs)
        .iter()
        .map(|f| (-f * f / (2.0 * sigma_hz * sigma_hz)).exp())
        .collect();
    let total: f64 = g.iter().sum();
    g.iter().map(|v| (v / total).sqrt()).collect()
}

/// Reusable synthesizer for one series length.
pub struct SeriesSynth {
    n: usize,
    fs: f64,
    ifft: Arc<dyn Fft<f64>>,
}

impl SeriesSynth {
    pub fn new(n: usize, fs: f64) -> Self {
        Self {
            n,
            fs,
            ifft: FftPlanner::new().plan_fft_inverse(n),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn filter(&self, sigma_hz: f64) -> Vec<f64> {
        shaping_filter(sigma_hz, self.n, self.fs)
    }

    /// White circular Gaussian spectrum shaped by `filter`, inverse transformed into `out`.
    pub fn generate_into<R: Rng>(&self, rng: &mut R, filter: &[f64], out: &mut Vec<Complex64>) {
        out.clear();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        out.extend(filter.iter().map(|h| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re * s * h, im * s * h)
        }));
        self.ifft.process(out);
    }
}

/// Circular complex Gaussian process with a Gaussian power spectrum of
/// standard deviation `sigma_hz` and unit average power.
pub fn gaussian_doppler_series(sigma_hz: f64, n_frames: usize, fs: f64, seed: u64) -> Result<Vec<Complex64>> {
    if !(sigma_hz > 0.0 && sigma_hz < fs / 2.0) {
        return Err(Error::config(format!(
            "Doppler width must lie in (0, {}) Hz, got {sigma_hz}",
            fs / 2.0
        )));
    }
    if n_frames == 0 {
        return Ok(Vec::new());
    }
    let synth = SeriesSynth::new(n_frames, fs);
    let mut rng = super::pixel_rng(seed, 0, 0);
    let mut out = Vec::with_capacity(n_frames);
    synth.generate_into(&mut rng, &synth.filter(sigma_hz), &mut out);
    Ok(out)
}

const SIMPSON_INTERVALS: usize = 2000;

/// Normalized second moment of a Gaussian spectrum over `|f| ∈ [low, high]`.
pub fn band_moment2(sigma_hz: f64, low: f64, high: f64) -> f64 {
    let n = SIMPSON_INTERVALS;
    let h = (high - low) / n as f64;
    let g = |f: f64| (-f * f / (2.0 * sigma_hz * sigma_hz)).exp();
    let (mut s0, mut s2) = (0.0, 0.0);
    for i in 0..=n {
        let f = low + i as f64 * h;
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let v = g(f);
        s0 += w * v;
        s2 += w * f * f * v;
    }
    if s0 > 0.0 {
        s2 / s0
    } else {
        low * low
    }
}

/// Flat-spectrum limit of [`band_moment2`], `(a² + ab + b²) / 3`.
pub fn flat_band_moment2(low: f64, high: f64) -> f64 {
    (low * low + low * high + high * high) / 3.0
}

/// Maps a requested broadening to the Gaussian width that produces it.
///
/// `band_moment2(σ) − band_moment2(σ_bg) = Δf²` is inverted by linear
/// interpolation in `Δf²` on a dense geometric grid of widths.
#[derive(Debug, Clone)]
pub struct SigmaTable {
    background_sigma_hz: f64,
    sigmas: Vec<f64>,
    /// Moment difference `Δf²` at each width, non-decreasing.
    excess: Vec<f64>,
    band: (f64, f64),
}

const TABLE_POINTS: usize = 4096;
const TABLE_SPAN: f64 = 200.0;

impl SigmaTable {
    pub fn new(background_sigma_hz: f64, low: f64, high: f64) -> Result<Self> {
        if !(background_sigma_hz > 0.0 && low >= 0.0 && low < high) {
            return Err(Error::config("invalid background width or band"));
        }
        let m_bg = band_moment2(background_sigma_hz, low, high);
        let ratio = TABLE_SPAN.powf(1.0 / (TABLE_POINTS - 1) as f64);
        let mut sigmas = Vec::with_capacity(TABLE_POINTS);
        let mut excess = Vec::with_capacity(TABLE_POINTS);
        let mut s = background_sigma_hz;
        let mut last = 0.0;
        for _ in 0..TABLE_POINTS {
            let d = (band_moment2(s, low, high) - m_bg).max(last);
            sigmas.push(s);
            excess.push(d);
            last = d;
            s *= ratio;
        }
        Ok(Self {
            background_sigma_hz,
            sigmas,
            excess,
            band: (low, high),
        })
    }

    /// Largest broadening the band can express over this background.
    pub fn max_delta_f(&self) -> f64 {
        (flat_band_moment2(self.band.0, self.band.1) - band_moment2(self.background_sigma_hz, self.band.0, self.band.1))
            .max(0.0)
            .sqrt()
    }

    /// Largest broadening covered by the table.
    pub fn table_limit(&self) -> f64 {
        self.excess.last().unwrap().sqrt()
    }

    pub fn sigma_for(&self, delta_f_hz: f64) -> Result<f64> {
        if delta_f_hz <= 0.0 {
            return Ok(self.background_sigma_hz);
        }
        if delta_f_hz >= self.table_limit() {
            return Err(Error::config(format!(
                "requested broadening {delta_f_hz:.1} Hz exceeds the band limit {:.1} Hz for band [{}, {}] Hz over a {} Hz background",
                self.table_limit(),
                self.band.0,
                self.band.1,
                self.background_sigma_hz
            )));
        }
        let target = delta_f_hz * delta_f_hz;
        let i = self.excess.partition_point(|&d| d < target).max(1);
        let (d0, d1) = (self.excess[i - 1], self.excess[i]);
        let (s0, s1) = (self.sigmas[i - 1], self.sigmas[i]);
        let t = if d1 > d0 { (target - d0) / (d1 - d0) } else { 0.0 };
        Ok(s0 + t * (s1 - s0))
    }
}

//! Temporal power spectra and their in-band moments.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::clutter::Casorati;
use super::{Apodization, SpectralWindowConfig};
use crate::error::{Error, Result};
use crate::image::{Image, Mask};

/// Per-pixel power spectral density of one window, in FFT bin order.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectra {
    pub width: usize,
    pub height: usize,
    pub bins: usize,
    pub frame_rate_hz: f64,
    /// Pixel-major: `data[p * bins + k]`.
    pub data: Vec<f64>,
}

impl Spectra {
    pub fn pixel(&self, p: usize) -> &[f64] {
        &self.data[p * self.bins..(p + 1) * self.bins]
    }

    pub fn frequencies(&self) -> Vec<f64> {
        bin_frequencies(self.bins, self.frame_rate_hz)
    }
}

/// Signed bin frequencies spanning `(-fs/2, +fs/2]` in FFT order.
pub fn bin_frequencies(bins: usize, fs: f64) -> Vec<f64> {
    (0..bins)
        .map(|k| {
            let signed = if 2 * k <= bins { k as f64 } else { k as f64 - bins as f64 };
            signed * fs / bins as f64
        })
        .collect()
}

pub fn apodization_window(kind: Apodization, len: usize) -> Vec<f64> {
    match kind {
        Apodization::None => vec![1.0; len],
        // Periodic Hann.
        Apodization::Hann => (0..len)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
            .collect(),
    }
}

/// Band layout of a window: which bins enter the moments, and which hold the
/// highest in-band |f| (Nyquist clipping sentinel).
#[derive(Debug, Clone)]
pub struct BandLayout {
    pub freqs: Vec<f64>,
    pub in_band: Vec<usize>,
    pub top_bins: Vec<usize>,
}

impl BandLayout {
    pub fn new(bins: usize, fs: f64, low: f64, high: f64) -> Self {
        let freqs = bin_frequencies(bins, fs);
        let in_band: Vec<usize> = (0..bins)
            .filter(|&k| freqs[k].abs() >= low && freqs[k].abs() <= high)
            .collect();
        let top = in_band.iter().map(|&k| freqs[k].abs()).fold(f64::NEG_INFINITY, f64::max);
        let top_bins = in_band.iter().copied().filter(|&k| freqs[k].abs() == top).collect();
        Self {
            freqs,
            in_band,
            top_bins,
        }
    }

    /// `(M0, Σ f²·S, top-bin power)` of one pixel spectrum.
    pub fn sums(&self, psd: &[f64]) -> (f64, f64, f64) {
        let mut m0 = 0.0;
        let mut m2 = 0.0;
        for &k in &self.in_band {
            m0 += psd[k];
            m2 += self.freqs[k] * self.freqs[k] * psd[k];
        }
        let top = self.top_bins.iter().map(|&k| psd[k]).sum();
        (m0, m2, top)
    }
}

/// Reusable apodized FFT for one window length.
pub struct PsdPlan {
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl PsdPlan {
    pub fn new(len: usize, apodization: Apodization) -> Self {
        Self {
            window: apodization_window(apodization, len),
            fft: FftPlanner::new().plan_fft_forward(len),
        }
    }

    /// `S_k = |DFT(w·x)_k|² / N`, so `Σ S_k = Σ |w_n x_n|²`.
    pub fn psd_into(&self, series: &[Complex64], buf: &mut Vec<Complex64>, out: &mut [f64]) {
        let n = self.window.len();
        buf.clear();
        buf.extend(series.iter().zip(&self.window).map(|(x, w)| x * w));
        self.fft.process(buf);
        let scale = 1.0 / n as f64;
        for (o, c) in out.iter_mut().zip(buf.iter()) {
            *o = c.norm_sqr() * scale;
        }
    }
}

pub fn stft_power_spectra(
    window: &Casorati,
    cfg: &SpectralWindowConfig,
    frame_rate_hz: f64,
) -> Result<Spectra> {
    if window.frames != cfg.window_len {
        return Err(Error::config(format!(
            "window holds {} frames but the configuration expects {}",
            window.frames, cfg.window_len
        )));
    }
    let bins = cfg.window_len;
    let plan = PsdPlan::new(bins, cfg.apodization);
    let mut data = vec![0.0; window.pixels() * bins];
    let mut buf = Vec::with_capacity(bins);
    for (p, out) in data.chunks_exact_mut(bins).enumerate() {
        plan.psd_into(window.row(p), &mut buf, out);
    }
    Ok(Spectra {
        width: window.width,
        height: window.height,
        bins,
        frame_rate_hz,
        data,
    })
}

/// In-band power (M0) per pixel, both frequency signs combined.
pub fn power_doppler(spectra: &Spectra, cfg: &SpectralWindowConfig) -> Image<f64> {
    let band = BandLayout::new(spectra.bins, spectra.frame_rate_hz, cfg.band_low_hz, cfg.band_high_hz);
    let m0 = (0..spectra.width * spectra.height)
        .map(|p| band.sums(spectra.pixel(p)).0)
        .collect();
    Image::from_vec(spectra.width, spectra.height, m0)
}

/// Normalized second moment `Σ f²S / Σ S` over the band; undefined where the band is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Moment2Map {
    pub m2: Image<f64>,
    pub defined: Mask,
}

pub fn spectral_moment2(spectra: &Spectra, cfg: &SpectralWindowConfig) -> Moment2Map {
    let band = BandLayout::new(spectra.bins, spectra.frame_rate_hz, cfg.band_low_hz, cfg.band_high_hz);
    let n = spectra.width * spectra.height;
    let mut m2 = Vec::with_capacity(n);
    let mut defined = Vec::with_capacity(n);
    for p in 0..n {
        let (s0, s2, _) = band.sums(spectra.pixel(p));
        if s0 > 0.0 {
            m2.push(s2 / s0);
            defined.push(true);
        } else {
            m2.push(0.0);
            defined.push(false);
        }
    }
    Moment2Map {
        m2: Image::from_vec(spectra.width, spectra.height, m2),
        defined: Image::from_vec(spectra.width, spectra.height, defined),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn cfg(len: usize, apod: Apodization) -> SpectralWindowConfig {
        SpectralWindowConfig {
            window_len: len,
            hop: len / 2,
            svd_remove: 0,
            apodization: apod,
            ..Default::default()
        }
    }

    fn single_pixel(series: Vec<Complex64>) -> Casorati {
        Casorati {
            width: 1,
            height: 1,
            frames: series.len(),
            data: series,
        }
    }

    fn tone_spectra(bins: usize, fs: f64, bin: usize, power: f64) -> Spectra {
        let mut data = vec![0.0; bins];
        data[bin] = power;
        Spectra {
            width: 1,
            height: 1,
            bins,
            frame_rate_hz: fs,
            data,
        }
    }

    #[test]
    fn frequency_axis_spans_half_open_nyquist_interval() {
        let f = bin_frequencies(8, 8.0);
        assert_eq!(f, vec![0.0, 1.0, 2.0, 3.0, 4.0, -3.0, -2.0, -1.0]);
    }

    #[test]
    fn bin_centred_tone_lands_in_one_bin() {
        let fs: f64 = 33_000.0;
        let f0 = 100.0 * fs / 512.0;
        assert!((f0 - 6445.3125).abs() < 1e-9);
        let series = (0..512)
            .map(|t| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * f0 * t as f64 / fs))
            .collect();
        let s = stft_power_spectra(&single_pixel(series), &cfg(512, Apodization::None), fs).unwrap();
        let total: f64 = s.data.iter().sum();
        assert!((s.data[100] / total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_series_gives_zero_spectrum() {
        let s = stft_power_spectra(
            &single_pixel(vec![Complex64::default(); 64]),
            &cfg(64, Apodization::Hann),
            33_000.0,
        )
        .unwrap();
        assert!(s.data.iter().all(|&v| v == 0.0));
        let c = cfg(64, Apodization::Hann);
        assert_eq!(power_doppler(&s, &c)[(0, 0)], 0.0);
        assert!(!spectral_moment2(&s, &c).defined[(0, 0)]);
    }

    #[test]
    fn parseval_with_apodization() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let series: Vec<Complex64> = (0..512)
            .map(|_| Complex64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)))
            .collect();
        let w = apodization_window(Apodization::Hann, 512);
        let oracle: f64 = series.iter().zip(&w).map(|(x, w)| x.norm_sqr() * w * w).sum();
        let s = stft_power_spectra(&single_pixel(series), &cfg(512, Apodization::Hann), 33_000.0).unwrap();
        let total: f64 = s.data.iter().sum();
        assert!((total - oracle).abs() / oracle < 1e-6);
    }

    #[test]
    fn tone_inside_and_below_band() {
        // 500 Hz bins at 33 kHz with 66 bins: bin 20 = 10 kHz, bin 6 = 3 kHz.
        let c = cfg(66, Apodization::None);
        let inside = tone_spectra(66, 33_000.0, 20, 1.0);
        assert_eq!(power_doppler(&inside, &c)[(0, 0)], 1.0);
        let m2 = spectral_moment2(&inside, &c);
        assert!(m2.defined[(0, 0)]);
        assert_eq!(m2.m2[(0, 0)], 1.0e8);
        // Negative frequency of the same magnitude counts too.
        let mirrored = tone_spectra(66, 33_000.0, 66 - 20, 1.0);
        assert_eq!(power_doppler(&mirrored, &c)[(0, 0)], 1.0);
        let below = tone_spectra(66, 33_000.0, 6, 1.0);
        assert_eq!(power_doppler(&below, &c)[(0, 0)], 0.0);
        assert!(!spectral_moment2(&below, &c).defined[(0, 0)]);
    }

    #[test]
    fn flat_band_moment_approaches_closed_form() {
        let (a, b) = (6000.0_f64, 16_500.0_f64);
        let closed = (a * a + a * b + b * b) / 3.0;
        assert!((closed - 1.3575e8).abs() < 1.0);
        let s = Spectra {
            width: 1,
            height: 1,
            bins: 512,
            frame_rate_hz: 33_000.0,
            data: vec![1.0; 512],
        };
        let m2 = spectral_moment2(&s, &cfg(512, Apodization::Hann)).m2[(0, 0)];
        assert!((m2 - closed).abs() / closed < 0.005, "{m2}");
    }

    #[test]
    fn top_bin_is_highest_in_band_frequency() {
        let band = BandLayout::new(512, 33_000.0, 6000.0, 16_500.0);
        assert_eq!(band.top_bins, vec![256]);
        let band = BandLayout::new(66, 33_000.0, 6000.0, 10_000.0);
        assert_eq!(band.top_bins, vec![20, 46]);
    }
}

//! Windowed Doppler analysis: clutter rejection, spectra, moments, broadening.

pub mod broadening;
pub mod clutter;
pub mod spectrum;

use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::optics::FrameSource;
use clutter::{fill_rows, GramAccumulator, CHUNK_PIXELS};
use spectrum::{BandLayout, PsdPlan};

pub use broadening::{
    differential_broadening, estimate_background, velocity_from_broadening, velocity_from_delta_f,
    BackgroundEstimate, BroadeningMap, SaturationRule, VelocityMap,
};
pub use clutter::{pca_preview, svd_clutter_filter, Casorati};
pub use spectrum::{power_doppler, spectral_moment2, stft_power_spectra, Moment2Map, Spectra};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Apodization {
    None,
    Hann,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectralWindowConfig {
    pub window_len: usize,
    pub hop: usize,
    pub svd_remove: usize,
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    pub apodization: Apodization,
}

impl Default for SpectralWindowConfig {
    fn default() -> Self {
        Self {
            window_len: 512,
            hop: 256,
            svd_remove: 8,
            band_low_hz: 6000.0,
            band_high_hz: 16_500.0,
            apodization: Apodization::Hann,
        }
    }
}

impl SpectralWindowConfig {
    pub fn validate(&self, frame_rate_hz: f64) -> Result<()> {
        if self.window_len < 2 {
            return Err(Error::config(format!("window length must be at least 2, got {}", self.window_len)));
        }
        if self.hop == 0 || self.hop > self.window_len {
            return Err(Error::config(format!(
                "hop must lie in 1..={}, got {}",
                self.window_len, self.hop
            )));
        }
        if self.svd_remove >= self.window_len {
            return Err(Error::config(format!(
                "cannot remove {} singular components from {}-frame windows",
                self.svd_remove, self.window_len
            )));
        }
        let ok = self.band_low_hz >= 0.0
            && self.band_low_hz < self.band_high_hz
            && self.band_high_hz <= frame_rate_hz / 2.0;
        if !ok {
            return Err(Error::config(format!(
                "band [{}, {}] Hz must satisfy 0 <= low < high <= {} Hz",
                self.band_low_hz,
                self.band_high_hz,
                frame_rate_hz / 2.0
            )));
        }
        Ok(())
    }

    /// `floor((N - L) / hop) + 1`, or zero when the stack is shorter than a window.
    pub fn window_count(&self, frames: usize) -> usize {
        if frames < self.window_len {
            0
        } else {
            (frames - self.window_len) / self.hop + 1
        }
    }

    pub fn window_start(&self, index: usize) -> usize {
        index * self.hop
    }

    /// Time of the window centre in seconds.
    pub fn window_centre_s(&self, index: usize, frame_rate_hz: f64) -> f64 {
        (self.window_start(index) as f64 + self.window_len as f64 / 2.0) / frame_rate_hz
    }
}

/// Spectral moments of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentMaps {
    pub window_index: usize,
    pub window_start_frame: usize,
    /// In-band power.
    pub m0: Image<f64>,
    /// Normalized second moment, Hz². Zero where undefined.
    pub m2: Image<f64>,
    pub m2_defined: Mask,
    /// Share of in-band power sitting in the highest-|f| band bins.
    pub top_bin_fraction: Image<f64>,
}

/// Chunks whose Gram matrices are built concurrently before being merged in order.
const GRAM_GROUP: usize = 8;

/// Wall-clock split of one [`analyze_window`] call, seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimes {
    /// Fetching (and for lazy sources, rendering) the window's frames.
    pub read_s: f64,
    /// Gram matrix, eigenbasis and clutter projection.
    pub svd_s: f64,
    /// Periodograms and band moments.
    pub stft_s: f64,
}

/// Clutter-filters one window and reduces each pixel spectrum to its moments.
///
/// Pixels are streamed in blocks of [`CHUNK_PIXELS`], so only the
/// single-precision window and a few blocks are held in memory. Output is
/// bit-identical for any thread count.
pub fn analyze_window(
    source: &dyn FrameSource,
    cfg: &SpectralWindowConfig,
    window_index: usize,
) -> Result<MomentMaps> {
    analyze_window_timed(source, cfg, window_index).map(|(m, _)| m)
}

/// Per-chunk `(M0, Σf²S, top)` sums with projection and PSD seconds.
type ChunkSums = (Vec<(f64, f64, f64)>, f64, f64);

/// [`analyze_window`] plus its stage timings. Projection and periodograms
/// share one parallel pass; its wall time is split between them in
/// proportion to their summed per-block times.
pub fn analyze_window_timed(
    source: &dyn FrameSource,
    cfg: &SpectralWindowConfig,
    window_index: usize,
) -> Result<(MomentMaps, StageTimes)> {
    let fs = source.params().frame_rate_hz;
    cfg.validate(fs)?;
    let (w, h) = (source.width(), source.height());
    let pixels = w * h;
    let t = cfg.window_len;
    let start = cfg.window_start(window_index);
    let clock = Instant::now();
    let frames = source.read_frames(start, t)?;
    let read_s = clock.elapsed().as_secs_f64();
    let clock = Instant::now();

    let chunks: Vec<(usize, usize)> = (0..pixels)
        .step_by(CHUNK_PIXELS)
        .map(|first| (first, CHUNK_PIXELS.min(pixels - first)))
        .collect();
    let load = |&(first, count): &(usize, usize)| {
        let mut rows = vec![Complex64::default(); count * t];
        fill_rows(&frames, pixels, t, first, &mut rows);
        rows
    };

    let mut gram = GramAccumulator::new(t);
    if cfg.svd_remove > 0 {
        for group in chunks.chunks(GRAM_GROUP) {
            let partial: Vec<GramAccumulator> = group
                .par_iter()
                .map(|c| {
                    let mut g = GramAccumulator::new(t);
                    g.add_rows(&load(c));
                    g
                })
                .collect();
            for g in &partial {
                gram.merge(g);
            }
        }
    }
    let basis = gram.basis(cfg.svd_remove, window_index)?;
    drop(gram);
    let basis_s = clock.elapsed().as_secs_f64();
    let clock = Instant::now();

    let band = BandLayout::new(t, fs, cfg.band_low_hz, cfg.band_high_hz);
    let plan = PsdPlan::new(t, cfg.apodization);
    let per_chunk: Vec<ChunkSums> = chunks
        .par_iter()
        .map(|c| {
            let tick = Instant::now();
            let mut rows = load(c);
            basis.remove_from(&mut rows);
            let project = tick.elapsed().as_secs_f64();
            let tick = Instant::now();
            let mut buf = Vec::with_capacity(t);
            let mut psd = vec![0.0; t];
            let sums = rows
                .chunks_exact(t)
                .map(|series| {
                    plan.psd_into(series, &mut buf, &mut psd);
                    band.sums(&psd)
                })
                .collect();
            (sums, project, tick.elapsed().as_secs_f64())
        })
        .collect();
    let pass_s = clock.elapsed().as_secs_f64();
    let (project, spectra) = per_chunk.iter().fold((0.0, 0.0), |acc, c| (acc.0 + c.1, acc.1 + c.2));
    let project_share = if project + spectra > 0.0 { project / (project + spectra) } else { 0.5 };
    let times = StageTimes {
        read_s,
        svd_s: basis_s + pass_s * project_share,
        stft_s: pass_s * (1.0 - project_share),
    };

    let mut m0 = Vec::with_capacity(pixels);
    let mut m2 = Vec::with_capacity(pixels);
    let mut defined = Vec::with_capacity(pixels);
    let mut top = Vec::with_capacity(pixels);
    for (s0, s2, st) in per_chunk.into_iter().flat_map(|c| c.0) {
        m0.push(s0);
        if s0 > 0.0 {
            m2.push(s2 / s0);
            defined.push(true);
            top.push(st / s0);
        } else {
            m2.push(0.0);
            defined.push(false);
            top.push(0.0);
        }
    }
    let maps = MomentMaps {
        window_index,
        window_start_frame: start,
        m0: Image::from_vec(w, h, m0),
        m2: Image::from_vec(w, h, m2),
        m2_defined: Image::from_vec(w, h, defined),
        top_bin_fraction: Image::from_vec(w, h, top),
    };
    Ok((maps, times))
}

/// Runs [`analyze_window`] over every window of the source.
pub fn analyze_all_windows(source: &dyn FrameSource, cfg: &SpectralWindowConfig) -> Result<Vec<MomentMaps>> {
    cfg.validate(source.params().frame_rate_hz)?;
    let n = cfg.window_count(source.frame_count());
    if n == 0 {
        return Err(Error::data(format!(
            "stack of {} frames is shorter than one {}-frame window",
            source.frame_count(),
            cfg.window_len
        )));
    }
    (0..n).map(|i| analyze_window(source, cfg, i)).collect()
}

/// Mean of a per-window quantity, ignoring nothing.
pub fn time_average(maps: &[Image<f64>]) -> Image<f64> {
    assert!(!maps.is_empty());
    let (w, h) = maps[0].dims();
    let mut acc = Image::filled(w, h, 0.0);
    for m in maps {
        for (a, v) in acc.as_mut_slice().iter_mut().zip(m.as_slice()) {
            *a += v;
        }
    }
    let n = maps.len() as f64;
    acc.map(|v| v / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::HologramStack;
    use crate::params::OpticalParams;
    use num_complex::Complex32;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise_stack(w: usize, h: usize, frames: usize, seed: u64) -> HologramStack {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h * frames)
            .map(|_| {
                let re: f32 = StandardNormal.sample(&mut rng);
                let im: f32 = StandardNormal.sample(&mut rng);
                Complex32::new(re, im)
            })
            .collect();
        HologramStack {
            width: w,
            height: h,
            frame_count: frames,
            frames: data,
            params: OpticalParams::default(),
        }
    }

    #[test]
    fn window_layout() {
        let cfg = SpectralWindowConfig::default();
        assert_eq!(cfg.window_count(511), 0);
        assert_eq!(cfg.window_count(512), 1);
        assert_eq!(cfg.window_count(767), 1);
        assert_eq!(cfg.window_count(768), 2);
        assert_eq!(cfg.window_count(4096), 15);
        assert_eq!(cfg.window_start(3), 768);
    }

    #[test]
    fn windows_cover_every_start_frame() {
        let cfg = SpectralWindowConfig::default();
        for n in [512usize, 700, 1000, 2048, 3001] {
            let count = cfg.window_count(n);
            for f in 0..=n - cfg.window_len {
                assert!((0..count).any(|i| {
                    let s = cfg.window_start(i);
                    f >= s && f < s + cfg.window_len
                }));
            }
            let last = cfg.window_start(count - 1) + cfg.window_len;
            assert!(last <= n);
        }
    }

    #[test]
    fn config_validation() {
        let fs = 33_000.0;
        assert!(SpectralWindowConfig::default().validate(fs).is_ok());
        let bad = [
            SpectralWindowConfig { hop: 0, ..Default::default() },
            SpectralWindowConfig { hop: 513, ..Default::default() },
            SpectralWindowConfig { svd_remove: 512, ..Default::default() },
            SpectralWindowConfig { band_low_hz: 17_000.0, ..Default::default() },
            SpectralWindowConfig { band_high_hz: 16_600.0, ..Default::default() },
            SpectralWindowConfig { band_low_hz: -1.0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(fs), Err(Error::Config(_))), "{cfg:?}");
        }
    }

    #[test]
    fn streamed_driver_matches_whole_window_operations() {
        let stack = noise_stack(48, 40, 96, 5);
        let cfg = SpectralWindowConfig {
            window_len: 64,
            hop: 32,
            svd_remove: 3,
            ..Default::default()
        };
        let maps = analyze_window(&stack, &cfg, 1).unwrap();
        assert_eq!(maps.window_start_frame, 32);

        let window = Casorati::from_frames(48, 40, 64, &stack.frames[32 * 48 * 40..96 * 48 * 40]);
        let filtered = svd_clutter_filter(&window, 3, 1).unwrap();
        let spectra = stft_power_spectra(&filtered, &cfg, 33_000.0).unwrap();
        let m0 = power_doppler(&spectra, &cfg);
        let m2 = spectral_moment2(&spectra, &cfg);
        for p in 0..48 * 40 {
            let a = maps.m0.as_slice()[p];
            let b = m0.as_slice()[p];
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1e-12));
            let a = maps.m2.as_slice()[p];
            let b = m2.m2.as_slice()[p];
            assert!((a - b).abs() <= 1e-9 * b);
        }
        assert_eq!(maps.m2_defined, m2.defined);
    }

    #[test]
    fn moments_are_scale_invariant_and_power_scales_quadratically() {
        let stack = noise_stack(32, 32, 64, 9);
        let mut scaled = stack.clone();
        for c in &mut scaled.frames {
            *c *= 4.0;
        }
        let cfg = SpectralWindowConfig {
            window_len: 64,
            hop: 64,
            svd_remove: 2,
            ..Default::default()
        };
        let a = analyze_window(&stack, &cfg, 0).unwrap();
        let b = analyze_window(&scaled, &cfg, 0).unwrap();
        for p in 0..32 * 32 {
            let (m0a, m0b) = (a.m0.as_slice()[p], b.m0.as_slice()[p]);
            assert!((m0b - 16.0 * m0a).abs() <= 1e-9 * m0b);
            let (m2a, m2b) = (a.m2.as_slice()[p], b.m2.as_slice()[p]);
            assert!((m2b - m2a).abs() <= 1e-9 * m2a);
        }
    }

    #[test]
    fn moments_stay_inside_the_band() {
        let stack = noise_stack(16, 16, 128, 2);
        let cfg = SpectralWindowConfig {
            window_len: 128,
            hop: 64,
            svd_remove: 1,
            ..Default::default()
        };
        let m = analyze_window(&stack, &cfg, 0).unwrap();
        for (i, &d) in m.m2_defined.as_slice().iter().enumerate() {
            assert!(m.m0.as_slice()[i] >= 0.0);
            if d {
                let v = m.m2.as_slice()[i];
                assert!(v >= 6000f64.powi(2) && v <= 16_500f64.powi(2));
            }
        }
    }

    #[test]
    fn short_stack_is_a_data_error() {
        let stack = noise_stack(16, 16, 100, 1);
        let cfg = SpectralWindowConfig::default();
        assert!(matches!(analyze_all_windows(&stack, &cfg), Err(Error::Data(_))));
    }
}

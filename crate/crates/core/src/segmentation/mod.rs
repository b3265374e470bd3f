//! Artery segmentation from power Doppler image sequences.

pub mod filters;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::morphology::{close3, label_components, Connectivity};
pub use filters::gaussian_blur;

fn default_flatfield_sigma() -> f64 {
    32.0
}
fn default_scales() -> Vec<f64> {
    vec![1.0, 2.0, 4.0, 8.0]
}
fn default_beta() -> f64 {
    0.5
}
fn default_min_component() -> usize {
    50
}
fn default_connectivity() -> Connectivity {
    Connectivity::Eight
}

/// Operator-supplied disc; components with no pixel inside it are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExclusionDisc {
    pub center_x: f64,
    pub center_y: f64,
    pub radius_px: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationConfig {
    #[serde(default = "default_flatfield_sigma")]
    pub flatfield_sigma_px: f64,
    #[serde(default = "default_scales")]
    pub frangi_scales_px: Vec<f64>,
    #[serde(default = "default_beta")]
    pub frangi_beta: f64,
    /// Fixed structureness constant; `None` uses half the largest Hessian norm per scale.
    #[serde(default)]
    pub frangi_c: Option<f64>,
    pub vessel_threshold: f64,
    pub artery_threshold: f64,
    #[serde(default = "default_min_component")]
    pub min_component_px: usize,
    #[serde(default = "default_connectivity")]
    pub connectivity: Connectivity,
    #[serde(default)]
    pub keep_within: Option<ExclusionDisc>,
}

impl SegmentationConfig {
    pub fn new(vessel_threshold: f64, artery_threshold: f64) -> Self {
        Self {
            flatfield_sigma_px: default_flatfield_sigma(),
            frangi_scales_px: default_scales(),
            frangi_beta: default_beta(),
            frangi_c: None,
            vessel_threshold,
            artery_threshold,
            min_component_px: default_min_component(),
            connectivity: default_connectivity(),
            keep_within: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.flatfield_sigma_px) {
            return Err(Error::config("flat-field sigma must be positive"));
        }
        if self.frangi_scales_px.is_empty() || !self.frangi_scales_px.iter().all(|&s| positive(s)) {
            return Err(Error::config("Frangi scales must be a non-empty list of positive values"));
        }
        if !positive(self.frangi_beta) {
            return Err(Error::config("Frangi beta must be positive"));
        }
        if let Some(c) = self.frangi_c {
            if !positive(c) {
                return Err(Error::config("Frangi c must be positive"));
            }
        }
        if !(self.vessel_threshold.is_finite() && self.vessel_threshold >= 0.0) {
            return Err(Error::config("vessel threshold must be >= 0"));
        }
        if !(-1.0..=1.0).contains(&self.artery_threshold) {
            return Err(Error::config("artery threshold must lie in [-1, 1]"));
        }
        if let Some(d) = self.keep_within {
            if !positive(d.radius_px) {
                return Err(Error::config("exclusion radius must be positive"));
            }
        }
        Ok(())
    }
}

/// Divides out smooth illumination and restores the input mean.
pub fn flat_field_correct(img: &Image<f64>, sigma_px: f64) -> Result<Image<f64>> {
    if !(sigma_px > 0.0) {
        return Err(Error::config("flat-field sigma must be positive"));
    }
    let max = img.max_value();
    if max <= 0.0 {
        log::warn!("flat-field correction skipped: image is all zero");
        return Ok(img.clone());
    }
    let eps = 1e-12 * max;
    let blur = gaussian_blur(img, sigma_px);
    let ratio = img.zip_map(&blur, |v, b| v / b.max(eps));
    let gain = img.mean() / ratio.mean();
    Ok(ratio.map(|v| v * gain))
}

/// Eigenvalues of `[[a, b], [b, c]]` ordered by magnitude.
fn eigen_sorted(a: f64, b: f64, c: f64) -> (f64, f64) {
    let half_tr = 0.5 * (a + c);
    let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let (l1, l2) = (half_tr - disc, half_tr + disc);
    if l1.abs() <= l2.abs() {
        (l1, l2)
    } else {
        (l2, l1)
    }
}

/// Multiscale Frangi vesselness for bright tubes, scaled to `[0, 1]`.
pub fn frangi_vesselness(img: &Image<f64>, scales: &[f64], beta: f64, c: Option<f64>) -> Image<f64> {
    let (w, h) = img.dims();
    let mean = img.mean();
    let amplitude = img.as_slice().iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    let mut best = Image::filled(w, h, 0.0f64);
    if amplitude == 0.0 {
        return best;
    }
    let centred = img.map(|v| v - mean);
    for &s in scales {
        let (xx, xy, yy) = filters::hessian(&centred, s);
        let s2 = s * s;
        let frob = |i: usize| {
            let (a, b, d) = (xx.as_slice()[i] * s2, xy.as_slice()[i] * s2, yy.as_slice()[i] * s2);
            (a * a + 2.0 * b * b + d * d).sqrt()
        };
        let max_frob = (0..w * h).map(frob).fold(0.0, f64::max);
        if max_frob <= 1e-12 * amplitude {
            continue;
        }
        let cs = c.unwrap_or(0.5 * max_frob);
        for i in 0..w * h {
            let (l1, l2) = eigen_sorted(xx.as_slice()[i] * s2, xy.as_slice()[i] * s2, yy.as_slice()[i] * s2);
            if l2 >= 0.0 {
                continue;
            }
            let rb = l1 / l2;
            let ss = l1 * l1 + l2 * l2;
            let v = (-rb * rb / (2.0 * beta * beta)).exp() * (1.0 - (-ss / (2.0 * cs * cs)).exp());
            let slot = &mut best.as_mut_slice()[i];
            if v > *slot {
                *slot = v;
            }
        }
    }
    let peak = best.max_value();
    if peak > 0.0 {
        best.map(|v| v / peak)
    } else {
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMap {
    /// Pearson correlation in `[-1, 1]`.
    pub corr: Image<f64>,
    /// Pixels with no temporal variance (correlation forced to 0).
    pub flat: Mask,
}

pub const MIN_CORRELATION_WINDOWS: usize = 8;

/// Correlates each pixel's M0 series with the vessel-averaged, zero-mean series.
pub fn temporal_correlation_map(m0_series: &[Image<f64>], vessel_mask: &Mask) -> Result<CorrelationMap> {
    if m0_series.len() < MIN_CORRELATION_WINDOWS {
        return Err(Error::data(format!(
            "temporal correlation needs at least {MIN_CORRELATION_WINDOWS} windows, got {}",
            m0_series.len()
        )));
    }
    let (w, h) = vessel_mask.dims();
    if m0_series.iter().any(|m| m.dims() != (w, h)) {
        return Err(Error::data("M0 series and vessel mask differ in size"));
    }
    let n_vessel = vessel_mask.count();
    if n_vessel == 0 {
        return Err(Error::data("vessel mask is empty; lower the vessel threshold"));
    }
    let t = m0_series.len();
    let mut r: Vec<f64> = m0_series
        .iter()
        .map(|m| {
            m.as_slice()
                .iter()
                .zip(vessel_mask.as_slice())
                .filter(|(_, &v)| v)
                .map(|(x, _)| x)
                .sum::<f64>()
                / n_vessel as f64
        })
        .collect();
    let rm = r.iter().sum::<f64>() / t as f64;
    for v in &mut r {
        *v -= rm;
    }
    let rr: f64 = r.iter().map(|v| v * v).sum();

    let mut corr = Image::filled(w, h, 0.0);
    let mut flat = Image::filled(w, h, false);
    let mut series = vec![0.0; t];
    for p in 0..w * h {
        for (s, m) in series.iter_mut().zip(m0_series) {
            *s = m.as_slice()[p];
        }
        let mean = series.iter().sum::<f64>() / t as f64;
        let mut sxx = 0.0;
        let mut sxr = 0.0;
        for (s, rv) in series.iter().zip(&r) {
            let d = s - mean;
            sxx += d * d;
            sxr += d * rv;
        }
        if sxx <= 0.0 || rr <= 0.0 {
            flat.as_mut_slice()[p] = true;
            continue;
        }
        corr.as_mut_slice()[p] = (sxr / (sxx * rr).sqrt()).clamp(-1.0, 1.0);
    }
    Ok(CorrelationMap { corr, flat })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArteryMask {
    pub mask: Mask,
    /// Components relabelled `1..=n` by decreasing size.
    pub labels: Image<u32>,
    pub sizes: Vec<usize>,
}

/// Drops connected components that fail the size rule or miss the keep disc.
pub fn refine_components(
    mask: &Mask,
    min_component_px: usize,
    connectivity: Connectivity,
    keep_within: Option<ExclusionDisc>,
) -> ArteryMask {
    let (labels, sizes) = label_components(mask, connectivity);
    let mut keep: Vec<bool> = sizes.iter().map(|&s| s >= min_component_px).collect();
    if let Some(d) = keep_within {
        let mut near = vec![false; sizes.len()];
        for (x, y, &l) in labels.indexed() {
            if l > 0 {
                let (dx, dy) = (x as f64 - d.center_x, y as f64 - d.center_y);
                if dx * dx + dy * dy <= d.radius_px * d.radius_px {
                    near[l as usize - 1] = true;
                }
            }
        }
        for (k, n) in keep.iter_mut().zip(near) {
            *k &= n;
        }
    }
    let kept = labels.map(|&l| l > 0 && keep[l as usize - 1]);
    let (labels, sizes) = label_components(&kept, connectivity);
    ArteryMask {
        mask: kept,
        labels,
        sizes,
    }
}

/// Vessel candidates: closed vesselness threshold.
pub fn vessel_candidates(vesselness: &Image<f64>, vessel_threshold: f64) -> Mask {
    close3(&vesselness.map(|&v| v >= vessel_threshold))
}

pub fn threshold_and_refine(
    vesselness: &Image<f64>,
    correlation: &Image<f64>,
    cfg: &SegmentationConfig,
) -> Result<ArteryMask> {
    if !vesselness.same_dims(correlation) {
        return Err(Error::data("vesselness and correlation maps differ in size"));
    }
    let prelim = vesselness.zip_map(correlation, |&v, &c| {
        v >= cfg.vessel_threshold && c >= cfg.artery_threshold
    });
    let refined = refine_components(&close3(&prelim), cfg.min_component_px, cfg.connectivity, cfg.keep_within);
    if refined.sizes.is_empty() {
        return Err(Error::data(format!(
            "artery mask is empty at vessel threshold {} and artery threshold {}; adjust the thresholds",
            cfg.vessel_threshold, cfg.artery_threshold
        )));
    }
    Ok(refined)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationSet {
    pub mean_m0: Image<f64>,
    pub flatfielded: Image<f64>,
    pub vesselness: Image<f64>,
    pub vessel_mask: Mask,
    pub correlation: CorrelationMap,
    pub artery: ArteryMask,
}

/// Full chain from per-window M0 images to the artery mask.
pub fn segment(m0_series: &[Image<f64>], cfg: &SegmentationConfig) -> Result<SegmentationSet> {
    cfg.validate()?;
    if m0_series.is_empty() {
        return Err(Error::data("no power Doppler windows to segment"));
    }
    let mean_m0 = crate::doppler::time_average(m0_series);
    let flatfielded = flat_field_correct(&mean_m0, cfg.flatfield_sigma_px)?;
    let vesselness = frangi_vesselness(&flatfielded, &cfg.frangi_scales_px, cfg.frangi_beta, cfg.frangi_c);
    let vessel_mask = vessel_candidates(&vesselness, cfg.vessel_threshold);
    let correlation = temporal_correlation_map(m0_series, &vessel_mask)?;
    let artery = threshold_and_refine(&vesselness, &correlation.corr, cfg)?;
    Ok(SegmentationSet {
        mean_m0,
        flatfielded,
        vesselness,
        vessel_mask,
        correlation,
        artery,
    })
}

//! Cross-section selection, volume rates, total flow and resistivity.

pub mod profile;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::morphology::{label_components, Connectivity};
pub use profile::{
    extract_profile, find_orientation, fit_fixed_shape, fit_poiseuille, fit_poiseuille_with, profile_at, PoiseuilleFit,
    Profile,
};

/// m³/s to μL/min.
pub const M3S_TO_UL_MIN: f64 = 6.0e10;

pub fn pixel_scale_from_papilla(papilla_diameter_px: f64, papilla_diameter_m: f64) -> Result<f64> {
    if !(papilla_diameter_px > 0.0 && papilla_diameter_m > 0.0) {
        return Err(Error::config(format!(
            "papilla diameter must be positive, got {papilla_diameter_px} px and {papilla_diameter_m} m"
        )));
    }
    Ok(papilla_diameter_m / papilla_diameter_px)
}

/// Equal-area circle diameter of a disc mask, px.
pub fn papilla_diameter_from_mask(mask: &Mask) -> Result<f64> {
    let n = mask.count();
    if n == 0 {
        return Err(Error::data("papilla mask is empty"));
    }
    Ok(2.0 * (n as f64 / std::f64::consts::PI).sqrt())
}

/// Centroid of a mask, px.
pub fn mask_centroid(mask: &Mask) -> Option<(f64, f64)> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for (x, y, &m) in mask.indexed() {
        if m {
            sx += x as f64;
            sy += y as f64;
            n += 1;
        }
    }
    (n > 0).then(|| (sx / n as f64, sy / n as f64))
}

/// One crossing of the artery mask with the selection annulus.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SectionSeed {
    pub centroid_px: (f64, f64),
    /// Polar angle of the centroid about the annulus centre, `atan2(dy, dx)` in `[0, 2π)`.
    pub angle_rad: f64,
    pub pixel_count: usize,
}

/// Artery crossings of the annulus `[r − w/2, r + w/2]`, ordered by angle.
pub fn select_sections(
    artery_mask: &Mask,
    center_px: (f64, f64),
    circle_radius_px: f64,
    circle_width_px: f64,
) -> Result<Vec<SectionSeed>> {
    if !(circle_width_px > 0.0 && circle_radius_px > circle_width_px / 2.0) {
        return Err(Error::config(format!(
            "annulus needs radius > width / 2 > 0, got radius {circle_radius_px} and width {circle_width_px}"
        )));
    }
    let (w, h) = artery_mask.dims();
    let (cx, cy) = center_px;
    if !(cx >= 0.0 && cy >= 0.0 && cx < w as f64 && cy < h as f64) {
        return Err(Error::config(format!("annulus centre ({cx}, {cy}) lies outside the image")));
    }
    let (r_in, r_out) = (circle_radius_px - circle_width_px / 2.0, circle_radius_px + circle_width_px / 2.0);
    let band = Image::from_fn(w, h, |x, y| {
        let d = (x as f64 - cx).hypot(y as f64 - cy);
        artery_mask[(x, y)] && d >= r_in && d <= r_out
    });
    let (labels, sizes) = label_components(&band, Connectivity::Eight);
    let mut acc = vec![(0.0, 0.0); sizes.len()];
    for (x, y, &l) in labels.indexed() {
        if l > 0 {
            acc[l as usize - 1].0 += x as f64;
            acc[l as usize - 1].1 += y as f64;
        }
    }
    let mut seeds: Vec<SectionSeed> = acc
        .iter()
        .zip(&sizes)
        .map(|(&(sx, sy), &n)| {
            let c = (sx / n as f64, sy / n as f64);
            SectionSeed {
                centroid_px: c,
                angle_rad: (c.1 - cy).atan2(c.0 - cx).rem_euclid(std::f64::consts::TAU),
                pixel_count: n,
            }
        })
        .collect();
    if seeds.is_empty() {
        return Err(Error::data(format!(
            "no artery crosses the annulus of radius {circle_radius_px} px; adjust the radius or width"
        )));
    }
    seeds.sort_by(|a, b| a.angle_rad.total_cmp(&b.angle_rad));
    Ok(seeds)
}

/// How the section mean velocity follows from the fitted peak.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanVelocityRule {
    /// Poiseuille mean, `vmax / 2`.
    HalfPeak,
    /// `vmax / √3`.
    Rms,
}

impl MeanVelocityRule {
    pub fn mean(self, vmax: f64) -> f64 {
        match self {
            MeanVelocityRule::HalfPeak => vmax / 2.0,
            MeanVelocityRule::Rms => vmax / 3f64.sqrt(),
        }
    }
}

/// `Q = mean(vmax) · π (R · scale)²`, m³/s.
pub fn section_volume_rate(vmax: f64, radius_px: f64, scale_m_per_px: f64, rule: MeanVelocityRule) -> f64 {
    let r = radius_px * scale_m_per_px;
    rule.mean(vmax) * std::f64::consts::PI * r * r
}

/// Treatment of pixels whose broadening fell below the local background.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativePixels {
    /// Negative velocities enter the profile averages and cancel noise on average.
    #[default]
    Include,
    /// Each profile sample averages only the non-negative pixels along the vessel.
    Exclude,
}

/// Where each section's lumen radius and centre come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusMode {
    /// Free parabolic fit in every window.
    PerWindow,
    /// Radius and centre from the time-averaged profile; only the peak is refitted per window.
    TimeAveraged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowConfig {
    pub circle_radius_px: f64,
    pub circle_width_px: f64,
    pub profile_half_len_px: usize,
    pub profile_width_px: usize,
    pub angle_step_deg: f64,
    pub wall_fraction: f64,
    pub mean_rule: MeanVelocityRule,
    /// Moving-average length applied before picking systole and diastole.
    pub smoothing_windows: usize,
    pub radius_mode: RadiusMode,
    pub negative_pixels: NegativePixels,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            circle_radius_px: 100.0,
            circle_width_px: 10.0,
            profile_half_len_px: 15,
            profile_width_px: 5,
            angle_step_deg: 1.0,
            wall_fraction: profile::DEFAULT_WALL_FRACTION,
            mean_rule: MeanVelocityRule::HalfPeak,
            smoothing_windows: 3,
            radius_mode: RadiusMode::TimeAveraged,
            negative_pixels: NegativePixels::Include,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.profile_half_len_px < 2 || self.profile_width_px == 0 {
            return Err(Error::config("profile needs half length >= 2 and width >= 1"));
        }
        if !(self.angle_step_deg > 0.0 && self.angle_step_deg <= 90.0) {
            return Err(Error::config("angle step must lie in (0, 90] degrees"));
        }
        if !(0.0..1.0).contains(&self.wall_fraction) {
            return Err(Error::config("wall fraction must lie in [0, 1)"));
        }
        if self.smoothing_windows == 0 {
            return Err(Error::config("smoothing length must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArterySection {
    pub seed_index: usize,
    pub window_index: usize,
    pub center_px: (f64, f64),
    pub orientation_rad: f64,
    pub width_px: usize,
    pub profile: Vec<f64>,
    pub fit: PoiseuilleFit,
    pub fitted_radius_m: f64,
    pub area_m2: f64,
    pub volume_rate_m3s: f64,
}

impl ArterySection {
    #[allow(clippy::too_many_arguments)]
    pub fn from_profile(
        seed_index: usize,
        window_index: usize,
        center_px: (f64, f64),
        profile: Profile,
        width_px: usize,
        scale_m_per_px: f64,
        cfg: &FlowConfig,
        shape: Option<&PoiseuilleFit>,
    ) -> Self {
        let fit = match shape {
            Some(s) => fit_fixed_shape(&profile.samples, 1.0, s.center_offset_px, s.radius_px),
            None => fit_poiseuille_with(&profile.samples, 1.0, cfg.wall_fraction),
        };
        let (r_m, area, q) = if fit.valid {
            let r = fit.radius_px * scale_m_per_px;
            (r, std::f64::consts::PI * r * r, section_volume_rate(fit.vmax, fit.radius_px, scale_m_per_px, cfg.mean_rule))
        } else {
            (0.0, 0.0, 0.0)
        };
        Self {
            seed_index,
            window_index,
            center_px,
            orientation_rad: profile.orientation_rad,
            width_px,
            profile: profile.samples,
            fit,
            fitted_radius_m: r_m,
            area_m2: area,
            volume_rate_m3s: q,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.fit.valid
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowSample {
    pub window_index: usize,
    pub time_s: f64,
    pub total_flow_ul_min: f64,
    pub n_valid_sections: usize,
    pub n_invalid_sections: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowResult {
    pub sections: Vec<Vec<ArterySection>>,
    pub series: Vec<FlowSample>,
    /// Moving average of the totals over windows with at least one valid section.
    pub smoothed_ul_min: Vec<f64>,
    pub mean_total_flow_ul_min: f64,
    pub systolic_flow_ul_min: f64,
    pub diastolic_flow_ul_min: f64,
    pub systolic_window: usize,
    pub diastolic_window: usize,
    pub resistivity_index: f64,
    pub pixel_scale_m_per_px: f64,
}

/// Centred moving average; the window shrinks at the ends.
pub fn moving_average(values: &[f64], len: usize) -> Vec<f64> {
    let half = len / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(values.len() - 1);
            values[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Pourcelot index `(sys − dia) / sys`.
pub fn resistivity_index(systolic: f64, diastolic: f64) -> Result<f64> {
    if !(systolic > 0.0) {
        return Err(Error::data(format!("resistivity index needs a positive systolic flow, got {systolic}")));
    }
    Ok((systolic - diastolic) / systolic)
}

/// Sums valid section rates per window and derives the cardiac statistics.
pub fn total_flow_series(
    sections: Vec<Vec<ArterySection>>,
    times_s: &[f64],
    scale_m_per_px: f64,
    smoothing_windows: usize,
) -> Result<FlowResult> {
    if sections.len() != times_s.len() {
        return Err(Error::data("section windows and timestamps differ in count"));
    }
    let series: Vec<FlowSample> = sections
        .iter()
        .enumerate()
        .map(|(i, secs)| {
            let valid: Vec<&ArterySection> = secs.iter().filter(|s| s.is_valid()).collect();
            FlowSample {
                window_index: i,
                time_s: times_s[i],
                total_flow_ul_min: valid.iter().map(|s| s.volume_rate_m3s).sum::<f64>() * M3S_TO_UL_MIN,
                n_valid_sections: valid.len(),
                n_invalid_sections: secs.len() - valid.len(),
            }
        })
        .collect();
    let used: Vec<&FlowSample> = series.iter().filter(|s| s.n_valid_sections > 0).collect();
    if used.is_empty() {
        return Err(Error::data("no valid artery section in any window"));
    }
    let totals: Vec<f64> = used.iter().map(|s| s.total_flow_ul_min).collect();
    let smoothed_used = moving_average(&totals, smoothing_windows);
    let mut smoothed = vec![0.0; series.len()];
    for (s, v) in used.iter().zip(&smoothed_used) {
        smoothed[s.window_index] = *v;
    }
    let mean = totals.iter().sum::<f64>() / totals.len() as f64;
    let (mut sys_i, mut dia_i) = (0, 0);
    for (k, v) in smoothed_used.iter().enumerate() {
        if *v > smoothed_used[sys_i] {
            sys_i = k;
        }
        if *v < smoothed_used[dia_i] {
            dia_i = k;
        }
    }
    let systolic = smoothed_used[sys_i];
    let diastolic = smoothed_used[dia_i];
    let ri = resistivity_index(systolic, diastolic)?;
    Ok(FlowResult {
        systolic_window: used[sys_i].window_index,
        diastolic_window: used[dia_i].window_index,
        sections,
        series,
        smoothed_ul_min: smoothed,
        mean_total_flow_ul_min: mean,
        systolic_flow_ul_min: systolic,
        diastolic_flow_ul_min: diastolic,
        resistivity_index: ri,
        pixel_scale_m_per_px: scale_m_per_px,
    })
}

/// Signed root of the time-averaged `v·|v|`.
///
/// Velocity is a signed root of excess broadening, so averaging its square
/// avoids the low bias that noise puts on near-wall samples. A spatially
/// uniform pulsation scales this map without changing the profile shape.
pub fn shape_map(velocity_maps: &[Image<f64>]) -> Image<f64> {
    let squared: Vec<Image<f64>> = velocity_maps.iter().map(|m| m.map(|v| v * v.abs())).collect();
    crate::doppler::time_average(&squared).map(|v| v.signum() * v.abs().sqrt())
}

/// Cross-profile under the configured negative-pixel rule.
fn section_profile(map: &Image<f64>, c: (f64, f64), theta: f64, cfg: &FlowConfig) -> Option<Profile> {
    let (hl, w) = (cfg.profile_half_len_px, cfg.profile_width_px);
    match cfg.negative_pixels {
        NegativePixels::Include => profile_at(map, c, theta, hl, w),
        NegativePixels::Exclude => {
            let kept = profile_at(&map.map(|&v| v.max(0.0)), c, theta, hl, w)?;
            let share = profile_at(&map.map(|&v| if v >= 0.0 { 1.0 } else { 0.0 }), c, theta, hl, w)?;
            Some(Profile {
                orientation_rad: theta,
                samples: kept
                    .samples
                    .iter()
                    .zip(&share.samples)
                    .map(|(&v, &f)| if f > 0.0 { v / f } else { 0.0 })
                    .collect(),
            })
        }
    }
}

/// Seeds and orientations from the time-averaged map, then per-window profiles and fits.
pub fn quantify_flow(
    velocity_maps: &[Image<f64>],
    times_s: &[f64],
    artery_mask: &Mask,
    center_px: (f64, f64),
    scale_m_per_px: f64,
    cfg: &FlowConfig,
) -> Result<FlowResult> {
    cfg.validate()?;
    if velocity_maps.is_empty() {
        return Err(Error::data("no velocity maps"));
    }
    if !(scale_m_per_px > 0.0) {
        return Err(Error::config("pixel scale must be positive"));
    }
    let seeds = select_sections(artery_mask, center_px, cfg.circle_radius_px, cfg.circle_width_px)?;
    let mean_map = shape_map(velocity_maps);
    let mut oriented = Vec::new();
    for (i, seed) in seeds.iter().enumerate() {
        let c = seed.centroid_px;
        let Some(theta) = find_orientation(&mean_map, c, cfg.profile_half_len_px, cfg.profile_width_px, cfg.angle_step_deg)
        else {
            log::warn!("section {i} at ({:.1}, {:.1}) dropped: profile patch leaves the image", c.0, c.1);
            continue;
        };
        let shape = match cfg.radius_mode {
            RadiusMode::PerWindow => None,
            RadiusMode::TimeAveraged => {
                let p = profile_at(&mean_map, c, theta, cfg.profile_half_len_px, cfg.profile_width_px)
                    .expect("orientation search already checked the patch");
                let fit = fit_poiseuille_with(&p.samples, 1.0, cfg.wall_fraction);
                if !fit.valid {
                    log::warn!("section {i} at ({:.1}, {:.1}) dropped: time-averaged profile has no valid fit", c.0, c.1);
                    continue;
                }
                Some(fit)
            }
        };
        oriented.push((i, c, theta, shape));
    }
    let sections: Vec<Vec<ArterySection>> = velocity_maps
        .iter()
        .enumerate()
        .map(|(w, map)| {
            oriented
                .iter()
                .filter_map(|(i, c, theta, shape)| {
                    let p = section_profile(map, *c, *theta, cfg)?;
                    Some(ArterySection::from_profile(*i, w, *c, p, cfg.profile_width_px, scale_m_per_px, cfg, shape.as_ref()))
                })
                .collect()
        })
        .collect();
    total_flow_series(sections, times_s, scale_m_per_px, cfg.smoothing_windows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileBand {
    pub mean: Vec<f64>,
    /// Population standard deviation across sections.
    pub sd: Vec<f64>,
    pub n_sections: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseProfiles {
    /// Radius-normalized offset from the fitted lumen centre.
    pub axis: Vec<f64>,
    pub systole: ProfileBand,
    pub diastole: ProfileBand,
}

/// Linear interpolation on 1 px samples centred on the middle sample; clamps at the ends.
fn sample_at(profile: &[f64], x: f64) -> f64 {
    let pos = (x + (profile.len() as f64 - 1.0) / 2.0).clamp(0.0, profile.len() as f64 - 1.0);
    let i = pos.floor() as usize;
    if i + 1 >= profile.len() {
        return profile[profile.len() - 1];
    }
    let f = pos - i as f64;
    profile[i] * (1.0 - f) + profile[i + 1] * f
}

pub fn average_profiles(sections: &[&ArterySection], axis: &[f64]) -> ProfileBand {
    let n = sections.len();
    let mut mean = vec![0.0; axis.len()];
    let mut sd = vec![0.0; axis.len()];
    if n == 0 {
        return ProfileBand { mean, sd, n_sections: 0 };
    }
    for (k, &u) in axis.iter().enumerate() {
        let vals: Vec<f64> = sections
            .iter()
            .map(|s| sample_at(&s.profile, s.fit.center_offset_px + u * s.fit.radius_px))
            .collect();
        let m = vals.iter().sum::<f64>() / n as f64;
        mean[k] = m;
        sd[k] = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
    }
    ProfileBand { mean, sd, n_sections: n }
}

/// Mean and SD profiles at the systolic and diastolic windows, on `samples` points over `[-1, 1]`.
pub fn systole_diastole_profiles(result: &FlowResult, samples: usize) -> Result<PhaseProfiles> {
    if result.sections.len() < 2 {
        return Err(Error::data("phase profiles need at least 2 windows"));
    }
    let axis: Vec<f64> = (0..samples)
        .map(|i| -1.0 + 2.0 * i as f64 / (samples.max(2) - 1) as f64)
        .collect();
    let band = |w: usize| {
        let valid: Vec<&ArterySection> = result.sections[w].iter().filter(|s| s.is_valid()).collect();
        if valid.len() < 2 {
            log::warn!("window {w} has {} valid sections; profile band is degenerate", valid.len());
        }
        average_profiles(&valid, &axis)
    };
    Ok(PhaseProfiles {
        systole: band(result.systolic_window),
        diastole: band(result.diastolic_window),
        axis,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parabola(vmax: f64, r: f64, half: i32) -> Vec<f64> {
        (-half..=half)
            .map(|x| {
                let u = x as f64 / r;
                if u.abs() <= 1.0 { vmax * (1.0 - u * u) } else { 0.0 }
            })
            .collect()
    }

    fn section(window: usize, vmax: f64, r: f64, scale: f64) -> ArterySection {
        let p = Profile { orientation_rad: 0.0, samples: parabola(vmax, r, 12) };
        ArterySection::from_profile(0, window, (0.0, 0.0), p, 5, scale, &FlowConfig::default(), None)
    }

    fn fixed_q(window: usize, q_ul_min: f64) -> ArterySection {
        let mut s = section(window, 1.0, 5.0, 1e-5);
        s.volume_rate_m3s = q_ul_min / M3S_TO_UL_MIN;
        s
    }

    #[test]
    fn papilla_scale_ratios() {
        assert!((pixel_scale_from_papilla(120.0, 1.8e-3).unwrap() - 1.5e-5).abs() < 1e-18);
        assert!((pixel_scale_from_papilla(100.0, 1.0e-3).unwrap() - 1.0e-5).abs() < 1e-18);
        assert!(pixel_scale_from_papilla(0.0, 1.0e-3).is_err());
    }

    #[test]
    fn papilla_diameter_of_a_raster_disc() {
        let disc = Image::from_fn(200, 200, |x, y| (x as f64 - 100.0).hypot(y as f64 - 100.0) <= 60.0);
        let d = papilla_diameter_from_mask(&disc).unwrap();
        assert!((d - 120.0).abs() / 120.0 < 0.01);
    }

    #[test]
    fn straight_vessel_crosses_annulus_twice() {
        let mask = Image::from_fn(101, 101, |_, y| (48..=52).contains(&y));
        let seeds = select_sections(&mask, (50.0, 50.0), 30.0, 6.0).unwrap();
        assert_eq!(seeds.len(), 2);
        assert!(seeds[0].angle_rad.abs() < 1e-9);
        assert!((seeds[1].angle_rad - std::f64::consts::PI).abs() < 1e-9);
    }

    #[test]
    fn empty_mask_has_no_sections() {
        let mask = Image::filled(50, 50, false);
        let err = select_sections(&mask, (25.0, 25.0), 10.0, 4.0).unwrap_err();
        assert!(err.to_string().contains("radius"));
    }

    #[test]
    fn shape_map_is_rms_of_uniform_pulsation() {
        let base = Image::from_fn(7, 5, |x, y| x as f64 - 2.0 * y as f64);
        let ks = [0.5, 1.0, 2.0];
        let maps: Vec<Image<f64>> = ks.iter().map(|k| base.map(|v| k * v)).collect();
        let rms = (ks.iter().map(|k| k * k).sum::<f64>() / 3.0).sqrt();
        let s = shape_map(&maps);
        for (x, y, v) in s.indexed() {
            assert!((v - rms * base[(x, y)]).abs() < 1e-12);
        }
    }

    #[test]
    fn volume_rate_arithmetic() {
        let q = section_volume_rate(20e-3, 50.0, 1e-6, MeanVelocityRule::HalfPeak);
        assert!((q - 7.854e-11).abs() / 7.854e-11 < 1e-4);
        assert!((q * M3S_TO_UL_MIN - 4.712).abs() < 1e-3);
        assert_eq!(section_volume_rate(0.0, 50.0, 1e-6, MeanVelocityRule::HalfPeak), 0.0);
        let q2 = section_volume_rate(20e-3, 100.0, 1e-6, MeanVelocityRule::HalfPeak);
        assert!((q2 / q - 4.0).abs() < 1e-12);
        let rms = section_volume_rate(20e-3, 50.0, 1e-6, MeanVelocityRule::Rms);
        assert!((rms / q - 2.0 / 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn constant_flow_statistics() {
        let secs: Vec<Vec<ArterySection>> = (0..10).map(|w| vec![fixed_q(w, 5.0)]).collect();
        let times: Vec<f64> = (0..10).map(|w| w as f64 * 0.01).collect();
        let r = total_flow_series(secs, &times, 1e-5, 3).unwrap();
        assert!((r.mean_total_flow_ul_min - 5.0).abs() < 1e-12);
        assert!((r.systolic_flow_ul_min - 5.0).abs() < 1e-12);
        assert!((r.diastolic_flow_ul_min - 5.0).abs() < 1e-12);
        assert!(r.resistivity_index.abs() < 1e-12);
    }

    #[test]
    fn sections_add_up() {
        let r = total_flow_series(vec![vec![fixed_q(0, 3.0), fixed_q(0, 4.0)]], &[0.0], 1e-5, 3).unwrap();
        assert!((r.series[0].total_flow_ul_min - 7.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_sections_are_counted_not_summed() {
        let mut bad = fixed_q(0, 100.0);
        bad.fit.valid = false;
        let r = total_flow_series(vec![vec![fixed_q(0, 3.0), bad]], &[0.0], 1e-5, 3).unwrap();
        assert_eq!(r.series[0].n_valid_sections, 1);
        assert_eq!(r.series[0].n_invalid_sections, 1);
        assert!((r.series[0].total_flow_ul_min - 3.0).abs() < 1e-12);
        let mut only_bad = fixed_q(0, 1.0);
        only_bad.fit.valid = false;
        assert!(total_flow_series(vec![vec![only_bad]], &[0.0], 1e-5, 3).is_err());
    }

    #[test]
    fn excluding_negative_pixels_averages_the_rest() {
        let map = Image::from_fn(40, 40, |x, y| {
            let u = (x as f64 - 20.0) / 5.0;
            if u.abs() >= 1.0 {
                0.0
            } else if y % 3 == 0 {
                -0.5
            } else {
                1.0 - u * u
            }
        });
        let mut cfg = FlowConfig {
            profile_half_len_px: 8,
            profile_width_px: 9,
            ..FlowConfig::default()
        };
        let included = section_profile(&map, (20.0, 20.0), 0.0, &cfg).unwrap();
        cfg.negative_pixels = NegativePixels::Exclude;
        let excluded = section_profile(&map, (20.0, 20.0), 0.0, &cfg).unwrap();
        // Rows 16..=24: three of nine are negative.
        assert!((included.samples[8] - (6.0 - 1.5) / 9.0).abs() < 1e-12);
        assert!((excluded.samples[8] - 1.0).abs() < 1e-12);
        assert!((excluded.samples[10] - 0.84).abs() < 1e-12);
        assert_eq!(excluded.samples[0], 0.0);

        let clean = map.map(|&v| v.max(0.0));
        let a = section_profile(&clean, (20.0, 20.0), 0.0, &cfg).unwrap();
        cfg.negative_pixels = NegativePixels::Include;
        let b = section_profile(&clean, (20.0, 20.0), 0.0, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn resistivity_examples() {
        assert!((resistivity_index(20.0, 8.0).unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(resistivity_index(5.0, 5.0).unwrap(), 0.0);
        assert_eq!(resistivity_index(5.0, 0.0).unwrap(), 1.0);
        assert!(resistivity_index(0.0, 0.0).is_err());
    }

    #[test]
    fn identical_parabolas_average_to_themselves() {
        let secs = [section(0, 0.02, 5.0, 1e-5), section(0, 0.02, 5.0, 1e-5), section(0, 0.02, 5.0, 1e-5)];
        let refs: Vec<&ArterySection> = secs.iter().collect();
        // Axis points land on whole samples for R = 5.
        let axis: Vec<f64> = (0..11).map(|i| -1.0 + i as f64 * 0.2).collect();
        let band = average_profiles(&refs, &axis);
        for (u, (m, s)) in axis.iter().zip(band.mean.iter().zip(&band.sd)) {
            assert!((m - 0.02 * (1.0 - u * u)).abs() < 1e-12, "{u} {m}");
            assert_eq!(*s, 0.0);
        }
    }

    #[test]
    fn two_section_band_statistics() {
        let secs = [section(0, 10.0, 5.0, 1e-5), section(0, 20.0, 5.0, 1e-5)];
        let refs: Vec<&ArterySection> = secs.iter().collect();
        let band = average_profiles(&refs, &[0.0]);
        assert!((band.mean[0] - 15.0).abs() < 1e-9);
        assert!((band.sd[0] - 5.0).abs() < 1e-9);
    }

    #[test]
    fn moving_average_shrinks_at_edges() {
        assert_eq!(moving_average(&[3.0, 6.0, 9.0, 0.0], 3), vec![4.5, 6.0, 5.0, 4.5]);
        assert_eq!(moving_average(&[1.0, 2.0], 1), vec![1.0, 2.0]);
    }

    proptest! {
        #[test]
        fn scale_covariance(vmax in 1e-3f64..0.05, r in 3.0f64..9.0, scale in 1e-6f64..2e-5, k in 0.2f64..5.0) {
            let a = section(0, vmax, r, scale);
            let b = section(0, vmax, r, scale * k);
            prop_assert!((b.volume_rate_m3s / a.volume_rate_m3s - k * k).abs() < 1e-9);
            prop_assert_eq!(a.fit.vmax, b.fit.vmax);
        }

        #[test]
        fn ri_is_scale_free(vals in proptest::collection::vec(0.5f64..40.0, 3..20), c in 0.01f64..100.0) {
            let times: Vec<f64> = (0..vals.len()).map(|i| i as f64).collect();
            let build = |m: f64| -> Vec<Vec<ArterySection>> {
                vals.iter().enumerate().map(|(w, q)| vec![fixed_q(w, q * m)]).collect()
            };
            let a = total_flow_series(build(1.0), &times, 1e-5, 3).unwrap();
            let b = total_flow_series(build(c), &times, 1e-5, 3).unwrap();
            prop_assert!((a.resistivity_index - b.resistivity_index).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&a.resistivity_index));
        }

        #[test]
        fn totals_are_additive(qa in proptest::collection::vec(0.1f64..10.0, 1..5), qb in proptest::collection::vec(0.1f64..10.0, 1..5)) {
            let set = |qs: &[f64]| -> Vec<ArterySection> { qs.iter().map(|&q| fixed_q(0, q)).collect() };
            let ta = total_flow_series(vec![set(&qa)], &[0.0], 1e-5, 1).unwrap().series[0].total_flow_ul_min;
            let tb = total_flow_series(vec![set(&qb)], &[0.0], 1e-5, 1).unwrap().series[0].total_flow_ul_min;
            let mut both = set(&qa);
            both.extend(set(&qb));
            let tu = total_flow_series(vec![both], &[0.0], 1e-5, 1).unwrap().series[0].total_flow_ul_min;
            prop_assert!((tu - ta - tb).abs() < 1e-9 * tu);
        }

        #[test]
        fn fitted_lumen_mean_is_half_peak(vmax in 1e-3f64..0.05, r in 3.0f64..9.0) {
            let s = section(0, vmax, r, 1e-5);
            prop_assert!(s.is_valid());
            // Mean of the fitted parabola over a disc cross-section is vmax / 2.
            let n = 2000;
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..n {
                let rho = (i as f64 + 0.5) / n as f64;
                num += (1.0 - rho * rho) * rho;
                den += rho;
            }
            prop_assert!((s.fit.vmax * num / den - s.fit.vmax / 2.0).abs() <= 1e-6 * s.fit.vmax + s.fit.rms_residual);
        }
    }
}

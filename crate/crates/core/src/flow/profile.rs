//! Cross-section profiles and Poiseuille fits.

use nalgebra::{Matrix3, Vector3};

use crate::image::{bilinear, Image};

/// Cross-profile through a section at a fixed orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    /// Vessel direction is `(sin θ, cos θ)`; θ = 0 is a vertical vessel.
    pub orientation_rad: f64,
    /// Mean along the vessel of each cross sample, `2·half_len + 1` values, 1 px apart.
    pub samples: Vec<f64>,
}

/// Samples the rotated patch and returns its along-vessel sums, or `None`
/// when part of the patch falls outside the image.
fn summed_cross_profile(
    map: &Image<f64>,
    centre: (f64, f64),
    theta: f64,
    half_len_px: usize,
    width_px: usize,
) -> Option<Vec<f64>> {
    let (s, c) = theta.sin_cos();
    let along = (s, c);
    let across = (c, -s);
    let hl = half_len_px as isize;
    let mid = (width_px as f64 - 1.0) / 2.0;
    let mut out = Vec::with_capacity(2 * half_len_px + 1);
    for u in -hl..=hl {
        let mut sum = 0.0;
        for j in 0..width_px {
            let a = j as f64 - mid;
            let x = centre.0 + u as f64 * across.0 + a * along.0;
            let y = centre.1 + u as f64 * across.1 + a * along.1;
            sum += bilinear(map, x, y)?;
        }
        out.push(sum);
    }
    Some(out)
}

/// Rotation search: the orientation whose along-vessel sum has the highest
/// peak. Ties keep the lowest angle.
pub fn find_orientation(
    map: &Image<f64>,
    centre: (f64, f64),
    half_len_px: usize,
    width_px: usize,
    step_deg: f64,
) -> Option<f64> {
    let steps = (180.0 / step_deg).round() as usize;
    let mut best: Option<(f64, f64)> = None;
    for k in 0..steps {
        let theta = (k as f64 * step_deg).to_radians();
        let sums = summed_cross_profile(map, centre, theta, half_len_px, width_px)?;
        let peak = sums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let better = match best {
            None => true,
            Some((_, b)) => peak > b + 1e-9 * b.abs().max(f64::MIN_POSITIVE),
        };
        if better {
            best = Some((theta, peak));
        }
    }
    best.map(|(t, _)| t)
}

/// Cross-profile at a given orientation, averaged along the vessel.
pub fn profile_at(
    map: &Image<f64>,
    centre: (f64, f64),
    theta: f64,
    half_len_px: usize,
    width_px: usize,
) -> Option<Profile> {
    let sums = summed_cross_profile(map, centre, theta, half_len_px, width_px)?;
    Some(Profile {
        orientation_rad: theta,
        samples: sums.iter().map(|v| v / width_px as f64).collect(),
    })
}

/// Orientation search followed by profile extraction. `None` when the
/// patch leaves the image at any tested orientation.
pub fn extract_profile(
    map: &Image<f64>,
    centre: (f64, f64),
    half_len_px: usize,
    width_px: usize,
    step_deg: f64,
) -> Option<Profile> {
    let theta = find_orientation(map, centre, half_len_px, width_px, step_deg)?;
    profile_at(map, centre, theta, half_len_px, width_px)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct PoiseuilleFit {
    pub vmax: f64,
    pub radius_px: f64,
    /// Lumen centre relative to the middle sample, px.
    pub center_offset_px: f64,
    pub rms_residual: f64,
    pub valid: bool,
}

impl PoiseuilleFit {
    fn invalid() -> Self {
        Self {
            vmax: 0.0,
            radius_px: 0.0,
            center_offset_px: 0.0,
            rms_residual: 0.0,
            valid: false,
        }
    }

    /// Model value at offset `x` from the middle sample.
    pub fn eval(&self, x: f64) -> f64 {
        let u = (x - self.center_offset_px) / self.radius_px;
        if u.abs() <= 1.0 {
            self.vmax * (1.0 - u * u)
        } else {
            0.0
        }
    }
}

pub const MIN_PROFILE_LEN: usize = 5;
pub const DEFAULT_WALL_FRACTION: f64 = 0.1;

/// Parabolic fit on 1 px samples; see [`fit_poiseuille_with`].
pub fn fit_poiseuille(profile: &[f64]) -> PoiseuilleFit {
    fit_poiseuille_with(profile, 1.0, DEFAULT_WALL_FRACTION)
}

/// Least-squares `v = vmax (1 − ((x − x0)/R)²)` over the contiguous main
/// lobe above `wall_fraction · max`. Samples are `spacing_px` apart and
/// centred on the middle sample.
pub fn fit_poiseuille_with(profile: &[f64], spacing_px: f64, wall_fraction: f64) -> PoiseuilleFit {
    let n = profile.len();
    if n < MIN_PROFILE_LEN || profile.iter().any(|v| !v.is_finite()) {
        return PoiseuilleFit::invalid();
    }
    let (imax, &peak) = profile
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .unwrap();
    if peak <= 0.0 {
        return PoiseuilleFit::invalid();
    }
    let cut = wall_fraction * peak;
    let mut lo = imax;
    while lo > 0 && profile[lo - 1] > cut {
        lo -= 1;
    }
    let mut hi = imax;
    while hi + 1 < n && profile[hi + 1] > cut {
        hi += 1;
    }
    if hi - lo + 1 < 3 {
        return PoiseuilleFit::invalid();
    }
    let mid = (n as f64 - 1.0) / 2.0;
    let xs: Vec<f64> = (lo..=hi).map(|i| (i as f64 - mid) * spacing_px).collect();
    let ys = &profile[lo..=hi];
    // Centre the abscissa for conditioning.
    let xc = xs.iter().sum::<f64>() / xs.len() as f64;
    let mut ata = Matrix3::<f64>::zeros();
    let mut aty = Vector3::<f64>::zeros();
    for (&x, &y) in xs.iter().zip(ys) {
        let d = x - xc;
        let row = Vector3::new(1.0, d, d * d);
        ata += row * row.transpose();
        aty += row * y;
    }
    let Some(coef) = ata.lu().solve(&aty) else {
        return PoiseuilleFit::invalid();
    };
    let (a, b, c) = (coef[0], coef[1], coef[2]);
    if !(c < 0.0) {
        return PoiseuilleFit::invalid();
    }
    let x0 = xc - b / (2.0 * c);
    let vmax = a - b * b / (4.0 * c);
    let r2 = -vmax / c;
    if !(vmax > 0.0) || !(r2 > 0.25) || !r2.is_finite() {
        return PoiseuilleFit::invalid();
    }
    let mut fit = PoiseuilleFit {
        vmax,
        radius_px: r2.sqrt(),
        center_offset_px: x0,
        rms_residual: 0.0,
        valid: true,
    };
    let ss: f64 = xs.iter().zip(ys).map(|(&x, &y)| (y - fit.eval(x)).powi(2)).sum();
    fit.rms_residual = (ss / xs.len() as f64).sqrt();
    fit
}

/// Peak velocity for a parabola of known centre `x0` and radius `r`,
/// by least squares over the samples inside the lumen.
pub fn fit_fixed_shape(profile: &[f64], spacing_px: f64, x0: f64, radius_px: f64) -> PoiseuilleFit {
    if !(radius_px > 0.0) || profile.iter().any(|v| !v.is_finite()) {
        return PoiseuilleFit::invalid();
    }
    let mid = (profile.len() as f64 - 1.0) / 2.0;
    let (mut vp, mut pp, mut used) = (0.0, 0.0, 0usize);
    for (i, &v) in profile.iter().enumerate() {
        let u = ((i as f64 - mid) * spacing_px - x0) / radius_px;
        if u.abs() < 1.0 {
            let p = 1.0 - u * u;
            vp += v * p;
            pp += p * p;
            used += 1;
        }
    }
    if used < 3 || !(vp > 0.0) {
        return PoiseuilleFit::invalid();
    }
    let mut fit = PoiseuilleFit {
        vmax: vp / pp,
        radius_px,
        center_offset_px: x0,
        rms_residual: 0.0,
        valid: true,
    };
    let ss: f64 = profile
        .iter()
        .enumerate()
        .map(|(i, &v)| ((i as f64 - mid) * spacing_px, v))
        .filter(|(x, _)| ((x - x0) / radius_px).abs() < 1.0)
        .map(|(x, v)| (v - fit.eval(x)).powi(2))
        .sum();
    fit.rms_residual = (ss / used as f64).sqrt();
    fit
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Parabolic vessel of radius `r` along direction `(sin θ, cos θ)` through `c`.
    fn vessel(w: usize, h: usize, c: (f64, f64), theta: f64, r: f64, vmax: f64) -> Image<f64> {
        let (s, co) = theta.sin_cos();
        Image::from_fn(w, h, |x, y| {
            let (dx, dy) = (x as f64 - c.0, y as f64 - c.1);
            let d = dx * co - dy * s;
            let u = d / r;
            if u.abs() < 1.0 { vmax * (1.0 - u * u) } else { 0.0 }
        })
    }

    #[test]
    fn vertical_vessel_is_found_at_zero_degrees() {
        let map = vessel(61, 61, (30.0, 30.0), 0.0, 5.0, 0.01);
        let p = extract_profile(&map, (30.0, 30.0), 10, 5, 1.0).unwrap();
        assert!(p.orientation_rad.to_degrees().abs() <= 1.0);
        let n = p.samples.len();
        let imax = p.samples.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(imax, n / 2);
        for k in 0..n / 2 {
            assert!((p.samples[imax - k] - p.samples[imax + k]).abs() < 1e-12);
        }
    }

    #[test]
    fn rotated_vessel_is_found_at_its_angle() {
        let theta = 30f64.to_radians();
        let map = vessel(81, 81, (40.0, 40.0), theta, 5.0, 0.01);
        let p = extract_profile(&map, (40.0, 40.0), 10, 5, 1.0).unwrap();
        assert!((p.orientation_rad.to_degrees() - 30.0).abs() <= 1.0, "{}", p.orientation_rad.to_degrees());
    }

    #[test]
    fn uniform_map_returns_lowest_angle() {
        let map = Image::filled(50, 50, 0.003);
        let p = extract_profile(&map, (25.0, 25.0), 8, 4, 1.0).unwrap();
        assert_eq!(p.orientation_rad, 0.0);
    }

    #[test]
    fn patch_outside_image_is_dropped() {
        let map = Image::filled(20, 20, 1.0);
        assert!(extract_profile(&map, (3.0, 10.0), 8, 4, 1.0).is_none());
    }

    #[test]
    fn exact_parabola_is_recovered() {
        let prof: Vec<f64> = (-8..=8)
            .map(|x| {
                let u = x as f64 / 5.0;
                if u.abs() <= 1.0 { 10e-3 * (1.0 - u * u) } else { 0.0 }
            })
            .collect();
        let f = fit_poiseuille(&prof);
        assert!(f.valid);
        assert!((f.vmax - 10e-3).abs() < 1e-12);
        assert!((f.radius_px - 5.0).abs() < 1e-9);
        assert!(f.center_offset_px.abs() < 1e-9);
        assert!(f.rms_residual <= 1e-9);
    }

    #[test]
    fn degenerate_profiles_are_invalid() {
        assert!(!fit_poiseuille(&[0.0; 11]).valid);
        assert!(!fit_poiseuille(&[-1.0; 11]).valid);
        assert!(!fit_poiseuille(&[1.0, 2.0, 3.0]).valid);
        let spike: Vec<f64> = (0..11).map(|i| if i == 5 { 1.0 } else { 0.0 }).collect();
        assert!(!fit_poiseuille(&spike).valid);
    }

    #[test]
    fn fixed_shape_recovers_scaled_parabola() {
        let shape = |x: f64| {
            let u = (x - 0.7) / 4.5;
            if u.abs() < 1.0 { 1.0 - u * u } else { 0.0 }
        };
        let prof: Vec<f64> = (-8..=8).map(|x| 3e-3 * shape(x as f64)).collect();
        let f = fit_fixed_shape(&prof, 1.0, 0.7, 4.5);
        assert!(f.valid);
        assert!((f.vmax - 3e-3).abs() < 1e-15);
        assert!(f.rms_residual < 1e-15);
        // Zero-mean noise orthogonal to the shape leaves the estimate unchanged.
        let mut noisy = prof.clone();
        noisy[8] += 1e-3;
        noisy[7] -= 1e-3 * shape(0.0) / shape(-1.0);
        let g = fit_fixed_shape(&noisy, 1.0, 0.7, 4.5);
        assert!((g.vmax - 3e-3).abs() < 1e-15, "{}", g.vmax);
        assert!(!fit_fixed_shape(&[0.0; 17], 1.0, 0.0, 4.0).valid);
        assert!(!fit_fixed_shape(&prof, 1.0, 0.0, 0.5).valid);
    }
}

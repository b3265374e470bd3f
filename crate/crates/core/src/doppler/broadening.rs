//! Local background, signed differential broadening and velocity maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::morphology::distance_to;
use crate::params::OpticalParams;

/// Background M2 under each artery pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundEstimate {
    /// Defined on artery pixels only (zero elsewhere).
    pub m2: Image<f64>,
    /// Artery pixels whose annulus was empty and fell back to the nearest valid pixel.
    pub fallback: Mask,
    pub fallback_count: usize,
}

/// Annulus around the artery mask: pixels farther than `inner` and at most
/// `outer` from the nearest artery pixel, with a defined M2.
pub fn background_ring(artery_mask: &Mask, m2_defined: &Mask, inner: f64, outer: f64) -> Mask {
    let dist = distance_to(artery_mask);
    dist.zip_map(m2_defined, |&d, &ok| ok && d > inner && d <= outer)
}

/// Median of the annulus around each artery pixel.
///
/// For artery pixel `p`, its neighbourhood is the set of ring pixels within
/// `depth(p) + outer` of `p`, where `depth(p)` is the distance from `p` to the
/// nearest non-artery pixel. This reaches the ring on the near side of the
/// vessel for every lumen position.
pub fn estimate_background(
    m2: &Image<f64>,
    m2_defined: &Mask,
    artery_mask: &Mask,
    ring_inner_px: f64,
    ring_outer_px: f64,
) -> Result<BackgroundEstimate> {
    if !(ring_inner_px >= 0.0 && ring_inner_px < ring_outer_px) {
        return Err(Error::config(format!(
            "background ring needs 0 <= inner < outer, got {ring_inner_px} and {ring_outer_px}"
        )));
    }
    if !m2.same_dims(artery_mask) || !m2.same_dims(m2_defined) {
        return Err(Error::data("artery mask and M2 map differ in size"));
    }
    let (w, h) = m2.dims();
    let ring = background_ring(artery_mask, m2_defined, ring_inner_px, ring_outer_px);
    let depth = distance_to(&artery_mask.map(|&a| !a));
    let candidates = m2_defined.zip_map(artery_mask, |&ok, &a| ok && !a);

    let mut out = Image::filled(w, h, 0.0);
    let mut fallback = Image::filled(w, h, false);
    let mut fallback_count = 0;
    let mut values = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !artery_mask[(x, y)] {
                continue;
            }
            let reach = depth[(x, y)].min((w + h) as f64) + ring_outer_px;
            let r = reach.floor() as isize;
            values.clear();
            for dy in -r..=r {
                for dx in -r..=r {
                    if ((dx * dx + dy * dy) as f64) > reach * reach {
                        continue;
                    }
                    if let Some(&true) = ring.get(x as isize + dx, y as isize + dy) {
                        values.push(m2[((x as isize + dx) as usize, (y as isize + dy) as usize)]);
                    }
                }
            }
            out[(x, y)] = if values.is_empty() {
                fallback[(x, y)] = true;
                fallback_count += 1;
                nearest_value(m2, &candidates, x, y).ok_or_else(|| {
                    Error::data("no valid non-artery pixel available for background estimation")
                })?
            } else {
                median(&mut values)
            };
        }
    }
    Ok(BackgroundEstimate {
        m2: out,
        fallback,
        fallback_count,
    })
}

pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    let n = values.len();
    let mid = n / 2;
    let (_, &mut hi, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    if n % 2 == 1 {
        hi
    } else {
        let lo = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

/// Closest candidate by Euclidean distance, ties by raster order.
fn nearest_value(m2: &Image<f64>, candidates: &Mask, x: usize, y: usize) -> Option<f64> {
    let (w, h) = m2.dims();
    let max_r = w.max(h) as isize;
    let mut best: Option<(isize, usize, f64)> = None;
    for r in 1..=max_r {
        if let Some((d2, _, _)) = best {
            if r * r > d2 {
                break;
            }
        }
        for dy in -r..=r {
            for dx in -r..=r {
                if dx.abs() != r && dy.abs() != r {
                    continue;
                }
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if let Some(&true) = candidates.get(nx, ny) {
                    let d2 = dx * dx + dy * dy;
                    let idx = ny as usize * w + nx as usize;
                    let better = match best {
                        None => true,
                        Some((bd, bi, _)) => d2 < bd || (d2 == bd && idx < bi),
                    };
                    if better {
                        best = Some((d2, idx, m2[(nx as usize, ny as usize)]));
                    }
                }
            }
        }
    }
    best.map(|(_, _, v)| v)
}

/// Signed broadening map of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct BroadeningMap {
    /// Hz; `sign(M2 − M2_bg) · sqrt(|M2 − M2_bg|)` on artery pixels, zero elsewhere.
    pub delta_f: Image<f64>,
    /// Top band bin carries more than the configured share of in-band power.
    pub saturation: Mask,
    /// Artery pixels whose own M2 was undefined (Δf forced to zero).
    pub undefined: Mask,
}

pub fn signed_sqrt_difference(local: f64, background: f64) -> f64 {
    let d = local - background;
    if d > 0.0 {
        d.sqrt()
    } else if d < 0.0 {
        -(-d).sqrt()
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationRule {
    /// Share of in-band power in the top band bin above which a pixel is flagged.
    pub top_bin_fraction: f64,
}

impl Default for SaturationRule {
    fn default() -> Self {
        Self {
            top_bin_fraction: 0.05,
        }
    }
}

pub fn differential_broadening(
    m2: &Image<f64>,
    m2_defined: &Mask,
    background: &BackgroundEstimate,
    artery_mask: &Mask,
    top_bin_fraction: &Image<f64>,
    rule: SaturationRule,
) -> BroadeningMap {
    let (w, h) = m2.dims();
    let mut delta_f = Image::filled(w, h, 0.0);
    let mut undefined = Image::filled(w, h, false);
    for (i, &a) in artery_mask.as_slice().iter().enumerate() {
        if !a {
            continue;
        }
        if m2_defined.as_slice()[i] {
            delta_f.as_mut_slice()[i] = signed_sqrt_difference(m2.as_slice()[i], background.m2.as_slice()[i]);
        } else {
            undefined.as_mut_slice()[i] = true;
        }
    }
    let saturation = top_bin_fraction.map(|&f| f > rule.top_bin_fraction);
    BroadeningMap {
        delta_f,
        saturation,
        undefined,
    }
}

/// `v = λ Δf / NA`.
pub fn velocity_from_delta_f(delta_f_hz: f64, params: &OpticalParams) -> f64 {
    delta_f_hz * (params.wavelength_m / params.numerical_aperture)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VelocityMap {
    /// Signed RMS velocity, m/s.
    pub v: Image<f64>,
}

pub fn velocity_from_broadening(bmap: &BroadeningMap, params: &OpticalParams) -> VelocityMap {
    VelocityMap {
        v: bmap.delta_f.map(|&df| velocity_from_delta_f(df, params)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stripe_mask(w: usize, h: usize, x0: usize, x1: usize) -> Mask {
        Image::from_fn(w, h, |x, _| x >= x0 && x < x1)
    }

    #[test]
    fn broadening_arithmetic_and_sign() {
        assert_eq!(signed_sqrt_difference(2.0e8, 1.0e8), 10_000.0);
        assert_eq!(signed_sqrt_difference(1.0e8, 2.0e8), -10_000.0);
        assert_eq!(signed_sqrt_difference(1.0e8, 1.0e8), 0.0);
    }

    #[test]
    fn velocity_of_one_kilohertz() {
        let p = OpticalParams::default();
        let v = velocity_from_delta_f(1000.0, &p);
        assert!((v - 6.871e-3).abs() / 6.871e-3 < 1e-3);
        assert_eq!(velocity_from_delta_f(0.0, &p), 0.0);
        assert_eq!(velocity_from_delta_f(-1000.0, &p), -v);
    }

    #[test]
    fn constant_field_background_is_that_constant() {
        let m2 = Image::filled(40, 30, 7.5e7);
        let defined = Image::filled(40, 30, true);
        let mask = stripe_mask(40, 30, 15, 21);
        let bg = estimate_background(&m2, &defined, &mask, 3.0, 9.0).unwrap();
        for (x, y, &a) in mask.indexed() {
            if a {
                assert_eq!(bg.m2[(x, y)], 7.5e7);
            }
        }
        assert_eq!(bg.fallback_count, 0);
    }

    #[test]
    fn artery_values_do_not_leak_into_background() {
        let mask = stripe_mask(40, 30, 15, 21);
        let m2 = mask.map(|&a| if a { 2.0e8 } else { 1.0e8 });
        let defined = Image::filled(40, 30, true);
        let bg = estimate_background(&m2, &defined, &mask, 3.0, 9.0).unwrap();
        let b = differential_broadening(
            &m2,
            &defined,
            &bg,
            &mask,
            &Image::filled(40, 30, 0.0),
            SaturationRule::default(),
        );
        for (x, y, &a) in mask.indexed() {
            if a {
                assert_eq!(bg.m2[(x, y)], 1.0e8);
                assert_eq!(b.delta_f[(x, y)], 10_000.0);
            } else {
                assert_eq!(b.delta_f[(x, y)], 0.0);
            }
        }
    }

    #[test]
    fn empty_ring_falls_back_to_nearest_valid_pixel() {
        // Artery fills everything except one column, which lies inside the inner radius.
        let mask = Image::from_fn(20, 10, |x, _| x != 19);
        let m2 = Image::from_fn(20, 10, |x, y| if x == 19 { 1000.0 + y as f64 } else { 5.0 });
        let defined = Image::filled(20, 10, true);
        let bg = estimate_background(&m2, &defined, &mask, 3.0, 9.0).unwrap();
        assert_eq!(bg.fallback_count, mask.count());
        assert_eq!(bg.m2[(18, 4)], 1004.0);
        assert_eq!(bg.m2[(0, 0)], 1000.0);
    }

    #[test]
    fn rejects_bad_ring() {
        let m = Image::filled(4, 4, 1.0);
        let d = Image::filled(4, 4, true);
        assert!(estimate_background(&m, &d, &d, 5.0, 5.0).is_err());
    }

    #[test]
    fn saturation_flag_follows_threshold() {
        let mask = stripe_mask(4, 1, 0, 4);
        let frac = Image::from_vec(4, 1, vec![0.0, 0.05, 0.051, 0.5]);
        let m2 = Image::filled(4, 1, 1.0);
        let bg = BackgroundEstimate {
            m2: Image::filled(4, 1, 1.0),
            fallback: Image::filled(4, 1, false),
            fallback_count: 0,
        };
        let b = differential_broadening(&m2, &mask, &bg, &mask, &frac, SaturationRule::default());
        assert_eq!(b.saturation.as_slice(), &[false, false, true, true]);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
    }
}

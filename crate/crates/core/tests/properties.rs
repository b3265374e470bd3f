use std::f64::consts::TAU;

use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hflw::doppler::broadening::{background_ring, signed_sqrt_difference, BroadeningMap};
use hflw::doppler::{estimate_background, velocity_from_broadening, SpectralWindowConfig};
use hflw::flow::select_sections;
use hflw::io::{read_stack, write_stack};
use hflw::optics::{FresnelPropagator, InterferogramStack};
use hflw::phantom::{phantom_truth, PhantomSpec, VesselSpec};
use hflw::segmentation::{
    frangi_vesselness, temporal_correlation_map, threshold_and_refine, SegmentationConfig,
};
use hflw::{Image, Mask, OpticalParams};

fn random_image(w: usize, h: usize, seed: u64) -> Image<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(w, h, |_, _| rng.random::<f64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fresnel_round_trip_is_identity_and_unitary(
        w in 16usize..40,
        h in 16usize..40,
        dist_mm in 0.5f64..40.0,
        negative in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let params = OpticalParams::default();
        let z = if negative { -dist_mm * 1e-3 } else { dist_mm * 1e-3 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let field: Vec<Complex64> = (0..w * h).map(|_| Complex64::new(rng.random(), rng.random())).collect();
        let energy = |f: &[Complex64]| f.iter().map(|c| c.norm_sqr()).sum::<f64>();
        let mut f = field.clone();
        FresnelPropagator::new(w, h, &params, z).unwrap().apply(&mut f).unwrap();
        prop_assert!((energy(&f) / energy(&field) - 1.0).abs() <= 1e-9);
        FresnelPropagator::new(w, h, &params, -z).unwrap().apply(&mut f).unwrap();
        let peak = field.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let err = f.iter().zip(&field).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-9 * peak);
    }
}

proptest! {
    #[test]
    fn broadening_difference_is_antisymmetric(a in 0.0f64..3e8, b in 0.0f64..3e8) {
        prop_assert_eq!(signed_sqrt_difference(a, b), -signed_sqrt_difference(b, a));
        prop_assert_eq!(signed_sqrt_difference(a, a), 0.0);
    }

    #[test]
    fn velocity_is_a_fixed_multiple_of_broadening(seed in any::<u64>(), na in 0.05f64..0.5, lambda in 5e-7f64..1.1e-6) {
        let params = OpticalParams { wavelength_m: lambda, numerical_aperture: na, ..OpticalParams::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let delta_f = Image::from_fn(12, 9, |x, _| if x % 4 == 0 { 0.0 } else { rng.random_range(-8000.0..8000.0) });
        let map = BroadeningMap {
            delta_f: delta_f.clone(),
            saturation: Image::filled(12, 9, false),
            undefined: Image::filled(12, 9, false),
        };
        let v = velocity_from_broadening(&map, &params).v;
        for (&df, &vel) in delta_f.as_slice().iter().zip(v.as_slice()) {
            if df == 0.0 {
                prop_assert_eq!(vel, 0.0);
            } else {
                prop_assert!((vel / df - lambda / na).abs() <= 1e-12 * lambda / na);
            }
        }
    }

    #[test]
    fn windows_cover_every_start_frame(frames in 512usize..20_000, hop in 1usize..=512) {
        let cfg = SpectralWindowConfig { hop, ..SpectralWindowConfig::default() };
        let n = cfg.window_count(frames);
        prop_assert_eq!(n, (frames - 512) / hop + 1);
        prop_assert!(cfg.window_start(n - 1) + 512 <= frames);
        for f in (0..=frames - 512).step_by(97).chain([frames - 512]) {
            let k = (f / hop).min(n - 1);
            prop_assert!(cfg.window_start(k) <= f && f < cfg.window_start(k) + 512);
        }
    }

    #[test]
    fn vesselness_is_bounded_and_offset_free(seed in any::<u64>(), offset in -50.0f64..50.0) {
        let img = random_image(24, 20, seed);
        let v = frangi_vesselness(&img, &[1.0, 2.0], 0.5, Some(0.5));
        prop_assert!(v.as_slice().iter().all(|&x| (0.0..=1.0).contains(&x)));
        let shifted = frangi_vesselness(&img.map(|&x| x + offset), &[1.0, 2.0], 0.5, Some(0.5));
        for (a, b) in v.as_slice().iter().zip(shifted.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn correlation_is_bounded_and_gain_invariant(seed in any::<u64>(), windows in 8usize..20) {
        let (w, h) = (10, 8);
        let series: Vec<Image<f64>> = (0..windows).map(|k| random_image(w, h, seed ^ k as u64)).collect();
        let vessels = Image::from_fn(w, h, |x, _| x < 5);
        let base = temporal_correlation_map(&series, &vessels).unwrap();
        prop_assert!(base.corr.as_slice().iter().all(|c| (-1.0..=1.0).contains(c)));

        // Per-pixel positive gain and offset on pixels outside the reference.
        let mut rng = ChaCha8Rng::seed_from_u64(!seed);
        let gains = Image::from_fn(w, h, |_, _| (rng.random_range(0.1..10.0), rng.random_range(-5.0..5.0)));
        let rescaled: Vec<Image<f64>> = series
            .iter()
            .map(|img| Image::from_fn(w, h, |x, y| {
                if vessels[(x, y)] { img[(x, y)] } else { gains[(x, y)].0 * img[(x, y)] + gains[(x, y)].1 }
            }))
            .collect();
        let scaled = temporal_correlation_map(&rescaled, &vessels).unwrap();
        for (a, b) in base.corr.as_slice().iter().zip(scaled.corr.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn artery_pixels_lie_within_one_pixel_of_passing_pixels(
        seed in any::<u64>(),
        vt in 0.0f64..0.9,
        at in -0.9f64..0.9,
    ) {
        let (w, h) = (40, 32);
        let vesselness = random_image(w, h, seed);
        let corr = random_image(w, h, seed.wrapping_add(1)).map(|&c| 2.0 * c - 1.0);
        let cfg = SegmentationConfig { min_component_px: 3, ..SegmentationConfig::new(vt, at) };
        let passes = vesselness.zip_map(&corr, |&v, &c| v >= vt && c >= at);
        if let Ok(artery) = threshold_and_refine(&vesselness, &corr, &cfg) {
            for (x, y, &a) in artery.mask.indexed() {
                if a {
                    let near = (-1..=1).any(|dy| (-1..=1).any(|dx| {
                        passes.get(x as isize + dx, y as isize + dy) == Some(&true)
                    }));
                    prop_assert!(near, "artery pixel ({x}, {y}) has no passing neighbour");
                }
            }
        }
    }

    #[test]
    fn container_size_follows_the_dimensions(w in 1usize..24, h in 1usize..24, f in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames: Vec<u16> = (0..w * h * f).map(|_| rng.random()).collect();
        let stack = InterferogramStack::new(w, h, f, frames, OpticalParams::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.hflw");
        write_stack(&path, &stack).unwrap();
        prop_assert_eq!(std::fs::metadata(&path).unwrap().len(), 64 + (w * h * f * 2) as u64);
        prop_assert_eq!(read_stack(&path, &OpticalParams::default()).unwrap(), stack);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn solved_vessel_width_exceeds_the_background(peak in 200.0f64..7000.0, background in 1500.0f64..4000.0) {
        let spec = PhantomSpec {
            width: 24,
            height: 24,
            frame_count: 512,
            background_sigma_hz: background,
            vessels: vec![VesselSpec {
                centerline: vec![(2.0, 12.0), (21.0, 12.0)],
                radius_px: 3.0,
                peak_delta_f_hz: peak,
                pulsatility: 0.0,
                cardiac_hz: 1.2,
                cardiac_phase_rad: 0.0,
                pulse_sharpness: 0.0,
                artery: true,
            }],
            papilla: None,
            ..PhantomSpec::default()
        };
        let truth = phantom_truth(&spec).unwrap();
        prop_assert!(truth.peak_sigma_hz[0] > background);
    }
}

/// Ring median by exhaustive search over every pixel pair.
fn brute_background(m2: &Image<f64>, artery: &Mask, inner: f64, outer: f64) -> Image<f64> {
    let (w, h) = m2.dims();
    let pixels: Vec<(usize, usize)> = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).collect();
    let dist = |a: (usize, usize), b: (usize, usize)| (a.0 as f64 - b.0 as f64).hypot(a.1 as f64 - b.1 as f64);
    let nearest = |p: (usize, usize), want: bool| {
        pixels
            .iter()
            .filter(|&&q| artery[q] == want)
            .map(|&q| dist(p, q))
            .fold(f64::INFINITY, f64::min)
    };
    let ring: Vec<(usize, usize)> = pixels
        .iter()
        .copied()
        .filter(|&p| {
            let d = nearest(p, true);
            d > inner && d <= outer
        })
        .collect();
    Image::from_fn(w, h, |x, y| {
        if !artery[(x, y)] {
            return 0.0;
        }
        let reach = nearest((x, y), false) + outer;
        let mut v: Vec<f64> = ring.iter().filter(|&&q| dist((x, y), q) <= reach).map(|&q| m2[q]).collect();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn background_matches_exhaustive_ring_median(
        x0 in 6usize..12,
        width in 1usize..5,
        tilt in 0usize..3,
        slope_x in -2e6f64..2e6,
        slope_y in -2e6f64..2e6,
        inner in 0.0f64..3.0,
        extra in 1.0f64..5.0,
    ) {
        let (w, h) = (26, 22);
        let artery = Image::from_fn(w, h, |x, y| {
            let s = x0 + tilt * y / 8;
            x >= s && x < s + width && (3..h - 3).contains(&y)
        });
        let m2 = Image::from_fn(w, h, |x, y| 1e8 + slope_x * x as f64 + slope_y * y as f64);
        let defined = Image::filled(w, h, true);
        let outer = inner + extra;
        prop_assume!(background_ring(&artery, &defined, inner, outer).count() > 0);
        let got = estimate_background(&m2, &defined, &artery, inner, outer).unwrap();
        prop_assert_eq!(got.fallback_count, 0);
        let want = brute_background(&m2, &artery, inner, outer);
        for (x, y, &a) in artery.indexed() {
            if a {
                prop_assert!((got.m2[(x, y)] - want[(x, y)]).abs() <= 1e-6, "pixel ({x}, {y})");
            }
        }
    }

    #[test]
    fn star_branches_give_one_seed_each_at_their_angle(offset in 0.0f64..TAU / 6.0, radius in 14.0f64..22.0) {
        let (c, n) = ((32.0, 32.0), 6usize);
        let angles: Vec<f64> = (0..n).map(|k| (offset + TAU * k as f64 / n as f64).rem_euclid(TAU)).collect();
        let star = Image::from_fn(64, 64, |x, y| {
            let (dx, dy) = (x as f64 - c.0, y as f64 - c.1);
            angles.iter().any(|&a| {
                let along = dx * a.cos() + dy * a.sin();
                let across = -dx * a.sin() + dy * a.cos();
                along > 4.0 && along < 30.0 && across.abs() <= 1.5
            })
        });
        let seeds = select_sections(&star, c, radius, 4.0).unwrap();
        prop_assert_eq!(seeds.len(), n);
        prop_assert!(seeds.windows(2).all(|s| s[0].angle_rad <= s[1].angle_rad));
        for s in &seeds {
            let gap = angles
                .iter()
                .map(|&a| {
                    let d = (s.angle_rad - a).rem_euclid(TAU);
                    d.min(TAU - d)
                })
                .fold(f64::INFINITY, f64::min);
            prop_assert!(gap.to_degrees() < 3.0, "seed at {:.1} deg", s.angle_rad.to_degrees());
        }
    }
}

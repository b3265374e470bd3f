//! Separable Gaussian filtering with mirrored borders.

use crate::image::Image;

/// Mirror index into `0..n` (`d c b a | a b c d | d c b a`).
fn mirror(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

fn radius(sigma: f64) -> usize {
    (4.0 * sigma).ceil().max(1.0) as usize
}

/// Normalized Gaussian and its first two derivatives, sampled on `-r..=r`.
pub fn gaussian_kernels(sigma: f64) -> [Vec<f64>; 3] {
    let r = radius(sigma) as isize;
    let s2 = sigma * sigma;
    let g: Vec<f64> = (-r..=r).map(|x| (-(x * x) as f64 / (2.0 * s2)).exp()).collect();
    let z: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / z).collect();
    let d1: Vec<f64> = (-r..=r).zip(&g).map(|(x, v)| -(x as f64) / s2 * v).collect();
    let mut d2: Vec<f64> = (-r..=r)
        .zip(&g)
        .map(|(x, v)| ((x * x) as f64 / (s2 * s2) - 1.0 / s2) * v)
        .collect();
    let mean = d2.iter().sum::<f64>() / d2.len() as f64;
    for v in &mut d2 {
        *v -= mean;
    }
    [g, d1, d2]
}

fn convolve_rows(img: &Image<f64>, k: &[f64]) -> Image<f64> {
    let (w, h) = img.dims();
    let r = (k.len() / 2) as isize;
    Image::from_fn(w, h, |x, y| {
        k.iter()
            .enumerate()
            .map(|(i, kv)| kv * img[(mirror(x as isize + i as isize - r, w), y)])
            .sum()
    })
}

fn convolve_cols(img: &Image<f64>, k: &[f64]) -> Image<f64> {
    let (w, h) = img.dims();
    let r = (k.len() / 2) as isize;
    Image::from_fn(w, h, |x, y| {
        k.iter()
            .enumerate()
            .map(|(i, kv)| kv * img[(x, mirror(y as isize + i as isize - r, h))])
            .sum()
    })
}

/// Convolves with `kx` along x, then `ky` along y.
pub fn separable(img: &Image<f64>, kx: &[f64], ky: &[f64]) -> Image<f64> {
    convolve_cols(&convolve_rows(img, kx), ky)
}

pub fn gaussian_blur(img: &Image<f64>, sigma: f64) -> Image<f64> {
    let [g, _, _] = gaussian_kernels(sigma);
    separable(img, &g, &g)
}

/// Hessian entries `(Ixx, Ixy, Iyy)` at scale `sigma`, unnormalized.
pub fn hessian(img: &Image<f64>, sigma: f64) -> (Image<f64>, Image<f64>, Image<f64>) {
    let [g, d1, d2] = gaussian_kernels(sigma);
    (
        separable(img, &d2, &g),
        separable(img, &d1, &d1),
        separable(img, &g, &d2),
    )
}

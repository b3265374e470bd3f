//! PNG renderings of maps, masks and plots. Plots carry no text; the
//! plotted numbers are written alongside as CSV.

use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use imageproc::drawing::{draw_filled_circle_mut, draw_hollow_rect_mut, draw_line_segment_mut};
use imageproc::rect::Rect;

use crate::error::{Error, Result};
use crate::image::{Image, Mask};

pub type Color = [u8; 3];

pub const RED: Color = [220, 40, 40];
pub const BLUE: Color = [40, 90, 220];
pub const GREEN: Color = [40, 180, 60];
pub const BLACK: Color = [0, 0, 0];
pub const GREY: Color = [150, 150, 150];

fn save_err(path: &Path, e: image::ImageError) -> Error {
    Error::io(path, std::io::Error::other(e))
}

/// Robust display range: the 1st and 99th percentiles of finite values.
fn display_range(img: &Image<f64>) -> (f64, f64) {
    let mut v: Vec<f64> = img.as_slice().iter().copied().filter(|v| v.is_finite()).collect();
    if v.is_empty() {
        return (0.0, 1.0);
    }
    v.sort_by(f64::total_cmp);
    let at = |q: f64| v[((v.len() - 1) as f64 * q).round() as usize];
    let (lo, hi) = (at(0.01), at(0.99));
    if hi > lo {
        (lo, hi)
    } else {
        (lo, lo + 1.0)
    }
}

fn to_gray(img: &Image<f64>) -> GrayImage {
    let (lo, hi) = display_range(img);
    GrayImage::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        let v = img[(x as usize, y as usize)];
        let t = if v.is_finite() { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 };
        Luma([(t * 255.0).round() as u8])
    })
}

pub fn save_gray(path: &Path, img: &Image<f64>) -> Result<()> {
    to_gray(img).save(path).map_err(|e| save_err(path, e))
}

/// Diverging blue-white-red map symmetric about zero.
pub fn save_signed(path: &Path, img: &Image<f64>) -> Result<()> {
    let (lo, hi) = display_range(img);
    let m = lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE);
    let out = RgbImage::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        let v = img[(x as usize, y as usize)];
        let t = if v.is_finite() { (v / m).clamp(-1.0, 1.0) } else { 0.0 };
        let fade = |c: u8| (255.0 - (255.0 - c as f64) * t.abs()).round() as u8;
        let c = if t >= 0.0 { RED } else { BLUE };
        Rgb([fade(c[0]), fade(c[1]), fade(c[2])])
    });
    out.save(path).map_err(|e| save_err(path, e))
}

/// Grey base image with coloured mask layers blended on top, later layers winning.
pub fn save_overlay(path: &Path, base: &Image<f64>, layers: &[(&Mask, Color)], alpha: f64) -> Result<()> {
    let gray = to_gray(base);
    let mut out = RgbImage::from_fn(gray.width(), gray.height(), |x, y| {
        let g = gray.get_pixel(x, y)[0];
        Rgb([g, g, g])
    });
    for (mask, color) in layers {
        if !mask.same_dims(base) {
            return Err(Error::data("overlay mask and base image differ in size"));
        }
        for (x, y, &m) in mask.indexed() {
            if m {
                let p = out.get_pixel_mut(x as u32, y as u32);
                for k in 0..3 {
                    p[k] = ((1.0 - alpha) * p[k] as f64 + alpha * color[k] as f64).round() as u8;
                }
            }
        }
    }
    out.save(path).map_err(|e| save_err(path, e))
}

/// Pixel canvas with linear data axes.
pub struct Plot {
    canvas: RgbImage,
    x_range: (f64, f64),
    y_range: (f64, f64),
    margin: f32,
}

impl Plot {
    pub fn new(width: u32, height: u32, x_range: (f64, f64), y_range: (f64, f64)) -> Self {
        let pad = |(a, b): (f64, f64)| if b > a { (a, b) } else { (a - 0.5, a + 0.5) };
        let mut canvas = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
        let margin = 20.0;
        draw_hollow_rect_mut(
            &mut canvas,
            Rect::at(margin as i32, margin as i32).of_size(width - 2 * margin as u32, height - 2 * margin as u32),
            Rgb(BLACK),
        );
        Self {
            canvas,
            x_range: pad(x_range),
            y_range: pad(y_range),
            margin,
        }
    }

    /// Tight ranges over all points with 5 % headroom in y.
    pub fn fitted(width: u32, height: u32, points: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (x, y) in points.into_iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            return Self::new(width, height, (0.0, 1.0), (0.0, 1.0));
        }
        let pad = 0.05 * (y1 - y0).max(f64::MIN_POSITIVE);
        Self::new(width, height, (x0, x1), (y0 - pad, y1 + pad))
    }

    fn to_px(&self, x: f64, y: f64) -> (f32, f32) {
        let (w, h) = (self.canvas.width() as f32, self.canvas.height() as f32);
        let m = self.margin;
        let fx = ((x - self.x_range.0) / (self.x_range.1 - self.x_range.0)) as f32;
        let fy = ((y - self.y_range.0) / (self.y_range.1 - self.y_range.0)) as f32;
        (m + fx * (w - 2.0 * m), h - m - fy * (h - 2.0 * m))
    }

    pub fn line(&mut self, points: &[(f64, f64)], color: Color) -> &mut Self {
        for p in points.windows(2) {
            if p.iter().all(|q| q.0.is_finite() && q.1.is_finite()) {
                let (a, b) = (self.to_px(p[0].0, p[0].1), self.to_px(p[1].0, p[1].1));
                draw_line_segment_mut(&mut self.canvas, a, b, Rgb(color));
            }
        }
        self
    }

    /// Vertical strokes between `lo` and `hi` at each abscissa.
    pub fn band(&mut self, xs: &[f64], lo: &[f64], hi: &[f64], color: Color) -> &mut Self {
        let light = color.map(|c| (c as f64 * 0.35 + 255.0 * 0.65) as u8);
        for ((&x, &a), &b) in xs.iter().zip(lo).zip(hi) {
            let (p, q) = (self.to_px(x, a), self.to_px(x, b));
            draw_line_segment_mut(&mut self.canvas, p, q, Rgb(light));
        }
        self
    }

    pub fn hline(&mut self, y: f64, color: Color) -> &mut Self {
        let (a, b) = (self.x_range.0, self.x_range.1);
        self.line(&[(a, y), (b, y)], color)
    }

    pub fn marker(&mut self, x: f64, y: f64, color: Color) -> &mut Self {
        let (px, py) = self.to_px(x, y);
        draw_filled_circle_mut(&mut self.canvas, (px.round() as i32, py.round() as i32), 4, Rgb(color));
        self
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.canvas.save(path).map_err(|e| save_err(path, e))
    }
}

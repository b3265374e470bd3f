//! Dense row-major 2D grids used for every map in the pipeline.

use std::ops::{Index, IndexMut};

#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

pub type Mask = Image<bool>;

impl<T: Clone> Image<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Image<T> {
    /// Wraps a row-major buffer. Panics if the length does not match.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "image buffer length mismatch");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn same_dims<U>(&self, other: &Image<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn get(&self, x: isize, y: isize) -> Option<&T> {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            None
        } else {
            Some(&self.data[y as usize * self.width + x as usize])
        }
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn zip_map<U, V>(&self, other: &Image<U>, mut f: impl FnMut(&T, &U) -> V) -> Image<V> {
        assert!(self.same_dims(other), "image dimension mismatch");
        Image {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(a, b))
                .collect(),
        }
    }

    /// Iterates `(x, y, &value)` in raster order.
    pub fn indexed(&self) -> impl Iterator<Item = (usize, usize, &T)> {
        let w = self.width;
        self.data.iter().enumerate().map(move |(i, v)| (i % w, i / w, v))
    }
}

impl<T> Index<(usize, usize)> for Image<T> {
    type Output = T;

    fn index(&self, (x, y): (usize, usize)) -> &T {
        debug_assert!(x < self.width && y < self.height);
        &self.data[y * self.width + x]
    }
}

impl<T> IndexMut<(usize, usize)> for Image<T> {
    fn index_mut(&mut self, (x, y): (usize, usize)) -> &mut T {
        debug_assert!(x < self.width && y < self.height);
        &mut self.data[y * self.width + x]
    }
}

impl Image<f64> {
    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

impl Mask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.same_dims(other) && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }
}

/// Sørensen–Dice overlap of two masks; 1.0 when both are empty.
pub fn dice(a: &Mask, b: &Mask) -> f64 {
    assert!(a.same_dims(b), "image dimension mismatch");
    let inter = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .filter(|(&p, &q)| p && q)
        .count();
    let total = a.count() + b.count();
    if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    }
}

/// Bilinear sample at a sub-pixel position; `None` outside the pixel-centre hull.
pub fn bilinear(img: &Image<f64>, x: f64, y: f64) -> Option<f64> {
    if !(x >= 0.0 && y >= 0.0) {
        return None;
    }
    let (w, h) = img.dims();
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    if x0 >= w || y0 >= h {
        return None;
    }
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let x1 = if fx > 0.0 { x0 + 1 } else { x0 };
    let y1 = if fy > 0.0 { y0 + 1 } else { y0 };
    if x1 >= w || y1 >= h {
        return None;
    }
    let top = img[(x0, y0)] * (1.0 - fx) + img[(x1, y0)] * fx;
    let bottom = img[(x0, y1)] * (1.0 - fx) + img[(x1, y1)] * fx;
    Some(top * (1.0 - fy) + bottom * fy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_interpolates_linear_ramp_exactly() {
        let img = Image::from_fn(8, 8, |x, y| 2.0 * x as f64 + 3.0 * y as f64);
        let v = bilinear(&img, 2.25, 4.5).unwrap();
        assert!((v - (4.5 + 13.5)).abs() < 1e-12);
        assert_eq!(bilinear(&img, 7.0, 7.0), Some(35.0));
        assert!(bilinear(&img, 7.5, 1.0).is_none());
        assert!(bilinear(&img, -0.1, 1.0).is_none());
    }

    #[test]
    fn dice_of_identical_and_disjoint_masks() {
        let a = Image::from_fn(4, 4, |x, _| x < 2);
        let b = Image::from_fn(4, 4, |x, _| x >= 2);
        assert_eq!(dice(&a, &a), 1.0);
        assert_eq!(dice(&a, &b), 0.0);
    }
}

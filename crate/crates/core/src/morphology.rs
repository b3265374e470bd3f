//! Binary morphology, distance transforms and connected components.

use crate::image::{Image, Mask};

/// Pixel adjacency used for connected components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Connectivity {
    #[serde(rename = "4")]
    Four,
    #[serde(rename = "8")]
    Eight,
}

impl Connectivity {
    pub fn from_count(n: u8) -> Option<Self> {
        match n {
            4 => Some(Connectivity::Four),
            8 => Some(Connectivity::Eight),
            _ => None,
        }
    }

    fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
            Connectivity::Eight => &[
                (1, 0),
                (-1, 0),
                (0, 1),
                (0, -1),
                (1, 1),
                (1, -1),
                (-1, 1),
                (-1, -1),
            ],
        }
    }
}

const FAR: f64 = 1e20;

/// Exact squared Euclidean distance transform along one line
/// (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s;
        loop {
            let p = v[k];
            s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            // z[0] is -inf, so k never underflows.
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Euclidean distance from every pixel to the nearest `true` pixel of `sources`.
/// Pixels are infinitely far when `sources` is empty.
pub fn distance_to(sources: &Mask) -> Image<f64> {
    let (w, h) = sources.dims();
    let mut grid: Vec<f64> = sources.as_slice().iter().map(|&s| if s { 0.0 } else { FAR }).collect();
    let n = w.max(h);
    let mut f = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    for x in 0..w {
        for y in 0..h {
            f[y] = grid[y * w + x];
        }
        edt_1d(&f[..h], &mut out[..h], &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = out[y];
        }
    }
    for y in 0..h {
        f[..w].copy_from_slice(&grid[y * w..(y + 1) * w]);
        edt_1d(&f[..w], &mut out[..w], &mut v, &mut z);
        grid[y * w..(y + 1) * w].copy_from_slice(&out[..w]);
    }
    let dist = grid
        .into_iter()
        .map(|d2| if d2 >= FAR * 0.5 { f64::INFINITY } else { d2.sqrt() })
        .collect();
    Image::from_vec(w, h, dist)
}

/// 3×3 dilation; out-of-image neighbours are ignored.
pub fn dilate3(mask: &Mask) -> Mask {
    let (w, h) = mask.dims();
    Image::from_fn(w, h, |x, y| {
        (-1..=1).any(|dy| (-1..=1).any(|dx| *mask.get(x as isize + dx, y as isize + dy).unwrap_or(&false)))
    })
}

/// 3×3 erosion; out-of-image neighbours count as set so that closing is extensive.
pub fn erode3(mask: &Mask) -> Mask {
    let (w, h) = mask.dims();
    Image::from_fn(w, h, |x, y| {
        (-1..=1).all(|dy| (-1..=1).all(|dx| *mask.get(x as isize + dx, y as isize + dy).unwrap_or(&true)))
    })
}

pub fn close3(mask: &Mask) -> Mask {
    erode3(&dilate3(mask))
}

/// Connected components, relabelled `1..=n` by decreasing size (ties broken
/// by first pixel in raster order); background is 0. Returns labels and sizes
/// (`sizes[i]` belongs to label `i + 1`).
pub fn label_components(mask: &Mask, connectivity: Connectivity) -> (Image<u32>, Vec<usize>) {
    let (w, h) = mask.dims();
    let mut raw = Image::filled(w, h, 0u32);
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        let (sx, sy) = (start % w, start / w);
        if !mask[(sx, sy)] || raw[(sx, sy)] != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        raw[(sx, sy)] = label;
        stack.push((sx, sy));
        let mut size = 0;
        while let Some((x, y)) = stack.pop() {
            size += 1;
            for &(dx, dy) in connectivity.offsets() {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                    continue;
                }
                let (nx, ny) = (nx as usize, ny as usize);
                if mask[(nx, ny)] && raw[(nx, ny)] == 0 {
                    raw[(nx, ny)] = label;
                    stack.push((nx, ny));
                }
            }
        }
        sizes.push(size);
    }
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    let mut remap = vec![0u32; sizes.len() + 1];
    for (new, &old) in order.iter().enumerate() {
        remap[old + 1] = new as u32 + 1;
    }
    let labels = raw.map(|&l| remap[l as usize]);
    let sorted = order.iter().map(|&i| sizes[i]).collect();
    (labels, sorted)
}

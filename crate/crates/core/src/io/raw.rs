//! Little-endian `f32` arrays with JSON sidecars.
//!
//! `name.f32` holds the samples in row-major order over `shape`;
//! `name.json` describes them.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use num_complex::Complex32;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::optics::{check_range, FrameSource};
use crate::params::OpticalParams;

pub const DTYPE: &str = "f32le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArraySidecar {
    pub dtype: String,
    pub shape: Vec<usize>,
    pub axes: Vec<String>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl ArraySidecar {
    pub fn new(shape: &[usize], axes: &[&str], meta: serde_json::Value) -> Self {
        Self {
            dtype: DTYPE.to_string(),
            shape: shape.to_vec(),
            axes: axes.iter().map(|a| a.to_string()).collect(),
            meta,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn sidecar_path(data_path: &Path) -> PathBuf {
    data_path.with_extension("json")
}

/// Writes `data` and its sidecar; the sample count must match `shape`.
pub fn write_f32(path: &Path, sidecar: &ArraySidecar, data: impl IntoIterator<Item = f32>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut n = 0usize;
    for v in data {
        out.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
        n += 1;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    if n != sidecar.len() {
        return Err(Error::data(format!(
            "{}: wrote {n} samples but the shape {:?} needs {}",
            path.display(),
            sidecar.shape,
            sidecar.len()
        )));
    }
    super::write_json(&sidecar_path(path), sidecar)
}

pub fn read_sidecar(path: &Path) -> Result<ArraySidecar> {
    let s: ArraySidecar = super::read_json(&sidecar_path(path))?;
    if s.dtype != DTYPE {
        return Err(Error::data(format!("{}: unsupported dtype {}", path.display(), s.dtype)));
    }
    Ok(s)
}

/// Fails unless the data file holds exactly the sidecar's sample count.
fn check_len(path: &Path, sidecar: &ArraySidecar) -> Result<()> {
    let actual = std::fs::metadata(path).map_err(|e| Error::io(path, e))?.len();
    let expected = sidecar.len() as u64 * 4;
    if actual != expected {
        return Err(Error::data(format!(
            "{}: expected {expected} bytes for shape {:?}, found {actual}",
            path.display(),
            sidecar.shape
        )));
    }
    Ok(())
}

pub fn read_f32(path: &Path) -> Result<(ArraySidecar, Vec<f32>)> {
    let sidecar = read_sidecar(path)?;
    check_len(path, &sidecar)?;
    let mut bytes = Vec::with_capacity(sidecar.len() * 4);
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((sidecar, data))
}

/// Writes a series of equally sized images as a `[n, height, width]` array.
pub fn write_image_series(path: &Path, images: &[Image<f64>], meta: serde_json::Value) -> Result<()> {
    let (w, h) = images.first().map(|i| i.dims()).unwrap_or((0, 0));
    if images.iter().any(|i| i.dims() != (w, h)) {
        return Err(Error::data("image series mixes dimensions"));
    }
    let sidecar = ArraySidecar::new(&[images.len(), h, w], &["index", "y", "x"], meta);
    write_f32(path, &sidecar, images.iter().flat_map(|i| i.as_slice().iter().map(|&v| v as f32)))
}

pub fn read_image_series(path: &Path) -> Result<(ArraySidecar, Vec<Image<f64>>)> {
    let (sidecar, data) = read_f32(path)?;
    let [n, h, w] = sidecar.shape[..] else {
        return Err(Error::data(format!("{}: expected a 3-axis image series", path.display())));
    };
    let images = (0..n)
        .map(|k| Image::from_vec(w, h, data[k * w * h..(k + 1) * w * h].iter().map(|&v| v as f64).collect()))
        .collect();
    Ok((sidecar, images))
}

pub fn write_image(path: &Path, image: &Image<f64>, meta: serde_json::Value) -> Result<()> {
    let sidecar = ArraySidecar::new(&[image.height(), image.width()], &["y", "x"], meta);
    write_f32(path, &sidecar, image.as_slice().iter().map(|&v| v as f32))
}

pub fn read_image(path: &Path) -> Result<Image<f64>> {
    let (sidecar, data) = read_f32(path)?;
    let [h, w] = sidecar.shape[..] else {
        return Err(Error::data(format!("{}: expected a 2-axis image", path.display())));
    };
    Ok(Image::from_vec(w, h, data.into_iter().map(|v| v as f64).collect()))
}

pub fn write_mask(path: &Path, mask: &Mask, meta: serde_json::Value) -> Result<()> {
    write_image(path, &mask.map(|&m| if m { 1.0 } else { 0.0 }), meta)
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    Ok(read_image(path)?.map(|&v| v != 0.0))
}

/// Sidecar metadata of a hologram stack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HologramMeta {
    pub params: OpticalParams,
}

/// Renders `source` to disk as a `[frame, y, x, re/im]` array, a block of frames at a time.
pub fn write_hologram_stack(path: &Path, source: &dyn FrameSource) -> Result<()> {
    let (w, h, n) = (source.width(), source.height(), source.frame_count());
    let meta = serde_json::to_value(HologramMeta { params: *source.params() }).expect("plain data serializes");
    let sidecar = ArraySidecar::new(&[n, h, w, 2], &["frame", "y", "x", "component"], meta);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let block = (1 << 20) / (w * h).max(1) + 1;
    let mut bytes = Vec::new();
    for start in (0..n).step_by(block) {
        let frames = source.read_frames(start, block.min(n - start))?;
        bytes.clear();
        bytes.extend(frames.iter().flat_map(|c| [c.re.to_le_bytes(), c.im.to_le_bytes()]).flatten());
        out.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    super::write_json(&sidecar_path(path), &sidecar)
}

/// Hologram stack read from disk on demand.
pub struct RawHologramSource {
    path: PathBuf,
    file: Mutex<File>,
    width: usize,
    height: usize,
    frame_count: usize,
    params: OpticalParams,
}

impl RawHologramSource {
    pub fn open(path: &Path) -> Result<Self> {
        let sidecar = read_sidecar(path)?;
        let [n, h, w, 2] = sidecar.shape[..] else {
            return Err(Error::data(format!("{}: not a hologram stack of shape [frame, y, x, 2]", path.display())));
        };
        check_len(path, &sidecar)?;
        let meta: HologramMeta = serde_json::from_value(sidecar.meta)
            .map_err(|e| Error::data(format!("{}: bad hologram metadata: {e}", path.display())))?;
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            file: Mutex::new(file),
            width: w,
            height: h,
            frame_count: n,
            params: meta.params,
        })
    }
}

impl FrameSource for RawHologramSource {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn frame_count(&self) -> usize {
        self.frame_count
    }
    fn params(&self) -> &OpticalParams {
        &self.params
    }
    fn read_frames(&self, start: usize, count: usize) -> Result<Vec<Complex32>> {
        check_range(start, count, self.frame_count)?;
        let px = self.width * self.height;
        let mut bytes = vec![0u8; count * px * 8];
        {
            let mut f = self.file.lock().unwrap_or_else(|p| p.into_inner());
            f.seek(SeekFrom::Start((start * px * 8) as u64))
                .and_then(|_| f.read_exact(&mut bytes))
                .map_err(|e| Error::io(&self.path, e))?;
        }
        Ok(bytes
            .chunks_exact(8)
            .map(|c| {
                Complex32::new(
                    f32::from_le_bytes(c[..4].try_into().unwrap()),
                    f32::from_le_bytes(c[4..].try_into().unwrap()),
                )
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::HologramStack;

    #[test]
    fn image_series_round_trip_is_f32_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.f32");
        let imgs: Vec<Image<f64>> = (0..3).map(|k| Image::from_fn(4, 2, |x, y| (x + 10 * y + 100 * k) as f64 / 3.0)).collect();
        write_image_series(&p, &imgs, serde_json::json!({"unit": "Hz^2"})).unwrap();
        let (side, back) = read_image_series(&p).unwrap();
        assert_eq!(side.shape, vec![3, 2, 4]);
        assert_eq!(side.meta["unit"], "Hz^2");
        for (a, b) in imgs.iter().zip(&back) {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert_eq!(*x as f32 as f64, *y);
            }
        }
    }

    #[test]
    fn short_file_is_rejected_with_sizes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.f32");
        write_image(&p, &Image::filled(3, 3, 1.0), serde_json::Value::Null).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..30]).unwrap();
        let msg = read_image(&p).unwrap_err().to_string();
        assert!(msg.contains("expected 36 bytes") && msg.contains("found 30"), "{msg}");
    }

    #[test]
    fn hologram_source_reads_back_frames() {
        let (w, h, n) = (3, 2, 5);
        let frames: Vec<Complex32> = (0..w * h * n).map(|i| Complex32::new(i as f32, -(i as f32) / 2.0)).collect();
        let stack = HologramStack {
            width: w,
            height: h,
            frame_count: n,
            frames: frames.clone(),
            params: OpticalParams::default(),
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.f32");
        write_hologram_stack(&p, &stack).unwrap();
        let src = RawHologramSource::open(&p).unwrap();
        assert_eq!((src.width(), src.height(), src.frame_count()), (w, h, n));
        assert_eq!(src.read_frames(2, 2).unwrap(), frames[2 * w * h..4 * w * h].to_vec());
        assert!(src.read_frames(4, 2).is_err());
    }
}

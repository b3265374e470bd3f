//! `HFLW` interferogram container.
//!
//! ```text
//! offset size field
//!      0    4 magic "HFLW"
//!      4    2 version (u16)
//!      6    4 width (u32)
//!     10    4 height (u32)
//!     14    4 frame_count (u32)
//!     18    2 bits_per_pixel (u16, always 16)
//!     20    8 frame_rate_hz (f64)
//!     28    8 pixel_pitch_m (f64)
//!     36    8 wavelength_m (f64)
//!     44   20 reserved, zero
//!     64    - frames, u16, frame-major then row-major
//! ```
//!
//! All fields are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::optics::InterferogramStack;
use crate::params::OpticalParams;

pub const MAGIC: &[u8; 4] = b"HFLW";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 64;
const RESERVED_OFFSET: usize = 44;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StackHeader {
    pub version: u16,
    pub width: u32,
    pub height: u32,
    pub frame_count: u32,
    pub bits_per_pixel: u16,
    pub frame_rate_hz: f64,
    pub pixel_pitch_m: f64,
    pub wavelength_m: f64,
}

impl StackHeader {
    pub fn for_stack(stack: &InterferogramStack) -> Result<Self> {
        let dim = |v: usize, name: &str| {
            u32::try_from(v).map_err(|_| Error::config(format!("{name} {v} does not fit the container header")))
        };
        Ok(Self {
            version: VERSION,
            width: dim(stack.width, "width")?,
            height: dim(stack.height, "height")?,
            frame_count: dim(stack.frame_count, "frame count")?,
            bits_per_pixel: 16,
            frame_rate_hz: stack.params.frame_rate_hz,
            pixel_pitch_m: stack.params.pixel_pitch_m,
            wavelength_m: stack.params.wavelength_m,
        })
    }

    /// Total file size implied by the header.
    pub fn file_len(&self) -> u64 {
        HEADER_LEN as u64 + self.width as u64 * self.height as u64 * self.frame_count as u64 * 2
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..4].copy_from_slice(MAGIC);
        b[4..6].copy_from_slice(&self.version.to_le_bytes());
        b[6..10].copy_from_slice(&self.width.to_le_bytes());
        b[10..14].copy_from_slice(&self.height.to_le_bytes());
        b[14..18].copy_from_slice(&self.frame_count.to_le_bytes());
        b[18..20].copy_from_slice(&self.bits_per_pixel.to_le_bytes());
        b[20..28].copy_from_slice(&self.frame_rate_hz.to_le_bytes());
        b[28..36].copy_from_slice(&self.pixel_pitch_m.to_le_bytes());
        b[36..44].copy_from_slice(&self.wavelength_m.to_le_bytes());
        b
    }

    pub fn from_bytes(b: &[u8; HEADER_LEN]) -> Result<Self> {
        if &b[0..4] != MAGIC {
            return Err(Error::data("not an HFLW container: bad magic"));
        }
        let u16_at = |o: usize| u16::from_le_bytes([b[o], b[o + 1]]);
        let u32_at = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(b[o..o + 8].try_into().unwrap());
        let h = Self {
            version: u16_at(4),
            width: u32_at(6),
            height: u32_at(10),
            frame_count: u32_at(14),
            bits_per_pixel: u16_at(18),
            frame_rate_hz: f64_at(20),
            pixel_pitch_m: f64_at(28),
            wavelength_m: f64_at(36),
        };
        if h.version != VERSION {
            return Err(Error::data(format!("unsupported container version {}", h.version)));
        }
        if h.bits_per_pixel != 16 {
            return Err(Error::data(format!("unsupported bit depth {}", h.bits_per_pixel)));
        }
        if h.width == 0 || h.height == 0 || h.frame_count == 0 {
            return Err(Error::data("container header has a zero dimension"));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !(positive(h.frame_rate_hz) && positive(h.pixel_pitch_m) && positive(h.wavelength_m)) {
            return Err(Error::data("container header has a non-positive physical constant"));
        }
        if b[RESERVED_OFFSET..].iter().any(|&v| v != 0) {
            log::warn!("container reserved bytes are not zero");
        }
        Ok(h)
    }

    /// Optical parameters with the header's acquisition constants over `base`.
    pub fn apply_to(&self, base: &OpticalParams) -> OpticalParams {
        OpticalParams {
            frame_rate_hz: self.frame_rate_hz,
            pixel_pitch_m: self.pixel_pitch_m,
            wavelength_m: self.wavelength_m,
            ..*base
        }
    }
}

pub fn write_stack(path: &Path, stack: &InterferogramStack) -> Result<()> {
    stack.validate()?;
    let header = StackHeader::for_stack(stack)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut body = Vec::with_capacity(1 << 16);
    out.write_all(&header.to_bytes()).map_err(|e| Error::io(path, e))?;
    for chunk in stack.frames.chunks(1 << 15) {
        body.clear();
        body.extend(chunk.iter().flat_map(|v| v.to_le_bytes()));
        out.write_all(&body).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_header(path: &Path) -> Result<StackHeader> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut b = [0u8; HEADER_LEN];
    file.read_exact(&mut b).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::data(format!(
            "{} is shorter than the {HEADER_LEN}-byte container header",
            path.display()
        )),
        _ => Error::io(path, e),
    })?;
    StackHeader::from_bytes(&b)
}

/// Reads a container. Physical constants other than those in the header are
/// taken from `base`.
pub fn read_stack(path: &Path, base: &OpticalParams) -> Result<InterferogramStack> {
    let header = read_header(path)?;
    let actual = std::fs::metadata(path).map_err(|e| Error::io(path, e))?.len();
    let expected = header.file_len();
    if actual != expected {
        return Err(Error::data(format!(
            "{}: expected {expected} bytes for {}x{}x{} frames, found {actual}",
            path.display(),
            header.width,
            header.height,
            header.frame_count
        )));
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut input = BufReader::new(file);
    let mut skip = [0u8; HEADER_LEN];
    input.read_exact(&mut skip).map_err(|e| Error::io(path, e))?;
    let n = (expected - HEADER_LEN as u64) as usize / 2;
    let mut frames = Vec::with_capacity(n);
    let mut buf = vec![0u8; 1 << 16];
    while frames.len() < n {
        let want = ((n - frames.len()) * 2).min(buf.len());
        input.read_exact(&mut buf[..want]).map_err(|e| Error::io(path, e))?;
        frames.extend(buf[..want].chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])));
    }
    InterferogramStack::new(
        header.width as usize,
        header.height as usize,
        header.frame_count as usize,
        frames,
        header.apply_to(base),
    )
}

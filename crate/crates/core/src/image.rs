//! Interleaved 8-bit RGB raster and binary PPM (P6) I/O.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Smallest accepted width or height.
pub const MIN_SIDE: usize = 8;

/// Row-major interleaved RGB image, 8 bits per channel.
#[derive(Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Image")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width < MIN_SIDE || height < MIN_SIDE {
            return Err(Error::Param(format!(
                "image must be at least {MIN_SIDE}x{MIN_SIDE}, got {width}x{height}"
            )));
        }
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "expected {} bytes for {width}x{height} RGB, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    /// Image with every channel of every pixel set to `value`.
    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Image::new(width, height, vec![value; width * height * 3])
    }

    /// Builds an image by evaluating `f(x, y, channel)` for every sample.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize, usize) -> u8,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    data.push(f(x, y, c));
                }
            }
        }
        Image::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * 3 + c]
    }

    /// One channel as a dense `f64` plane.
    pub fn channel_plane(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(3).map(|&v| f64::from(v)).collect()
    }

    /// Reassembles an image from three planes, rounding half away from zero
    /// and clamping to `[0, 255]`.
    pub fn from_planes(width: usize, height: usize, planes: [&[f64]; 3]) -> Result<Self> {
        let n = width * height;
        if planes.iter().any(|p| p.len() != n) {
            return Err(Error::Shape(format!("planes must each hold {n} samples")));
        }
        let mut data = Vec::with_capacity(n * 3);
        for i in 0..n {
            for plane in &planes {
                data.push(to_u8(plane[i]));
            }
        }
        Image::new(width, height, data)
    }

    /// Copies the `w`×`h` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::Param(format!(
                "crop {w}x{h}+{x0}+{y0} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h * 3);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[start..start + w * 3]);
        }
        Image::new(w, h, data)
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in (0..self.width).rev() {
                let i = (y * self.width + x) * 3;
                data.extend_from_slice(&self.data[i..i + 3]);
            }
        }
        Image {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// BT.601 luma as `f64`, row-major.
    pub fn to_gray(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]))
            .collect()
    }

    /// Encodes as binary PPM (P6, maxval 255).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut cursor = 0usize;
        let magic = next_token(bytes, &mut cursor).ok_or("missing magic")?;
        if magic != b"P6" {
            return Err(format!(
                "unsupported magic {:?}, expected P6",
                String::from_utf8_lossy(magic)
            ));
        }
        let mut header = [0usize; 3];
        for (slot, name) in header.iter_mut().zip(["width", "height", "maxval"]) {
            let tok = next_token(bytes, &mut cursor).ok_or(format!("missing {name}"))?;
            *slot = std::str::from_utf8(tok)
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or(format!("bad {name}"))?;
        }
        let [width, height, maxval] = header;
        if maxval != 255 {
            return Err(format!("maxval {maxval} unsupported, expected 255"));
        }
        // exactly one whitespace byte separates the header from the raster
        cursor += 1;
        let need = width * height * 3;
        let raster = bytes
            .get(cursor..cursor + need)
            .ok_or(format!("raster truncated: need {need} bytes"))?;
        Image::new(width, height, raster.to_vec()).map_err(|e| e.to_string())
    }

    pub fn read_ppm(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Image::from_ppm(&bytes).map_err(|msg| Error::format(path, msg))
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_ppm()).map_err(|e| Error::io(path, e))
    }
}

fn next_token<'a>(bytes: &'a [u8], cursor: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *cursor < bytes.len() && bytes[*cursor].is_ascii_whitespace() {
            *cursor += 1;
        }
        if *cursor < bytes.len() && bytes[*cursor] == b'#' {
            while *cursor < bytes.len() && bytes[*cursor] != b'\n' {
                *cursor += 1;
            }
            continue;
        }
        break;
    }
    let start = *cursor;
    while *cursor < bytes.len() && !bytes[*cursor].is_ascii_whitespace() {
        *cursor += 1;
    }
    (start < *cursor).then(|| &bytes[start..*cursor])
}

/// Round half away from zero, then clamp into the 8-bit range.
#[inline]
pub(crate) fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Per-channel population variance, used by the variance invariants.
pub fn channel_variance(img: &Image, c: usize) -> f64 {
    let plane = img.channel_plane(c);
    let n = plane.len() as f64;
    let mean = plane.iter().sum::<f64>() / n;
    plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Mean squared error over all samples.
pub fn mse(a: &Image, b: &Image) -> f64 {
    assert_eq!(a.data.len(), b.data.len());
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum();
    sum / a.data.len() as f64
}

/// Peak signal-to-noise ratio in dB for 8-bit data.
pub fn psnr(a: &Image, b: &Image) -> f64 {
    10.0 * (255.0f64.powi(2) / mse(a, b)).log10()
}

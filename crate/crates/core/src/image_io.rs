//! Floating-point images, 8-bit PNG I/O and the raw `VXIM` float format.
//!
//! `VXIM` layout (little-endian): magic `b"VXIM"`, `u32` height, `u32` width,
//! `u32` channels, then `height·width·channels` `f32` values row-major with
//! interleaved channels.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const VXIM_MAGIC: &[u8; 4] = b"VXIM";

/// Row-major image with interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "{width}x{height}x{channels} image needs {} values, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn pixel(&self, i: usize, j: usize) -> &[f64] {
        let o = (j * self.width + i) * self.channels;
        &self.data[o..o + self.channels]
    }

    /// RGB triple of pixel `p` (row-major index) for 3-channel images.
    pub fn rgb(&self, p: usize) -> [f64; 3] {
        [self.data[3 * p], self.data[3 * p + 1], self.data[3 * p + 2]]
    }
}

/// Mean squared error over all values.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    if (a.width, a.height, a.channels) != (b.width, b.height, b.channels) {
        return Err(Error::ShapeMismatch("images differ in size".into()));
    }
    let n = a.data.len().max(1) as f64;
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
}

/// Peak signal-to-noise ratio for values in `[0, 1]`, capped at 99 dB.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 1e-9_f64.powi(2) {
        return 99.0;
    }
    (-10.0 * mse.log10()).min(99.0)
}

/// Writes an RGB or grayscale image as 8-bit PNG (values clamped to `[0, 1]`).
pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    let bytes: Vec<u8> = img
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let color = match img.channels {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        4 => image::ExtendedColorType::Rgba8,
        c => {
            return Err(Error::InvalidArgument(format!(
                "cannot write {c}-channel PNG"
            )))
        }
    };
    image::save_buffer(path, &bytes, img.width as u32, img.height as u32, color).map_err(|source| {
        Error::Image {
            path: path.into(),
            source,
        }
    })
}

/// Reads a PNG as RGB in `[0, 1]`, compositing any alpha channel over
/// `background`.
pub fn read_png_rgb(path: &Path, background: [f64; 3]) -> Result<Image> {
    let dynimg = image::open(path).map_err(|source| Error::Image {
        path: path.into(),
        source,
    })?;
    let rgba = dynimg.to_rgba8();
    let (w, h) = rgba.dimensions();
    let mut data = Vec::with_capacity((w * h * 3) as usize);
    for px in rgba.pixels() {
        let a = px[3] as f64 / 255.0;
        for k in 0..3 {
            data.push(px[k] as f64 / 255.0 * a + background[k] * (1.0 - a));
        }
    }
    Image::from_data(w as usize, h as usize, 3, data)
}

pub fn write_vxim(path: &Path, img: &Image) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + 4 * img.data.len());
    buf.extend_from_slice(VXIM_MAGIC);
    for v in [img.height, img.width, img.channels] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for &v in &img.data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_vxim(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::Format {
        path: path.into(),
        reason: reason.into(),
    };
    if bytes.len() < 16 || &bytes[..4] != VXIM_MAGIC {
        return Err(bad("missing VXIM header"));
    }
    let u = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (h, w, c) = (u(4), u(8), u(12));
    let n = h
        .checked_mul(w)
        .and_then(|x| x.checked_mul(c))
        .ok_or_else(|| bad("dimensions overflow"))?;
    if bytes.len() != 16 + 4 * n {
        return Err(bad("payload size does not match header"));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Image::from_data(w, h, c, data)
}

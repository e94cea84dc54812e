use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Single-channel image with pixel values in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} image cannot hold {} pixels",
                pixels.len()
            )));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Data(format!("pixel value {p} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f32) -> Result<Self> {
        let pixels = (0..height * width)
            .map(|i| f(i / width, i % width).clamp(0.0, 1.0))
            .collect();
        Self::new(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.width + col]
    }

    /// Lossless counter-clockwise rotation by `quarter_turns × 90°`.
    pub fn rotate90(&self, quarter_turns: i32) -> GrayImage {
        let (h, w) = (self.height, self.width);
        match quarter_turns.rem_euclid(4) {
            0 => self.clone(),
            1 => Self {
                height: w,
                width: h,
                pixels: (0..w * h)
                    .map(|i| {
                        let (r, c) = (i / h, i % h);
                        self.get(c, w - 1 - r)
                    })
                    .collect(),
            },
            2 => Self {
                height: h,
                width: w,
                pixels: self.pixels.iter().rev().copied().collect(),
            },
            _ => Self {
                height: w,
                width: h,
                pixels: (0..w * h)
                    .map(|i| {
                        let (r, c) = (i / h, i % h);
                        self.get(h - 1 - c, r)
                    })
                    .collect(),
            },
        }
    }

    /// Bilinear resize to `size × size`.
    pub fn resized(&self, size: usize) -> GrayImage {
        if self.height == size && self.width == size {
            return self.clone();
        }
        let buf: ImageBuffer<Luma<f32>, Vec<f32>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
                .expect("buffer length matches dimensions");
        let out = image::imageops::resize(
            &buf,
            size as u32,
            size as u32,
            image::imageops::FilterType::Triangle,
        );
        Self {
            height: size,
            width: size,
            pixels: out
                .into_raw()
                .into_iter()
                .map(|v| v.clamp(0.0, 1.0))
                .collect(),
        }
    }

    /// `[1, 1, H, W]` tensor view.
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(&[1, 1, self.height, self.width], self.pixels.clone())
            .expect("dimensions are positive")
    }

    /// 8-bit grayscale PNG encoding, rounding to the nearest level.
    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let raw: Vec<u8> = self
            .pixels
            .iter()
            .map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, raw)
                .expect("buffer length matches dimensions");
        let mut out = Cursor::new(Vec::new());
        buf.write_to(&mut out, ImageFormat::Png)
            .map_err(|e| Error::Data(format!("png encoding failed: {e}")))?;
        Ok(out.into_inner())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = self.to_png_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

fn luminance(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Decodes PNG bytes to a normalized grayscale image. RGB uses the
/// `0.299 R + 0.587 G + 0.114 B` luminosity weights; transparent pixels are
/// composited over white; every channel is divided by 255.
pub fn decode_png(bytes: &[u8], origin: &Path) -> Result<GrayImage> {
    let img =
        image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|e| Error::Image {
            path: origin.to_path_buf(),
            reason: e.to_string(),
        })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels: Vec<f32> = match img {
        DynamicImage::ImageLuma8(buf) => buf
            .into_raw()
            .into_iter()
            .map(|v| v as f32 / 255.0)
            .collect(),
        DynamicImage::ImageRgb8(buf) => buf
            .pixels()
            .map(|p| {
                let [r, g, b] = p.0.map(u32::from);
                (299 * r + 587 * g + 114 * b) as f32 / 255_000.0
            })
            .collect(),
        other => other
            .to_rgba8()
            .pixels()
            .map(|p| {
                let [r, g, b, a] = p.0.map(f64::from);
                let over_white = |c: f64| (a * c + (255.0 - a) * 255.0) / 255.0;
                (luminance(over_white(r), over_white(g), over_white(b)) / 255.0).clamp(0.0, 1.0)
                    as f32
            })
            .collect(),
    };
    GrayImage::new(h, w, pixels)
}

/// Reads and decodes a PNG file. See [`decode_png`].
pub fn load_image(path: &Path) -> Result<GrayImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes, path)
}

//! Dense float images shared by the renderers, the guidance priors, and the
//! exporters. Storage is row-major, channels interleaved.

use std::path::Path;

use crate::error::{Error, Result};
use crate::math::Vec3;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn filled(width: usize, height: usize, value: Vec3) -> Self {
        let mut img = Self::zeros(width, height, 3);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&value.to_array());
        }
        img
    }

    pub fn from_rgb(width: usize, height: usize, pixels: &[Vec3]) -> Self {
        assert_eq!(pixels.len(), width * height);
        let mut data = Vec::with_capacity(pixels.len() * 3);
        for p in pixels {
            data.extend_from_slice(&p.to_array());
        }
        Self {
            width,
            height,
            channels: 3,
            data,
        }
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn rgb(&self, x: usize, y: usize) -> Vec3 {
        debug_assert_eq!(self.channels, 3);
        let i = (y * self.width + x) * 3;
        Vec3::new(self.data[i], self.data[i + 1], self.data[i + 2])
    }

    pub fn set_rgb(&mut self, x: usize, y: usize, v: Vec3) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&v.to_array());
    }

    pub fn to_rgb_pixels(&self) -> Vec<Vec3> {
        assert_eq!(self.channels, 3);
        self.data
            .chunks_exact(3)
            .map(|c| Vec3::new(c[0], c[1], c[2]))
            .collect()
    }

    /// Box-filter downsample by an integer factor.
    pub fn downsample(&self, factor: usize) -> Image {
        assert!(factor > 0 && self.width % factor == 0 && self.height % factor == 0);
        let (w, h) = (self.width / factor, self.height / factor);
        let mut out = Image::zeros(w, h, self.channels);
        let norm = 1.0 / (factor * factor) as f64;
        for y in 0..self.height {
            for x in 0..self.width {
                let src = (y * self.width + x) * self.channels;
                let dst = ((y / factor) * w + x / factor) * self.channels;
                for c in 0..self.channels {
                    out.data[dst + c] += self.data[src + c] * norm;
                }
            }
        }
        out
    }

    pub fn mse(&self, other: &Image) -> f64 {
        assert!(self.same_shape(other), "image shapes differ");
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        sum / self.data.len() as f64
    }

    pub fn mean_abs_diff(&self, other: &Image) -> f64 {
        assert!(self.same_shape(other), "image shapes differ");
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum();
        sum / self.data.len() as f64
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        assert!(self.same_shape(other), "image shapes differ");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Peak signal-to-noise ratio for images with unit dynamic range.
    pub fn psnr(&self, other: &Image) -> f64 {
        let mse = self.mse(other);
        if mse == 0.0 {
            f64::INFINITY
        } else {
            -10.0 * mse.log10()
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        if self.channels != 3 {
            return Err(Error::Image(format!(
                "png export needs 3 channels, got {}",
                self.channels
            )));
        }
        let bytes: Vec<u8> = self.data.iter().map(|&v| encode_srgb8(v)).collect();
        image::save_buffer(
            path,
            &bytes,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        let img = image::open(path)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.as_raw().iter().map(|&b| b as f64 / 255.0).collect();
        Ok(Image {
            width: w as usize,
            height: h as usize,
            channels: 3,
            data,
        })
    }
}

/// Values are treated as already display-encoded; the exporter only clamps
/// and quantizes to 8 bits.
pub fn encode_srgb8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

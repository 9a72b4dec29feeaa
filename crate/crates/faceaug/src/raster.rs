//! In-memory raster images (grayscale or RGB, f32 samples in [0, 1]) and
//! PNG read/write. Render masks are stored as a PNG alpha channel.

use image::{DynamicImage, ImageBuffer, Luma, LumaA, Rgb, Rgba};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    BadChannels(usize),
    #[error("data length {got} does not match {width}x{height}x{channels}")]
    BadLength {
        got: usize,
        width: u32,
        height: u32,
        channels: usize,
    },
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Row-major raster with 1 or 3 channels; samples are f32 in [0, 1]
/// (8-bit images are scaled by 1/255 on load).
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    pub width: u32,
    pub height: u32,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl RasterImage {
    pub fn new(width: u32, height: u32, channels: usize, data: Vec<f32>) -> Result<Self, RasterError> {
        if channels != 1 && channels != 3 {
            return Err(RasterError::BadChannels(channels));
        }
        let want = (width as usize) * (height as usize) * channels;
        if data.len() != want {
            return Err(RasterError::BadLength {
                got: data.len(),
                width,
                height,
                channels,
            });
        }
        if let Some(i) = data.iter().position(|s| !s.is_finite()) {
            return Err(RasterError::NonFinite(i));
        }
        Ok(RasterImage {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn zeros(width: u32, height: u32, channels: usize) -> Self {
        RasterImage {
            width,
            height,
            channels,
            data: vec![0.0; (width as usize) * (height as usize) * channels],
        }
    }

    /// Build from a per-pixel function returning `channels` samples.
    pub fn from_fn<F: FnMut(u32, u32) -> Vec<f32>>(
        width: u32,
        height: u32,
        channels: usize,
        mut f: F,
    ) -> Self {
        let mut data = Vec::with_capacity((width as usize) * (height as usize) * channels);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(x, y));
            }
        }
        RasterImage {
            width,
            height,
            channels,
            data,
        }
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32) -> usize {
        ((y as usize) * (self.width as usize) + (x as usize)) * self.channels
    }

    /// Channel samples at a pixel.
    pub fn pixel(&self, x: u32, y: u32) -> &[f32] {
        let i = self.index(x, y);
        &self.data[i..i + self.channels]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, samples: &[f32]) {
        let i = self.index(x, y);
        self.data[i..i + self.channels].copy_from_slice(samples);
    }

    /// Bilinear sample at floating-point coordinates; clamped at borders.
    pub fn sample_bilinear(&self, u: f64, v: f64) -> Vec<f32> {
        let u = u.clamp(0.0, (self.width - 1) as f64);
        let v = v.clamp(0.0, (self.height - 1) as f64);
        let x0 = u.floor() as u32;
        let y0 = v.floor() as u32;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = (u - x0 as f64) as f32;
        let fy = (v - y0 as f64) as f32;
        let mut out = vec![0.0; self.channels];
        let (p00, p10, p01, p11) = (
            self.pixel(x0, y0),
            self.pixel(x1, y0),
            self.pixel(x0, y1),
            self.pixel(x1, y1),
        );
        for c in 0..self.channels {
            let top = p00[c] * (1.0 - fx) + p10[c] * fx;
            let bot = p01[c] * (1.0 - fx) + p11[c] * fx;
            out[c] = top * (1.0 - fy) + bot * fy;
        }
        out
    }

    /// Mean over channels at a pixel (grayscale view).
    pub fn luma(&self, x: u32, y: u32) -> f32 {
        let p = self.pixel(x, y);
        p.iter().sum::<f32>() / p.len() as f32
    }

    /// Convert to single-channel by averaging.
    pub fn to_gray(&self) -> RasterImage {
        if self.channels == 1 {
            return self.clone();
        }
        RasterImage::from_fn(self.width, self.height, 1, |x, y| vec![self.luma(x, y)])
    }

    /// Bilinear resize.
    pub fn resize(&self, width: u32, height: u32) -> RasterImage {
        RasterImage::from_fn(width, height, self.channels, |x, y| {
            let u = (x as f64 + 0.5) / width as f64 * self.width as f64 - 0.5;
            let v = (y as f64 + 0.5) / height as f64 * self.height as f64 - 0.5;
            self.sample_bilinear(u, v)
        })
    }

    /// Mean absolute error against another image of identical layout,
    /// optionally restricted to a pixel mask.
    pub fn mae(&self, other: &RasterImage, mask: Option<&[bool]>) -> f64 {
        assert_eq!(self.width, other.width);
        assert_eq!(self.height, other.height);
        assert_eq!(self.channels, other.channels);
        let mut sum = 0.0f64;
        let mut count = 0usize;
        let npix = (self.width as usize) * (self.height as usize);
        for p in 0..npix {
            if let Some(m) = mask {
                if !m[p] {
                    continue;
                }
            }
            for c in 0..self.channels {
                let i = p * self.channels + c;
                sum += (self.data[i] - other.data[i]).abs() as f64;
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }

    fn to_u8(v: f32) -> u8 {
        (v.clamp(0.0, 1.0) * 255.0).round() as u8
    }

    /// Write as an 8-bit PNG (gray or RGB).
    pub fn save_png(&self, path: &Path) -> Result<(), RasterError> {
        match self.channels {
            1 => {
                let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
                    ImageBuffer::from_fn(self.width, self.height, |x, y| {
                        Luma([Self::to_u8(self.pixel(x, y)[0])])
                    });
                buf.save(path)?;
            }
            3 => {
                let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
                    ImageBuffer::from_fn(self.width, self.height, |x, y| {
                        let p = self.pixel(x, y);
                        Rgb([Self::to_u8(p[0]), Self::to_u8(p[1]), Self::to_u8(p[2])])
                    });
                buf.save(path)?;
            }
            c => return Err(RasterError::BadChannels(c)),
        }
        Ok(())
    }

    /// Write with a boolean mask in the alpha channel.
    pub fn save_png_with_mask(&self, path: &Path, mask: &[bool]) -> Result<(), RasterError> {
        match self.channels {
            1 => {
                let buf: ImageBuffer<LumaA<u8>, Vec<u8>> =
                    ImageBuffer::from_fn(self.width, self.height, |x, y| {
                        let a = if mask[(y * self.width + x) as usize] { 255 } else { 0 };
                        LumaA([Self::to_u8(self.pixel(x, y)[0]), a])
                    });
                buf.save(path)?;
            }
            3 => {
                let buf: ImageBuffer<Rgba<u8>, Vec<u8>> =
                    ImageBuffer::from_fn(self.width, self.height, |x, y| {
                        let p = self.pixel(x, y);
                        let a = if mask[(y * self.width + x) as usize] { 255 } else { 0 };
                        Rgba([Self::to_u8(p[0]), Self::to_u8(p[1]), Self::to_u8(p[2]), a])
                    });
                buf.save(path)?;
            }
            c => return Err(RasterError::BadChannels(c)),
        }
        Ok(())
    }

    /// Read a PNG; alpha, if present, is dropped. 16-bit inputs are scaled.
    pub fn load_png(path: &Path) -> Result<RasterImage, RasterError> {
        let img = image::open(path)?;
        Ok(Self::from_dynamic(&img))
    }

    pub fn from_dynamic(img: &DynamicImage) -> RasterImage {
        match img {
            DynamicImage::ImageLuma8(buf) => RasterImage::from_fn(buf.width(), buf.height(), 1, |x, y| {
                vec![buf.get_pixel(x, y)[0] as f32 / 255.0]
            }),
            DynamicImage::ImageLumaA8(buf) => RasterImage::from_fn(buf.width(), buf.height(), 1, |x, y| {
                vec![buf.get_pixel(x, y)[0] as f32 / 255.0]
            }),
            other => {
                let rgb = other.to_rgb8();
                RasterImage::from_fn(rgb.width(), rgb.height(), 3, |x, y| {
                    let p = rgb.get_pixel(x, y);
                    vec![
                        p[0] as f32 / 255.0,
                        p[1] as f32 / 255.0,
                        p[2] as f32 / 255.0,
                    ]
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_gray() {
        let img = RasterImage::from_fn(8, 6, 1, |x, y| vec![((x + y) % 7) as f32 / 6.0]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        img.save_png(&path).unwrap();
        let back = RasterImage::load_png(&path).unwrap();
        assert_eq!(back.channels, 1);
        assert!(img.mae(&back, None) < 1.0 / 255.0);
    }

    #[test]
    fn png_round_trip_rgb_with_mask() {
        let img = RasterImage::from_fn(5, 4, 3, |x, y| {
            vec![x as f32 / 4.0, y as f32 / 3.0, 0.5]
        });
        let mask: Vec<bool> = (0..20).map(|i| i % 2 == 0).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.png");
        img.save_png_with_mask(&path, &mask).unwrap();
        // Alpha is dropped on load; color content survives.
        let back = RasterImage::load_png(&path).unwrap();
        assert_eq!(back.channels, 3);
        assert!(img.mae(&back, None) < 1.0 / 255.0);
    }

    #[test]
    fn bilinear_sample_center_and_midpoint() {
        let img = RasterImage::new(2, 1, 1, vec![0.0, 1.0]).unwrap();
        assert!((img.sample_bilinear(0.5, 0.0)[0] - 0.5).abs() < 1e-6);
        assert!((img.sample_bilinear(0.0, 0.0)[0] - 0.0).abs() < 1e-6);
    }

    #[test]
    fn bad_length_rejected() {
        assert!(RasterImage::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(RasterImage::new(2, 2, 2, vec![0.0; 8]).is_err());
    }
}

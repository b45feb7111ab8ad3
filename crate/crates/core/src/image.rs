//! Floating-point images (row-major, interleaved channels) and 8-bit PNG IO.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn ensure_same_shape(&self, other: &Image) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// One channel as its own image.
    pub fn channel(&self, c: usize) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.iter().skip(c).step_by(self.channels).copied().collect(),
        }
    }

    /// Multiplies every channel of each pixel by `mask[pixel]`.
    pub fn masked(&self, mask: &[bool]) -> Image {
        let mut out = self.clone();
        for (p, &m) in mask.iter().enumerate() {
            if !m {
                out.data[p * self.channels..(p + 1) * self.channels].fill(0.0);
            }
        }
        out
    }

    pub fn to_rgb8(&self) -> RgbImage {
        assert_eq!(self.channels, 3);
        ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
            let o = (y as usize * self.width + x as usize) * 3;
            Rgb([quantize(self.data[o]), quantize(self.data[o + 1]), quantize(self.data[o + 2])])
        })
    }

    pub fn to_gray8(&self) -> GrayImage {
        assert_eq!(self.channels, 1);
        ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([quantize(self.data[y as usize * self.width + x as usize])])
        })
    }

    /// Writes 3-channel images as RGB and 1-channel images as grayscale.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let res = match self.channels {
            3 => self.to_rgb8().save(path),
            1 => self.to_gray8().save(path),
            c => {
                return Err(Error::DimensionMismatch(format!(
                    "cannot write a {c}-channel image"
                )))
            }
        };
        res.map_err(|source| Error::Image {
            path: path.to_owned(),
            source,
        })
    }

    pub fn load_rgb(path: &Path) -> Result<Image> {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_owned(),
                source,
            })?
            .to_rgb8();
        let data = img.as_raw().iter().map(|v| *v as f64 / 255.0).collect();
        Image::from_data(img.width() as usize, img.height() as usize, 3, data)
    }

    pub fn load_gray(path: &Path) -> Result<Image> {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_owned(),
                source,
            })?
            .to_luma8();
        let data = img.as_raw().iter().map(|v| *v as f64 / 255.0).collect();
        Image::from_data(img.width() as usize, img.height() as usize, 1, data)
    }
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary mask from an 8-bit grayscale image, thresholded at 128.
pub fn load_mask(path: &Path) -> Result<Vec<bool>> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_owned(),
            source,
        })?
        .to_luma8();
    Ok(img.as_raw().iter().map(|v| *v >= 128).collect())
}

pub fn save_mask(mask: &[bool], width: usize, height: usize, path: &Path) -> Result<()> {
    let img: GrayImage = ImageBuffer::from_fn(width as u32, height as u32, |x, y| {
        Luma([if mask[y as usize * width + x as usize] { 255 } else { 0 }])
    });
    img.save(path).map_err(|source| Error::Image {
        path: path.to_owned(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_is_exact_on_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f64> = (0..4 * 3 * 3).map(|k| (k * 7 % 256) as f64 / 255.0).collect();
        let img = Image::from_data(4, 3, 3, data).unwrap();
        let p = dir.path().join("a.png");
        img.save_png(&p).unwrap();
        assert_eq!(Image::load_rgb(&p).unwrap(), img);

        let mask = vec![true, false, false, true, true, false];
        let mp = dir.path().join("m.png");
        save_mask(&mask, 3, 2, &mp).unwrap();
        assert_eq!(load_mask(&mp).unwrap(), mask);
    }

    #[test]
    fn shape_checks() {
        assert!(Image::from_data(2, 2, 3, vec![0.0; 11]).is_err());
        let a = Image::new(2, 2, 3);
        assert!(a.ensure_same_shape(&Image::new(2, 3, 3)).is_err());
        assert_eq!(a.channel(1).data.len(), 4);
    }
}

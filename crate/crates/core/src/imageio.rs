//! Interleaved float images and the file formats at the edges of the pipeline.
//! Everything inside is linear light; sRGB appears only when reading or
//! writing 8-bit files.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb, Rgb32FImage, RgbImage};

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
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::Shape {
                what: "image data",
                expected: width * height * channels,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn pixel(&self, p: usize) -> &[f64] {
        &self.data[p * self.channels..(p + 1) * self.channels]
    }

    pub fn pixel_mut(&mut self, p: usize) -> &mut [f64] {
        &mut self.data[p * self.channels..(p + 1) * self.channels]
    }

    pub fn same_shape(&self, other: &Image) -> Result<()> {
        if (self.width, self.height, self.channels) != (other.width, other.height, other.channels) {
            return Err(Error::Config(format!(
                "image size mismatch: {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )));
        }
        Ok(())
    }

    /// Copy of channel `c` as a one-channel image.
    pub fn channel(&self, c: usize) -> Image {
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    /// Clamped to `[0, 1]` and sRGB-encoded, the space image metrics are reported in.
    pub fn to_display(&self) -> Image {
        self.map(|v| linear_to_srgb(v.clamp(0.0, 1.0)))
    }

    /// Quantizes through f32, the precision of float image files.
    pub fn quantize_f32(&self) -> Image {
        self.map(|v| v as f32 as f64)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.0031308 {
        c * 12.92
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn is_float_format(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("exr" | "hdr")
    )
}

fn open(path: &Path) -> Result<DynamicImage> {
    image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::image(path, e))
}

/// Reads an RGB image as linear light. Float formats are taken as linear,
/// 8/16-bit formats as sRGB.
pub fn read_rgb(path: &Path) -> Result<Image> {
    let img = open(path)?;
    let srgb = !is_float_format(path);
    let buf = img.to_rgb32f();
    let (w, h) = buf.dimensions();
    let data = buf
        .into_raw()
        .into_iter()
        .map(|v| if srgb { srgb_to_linear(v as f64) } else { v as f64 })
        .collect();
    Image::from_data(w as usize, h as usize, 3, data)
}

/// Reads a mask in `[0, 1]`: the alpha channel when the file has one, else luminance.
pub fn read_mask(path: &Path) -> Result<Image> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = if img.color().has_alpha() {
        img.to_rgba32f().pixels().map(|p| p[3] as f64).collect()
    } else {
        img.to_luma32f().into_raw().into_iter().map(|v| v as f64).collect()
    };
    Image::from_data(w, h, 1, data)
}

fn rgb_of(img: &Image) -> impl Fn(usize) -> [f64; 3] + '_ {
    move |p| match img.channels {
        1 => [img.data[p]; 3],
        _ => [img.data[p * img.channels], img.data[p * img.channels + 1], img.data[p * img.channels + 2]],
    }
}

/// Writes a linear float RGB image (EXR or HDR by extension).
pub fn write_float(path: &Path, img: &Image) -> Result<()> {
    let px = rgb_of(img);
    let buf: Rgb32FImage = ImageBuffer::from_fn(img.width as u32, img.height as u32, |x, y| {
        let c = px(y as usize * img.width + x as usize);
        Rgb([c[0] as f32, c[1] as f32, c[2] as f32])
    });
    buf.save(path).map_err(|e| Error::image(path, e))
}

/// 8-bit RGB with the sRGB curve applied.
pub fn encode_srgb8(img: &Image) -> RgbImage {
    let px = rgb_of(img);
    ImageBuffer::from_fn(img.width as u32, img.height as u32, |x, y| {
        let c = px(y as usize * img.width + x as usize);
        Rgb(c.map(|v| to_u8(linear_to_srgb(v.clamp(0.0, 1.0)))))
    })
}

/// 8-bit grayscale of channel 0 without any transfer curve.
pub fn encode_gray8(img: &Image) -> GrayImage {
    ImageBuffer::from_fn(img.width as u32, img.height as u32, |x, y| {
        Luma([to_u8(img.data[(y as usize * img.width + x as usize) * img.channels])])
    })
}

/// Float formats keep linear values; anything else is written as 8-bit sRGB
/// (or raw grayscale for one-channel images).
pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    if is_float_format(path) {
        return write_float(path, img);
    }
    let res = if img.channels == 1 {
        encode_gray8(img).save(path)
    } else {
        encode_srgb8(img).save(path)
    };
    res.map_err(|e| Error::image(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn srgb_round_trip_within_one_step() {
        for i in 0..=255u8 {
            let v = i as f64 / 255.0;
            let back = linear_to_srgb(srgb_to_linear(v));
            assert!((back - v).abs() < 1.0 / 255.0);
            assert_eq!(to_u8(back), i);
        }
    }

    #[test]
    fn exr_round_trip_is_f32_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.exr");
        let img = Image::from_data(3, 2, 3, (0..18).map(|i| i as f64 * 0.137 + 1e-3).collect()).unwrap();
        write_image(&path, &img).unwrap();
        let back = read_rgb(&path).unwrap();
        assert_eq!(back, img.quantize_f32());
    }

    #[test]
    fn png_mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let img = Image::from_data(2, 2, 1, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        write_image(&path, &img).unwrap();
        assert_eq!(read_mask(&path).unwrap(), img);
    }

    #[test]
    fn missing_file_names_path() {
        let err = read_rgb(Path::new("/nonexistent/x.png")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.png"));
    }
}

use std::io::Cursor;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ImageEncoder, ImageFormat, ImageReader};

use crate::error::{Error, Result};
use crate::nn::{self, Tensor};

/// 8-bit gray or RGB pixels, row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if !(channels == 1 || channels == 3) {
            return Err(Error::Image(format!("{channels} channels, expected 1 or 3")));
        }
        if width == 0 || height == 0 || data.len() != width * height * channels {
            return Err(Error::Image(format!(
                "{width}x{height}x{channels} image with {} bytes",
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

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let o = (y * self.width + x) * self.channels;
        &self.data[o..o + self.channels]
    }

    /// Gray images replicated into three channels.
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Image {
            channels: 3,
            data,
            ..*self
        }
    }

    /// `1 x H x W x C` tensor with values divided by 255.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.data.iter().map(|&v| v as f32 / 255.0).collect();
        Tensor::new([1, self.height, self.width, self.channels], data).expect("length checked at construction")
    }

    /// Inverse of [`Image::to_tensor`]: scales by 255, rounds and clamps.
    pub fn from_tensor(t: &Tensor) -> Result<Image> {
        let [b, h, w, c] = t.shape();
        if b != 1 {
            return Err(Error::Image(format!("tensor batch {b}, expected 1")));
        }
        let data = t
            .data()
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        Image::new(w, h, c, data)
    }

    fn from_dynamic(img: DynamicImage) -> Result<Image> {
        let (w, h) = (img.width() as usize, img.height() as usize);
        match img {
            DynamicImage::ImageLuma8(g) => Image::new(w, h, 1, g.into_raw()),
            DynamicImage::ImageRgb8(c) => Image::new(w, h, 3, c.into_raw()),
            other if other.color().has_color() => Image::new(w, h, 3, other.to_rgb8().into_raw()),
            other => Image::new(w, h, 1, other.to_luma8().into_raw()),
        }
    }
}

fn image_err(e: image::ImageError) -> Error {
    Error::Image(e.to_string())
}

/// Decodes a binary pixmap (P5 gray, P6 color). PNG is accepted too.
pub fn decode_image(bytes: &[u8]) -> Result<Image> {
    let reader = ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| Error::Image(e.to_string()))?;
    match reader.format() {
        Some(ImageFormat::Pnm | ImageFormat::Png) => {}
        _ => return Err(Error::Image("unrecognized image magic".into())),
    }
    if bytes.starts_with(b"P") && !(bytes.starts_with(b"P5") || bytes.starts_with(b"P6")) {
        return Err(Error::Image(format!(
            "pixmap type {} not supported, expected P5 or P6",
            String::from_utf8_lossy(&bytes[..2.min(bytes.len())])
        )));
    }
    Image::from_dynamic(reader.decode().map_err(image_err)?)
}

/// P5 for gray images, P6 for color.
pub fn encode_pnm(img: &Image) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let (subtype, color) = match img.channels {
        1 => (PnmSubtype::Graymap(SampleEncoding::Binary), image::ExtendedColorType::L8),
        _ => (PnmSubtype::Pixmap(SampleEncoding::Binary), image::ExtendedColorType::Rgb8),
    };
    PnmEncoder::new(&mut out)
        .with_subtype(subtype)
        .write_image(&img.data, img.width as u32, img.height as u32, color)
        .map_err(image_err)?;
    Ok(out)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    decode_image(&std::fs::read(path)?)
}

pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_pnm(img)?)?;
    Ok(())
}

/// Bilinear resize by `factor` (half-pixel centers), extents rounded to the
/// nearest integer and at least 1.
pub fn resize_bilinear(img: &Image, factor: f64) -> Result<Image> {
    let t = Tensor::new(
        [1, img.height, img.width, img.channels],
        img.data.iter().map(|&v| v as f32).collect(),
    )?;
    let r = nn::resize_by(&t, factor)?;
    let [_, h, w, c] = r.shape();
    let data = r.data().iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect();
    Image::new(w, h, c, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_p6_exact() {
        let mut bytes = b"P6\n# comment\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 255, 0, 0, 0, 255, 10, 20, 30]);
        let img = decode_image(&bytes).unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (2, 2, 3));
        assert_eq!(img.pixel(0, 0), &[255, 0, 0]);
        assert_eq!(img.pixel(1, 1), &[10, 20, 30]);
        let t = img.to_tensor();
        assert_eq!(t.get(0, 0, 0, 0), 1.0);
        assert_eq!(t.get(0, 1, 1, 1), 20.0 / 255.0);
    }

    #[test]
    fn decode_p5_gray() {
        let mut bytes = b"P5 3 1 255\n".to_vec();
        bytes.extend_from_slice(&[0, 128, 255]);
        let img = decode_image(&bytes).unwrap();
        assert_eq!(img.channels(), 1);
        assert_eq!(img.data(), &[0, 128, 255]);
        assert_eq!(img.to_rgb().pixel(1, 0), &[128, 128, 128]);
    }

    #[test]
    fn bad_inputs() {
        assert!(decode_image(b"XX 2 2 255\n").is_err());
        assert!(decode_image(b"P3\n1 1\n255\n0 0 0\n").is_err());
        assert!(decode_image(b"P6\n2 2\n255\n\x00\x00").is_err());
        assert!(decode_image(b"P6\n0 2\n255\n").is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for c in [1, 3] {
            let data = (0..5 * 4 * c).map(|i| (i * 37 % 256) as u8).collect();
            let img = Image::new(5, 4, c, data).unwrap();
            let p = dir.path().join(format!("i{c}.pnm"));
            save_image(&img, &p).unwrap();
            assert_eq!(load_image(&p).unwrap(), img);
        }
    }

    #[test]
    fn resize_constant_and_identity() {
        let img = Image::new(7, 5, 3, vec![93; 105]).unwrap();
        for f in [0.5, 1.0, 1.7, 2.0] {
            let r = resize_bilinear(&img, f).unwrap();
            assert!(r.data().iter().all(|&v| v == 93));
        }
        let img = Image::new(3, 2, 1, vec![1, 50, 200, 7, 9, 255]).unwrap();
        assert_eq!(resize_bilinear(&img, 1.0).unwrap(), img);
        assert_eq!(resize_bilinear(&img, 2.0).unwrap().width(), 6);
    }

    #[test]
    fn tensor_factor_two_is_upsample() {
        let t = Tensor::from_fn([1, 5, 3, 2], |[_, y, x, c]| (y * 13 + x * 7 + c) as f32 / 9.0);
        assert_eq!(nn::resize_by(&t, 2.0).unwrap(), nn::upsample2x_bilinear(&t).unwrap());
    }
}

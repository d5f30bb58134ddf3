//! Raster container, PNG/JPEG codecs and the geometric primitives the
//! preprocessing stage is built from.
//!
//! Everything here is a pure function of its inputs. JPEG output uses
//! baseline sequential coding with the standard Annex K tables scaled by
//! quality and 4:2:0 chroma subsampling, so recompression (and therefore
//! error level analysis) is reproducible byte for byte.

use jpeg_encoder::{ColorType, Encoder, SamplingFactor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channels {
    Gray = 1,
    Rgb = 3,
}

impl Channels {
    pub fn count(self) -> usize {
        self as usize
    }
}

/// Row-major interleaved 8-bit raster.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    channels: Channels,
    data: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32, channels: Channels, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroDimension { width, height });
        }
        let expected = width as usize * height as usize * channels.count();
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
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

    pub fn filled(width: u32, height: u32, channels: Channels, value: u8) -> Result<Self> {
        let len = width as usize * height as usize * channels.count();
        Self::new(width, height, channels, vec![value; len])
    }

    /// Builds an image by evaluating `f(x, y)` for every pixel; `f` returns
    /// one sample per channel.
    pub fn from_fn(
        width: u32,
        height: u32,
        channels: Channels,
        mut f: impl FnMut(u32, u32) -> [u8; 3],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width as usize * height as usize * channels.count());
        for y in 0..height {
            for x in 0..width {
                let px = f(x, y);
                data.extend_from_slice(&px[..channels.count()]);
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> Channels {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn is_gray(&self) -> bool {
        self.channels == Channels::Gray
    }

    /// Samples of the pixel at `(x, y)`.
    pub fn pixel(&self, x: u32, y: u32) -> &[u8] {
        let c = self.channels.count();
        let i = (y as usize * self.width as usize + x as usize) * c;
        &self.data[i..i + c]
    }

    fn pixel_mut(&mut self, x: u32, y: u32) -> &mut [u8] {
        let c = self.channels.count();
        let i = (y as usize * self.width as usize + x as usize) * c;
        &mut self.data[i..i + c]
    }

    /// Expands a grayscale buffer to three identical channels.
    pub fn to_rgb(&self) -> ImageBuffer {
        match self.channels {
            Channels::Rgb => self.clone(),
            Channels::Gray => {
                let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
                ImageBuffer {
                    width: self.width,
                    height: self.height,
                    channels: Channels::Rgb,
                    data,
                }
            }
        }
    }

    /// Plain (unpadded) crop of the half-open rectangle `[x0, x1) x [y0, y1)`.
    pub fn crop(&self, x0: u32, y0: u32, x1: u32, y1: u32) -> Result<ImageBuffer> {
        let x1 = x1.min(self.width);
        let y1 = y1.min(self.height);
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::EmptyIntersection);
        }
        let c = self.channels.count();
        let row_len = (x1 - x0) as usize * c;
        let mut data = Vec::with_capacity(row_len * (y1 - y0) as usize);
        for y in y0..y1 {
            let start = (y as usize * self.width as usize + x0 as usize) * c;
            data.extend_from_slice(&self.data[start..start + row_len]);
        }
        Ok(ImageBuffer {
            width: x1 - x0,
            height: y1 - y0,
            channels: self.channels,
            data,
        })
    }

    /// Mirror around the vertical axis.
    pub fn flip_horizontal(&self) -> ImageBuffer {
        let mut out = self.clone();
        let c = self.channels.count();
        let w = self.width as usize;
        for (src, dst) in self
            .data
            .chunks_exact(w * c)
            .zip(out.data.chunks_exact_mut(w * c))
        {
            for x in 0..w {
                dst[x * c..(x + 1) * c].copy_from_slice(&src[(w - 1 - x) * c..(w - x) * c]);
            }
        }
        out
    }

    /// Copies `patch` into `self` with its top-left corner at `(x, y)`,
    /// clipping anything that falls outside.
    pub fn paste(&mut self, patch: &ImageBuffer, x: u32, y: u32) {
        debug_assert_eq!(self.channels, patch.channels);
        for py in 0..patch.height {
            let ty = y + py;
            if ty >= self.height {
                break;
            }
            for px in 0..patch.width {
                let tx = x + px;
                if tx >= self.width {
                    break;
                }
                let src = patch.pixel(px, py).to_vec();
                self.pixel_mut(tx, ty).copy_from_slice(&src);
            }
        }
    }
}

/// Face bounding box in pixel coordinates. The offset may lie outside the
/// image; it is clamped when used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FaceBox {
    pub x: i64,
    pub y: i64,
    pub w: u32,
    pub h: u32,
}

impl FaceBox {
    pub fn new(x: i64, y: i64, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn full(img: &ImageBuffer) -> Self {
        Self::new(0, 0, img.width(), img.height())
    }
}

const PNG_MAGIC: &[u8] = b"\x89PNG\r\n\x1a\n";
const JPEG_MAGIC: &[u8] = &[0xFF, 0xD8, 0xFF];

/// Decodes a PNG or JPEG stream to RGB8. Grayscale sources are expanded to
/// three channels and alpha is dropped.
pub fn decode_image(bytes: &[u8]) -> Result<ImageBuffer> {
    let format = if bytes.starts_with(PNG_MAGIC) {
        image::ImageFormat::Png
    } else if bytes.starts_with(JPEG_MAGIC) {
        image::ImageFormat::Jpeg
    } else {
        return Err(match image::guess_format(bytes) {
            Ok(other) => Error::UnsupportedFormat(format!("{other:?}")),
            Err(_) => Error::MalformedImage("unrecognised signature".into()),
        });
    };
    let decoded = image::load_from_memory_with_format(bytes, format)
        .map_err(|e| Error::MalformedImage(e.to_string()))?;
    let rgb = decoded.into_rgb8();
    let (w, h) = rgb.dimensions();
    ImageBuffer::new(w, h, Channels::Rgb, rgb.into_raw())
}

/// Baseline JPEG at `quality` (1..=100). Grayscale input is written as a
/// single-component stream.
pub fn encode_jpeg(img: &ImageBuffer, quality: u32) -> Result<Vec<u8>> {
    if !(1..=100).contains(&quality) {
        return Err(Error::InvalidQuality(quality));
    }
    let (w, h) = (img.width(), img.height());
    if w > u16::MAX as u32 || h > u16::MAX as u32 {
        return Err(Error::InvalidConfig(format!(
            "{w}x{h} exceeds the JPEG size limit"
        )));
    }
    let mut out = Vec::new();
    let mut encoder = Encoder::new(&mut out, quality as u8);
    let color = match img.channels() {
        Channels::Gray => ColorType::Luma,
        Channels::Rgb => {
            encoder.set_sampling_factor(SamplingFactor::R_4_2_0);
            ColorType::Rgb
        }
    };
    encoder
        .encode(img.data(), w as u16, h as u16, color)
        .map_err(|e| Error::Internal(format!("jpeg encoder: {e}")))?;
    Ok(out)
}

/// Lossless PNG, used for writing intermediate rasters.
pub fn encode_png(img: &ImageBuffer) -> Result<Vec<u8>> {
    use image::ImageEncoder;
    let mut out = Vec::new();
    let color = match img.channels() {
        Channels::Gray => image::ExtendedColorType::L8,
        Channels::Rgb => image::ExtendedColorType::Rgb8,
    };
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(img.data(), img.width(), img.height(), color)
        .map_err(|e| Error::Internal(format!("png encoder: {e}")))?;
    Ok(out)
}

/// BT.601 luma, rounded to nearest. Grayscale input is returned unchanged.
pub fn to_grayscale(img: &ImageBuffer) -> ImageBuffer {
    if img.is_gray() {
        return img.clone();
    }
    let data = img
        .data()
        .chunks_exact(3)
        .map(|p| luma(p[0], p[1], p[2]))
        .collect();
    ImageBuffer {
        width: img.width(),
        height: img.height(),
        channels: Channels::Gray,
        data,
    }
}

#[inline]
pub(crate) fn luma(r: u8, g: u8, b: u8) -> u8 {
    let y = 0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b);
    y.round().clamp(0.0, 255.0) as u8
}

/// Bilinear resampling with half-pixel-centred sample positions and
/// edge clamping.
pub fn resize_bilinear(img: &ImageBuffer, out_w: u32, out_h: u32) -> Result<ImageBuffer> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::ZeroDimension {
            width: out_w,
            height: out_h,
        });
    }
    if out_w == img.width() && out_h == img.height() {
        return Ok(img.clone());
    }
    let xs = sample_taps(img.width(), out_w);
    let ys = sample_taps(img.height(), out_h);
    let c = img.channels().count();
    let w = img.width() as usize;
    let src = img.data();
    let mut data = Vec::with_capacity(out_w as usize * out_h as usize * c);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for ch in 0..c {
                let at = |x: usize, y: usize| f64::from(src[(y * w + x) * c + ch]);
                let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                data.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    ImageBuffer::new(out_w, out_h, img.channels(), data)
}

fn sample_taps(in_len: u32, out_len: u32) -> Vec<(usize, usize, f64)> {
    let scale = f64::from(in_len) / f64::from(out_len);
    let max = (in_len - 1) as f64;
    (0..out_len)
        .map(|o| {
            let s = ((f64::from(o) + 0.5) * scale - 0.5).clamp(0.0, max);
            let i0 = s.floor();
            let i1 = (i0 + 1.0).min(max);
            (i0 as usize, i1 as usize, s - i0)
        })
        .collect()
}

/// Crops `face` grown by `pad_fraction` of its size along each axis (half of
/// the growth on either side), rounding outward and clamping to the image.
pub fn crop_with_padding(img: &ImageBuffer, face: FaceBox, pad_fraction: f64) -> Result<ImageBuffer> {
    if !(pad_fraction >= 0.0 && pad_fraction.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "pad fraction {pad_fraction} must be a finite non-negative number"
        )));
    }
    let (x0, x1) = padded_span(face.x, face.w, pad_fraction, img.width());
    let (y0, y1) = padded_span(face.y, face.h, pad_fraction, img.height());
    if x0 >= x1 || y0 >= y1 {
        return Err(Error::EmptyIntersection);
    }
    img.crop(x0 as u32, y0 as u32, x1 as u32, y1 as u32)
}

fn padded_span(start: i64, len: u32, pad_fraction: f64, limit: u32) -> (i64, i64) {
    let half_pad = pad_fraction * f64::from(len) / 2.0;
    let lo = (start as f64 - half_pad).floor() as i64;
    let hi = (start as f64 + f64::from(len) + half_pad).ceil() as i64;
    (lo.clamp(0, i64::from(limit)), hi.clamp(0, i64::from(limit)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: u32, h: u32) -> ImageBuffer {
        ImageBuffer::from_fn(w, h, Channels::Rgb, |x, y| {
            [(x * 4) as u8, (y * 4) as u8, ((x + y) * 2) as u8]
        })
        .unwrap()
    }

    #[test]
    fn buffer_length_is_checked() {
        assert!(ImageBuffer::new(2, 2, Channels::Rgb, vec![0; 11]).is_err());
        assert!(ImageBuffer::new(0, 2, Channels::Gray, vec![]).is_err());
    }

    #[test]
    fn decodes_one_pixel_white_png() {
        let white = ImageBuffer::filled(1, 1, Channels::Rgb, 255).unwrap();
        let png = encode_png(&white).unwrap();
        let back = decode_image(&png).unwrap();
        assert_eq!((back.width(), back.height()), (1, 1));
        assert_eq!(back.data(), &[255, 255, 255]);
    }

    #[test]
    fn gray_png_is_expanded_to_rgb() {
        let g = ImageBuffer::new(2, 1, Channels::Gray, vec![10, 200]).unwrap();
        let back = decode_image(&encode_png(&g).unwrap()).unwrap();
        assert_eq!(back.data(), &[10, 10, 10, 200, 200, 200]);
    }

    #[test]
    fn garbage_is_malformed() {
        assert!(matches!(
            decode_image(&[1, 2, 3, 4]),
            Err(Error::MalformedImage(_))
        ));
        let mut truncated = encode_jpeg(&gradient(16, 16), 90).unwrap();
        truncated.truncate(20);
        assert!(matches!(
            decode_image(&truncated),
            Err(Error::MalformedImage(_))
        ));
    }

    #[test]
    fn other_formats_are_unsupported() {
        assert!(matches!(
            decode_image(b"GIF89a\x01\x00\x01\x00\x00\x00\x00;"),
            Err(Error::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn uniform_gray_survives_jpeg() {
        let img = ImageBuffer::filled(8, 8, Channels::Rgb, 128).unwrap();
        let back = decode_image(&encode_jpeg(&img, 90).unwrap()).unwrap();
        assert!(back.data().iter().all(|&v| v.abs_diff(128) <= 2));

        let big = ImageBuffer::filled(64, 64, Channels::Rgb, 128).unwrap();
        let back = decode_image(&encode_jpeg(&big, 95).unwrap()).unwrap();
        assert!(back.data().iter().all(|&v| v.abs_diff(128) <= 2));
    }

    #[test]
    fn jpeg_is_deterministic() {
        let img = gradient(40, 24);
        assert_eq!(encode_jpeg(&img, 75).unwrap(), encode_jpeg(&img, 75).unwrap());
    }

    #[test]
    fn jpeg_quality_is_validated() {
        let img = gradient(8, 8);
        assert!(matches!(encode_jpeg(&img, 0), Err(Error::InvalidQuality(0))));
        assert!(matches!(
            encode_jpeg(&img, 101),
            Err(Error::InvalidQuality(101))
        ));
    }

    #[test]
    fn q100_is_near_lossless_on_smooth_images() {
        let img = ImageBuffer::from_fn(64, 48, Channels::Rgb, |x, y| {
            [(60 + x) as u8, (80 + y) as u8, (100 + (x + y) / 2) as u8]
        })
        .unwrap();
        let back = decode_image(&encode_jpeg(&img, 100).unwrap()).unwrap();
        let worst = img
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| a.abs_diff(*b))
            .max()
            .unwrap();
        assert!(worst <= 4, "max deviation {worst}");
    }

    #[test]
    fn luma_values() {
        let red = ImageBuffer::new(1, 1, Channels::Rgb, vec![255, 0, 0]).unwrap();
        assert_eq!(to_grayscale(&red).data(), &[76]);
        let grey = ImageBuffer::new(1, 1, Channels::Rgb, vec![128, 128, 128]).unwrap();
        assert_eq!(to_grayscale(&grey).data(), &[128]);
        let g = to_grayscale(&gradient(9, 7));
        assert_eq!(to_grayscale(&g), g);
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = gradient(13, 9);
        assert_eq!(resize_bilinear(&img, 13, 9).unwrap(), img);
        let flat = ImageBuffer::filled(7, 5, Channels::Gray, 50).unwrap();
        let out = resize_bilinear(&flat, 19, 3).unwrap();
        assert!(out.data().iter().all(|&v| v == 50));
        assert!(matches!(
            resize_bilinear(&flat, 0, 3),
            Err(Error::ZeroDimension { .. })
        ));
    }

    #[test]
    fn resize_upsample_is_monotone() {
        let img = ImageBuffer::new(2, 1, Channels::Gray, vec![0, 255]).unwrap();
        let out = resize_bilinear(&img, 4, 1).unwrap();
        // positions -0.25, 0.25, 0.75, 1.25 clamp to 0, 0.25, 0.75, 1
        assert_eq!(out.data(), &[0, 64, 191, 255]);
        assert!(out.data().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn crop_padding_arithmetic() {
        let img = ImageBuffer::from_fn(100, 100, Channels::Gray, |x, y| {
            [(x + y) as u8, 0, 0]
        })
        .unwrap();
        let out = crop_with_padding(&img, FaceBox::new(25, 25, 50, 50), 0.5).unwrap();
        assert_eq!((out.width(), out.height()), (76, 76));
        assert_eq!(out.pixel(0, 0), &[24]);
        assert_eq!(out.pixel(75, 75), &[174]);

        assert_eq!(crop_with_padding(&img, FaceBox::full(&img), 0.0).unwrap(), img);
    }

    #[test]
    fn crop_outside_is_empty() {
        let img = ImageBuffer::filled(100, 100, Channels::Gray, 1).unwrap();
        assert!(matches!(
            crop_with_padding(&img, FaceBox::new(-10, -10, 5, 5), 0.0),
            Err(Error::EmptyIntersection)
        ));
        let clamped = crop_with_padding(&img, FaceBox::new(-10, -10, 15, 12), 0.0).unwrap();
        assert_eq!((clamped.width(), clamped.height()), (5, 2));
        assert!(matches!(
            crop_with_padding(&img, FaceBox::new(200, 0, 5, 5), 0.5),
            Err(Error::EmptyIntersection)
        ));
    }

    #[test]
    fn flip_is_an_involution() {
        let img = gradient(5, 3);
        assert_ne!(img.flip_horizontal(), img);
        assert_eq!(img.flip_horizontal().flip_horizontal(), img);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn any_image() -> impl Strategy<Value = ImageBuffer> {
            (1u32..24, 1u32..24, prop::bool::ANY).prop_flat_map(|(w, h, rgb)| {
                let ch = if rgb { Channels::Rgb } else { Channels::Gray };
                prop::collection::vec(any::<u8>(), (w * h) as usize * ch.count())
                    .prop_map(move |d| ImageBuffer::new(w, h, ch, d).unwrap())
            })
        }

        proptest! {
            #[test]
            fn grayscale_is_idempotent(img in any_image()) {
                let g = to_grayscale(&img);
                prop_assert_eq!(to_grayscale(&g), g);
            }

            #[test]
            fn resize_stays_within_input_range(img in any_image(), w in 1u32..40, h in 1u32..40) {
                let out = resize_bilinear(&img, w, h).unwrap();
                let lo = *img.data().iter().min().unwrap();
                let hi = *img.data().iter().max().unwrap();
                prop_assert!(out.data().iter().all(|&v| v >= lo && v <= hi));
            }

            #[test]
            fn padded_crop_never_exceeds_image(
                img in any_image(), x in -30i64..30, y in -30i64..30,
                w in 1u32..30, h in 1u32..30, pad in 0.0f64..2.0,
            ) {
                if let Ok(out) = crop_with_padding(&img, FaceBox::new(x, y, w, h), pad) {
                    prop_assert!(out.width() <= img.width() && out.height() <= img.height());
                }
            }

            #[test]
            fn zero_pad_is_plain_crop(img in any_image(), x in 0u32..24, y in 0u32..24, w in 1u32..24, h in 1u32..24) {
                let padded = crop_with_padding(&img, FaceBox::new(x as i64, y as i64, w, h), 0.0);
                let plain = img.crop(x, y, x + w, y + h);
                match (padded, plain) {
                    (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
                    (Err(_), Err(_)) => {}
                    _ => prop_assert!(false, "padded and plain crop disagree"),
                }
            }
        }
    }
}

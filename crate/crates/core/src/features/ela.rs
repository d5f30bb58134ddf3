use super::FeatureMap;
use crate::error::{Error, Result};
use crate::imageio::{self, ImageBuffer};

/// Lossy round trip used by error level analysis.
pub trait Recompressor {
    fn recompress(&self, img: &ImageBuffer) -> Result<ImageBuffer>;
}

/// Baseline JPEG encode/decode at a fixed quality.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JpegRecompressor {
    pub quality: u32,
}

impl JpegRecompressor {
    pub fn new(quality: u32) -> Result<Self> {
        if !(1..=100).contains(&quality) {
            return Err(Error::InvalidQuality(quality));
        }
        Ok(Self { quality })
    }
}

impl Recompressor for JpegRecompressor {
    fn recompress(&self, img: &ImageBuffer) -> Result<ImageBuffer> {
        let bytes = imageio::encode_jpeg(img, self.quality)?;
        let decoded = imageio::decode_image(&bytes)?;
        Ok(if img.is_gray() {
            imageio::to_grayscale(&decoded)
        } else {
            decoded
        })
    }
}

/// Per-pixel `|recompress(img) - img| / 255` on the grayscale image.
pub fn ela_residual_with(img: &ImageBuffer, codec: &dyn Recompressor) -> Result<FeatureMap> {
    let gray = imageio::to_grayscale(img);
    let round_trip = imageio::to_grayscale(&codec.recompress(&gray)?);
    if (round_trip.width(), round_trip.height()) != (gray.width(), gray.height()) {
        return Err(Error::Internal("recompression changed the image size".into()));
    }
    let values = gray
        .data()
        .iter()
        .zip(round_trip.data())
        .map(|(&a, &b)| f64::from(a.abs_diff(b)) / 255.0)
        .collect();
    Ok(FeatureMap::from_raw(
        gray.width() as usize,
        gray.height() as usize,
        values,
    ))
}

pub fn ela_residual(img: &ImageBuffer, quality: u32) -> Result<FeatureMap> {
    ela_residual_with(img, &JpegRecompressor::new(quality)?)
}

/// Error level analysis map: the JPEG recompression residual at `quality`,
/// divided by its maximum so the result spans [0, 1] (all zeros when the
/// round trip is exact).
pub fn extract_ela(img: &ImageBuffer, quality: u32) -> Result<FeatureMap> {
    Ok(max_normalize(ela_residual(img, quality)?))
}

pub(crate) fn max_normalize(map: FeatureMap) -> FeatureMap {
    let max = map.values().iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        map.map(|v| v / max)
    } else {
        map
    }
}

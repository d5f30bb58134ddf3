//! Face crop/pad/resize and the training-time augmentation suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Label;
use crate::imageio::{self, Channels, FaceBox, ImageBuffer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Total growth of the face box along each axis, as a fraction of the
    /// box size. Half goes on each side.
    pub pad_fraction: f64,
    pub target_size: u32,
    pub grayscale_for_handcrafted: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            pad_fraction: 0.5,
            target_size: 384,
            grayscale_for_handcrafted: true,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_size < 16 {
            return Err(Error::InvalidConfig(format!(
                "target_size {} is below 16",
                self.target_size
            )));
        }
        if !(self.pad_fraction >= 0.0 && self.pad_fraction.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "pad_fraction {} must be non-negative",
                self.pad_fraction
            )));
        }
        Ok(())
    }
}

/// Fraction of the shorter image side covered by the fallback face box.
const FALLBACK_BOX_FRACTION: f64 = 0.8;

/// Centred square covering 80% of the shorter side.
pub fn fallback_face_box(img: &ImageBuffer) -> FaceBox {
    let short = img.width().min(img.height());
    let side = ((f64::from(short) * FALLBACK_BOX_FRACTION).round() as u32).max(1);
    FaceBox::new(
        i64::from((img.width() - side) / 2),
        i64::from((img.height() - side) / 2),
        side,
        side,
    )
}

/// Crop the (padded) face and resize it to `target_size` square. Colour is
/// kept; grayscale conversion belongs to the feature extractors.
pub fn preprocess_face(
    img: &ImageBuffer,
    face: Option<FaceBox>,
    cfg: &PreprocessConfig,
) -> Result<ImageBuffer> {
    cfg.validate()?;
    let face = face.unwrap_or_else(|| fallback_face_box(img));
    let crop = imageio::crop_with_padding(img, face, cfg.pad_fraction)?;
    imageio::resize_bilinear(&crop, cfg.target_size, cfg.target_size)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub hflip_prob: f64,
    /// Maximum absolute brightness shift on the [0, 1] intensity scale.
    pub brightness_delta: f64,
    pub contrast_range: (f64, f64),
    /// Maximum absolute hue rotation in degrees.
    pub hue_delta: f64,
    pub saturation_range: (f64, f64),
    pub jpeg_prob: f64,
    pub jpeg_quality_range: (u32, u32),
    pub jpeg_on_attacks_only: bool,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            hflip_prob: 0.5,
            brightness_delta: 0.1,
            contrast_range: (0.8, 1.2),
            hue_delta: 10.0,
            saturation_range: (0.8, 1.2),
            jpeg_prob: 0.5,
            jpeg_quality_range: (30, 90),
            jpeg_on_attacks_only: true,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Configuration under which `augment` returns its input unchanged.
    pub fn identity() -> Self {
        Self {
            hflip_prob: 0.0,
            brightness_delta: 0.0,
            contrast_range: (1.0, 1.0),
            hue_delta: 0.0,
            saturation_range: (1.0, 1.0),
            jpeg_prob: 0.0,
            jpeg_quality_range: (90, 90),
            jpeg_on_attacks_only: true,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_owned()));
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        let interval = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !prob(self.hflip_prob) || !prob(self.jpeg_prob) {
            return bad("augmentation probabilities must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.brightness_delta) {
            return bad("brightness_delta must lie in [0, 1]");
        }
        if !(self.hue_delta >= 0.0 && self.hue_delta <= 180.0) {
            return bad("hue_delta must lie in [0, 180]");
        }
        if !interval(self.contrast_range)
            || !interval(self.saturation_range)
            || self.contrast_range.0 < 0.0
            || self.saturation_range.0 < 0.0
        {
            return bad("contrast/saturation ranges must be non-empty and non-negative");
        }
        let (qlo, qhi) = self.jpeg_quality_range;
        if !(1 <= qlo && qlo <= qhi && qhi <= 100) {
            return bad("jpeg_quality_range must be a non-empty subset of [1, 100]");
        }
        Ok(())
    }
}

/// Parameters drawn for one sample. Every draw happens regardless of
/// whether the step ends up applied, so switching one step off never shifts
/// the random stream seen by the others.
#[derive(Debug, Clone, PartialEq)]
struct AugmentDraw {
    flip: bool,
    brightness: f64,
    contrast: f64,
    hue: f64,
    saturation: f64,
    jpeg: bool,
    quality: u32,
}

fn draw(cfg: &AugmentConfig, sample_index: u64) -> AugmentDraw {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ sample_index);
    let mut uniform = |lo: f64, hi: f64| {
        let u: f64 = rng.random();
        lo + (hi - lo) * u
    };
    let flip = uniform(0.0, 1.0) < cfg.hflip_prob;
    let brightness = uniform(-cfg.brightness_delta, cfg.brightness_delta);
    let contrast = uniform(cfg.contrast_range.0, cfg.contrast_range.1);
    let hue = uniform(-cfg.hue_delta, cfg.hue_delta);
    let saturation = uniform(cfg.saturation_range.0, cfg.saturation_range.1);
    let jpeg = uniform(0.0, 1.0) < cfg.jpeg_prob;
    let (qlo, qhi) = cfg.jpeg_quality_range;
    let span = f64::from(qhi - qlo + 1);
    let quality = (qlo + (uniform(0.0, span).floor() as u32).min(qhi - qlo)).min(qhi);
    AugmentDraw {
        flip,
        brightness,
        contrast,
        hue,
        saturation,
        jpeg,
        quality,
    }
}

/// Applies the augmentation suite to an RGB image. The result depends only
/// on the arguments: the random stream is keyed by `cfg.seed ^ sample_index`.
pub fn augment(
    img: &ImageBuffer,
    label: Label,
    cfg: &AugmentConfig,
    sample_index: u64,
) -> Result<ImageBuffer> {
    cfg.validate()?;
    let img = if img.is_gray() { img.to_rgb() } else { img.clone() };
    let d = draw(cfg, sample_index);

    let mut out = if d.flip { img.flip_horizontal() } else { img };
    photometric(&mut out, &d);

    let jpeg_allowed = label == Label::Attack || !cfg.jpeg_on_attacks_only;
    if d.jpeg && jpeg_allowed {
        let bytes = imageio::encode_jpeg(&out, d.quality)?;
        out = imageio::decode_image(&bytes)?;
    }
    Ok(out)
}

fn photometric(img: &mut ImageBuffer, d: &AugmentDraw) {
    let identity =
        d.brightness == 0.0 && d.contrast == 1.0 && d.hue == 0.0 && d.saturation == 1.0;
    if identity {
        return;
    }
    debug_assert_eq!(img.channels(), Channels::Rgb);
    let data = img.data_mut();
    let n = (data.len() / 3) as f64;
    // contrast pivots on the per-channel mean of the brightness-shifted image
    let mut means = [0.0f64; 3];
    for px in data.chunks_exact(3) {
        for c in 0..3 {
            means[c] += f64::from(px[c]) / 255.0 + d.brightness;
        }
    }
    means.iter_mut().for_each(|m| *m /= n);

    for px in data.chunks_exact_mut(3) {
        let mut rgb = [0.0f64; 3];
        for c in 0..3 {
            let v = f64::from(px[c]) / 255.0 + d.brightness;
            rgb[c] = ((v - means[c]) * d.contrast + means[c]).clamp(0.0, 1.0);
        }
        if d.hue != 0.0 || d.saturation != 1.0 {
            let (h, s, v) = rgb_to_hsv(rgb);
            let h = (h + d.hue).rem_euclid(360.0);
            let s = (s * d.saturation).clamp(0.0, 1.0);
            rgb = hsv_to_rgb(h, s, v);
        }
        for c in 0..3 {
            px[c] = (rgb[c] * 255.0).round().clamp(0.0, 255.0) as u8;
        }
    }
}

fn rgb_to_hsv([r, g, b]: [f64; 3]) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

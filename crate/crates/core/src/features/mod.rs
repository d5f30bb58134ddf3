//! Handcrafted feature extractors. Each maps a decoded image to a
//! single-channel floating-point [`FeatureMap`]; all but RGB operate on the
//! BT.601 grayscale version of the input.

mod dct;
mod dft;
mod ela;
mod srm;
mod svd;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::{self, ImageBuffer};

pub use dct::{dct2d, extract_dct, idct2d};
pub use dft::{dft2d, extract_dft, shifted_index};
pub use ela::{ela_residual, ela_residual_with, extract_ela, JpegRecompressor, Recompressor};
pub use srm::{extract_srm, SrmKernel, SRM_KERNEL};
pub use svd::{extract_svd, low_rank_approximation, singular_values, SvdOutput};

/// Row-major single-channel map of finite `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroDimension {
                width: width as u32,
                height: height as u32,
            });
        }
        if values.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                actual: values.len(),
            });
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!("non-finite feature value {bad}")));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub(crate) fn from_raw(width: usize, height: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), width * height);
        Self {
            width,
            height,
            values,
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::from_raw(width, height, vec![0.0; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self::from_raw(width, height, values)
    }

    /// Single-channel image as floats on the 0..=255 scale.
    pub fn from_gray(img: &ImageBuffer) -> Self {
        let gray = imageio::to_grayscale(img);
        Self::from_raw(
            gray.width() as usize,
            gray.height() as usize,
            gray.data().iter().map(|&v| f64::from(v)).collect(),
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    #[inline]
    pub(crate) fn set(&mut self, x: usize, y: usize, v: f64) {
        self.values[y * self.width + x] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub(crate) fn map(mut self, f: impl Fn(f64) -> f64) -> Self {
        self.values.iter_mut().for_each(|v| *v = f(*v));
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DctBlock {
    Size(usize),
    Whole,
}

impl Default for DctBlock {
    fn default() -> Self {
        DctBlock::Size(20)
    }
}

/// Which representation to extract, with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FeatureKind {
    Rgb,
    Dct { block: DctBlock },
    Srm,
    Dft,
    Ela { quality: u32 },
    Svd { rank: usize, output: SvdOutput },
}

impl FeatureKind {
    pub const DEFAULT_DCT_BLOCK: usize = 20;
    pub const DEFAULT_ELA_QUALITY: u32 = 90;
    pub const DEFAULT_SVD_RANK: usize = 50;

    pub fn dct() -> Self {
        FeatureKind::Dct {
            block: DctBlock::default(),
        }
    }

    pub fn ela() -> Self {
        FeatureKind::Ela {
            quality: Self::DEFAULT_ELA_QUALITY,
        }
    }

    pub fn svd() -> Self {
        FeatureKind::Svd {
            rank: Self::DEFAULT_SVD_RANK,
            output: SvdOutput::Reconstruction,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            FeatureKind::Rgb => "rgb",
            FeatureKind::Dct { .. } => "dct",
            FeatureKind::Srm => "srm",
            FeatureKind::Dft => "dft",
            FeatureKind::Ela { .. } => "ela",
            FeatureKind::Svd { .. } => "svd",
        }
    }

    /// File-name friendly identifier, e.g. `dct20` or `ela90`.
    pub fn slug(&self) -> String {
        self.to_string().replace(':', "")
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            FeatureKind::Dct {
                block: DctBlock::Size(0),
            } => Err(Error::InvalidConfig("DCT block size must be >= 1".into())),
            FeatureKind::Ela { quality } if !(1..=100).contains(&quality) => {
                Err(Error::InvalidQuality(quality))
            }
            FeatureKind::Svd { rank: 0, .. } => {
                Err(Error::InvalidConfig("SVD rank must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureKind::Rgb | FeatureKind::Srm | FeatureKind::Dft => f.write_str(self.tag()),
            FeatureKind::Dct {
                block: DctBlock::Size(n),
            } => write!(f, "dct:{n}"),
            FeatureKind::Dct {
                block: DctBlock::Whole,
            } => f.write_str("dct:whole"),
            FeatureKind::Ela { quality } => write!(f, "ela:{quality}"),
            FeatureKind::Svd {
                rank,
                output: SvdOutput::Reconstruction,
            } => write!(f, "svd:{rank}"),
            FeatureKind::Svd {
                rank,
                output: SvdOutput::Residual,
            } => write!(f, "svd:{rank}:residual"),
        }
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    /// Accepts `rgb`, `srm`, `dft`, `dct[:N|:whole]`, `ela[:Q]`,
    /// `svd[:K[:residual]]`, case-insensitively.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let mut parts = lower.split(':');
        let tag = parts.next().unwrap_or_default();
        let args: Vec<&str> = parts.collect();
        let bad = || Error::InvalidConfig(format!("unrecognised feature kind {s:?}"));
        let num = |a: &str| a.parse::<usize>().map_err(|_| bad());
        let kind = match (tag, args.as_slice()) {
            ("rgb", []) => FeatureKind::Rgb,
            ("srm", []) => FeatureKind::Srm,
            ("dft", []) => FeatureKind::Dft,
            ("dct", []) => FeatureKind::dct(),
            ("dct", ["whole"]) => FeatureKind::Dct {
                block: DctBlock::Whole,
            },
            ("dct", [n]) => FeatureKind::Dct {
                block: DctBlock::Size(num(n)?),
            },
            ("ela", []) => FeatureKind::ela(),
            ("ela", [q]) => FeatureKind::Ela {
                quality: num(q)? as u32,
            },
            ("svd", []) => FeatureKind::svd(),
            ("svd", [k]) => FeatureKind::Svd {
                rank: num(k)?,
                output: SvdOutput::Reconstruction,
            },
            ("svd", [k, "residual"]) => FeatureKind::Svd {
                rank: num(k)?,
                output: SvdOutput::Residual,
            },
            _ => return Err(bad()),
        };
        kind.validate()?;
        Ok(kind)
    }
}

impl TryFrom<String> for FeatureKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<FeatureKind> for String {
    fn from(k: FeatureKind) -> String {
        k.to_string()
    }
}

/// Extracts `kind` from any decoded image.
///
/// RGB stacks the three channels (scaled to [0, 1]) as consecutive planes,
/// giving a map of height `3h`. Every other kind runs on the grayscale image.
pub fn extract(img: &ImageBuffer, kind: FeatureKind) -> Result<FeatureMap> {
    kind.validate()?;
    match kind {
        FeatureKind::Rgb => Ok(rgb_planes(img)),
        FeatureKind::Dct { block } => Ok(extract_dct(&imageio::to_grayscale(img), block)),
        FeatureKind::Srm => Ok(extract_srm(&imageio::to_grayscale(img))),
        FeatureKind::Dft => Ok(extract_dft(&imageio::to_grayscale(img))),
        FeatureKind::Ela { quality } => extract_ela(&imageio::to_grayscale(img), quality),
        FeatureKind::Svd { rank, output } => {
            Ok(extract_svd(&imageio::to_grayscale(img), rank, output))
        }
    }
}

fn rgb_planes(img: &ImageBuffer) -> FeatureMap {
    let rgb = img.to_rgb();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut values = Vec::with_capacity(3 * w * h);
    for c in 0..3 {
        values.extend(rgb.data().iter().skip(c).step_by(3).map(|&v| f64::from(v) / 255.0));
    }
    FeatureMap::from_raw(w, 3 * h, values)
}

//! Procedural face-like images and spliced forgeries for end-to-end runs.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::manifest::{DatasetManifest, ManifestEntry, Split};
use crate::error::{Error, Result};
use crate::eval::Label;
use crate::imageio::{self, Channels, FaceBox, ImageBuffer};

pub const SIZE: u32 = 384;
pub const BONAFIDE_QUALITY: u32 = 95;
pub const SOURCE_TAG: &str = "synthetic";

/// Face box shared by every synthetic image. With the default padding of
/// 0.5 it expands to exactly the full frame, so no resampling is needed.
pub const FACE_BOX: FaceBox = FaceBox {
    x: 64,
    y: 64,
    w: 256,
    h: 256,
};

const FEATHER_SIGMA: f64 = 3.0;
const NOISE_SIGMA: f64 = 3.0;

/// Half-open pixel rectangle of a spliced patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchRegion {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl PatchRegion {
    pub fn contains(&self, x: u32, y: u32) -> bool {
        (self.x..self.x + self.w).contains(&x) && (self.y..self.y + self.h).contains(&y)
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const BONAFIDE_STREAM: u64 = 1 << 32;
const ATTACK_STREAM: u64 = 2 << 32;
const DONOR_STREAM: u64 = 3 << 32;

fn rand_color(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    [
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
    ]
}

/// Smooth coverage of an ellipse: 1 inside, 0 outside, a ~1.5 px ramp at
/// the boundary.
fn ellipse_alpha(x: f64, y: f64, cx: f64, cy: f64, rx: f64, ry: f64) -> f64 {
    let d = (((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2)).sqrt();
    ((1.0 - d) * rx.min(ry) / 1.5 + 0.5).clamp(0.0, 1.0)
}

fn blend(dst: &mut [f64; 3], src: [f64; 3], a: f64) {
    for c in 0..3 {
        dst[c] = dst[c] * (1.0 - a) + src[c] * a;
    }
}

/// Renders one face-like RGB image (gradient background, shaded skin
/// ellipse with eyes and mouth, low-frequency texture and sensor-like noise).
pub fn render_face(rng: &mut ChaCha8Rng) -> ImageBuffer {
    let s = f64::from(SIZE);
    let bg0 = rand_color(rng, 30.0, 200.0);
    let bg1 = rand_color(rng, 30.0, 200.0);
    let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (theta.cos(), theta.sin());

    let cx = s / 2.0 + rng.random_range(-8.0..8.0);
    let cy = s / 2.0 + rng.random_range(-8.0..8.0);
    let rx = rng.random_range(92.0..112.0);
    let ry = rng.random_range(118.0..132.0);
    let base = rng.random_range(150.0..230.0);
    let skin = [
        base,
        base * rng.random_range(0.68..0.85),
        base * rng.random_range(0.52..0.72),
    ];
    let light = rng.random_range(-0.4..0.4);
    let eye = rand_color(rng, 20.0, 80.0);
    let lips = [
        rng.random_range(120.0..200.0),
        rng.random_range(40.0..90.0),
        rng.random_range(40.0..90.0),
    ];
    let eye_rx = rx * rng.random_range(0.12..0.18);
    let eye_ry = ry * rng.random_range(0.06..0.09);
    let mouth_rx = rx * rng.random_range(0.28..0.4);
    let mouth_ry = ry * rng.random_range(0.05..0.09);

    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.01..0.08),
                rng.random_range(0.01..0.08),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(2.0..7.0),
            )
        })
        .collect();
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("positive sigma");

    let mut data = Vec::with_capacity((SIZE * SIZE * 3) as usize);
    for y in 0..SIZE {
        for x in 0..SIZE {
            let (fx, fy) = (f64::from(x), f64::from(y));
            let t = (((fx - s / 2.0) * dx + (fy - s / 2.0) * dy) / s + 0.5).clamp(0.0, 1.0);
            let mut px = [0.0; 3];
            for c in 0..3 {
                px[c] = bg0[c] * (1.0 - t) + bg1[c] * t;
            }

            let r2 = ((fx - cx) / rx).powi(2) + ((fy - cy) / ry).powi(2);
            let shade = (1.0 - 0.3 * r2 + light * (fx - cx) / rx).max(0.2);
            let face = skin.map(|v| v * shade);
            blend(&mut px, face, ellipse_alpha(fx, fy, cx, cy, rx, ry));
            for side in [-1.0, 1.0] {
                let ex = cx + side * 0.38 * rx;
                let ey = cy - 0.2 * ry;
                blend(&mut px, eye, ellipse_alpha(fx, fy, ex, ey, eye_rx, eye_ry));
            }
            blend(
                &mut px,
                lips,
                ellipse_alpha(fx, fy, cx, cy + 0.45 * ry, mouth_rx, mouth_ry),
            );

            let texture: f64 = waves
                .iter()
                .map(|&(kx, ky, ph, amp)| amp * (kx * fx + ky * fy + ph).sin())
                .sum();
            for v in px {
                let n = noise.sample(rng);
                data.push((v + texture + n).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    ImageBuffer::new(SIZE, SIZE, Channels::Rgb, data).expect("buffer size matches")
}

/// Draws a splice rectangle inside the synthetic face box, deliberately
/// allowed off the 8x8 JPEG grid.
fn draw_region(rng: &mut ChaCha8Rng) -> PatchRegion {
    let lo = FACE_BOX.x as u32 + 8;
    let hi = FACE_BOX.x as u32 + FACE_BOX.w - 8;
    let w = rng.random_range(72..=144);
    let h = rng.random_range(72..=144);
    PatchRegion {
        x: rng.random_range(lo..=hi - w),
        y: rng.random_range(lo..=hi - h),
        w,
        h,
    }
}

/// Weight of the patch at a pixel: 0 outside the region, rising to 1 over a
/// Gaussian profile of a few pixels inside each edge.
fn feather(region: &PatchRegion, x: u32, y: u32) -> f64 {
    if !region.contains(x, y) {
        return 0.0;
    }
    let ramp = |d: u32| 1.0 - (-(f64::from(d) + 0.5).powi(2) / (2.0 * FEATHER_SIGMA.powi(2))).exp();
    let dx = (x - region.x).min(region.x + region.w - 1 - x);
    let dy = (y - region.y).min(region.y + region.h - 1 - y);
    ramp(dx) * ramp(dy)
}

/// Replaces `region` of `carrier` with the same region of `donor` after
/// recompressing that patch on its own at `patch_quality`, feathering the
/// seam.
pub fn splice_patch(
    carrier: &ImageBuffer,
    donor: &ImageBuffer,
    region: PatchRegion,
    patch_quality: u32,
) -> Result<ImageBuffer> {
    let patch = donor.crop(region.x, region.y, region.x + region.w, region.y + region.h)?;
    let patch = imageio::decode_image(&imageio::encode_jpeg(&patch, patch_quality)?)?;
    let patch = if carrier.is_gray() {
        imageio::to_grayscale(&patch)
    } else {
        patch
    };
    let ch = carrier.channels().count();
    let width = carrier.width();
    let mut out = carrier.clone();
    let data = out.data_mut();
    for py in 0..region.h {
        for px in 0..region.w {
            let (x, y) = (region.x + px, region.y + py);
            let a = feather(&region, x, y);
            let dst = ((y * width + x) as usize) * ch;
            let src = ((py * region.w + px) as usize) * ch;
            for c in 0..ch {
                let v = f64::from(data[dst + c]) * (1.0 - a) + f64::from(patch.data()[src + c]) * a;
                data[dst + c] = v.round() as u8;
            }
        }
    }
    Ok(out)
}

/// Parameters of the `index`-th attack of a corpus: splice region, patch
/// quality and final quality.
pub fn attack_plan(seed: u64, index: usize) -> (PatchRegion, u32, u32) {
    let mut rng = stream_rng(seed, ATTACK_STREAM | index as u64);
    let region = draw_region(&mut rng);
    let patch_q = rng.random_range(40..=60);
    let final_q = rng.random_range(70..=90);
    (region, patch_q, final_q)
}

/// Index of the bona fide image an attack is derived from.
pub fn attack_source(index: usize, n_bonafide: usize) -> usize {
    index % n_bonafide
}

pub fn bonafide_name(i: usize) -> String {
    format!("images/bonafide_{i:05}.jpg")
}

pub fn attack_name(i: usize) -> String {
    format!("images/attack_{i:05}.jpg")
}

/// Sequential 60/20/20 assignment within a class of `n` samples.
pub fn split_for(i: usize, n: usize) -> Split {
    let n_train = (0.6 * n as f64).round() as usize;
    let n_val = (0.2 * n as f64).round() as usize;
    if i < n_train {
        Split::Train
    } else if i < n_train + n_val {
        Split::Val
    } else {
        Split::Test
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Renders `n_bonafide` genuine images and `n_attack` spliced ones into
/// `out_dir/images`, writes `out_dir/manifest.jsonl` and returns the
/// manifest. Output depends only on the arguments.
pub fn generate_synthetic_corpus(
    n_bonafide: usize,
    n_attack: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    if n_bonafide == 0 || n_attack == 0 {
        return Err(Error::InvalidConfig(
            "synthetic corpus needs at least one image per class".into(),
        ));
    }
    let images = out_dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;

    let bonafide: Vec<Vec<u8>> = (0..n_bonafide)
        .into_par_iter()
        .map(|i| {
            let img = render_face(&mut stream_rng(seed, BONAFIDE_STREAM | i as u64));
            let bytes = imageio::encode_jpeg(&img, BONAFIDE_QUALITY)?;
            write(&out_dir.join(bonafide_name(i)), &bytes)?;
            Ok(bytes)
        })
        .collect::<Result<_>>()?;

    (0..n_attack).into_par_iter().try_for_each(|j| {
        let (region, patch_q, final_q) = attack_plan(seed, j);
        let carrier = imageio::decode_image(&bonafide[attack_source(j, n_bonafide)])?;
        let donor = render_face(&mut stream_rng(seed, DONOR_STREAM | j as u64));
        let forged = splice_patch(&carrier, &donor, region, patch_q)?;
        write(
            &out_dir.join(attack_name(j)),
            &imageio::encode_jpeg(&forged, final_q)?,
        )
    })?;

    let entry = |id: String, label, split| ManifestEntry {
        path: out_dir.join(&id),
        id,
        label,
        split,
        face_box: Some(FACE_BOX),
        source: SOURCE_TAG.to_owned(),
    };
    let entries = (0..n_bonafide)
        .map(|i| entry(bonafide_name(i), Label::Bonafide, split_for(i, n_bonafide)))
        .chain((0..n_attack).map(|j| entry(attack_name(j), Label::Attack, split_for(j, n_attack))))
        .collect();
    let manifest = DatasetManifest { entries };
    let path = out_dir.join("manifest.jsonl");
    write(&path, manifest.to_jsonl().as_bytes())?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_arithmetic() {
        let count = |n: usize| {
            let mut c = [0; 3];
            for i in 0..n {
                c[split_for(i, n) as usize] += 1;
            }
            c
        };
        assert_eq!(count(5), [3, 1, 1]);
        assert_eq!(count(200), [120, 40, 40]);
        assert_eq!(count(10), [6, 2, 2]);
    }

    #[test]
    fn regions_stay_inside_face_box() {
        for j in 0..500 {
            let (r, pq, fq) = attack_plan(9, j);
            assert!(r.x >= 72 && r.x + r.w <= 312 && r.y >= 72 && r.y + r.h <= 312);
            assert!((40..=60).contains(&pq) && (70..=90).contains(&fq));
        }
    }

    #[test]
    fn feather_profile() {
        let r = PatchRegion { x: 10, y: 10, w: 40, h: 40 };
        assert_eq!(feather(&r, 9, 20), 0.0);
        assert!(feather(&r, 10, 30) < 0.1);
        assert!(feather(&r, 30, 30) > 0.999);
        assert_eq!(feather(&r, 10, 30), feather(&r, 49, 30));
    }

    #[test]
    fn rendering_is_deterministic_and_varied() {
        let a = render_face(&mut stream_rng(1, 5));
        let b = render_face(&mut stream_rng(1, 5));
        let c = render_face(&mut stream_rng(1, 6));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}

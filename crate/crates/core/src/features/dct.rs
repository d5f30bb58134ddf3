use std::collections::HashMap;
use std::f64::consts::PI;

use super::{DctBlock, FeatureMap};
use crate::imageio::ImageBuffer;

/// Orthonormal DCT-II basis for length `n`: `basis[k * n + i]` is
/// `alpha(k) * cos(pi * (2i + 1) * k / (2n))`.
fn basis(n: usize) -> Vec<f64> {
    let nf = n as f64;
    let mut b = Vec::with_capacity(n * n);
    for k in 0..n {
        let alpha = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        for i in 0..n {
            b.push(alpha * (PI * (2 * i + 1) as f64 * k as f64 / (2.0 * nf)).cos());
        }
    }
    b
}

/// `out = rows x cols` separable product with the given per-axis matrices.
/// With `transpose`, the matrices are applied transposed (the inverse).
fn separable(
    input: &[f64],
    w: usize,
    h: usize,
    row_basis: &[f64],
    col_basis: &[f64],
    transpose: bool,
) -> Vec<f64> {
    let at = |b: &[f64], n: usize, k: usize, i: usize| {
        if transpose {
            b[i * n + k]
        } else {
            b[k * n + i]
        }
    };
    // along x (within each row)
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &input[y * w..(y + 1) * w];
        for v in 0..w {
            let mut acc = 0.0;
            for (n, &x) in row.iter().enumerate() {
                acc += at(col_basis, w, v, n) * x;
            }
            tmp[y * w + v] = acc;
        }
    }
    // along y (within each column)
    let mut out = vec![0.0; w * h];
    for u in 0..h {
        for m in 0..h {
            let c = at(row_basis, h, u, m);
            if c == 0.0 {
                continue;
            }
            let src = &tmp[m * w..(m + 1) * w];
            let dst = &mut out[u * w..(u + 1) * w];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += c * s;
            }
        }
    }
    out
}

/// Orthonormal 2D DCT-II. Coefficient `(u, v)` (row `u`, column `v`) is
/// stored at `get(v, u)`.
pub fn dct2d(block: &FeatureMap) -> FeatureMap {
    let (w, h) = (block.width(), block.height());
    let out = separable(block.values(), w, h, &basis(h), &basis(w), false);
    FeatureMap::from_raw(w, h, out)
}

/// Inverse of [`dct2d`] (orthonormal DCT-III).
pub fn idct2d(coeffs: &FeatureMap) -> FeatureMap {
    let (w, h) = (coeffs.width(), coeffs.height());
    let out = separable(coeffs.values(), w, h, &basis(h), &basis(w), true);
    FeatureMap::from_raw(w, h, out)
}

/// Block DCT log-magnitude map. Each `block x block` tile is replaced by
/// `ln(1 + |DCT(tile)|)`; tiles on the right and bottom edges shrink to the
/// remainder and are transformed at their own size.
pub fn extract_dct(img: &ImageBuffer, block: DctBlock) -> FeatureMap {
    let src = FeatureMap::from_gray(img);
    let (w, h) = (src.width(), src.height());
    let (bw, bh) = match block {
        DctBlock::Whole => (w, h),
        DctBlock::Size(n) => (n.min(w), n.min(h)),
    };
    let mut bases: HashMap<usize, Vec<f64>> = HashMap::new();
    let mut out = FeatureMap::zeros(w, h);
    let mut tile = Vec::with_capacity(bw * bh);
    for ty in (0..h).step_by(bh) {
        let th = bh.min(h - ty);
        for tx in (0..w).step_by(bw) {
            let tw = bw.min(w - tx);
            tile.clear();
            for y in ty..ty + th {
                tile.extend_from_slice(&src.values()[y * w + tx..y * w + tx + tw]);
            }
            bases.entry(th).or_insert_with(|| basis(th));
            bases.entry(tw).or_insert_with(|| basis(tw));
            let coeffs = separable(&tile, tw, th, &bases[&th], &bases[&tw], false);
            for y in 0..th {
                for x in 0..tw {
                    out.set(tx + x, ty + y, coeffs[y * tw + x].abs().ln_1p());
                }
            }
        }
    }
    out
}

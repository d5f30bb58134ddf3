use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::FeatureMap;
use crate::imageio::ImageBuffer;

/// Unnormalised 2D DFT, `F(u, v) = sum x(m, n) exp(-2 pi i (um/h + vn/w))`,
/// returned row-major with `F(u, v)` at index `u * w + v`.
pub fn dft2d(map: &FeatureMap) -> Vec<Complex64> {
    let (w, h) = (map.width(), map.height());
    let mut buf: Vec<Complex64> = map.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut planner = FftPlanner::<f64>::new();

    let row_fft = planner.plan_fft_forward(w);
    row_fft.process(&mut buf);

    let col_fft = planner.plan_fft_forward(h);
    let mut column = vec![Complex64::new(0.0, 0.0); h];
    for x in 0..w {
        for (y, c) in column.iter_mut().enumerate() {
            *c = buf[y * w + x];
        }
        col_fft.process(&mut column);
        for (y, c) in column.iter().enumerate() {
            buf[y * w + x] = *c;
        }
    }
    buf
}

/// Position of frequency `(u, v)` in the centred layout:
/// `((u + ceil(h/2)) mod h, (v + ceil(w/2)) mod w)`.
pub fn shifted_index(u: usize, v: usize, w: usize, h: usize) -> (usize, usize) {
    ((u + h.div_ceil(2)) % h, (v + w.div_ceil(2)) % w)
}

/// `ln(1 + |F|)` of the image spectrum with zero frequency moved to the
/// centre.
pub fn extract_dft(img: &ImageBuffer) -> FeatureMap {
    let src = FeatureMap::from_gray(img);
    let (w, h) = (src.width(), src.height());
    let spectrum = dft2d(&src);
    let mut out = FeatureMap::zeros(w, h);
    for u in 0..h {
        for v in 0..w {
            let (row, col) = shifted_index(u, v, w, h);
            out.set(col, row, spectrum[u * w + v].norm().ln_1p());
        }
    }
    out
}

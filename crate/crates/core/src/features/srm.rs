use super::FeatureMap;
use crate::imageio::ImageBuffer;

/// 3x3 correlation kernel, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SrmKernel(pub [[f64; 3]; 3]);

impl SrmKernel {
    pub fn coefficient_sum(&self) -> f64 {
        self.0.iter().flatten().sum()
    }
}

/// Four-neighbour Laplacian high-pass residual filter.
pub const SRM_KERNEL: SrmKernel = SrmKernel([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]]);

/// Raw (unnormalised) residuals of the image correlated with
/// [`SRM_KERNEL`], replicating border pixels.
pub fn extract_srm(img: &ImageBuffer) -> FeatureMap {
    let src = FeatureMap::from_gray(img);
    let (w, h) = (src.width() as isize, src.height() as isize);
    let at = |x: isize, y: isize| src.get(x.clamp(0, w - 1) as usize, y.clamp(0, h - 1) as usize);
    let k = &SRM_KERNEL.0;
    FeatureMap::from_fn(w as usize, h as usize, |x, y| {
        let (x, y) = (x as isize, y as isize);
        let mut acc = 0.0;
        for (dy, row) in k.iter().enumerate() {
            for (dx, &c) in row.iter().enumerate() {
                if c != 0.0 {
                    acc += c * at(x + dx as isize - 1, y + dy as isize - 1);
                }
            }
        }
        acc
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imageio::Channels;

    #[test]
    fn kernel_has_zero_dc_response() {
        assert_eq!(SRM_KERNEL.coefficient_sum(), 0.0);
    }

    #[test]
    fn constant_image_has_no_residual() {
        let img = ImageBuffer::filled(7, 5, Channels::Gray, 200).unwrap();
        assert!(extract_srm(&img).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn impulse_response_is_kernel_footprint() {
        let mut data = vec![0u8; 25];
        data[12] = 255;
        let img = ImageBuffer::new(5, 5, Channels::Gray, data).unwrap();
        let out = extract_srm(&img);
        for y in 0..5 {
            for x in 0..5 {
                let expect = match (x, y) {
                    (2, 2) => -1020.0,
                    (1, 2) | (3, 2) | (2, 1) | (2, 3) => 255.0,
                    _ => 0.0,
                };
                assert_eq!(out.get(x, y), expect, "at ({x},{y})");
            }
        }
    }

    #[test]
    fn affine_ramp_vanishes_in_interior() {
        let img = ImageBuffer::from_fn(12, 9, Channels::Gray, |x, y| [(x + y) as u8 * 3, 0, 0])
            .unwrap();
        let out = extract_srm(&img);
        for y in 1..8 {
            for x in 1..11 {
                assert_eq!(out.get(x, y), 0.0);
            }
        }
    }
}

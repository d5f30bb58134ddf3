use faer::Mat;
use serde::{Deserialize, Serialize};

use super::FeatureMap;
use crate::imageio::ImageBuffer;

/// Which image-shaped product of the truncated SVD to emit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SvdOutput {
    /// `U_k S_k V_k^T`
    #[default]
    Reconstruction,
    /// `x - U_k S_k V_k^T`
    Residual,
}

fn to_matrix(map: &FeatureMap) -> Mat<f64> {
    Mat::from_fn(map.height(), map.width(), |r, c| map.get(c, r))
}

struct Decomposition {
    u: Mat<f64>,
    s: Vec<f64>,
    v: Mat<f64>,
    /// Column indices by descending singular value.
    order: Vec<usize>,
}

fn decompose(map: &FeatureMap) -> Decomposition {
    let svd = to_matrix(map)
        .thin_svd()
        .expect("SVD of a finite matrix converges");
    let s: Vec<f64> = (0..svd.S().dim()).map(|i| svd.S()[i]).collect();
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    Decomposition {
        u: svd.U().to_owned(),
        v: svd.V().to_owned(),
        s,
        order,
    }
}

/// Singular values in descending order.
pub fn singular_values(map: &FeatureMap) -> Vec<f64> {
    let d = decompose(map);
    d.order.iter().map(|&i| d.s[i]).collect()
}

/// Best rank-`k` approximation in the Frobenius norm, with
/// `k = min(rank, min(w, h))`.
pub fn low_rank_approximation(map: &FeatureMap, rank: usize) -> FeatureMap {
    let k = rank.min(map.width().min(map.height()));
    let d = decompose(map);
    let top = &d.order[..k];
    FeatureMap::from_fn(map.width(), map.height(), |x, y| {
        top.iter().map(|&i| d.u[(y, i)] * d.s[i] * d.v[(x, i)]).sum()
    })
}

/// Truncated-SVD map of the grayscale image scaled to [0, 1].
pub fn extract_svd(img: &ImageBuffer, rank: usize, output: SvdOutput) -> FeatureMap {
    let x = FeatureMap::from_gray(img).map(|v| v / 255.0);
    let approx = low_rank_approximation(&x, rank.max(1));
    match output {
        SvdOutput::Reconstruction => approx,
        SvdOutput::Residual => FeatureMap::from_raw(
            x.width(),
            x.height(),
            x.values()
                .iter()
                .zip(approx.values())
                .map(|(a, b)| a - b)
                .collect(),
        ),
    }
}

//! Linear logistic scorer over downsampled feature maps, trained with
//! minibatch AdaGrad.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Label;
use crate::features::{DctBlock, FeatureKind, FeatureMap, SvdOutput};

pub const DEFAULT_DIM_SIDE: usize = 32;
const STD_FLOOR: f64 = 1e-8;
const ADAGRAD_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub kind: FeatureKind,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Row or column weights for exact area averaging of `src` cells into
/// `dst` cells: `(first source index, overlap weights)` per output cell.
fn area_weights(src: usize, dst: usize) -> Vec<(usize, Vec<f64>)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            let weights = (first..last)
                .map(|i| (hi.min((i + 1) as f64) - lo.max(i as f64)) / scale)
                .collect();
            (first, weights)
        })
        .collect()
}

/// Area-averaged resample of `map` to `dim_side x dim_side`, flattened row
/// major.
pub fn vectorize(map: &FeatureMap, kind: FeatureKind, dim_side: usize) -> FeatureVector {
    let dim_side = dim_side.max(1);
    let (w, h) = (map.width(), map.height());
    if w == dim_side && h == dim_side {
        return FeatureVector {
            values: map.values().to_vec(),
            kind,
        };
    }
    let cols = area_weights(w, dim_side);
    let rows = area_weights(h, dim_side);
    // collapse columns first, then rows
    let mut tmp = vec![0.0; h * dim_side];
    for y in 0..h {
        let row = &map.values()[y * w..(y + 1) * w];
        for (o, (first, ws)) in cols.iter().enumerate() {
            tmp[y * dim_side + o] = ws.iter().zip(&row[*first..]).map(|(a, b)| a * b).sum();
        }
    }
    let mut values = vec![0.0; dim_side * dim_side];
    for (o, (first, ws)) in rows.iter().enumerate() {
        for (k, wgt) in ws.iter().enumerate() {
            let src = &tmp[(first + k) * dim_side..(first + k + 1) * dim_side];
            for (d, s) in values[o * dim_side..(o + 1) * dim_side].iter_mut().zip(src) {
                *d += wgt * s;
            }
        }
    }
    FeatureVector { values, kind }
}

/// Whether `kind` yields a signed, roughly zero-mean residual. Area
/// averaging such a map cancels it out, so it is rectified first.
pub fn is_signed_residual(kind: FeatureKind) -> bool {
    matches!(
        kind,
        FeatureKind::Srm
            | FeatureKind::Svd {
                output: SvdOutput::Residual,
                ..
            }
    )
}

/// Detector input for an extracted map: `vectorize` of the map, or of its
/// magnitude for signed residual kinds.
pub fn feature_vector(map: &FeatureMap, kind: FeatureKind, dim_side: usize) -> FeatureVector {
    if is_signed_residual(kind) {
        vectorize(&map.clone().map(f64::abs), kind, dim_side)
    } else {
        vectorize(map, kind, dim_side)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 32,
            max_steps: 225,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearScorer {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub kind: FeatureKind,
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `-ln(sigmoid(z))` for `y = 1`, `-ln(1 - sigmoid(z))`
/// for `y = 0`.
#[inline]
fn bce_from_logit(z: f64, y: f64) -> f64 {
    // softplus(z) - y z
    let softplus = if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    };
    softplus - y * z
}

/// Mean binary cross-entropy of a logistic model over a batch of already
/// standardised rows, with its gradient `(d/dw, d/db)`.
pub fn loss_and_gradient(
    weights: &[f64],
    bias: f64,
    rows: &[&[f64]],
    targets: &[f64],
) -> (f64, Vec<f64>, f64) {
    let n = rows.len() as f64;
    let mut grad_w = vec![0.0; weights.len()];
    let mut grad_b = 0.0;
    let mut loss = 0.0;
    for (x, &y) in rows.iter().zip(targets) {
        let z = dot(weights, x) + bias;
        loss += bce_from_logit(z, y);
        let r = sigmoid(z) - y;
        for (g, xi) in grad_w.iter_mut().zip(x.iter()) {
            *g += r * xi;
        }
        grad_b += r;
    }
    grad_w.iter_mut().for_each(|g| *g /= n);
    (loss / n, grad_w, grad_b / n)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn target(label: Label) -> f64 {
    if label.is_attack() {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub model: LinearScorer,
    /// Mean training-set loss after each completed pass over the data
    /// (index 0 is the loss before any update).
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

pub fn train(samples: &[(FeatureVector, Label)], cfg: &TrainConfig) -> Result<LinearScorer> {
    Ok(train_with_report(samples, cfg)?.model)
}

/// Standardises features, then minimises logistic loss with AdaGrad
/// (`G += g^2; w -= lr * g / sqrt(G + eps)`) over seeded shuffled
/// minibatches until `max_steps` updates have been made.
pub fn train_with_report(
    samples: &[(FeatureVector, Label)],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    let first = samples.first().ok_or(Error::DegenerateLabels)?;
    if !samples.iter().any(|s| s.1.is_attack()) || samples.iter().all(|s| s.1.is_attack()) {
        return Err(Error::DegenerateLabels);
    }
    let dim = first.0.len();
    let kind = first.0.kind;
    for (v, _) in samples {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: v.len(),
            });
        }
    }

    let (mean, std) = column_stats(samples, dim);
    let standardized: Vec<Vec<f64>> = samples
        .iter()
        .map(|(v, _)| standardize(&v.values, &mean, &std))
        .collect();
    let targets: Vec<f64> = samples.iter().map(|s| target(s.1)).collect();

    let mut weights = vec![0.0; dim];
    let mut bias = 0.0;
    let mut acc_w = vec![0.0; dim];
    let mut acc_b = 0.0;
    let all_rows: Vec<&[f64]> = standardized.iter().map(Vec::as_slice).collect();
    let full_loss = |w: &[f64], b: f64| loss_and_gradient(w, b, &all_rows, &targets).0;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_losses = vec![full_loss(&weights, bias)];
    let mut steps = 0;
    'outer: while steps < cfg.max_steps {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let rows: Vec<&[f64]> = batch.iter().map(|&i| standardized[i].as_slice()).collect();
            let ys: Vec<f64> = batch.iter().map(|&i| targets[i]).collect();
            let (_, gw, gb) = loss_and_gradient(&weights, bias, &rows, &ys);
            for ((w, a), g) in weights.iter_mut().zip(acc_w.iter_mut()).zip(&gw) {
                *a += g * g;
                *w -= cfg.learning_rate * g / (*a + ADAGRAD_EPS).sqrt();
            }
            acc_b += gb * gb;
            bias -= cfg.learning_rate * gb / (acc_b + ADAGRAD_EPS).sqrt();
            steps += 1;
            if steps >= cfg.max_steps {
                epoch_losses.push(full_loss(&weights, bias));
                break 'outer;
            }
        }
        epoch_losses.push(full_loss(&weights, bias));
    }

    Ok(TrainReport {
        model: LinearScorer {
            weights,
            bias,
            mean,
            std,
            kind,
        },
        epoch_losses,
        steps,
    })
}

fn column_stats(samples: &[(FeatureVector, Label)], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len() as f64;
    let mut mean = vec![0.0; dim];
    for (v, _) in samples {
        for (m, x) in mean.iter_mut().zip(&v.values) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for (v, _) in samples {
        for ((s, x), m) in var.iter_mut().zip(&v.values).zip(&mean) {
            *s += (x - m) * (x - m);
        }
    }
    let std = var.into_iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
    (mean, std)
}

fn standardize(values: &[f64], mean: &[f64], std: &[f64]) -> Vec<f64> {
    values
        .iter()
        .zip(mean)
        .zip(std)
        .map(|((x, m), s)| (x - m) / s)
        .collect()
}

impl LinearScorer {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn standardize(&self, v: &FeatureVector) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: v.len(),
            });
        }
        Ok(standardize(&v.values, &self.mean, &self.std))
    }

    /// Serialises as `FGF1` little-endian binary (layout in the README).
    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(MAGIC)?;
        let (tag, p1, p2, p3) = encode_kind(self.kind);
        out.write_all(&[tag, p3])?;
        out.write_all(&p1.to_le_bytes())?;
        out.write_all(&p2.to_le_bytes())?;
        out.write_all(&(self.dim() as u64).to_le_bytes())?;
        for v in self.weights.iter().chain([&self.bias]).chain(&self.mean).chain(&self.std) {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self> {
        let bad = |m: &str| Error::ModelFormat(m.to_owned());
        let mut buf = Vec::new();
        input
            .read_to_end(&mut buf)
            .map_err(|e| Error::io("<model>", e))?;
        let mut cur = buf.as_slice();
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(bad("truncated"));
            }
            let (head, rest) = cur.split_at(n);
            cur = rest;
            Ok(head)
        };
        if take(4)? != MAGIC {
            return Err(bad("missing FGF1 magic"));
        }
        let hdr = take(2)?;
        let (tag, p3) = (hdr[0], hdr[1]);
        let p1 = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
        let p2 = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
        let kind = decode_kind(tag, p1, p2, p3).ok_or_else(|| bad("unknown feature kind"))?;
        let dim = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
        if dim == 0 || dim > (1 << 28) {
            return Err(bad("implausible dimension"));
        }
        let mut f64s = |n: usize| -> Result<Vec<f64>> {
            let raw = take(n * 8)?;
            Ok(raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect())
        };
        let weights = f64s(dim)?;
        let bias = f64s(1)?[0];
        let mean = f64s(dim)?;
        let std = f64s(dim)?;
        if !cur.is_empty() {
            return Err(bad("trailing bytes"));
        }
        if std.iter().any(|&s| !(s > 0.0)) {
            return Err(bad("non-positive standard deviation"));
        }
        Ok(Self {
            weights,
            bias,
            mean,
            std,
            kind,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(std::io::BufReader::new(file))
    }
}

const MAGIC: &[u8; 4] = b"FGF1";

/// `(tag, param1, param2, flag)`; `param1 = 0` encodes a whole-image DCT.
fn encode_kind(kind: FeatureKind) -> (u8, u32, u32, u8) {
    match kind {
        FeatureKind::Rgb => (0, 0, 0, 0),
        FeatureKind::Dct {
            block: DctBlock::Size(n),
        } => (1, n as u32, 0, 0),
        FeatureKind::Dct {
            block: DctBlock::Whole,
        } => (1, 0, 0, 0),
        FeatureKind::Srm => (2, 0, 0, 0),
        FeatureKind::Dft => (3, 0, 0, 0),
        FeatureKind::Ela { quality } => (4, quality, 0, 0),
        FeatureKind::Svd { rank, output } => (
            5,
            rank as u32,
            0,
            match output {
                SvdOutput::Reconstruction => 0,
                SvdOutput::Residual => 1,
            },
        ),
    }
}

fn decode_kind(tag: u8, p1: u32, _p2: u32, flag: u8) -> Option<FeatureKind> {
    let kind = match tag {
        0 => FeatureKind::Rgb,
        1 if p1 == 0 => FeatureKind::Dct {
            block: DctBlock::Whole,
        },
        1 => FeatureKind::Dct {
            block: DctBlock::Size(p1 as usize),
        },
        2 => FeatureKind::Srm,
        3 => FeatureKind::Dft,
        4 => FeatureKind::Ela { quality: p1 },
        5 => FeatureKind::Svd {
            rank: p1 as usize,
            output: match flag {
                0 => SvdOutput::Reconstruction,
                1 => SvdOutput::Residual,
                _ => return None,
            },
        },
        _ => return None,
    };
    kind.validate().ok().map(|_| kind)
}

/// Probability-like attack score, clamped strictly inside (0, 1).
pub fn predict(model: &LinearScorer, v: &FeatureVector) -> Result<f64> {
    let x = model.standardize(v)?;
    let p = sigmoid(dot(&model.weights, &x) + model.bias);
    Ok(p.clamp(f64::EPSILON, 1.0 - f64::EPSILON))
}

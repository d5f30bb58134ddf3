//! Score calibration against a target BPCER and score-level fusion.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{threshold_for_bpcer, Label, ScoreRecord, ScoreSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FusionKind {
    Min,
    Mean,
    Max,
    Weighted,
}

/// Parsed from `min`, `mean`, `max` or `weighted:w1,w2,...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct FusionRule {
    pub kind: FusionKind,
    pub weights: Option<Vec<f64>>,
}

impl FusionRule {
    pub const MIN: FusionRule = FusionRule::simple(FusionKind::Min);
    pub const MEAN: FusionRule = FusionRule::simple(FusionKind::Mean);
    pub const MAX: FusionRule = FusionRule::simple(FusionKind::Max);

    const fn simple(kind: FusionKind) -> Self {
        Self {
            kind,
            weights: None,
        }
    }

    pub fn weighted(weights: Vec<f64>) -> Result<Self> {
        let rule = Self {
            kind: FusionKind::Weighted,
            weights: Some(weights),
        };
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind, &self.weights) {
            (FusionKind::Weighted, Some(w)) => {
                if w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                    return Err(Error::InvalidConfig(
                        "fusion weights must be finite and nonnegative".into(),
                    ));
                }
                if !(w.iter().sum::<f64>() > 0.0) {
                    return Err(Error::InvalidConfig("fusion weights must sum to > 0".into()));
                }
                Ok(())
            }
            (FusionKind::Weighted, None) => {
                Err(Error::InvalidConfig("weighted fusion needs weights".into()))
            }
            (_, Some(_)) => Err(Error::InvalidConfig(
                "only weighted fusion takes weights".into(),
            )),
            (_, None) => Ok(()),
        }
    }

    /// Aggregates one sample's scores. `scores` must be nonempty.
    fn combine(&self, scores: &[f64]) -> f64 {
        let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // rounding in the sums could step just outside the input range
        match self.kind {
            FusionKind::Min => lo,
            FusionKind::Max => hi,
            FusionKind::Mean => {
                (scores.iter().sum::<f64>() / scores.len() as f64).clamp(lo, hi)
            }
            FusionKind::Weighted => {
                let w = self.weights.as_deref().unwrap_or_default();
                let num: f64 = w.iter().zip(scores).map(|(a, b)| a * b).sum();
                (num / w.iter().sum::<f64>()).clamp(lo, hi)
            }
        }
    }
}

impl fmt::Display for FusionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            FusionKind::Min => f.write_str("min"),
            FusionKind::Mean => f.write_str("mean"),
            FusionKind::Max => f.write_str("max"),
            FusionKind::Weighted => {
                let w: Vec<String> = self
                    .weights
                    .iter()
                    .flatten()
                    .map(f64::to_string)
                    .collect();
                write!(f, "weighted:{}", w.join(","))
            }
        }
    }
}

impl FromStr for FusionRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (head, tail) = match s.split_once(':') {
            Some((h, t)) => (h, Some(t)),
            None => (s.as_str(), None),
        };
        match (head, tail) {
            ("min", None) => Ok(Self::MIN),
            ("mean", None) => Ok(Self::MEAN),
            ("max", None) => Ok(Self::MAX),
            ("weighted", Some(t)) => {
                let weights = t
                    .split(',')
                    .map(|w| w.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::InvalidConfig(format!("bad fusion weight: {e}")))?;
                Self::weighted(weights)
            }
            _ => Err(Error::InvalidConfig(format!(
                "unknown fusion rule {s:?} (expected min, mean, max or weighted:w1,w2,...)"
            ))),
        }
    }
}

impl TryFrom<String> for FusionRule {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<FusionRule> for String {
    fn from(r: FusionRule) -> String {
        r.to_string()
    }
}

/// Parsed from `default`, `bpcer:<target>`, or the shorthands `protocol-i`
/// (2%) and `protocol-ii` (5%).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum CalibrationProtocol {
    #[default]
    Default,
    TargetBpcer(f64),
}

impl CalibrationProtocol {
    pub const PROTOCOL_I: CalibrationProtocol = CalibrationProtocol::TargetBpcer(0.02);
    pub const PROTOCOL_II: CalibrationProtocol = CalibrationProtocol::TargetBpcer(0.05);

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::TargetBpcer(t) if !(t > 0.0 && t < 1.0) => Err(Error::InvalidConfig(format!(
                "BPCER target {t} must lie in (0, 1)"
            ))),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for CalibrationProtocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Default => f.write_str("default"),
            Self::TargetBpcer(t) => write!(f, "bpcer:{t}"),
        }
    }
}

impl FromStr for CalibrationProtocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let p = match s.as_str() {
            "default" => Self::Default,
            "protocol-i" => Self::PROTOCOL_I,
            "protocol-ii" => Self::PROTOCOL_II,
            other => {
                let t = other
                    .strip_prefix("bpcer:")
                    .and_then(|t| t.parse::<f64>().ok())
                    .ok_or_else(|| {
                        Error::InvalidConfig(format!(
                            "unknown calibration protocol {s:?} (expected default or bpcer:<target>)"
                        ))
                    })?;
                Self::TargetBpcer(t)
            }
        };
        p.validate()?;
        Ok(p)
    }
}

impl TryFrom<String> for CalibrationProtocol {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<CalibrationProtocol> for String {
    fn from(p: CalibrationProtocol) -> String {
        p.to_string()
    }
}

/// Piecewise-linear map sending `[0, t*]` onto `[0, 0.5]` and `[t*, 1]`
/// onto `[0.5, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibratedScorer {
    pub threshold: f64,
}

impl CalibratedScorer {
    pub const IDENTITY: CalibratedScorer = CalibratedScorer { threshold: 0.5 };

    pub fn map(&self, s: f64) -> f64 {
        let t = self.threshold;
        if s < t {
            // s / t can round up to 1 just below t
            (0.5 * s / t).min(0.5f64.next_down())
        } else if t >= 1.0 {
            0.5
        } else {
            (0.5 + 0.5 * (s - t) / (1.0 - t)).min(1.0)
        }
    }
}

pub fn calibrate(dev: &ScoreSet, protocol: CalibrationProtocol) -> Result<CalibratedScorer> {
    protocol.validate()?;
    if dev.count(Label::Bonafide) == 0 {
        return Err(Error::NoBonafide);
    }
    Ok(match protocol {
        CalibrationProtocol::Default => CalibratedScorer::IDENTITY,
        CalibrationProtocol::TargetBpcer(target) => CalibratedScorer {
            threshold: threshold_for_bpcer(dev, target)?,
        },
    })
}

pub fn apply_calibration(c: &CalibratedScorer, scores: &ScoreSet) -> ScoreSet {
    scores
        .map_scores(|s| c.map(s))
        .expect("calibration keeps scores in [0, 1]")
}

/// Per-sample fusion of two or more score sets covering the same ids. Output
/// follows the record order of the first set.
pub fn fuse(sets: &[ScoreSet], rule: &FusionRule) -> Result<ScoreSet> {
    rule.validate()?;
    if sets.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "fusion needs at least 2 score sets, got {}",
            sets.len()
        )));
    }
    if let Some(w) = &rule.weights {
        if w.len() != sets.len() {
            return Err(Error::InvalidConfig(format!(
                "{} fusion weights for {} score sets",
                w.len(),
                sets.len()
            )));
        }
    }
    let first = &sets[0];
    let lookups: Vec<HashMap<&str, &ScoreRecord>> = sets[1..]
        .iter()
        .map(|s| {
            s.records()
                .iter()
                .map(|r| (r.sample_id.as_str(), r))
                .collect()
        })
        .collect();
    for (i, (set, map)) in sets[1..].iter().zip(&lookups).enumerate() {
        if set.len() != first.len() {
            return Err(Error::IdMismatch(format!(
                "score set {} has {} samples, expected {}",
                i + 1,
                set.len(),
                first.len()
            )));
        }
        if let Some(r) = first
            .records()
            .iter()
            .find(|r| !map.contains_key(r.sample_id.as_str()))
        {
            return Err(Error::IdMismatch(format!(
                "sample {} missing from score set {}",
                r.sample_id,
                i + 1
            )));
        }
    }

    let mut scores = Vec::with_capacity(sets.len());
    let mut out = Vec::with_capacity(first.len());
    for r in first.records() {
        scores.clear();
        scores.push(r.score);
        for map in &lookups {
            let other = map[r.sample_id.as_str()];
            if other.label != r.label {
                return Err(Error::LabelConflict(r.sample_id.clone()));
            }
            scores.push(other.score);
        }
        out.push(ScoreRecord {
            score: rule.combine(&scores),
            ..r.clone()
        });
    }
    ScoreSet::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{d_eer, rates_at};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(b: &[f64], a: &[f64]) -> ScoreSet {
        ScoreSet::from_scores(b, a).unwrap()
    }

    fn random_set(rng: &mut ChaCha8Rng, nb: usize, na: usize) -> ScoreSet {
        let b: Vec<f64> = (0..nb).map(|_| rng.random_range(0.0..0.7)).collect();
        let a: Vec<f64> = (0..na).map(|_| rng.random_range(0.3..1.0)).collect();
        set(&b, &a)
    }

    #[test]
    fn default_protocol_is_identity() {
        let dev = set(&[0.1, 0.2], &[0.9]);
        let c = calibrate(&dev, CalibrationProtocol::Default).unwrap();
        for i in 0..=100 {
            let s = i as f64 / 100.0;
            assert_eq!(c.map(s), s);
        }
        assert_eq!(apply_calibration(&c, &dev), dev);
    }

    #[test]
    fn protocol_i_on_uniform_grid() {
        let bona: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let dev = set(&bona, &[1.0]);
        let c = calibrate(&dev, CalibrationProtocol::PROTOCOL_I).unwrap();
        assert_eq!(c.threshold, 0.98);
        let cal = apply_calibration(&c, &dev);
        assert!(rates_at(&cal, 0.5).unwrap().1 <= 0.02);
    }

    #[test]
    fn calibration_needs_bonafide() {
        let dev = ScoreSet::new(vec![ScoreRecord {
            sample_id: "a".into(),
            label: Label::Attack,
            score: 0.4,
        }])
        .unwrap();
        assert!(matches!(
            calibrate(&dev, CalibrationProtocol::PROTOCOL_II),
            Err(Error::NoBonafide)
        ));
    }

    #[test]
    fn piecewise_segments() {
        let c = CalibratedScorer { threshold: 0.8 };
        assert_eq!(c.map(0.8), 0.5);
        assert!((c.map(0.9) - 0.75).abs() < 1e-12);
        assert!((c.map(0.4) - 0.25).abs() < 1e-12);
        assert_eq!(c.map(0.0), 0.0);
        assert_eq!(c.map(1.0), 1.0);
        assert!(c.map(0.8f64.next_down()) < 0.5);

        let top = CalibratedScorer { threshold: 1.0f64.next_up() };
        assert!(top.map(1.0) < 0.5);
        let one = CalibratedScorer { threshold: 1.0 };
        assert_eq!(one.map(1.0), 0.5);
        let zero = CalibratedScorer { threshold: 0.0 };
        assert_eq!(zero.map(0.0), 0.5);
        assert_eq!(zero.map(1.0), 1.0);
    }

    #[test]
    fn fusion_examples() {
        let a = set(&[0.3], &[0.2]);
        let b = set(&[0.7], &[0.6]);
        let min = fuse(&[a.clone(), b.clone()], &FusionRule::MIN).unwrap();
        assert_eq!(min.records()[0].score, 0.3);

        let w = fuse(&[a.clone(), b.clone()], &FusionRule::weighted(vec![1.0, 0.0]).unwrap()).unwrap();
        assert_eq!(w, a);

        let c = set(&[0.9], &[0.1]);
        let mean = fuse(&[set(&[0.2], &[0.5]), set(&[0.4], &[0.5]), c], &FusionRule::MEAN).unwrap();
        assert!((mean.records()[0].score - 0.5).abs() < 1e-12);
    }

    #[test]
    fn fusion_errors() {
        let a = set(&[0.3], &[0.2]);
        let shorter = set(&[0.3], &[]);
        assert!(matches!(
            fuse(&[a.clone(), shorter], &FusionRule::MIN),
            Err(Error::IdMismatch(_))
        ));
        let flipped = ScoreSet::new(
            a.records()
                .iter()
                .map(|r| ScoreRecord {
                    label: r.label.swapped(),
                    ..r.clone()
                })
                .collect(),
        )
        .unwrap();
        assert!(matches!(
            fuse(&[a.clone(), flipped], &FusionRule::MAX),
            Err(Error::LabelConflict(_))
        ));
        assert!(fuse(&[a.clone()], &FusionRule::MIN).is_err());
        assert!(fuse(
            &[a.clone(), a.clone()],
            &FusionRule::weighted(vec![1.0, 1.0, 1.0]).unwrap()
        )
        .is_err());
        assert!(FusionRule::weighted(vec![0.0, 0.0]).is_err());
        assert!(FusionRule::weighted(vec![-1.0, 2.0]).is_err());
    }

    #[test]
    fn ordering_on_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let s: Vec<ScoreSet> = (0..3)
                .map(|_| set(&[rng.random::<f64>()], &[rng.random::<f64>()]))
                .collect();
            let w: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..5.0)).collect();
            let lo = fuse(&s, &FusionRule::MIN).unwrap();
            let mid = fuse(&s, &FusionRule::MEAN).unwrap();
            let hi = fuse(&s, &FusionRule::MAX).unwrap();
            let wt = fuse(&s, &FusionRule::weighted(w).unwrap()).unwrap();
            for i in 0..2 {
                let (l, m, h, x) = (
                    lo.records()[i].score,
                    mid.records()[i].score,
                    hi.records()[i].score,
                    wt.records()[i].score,
                );
                assert!(l <= m && m <= h);
                assert!(l <= x && x <= h);
            }
        }
    }

    #[test]
    fn calibration_preserves_eer_and_meets_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let nb = rng.random_range(1..150);
            let na = rng.random_range(1..150);
            let dev = random_set(&mut rng, nb, na);
            for p in [CalibrationProtocol::PROTOCOL_I, CalibrationProtocol::PROTOCOL_II] {
                let c = calibrate(&dev, p).unwrap();
                let cal = apply_calibration(&c, &dev);
                let before = d_eer(&dev).unwrap().eer;
                let after = d_eer(&cal).unwrap().eer;
                assert!((before - after).abs() < 1e-9);
                let CalibrationProtocol::TargetBpcer(t) = p else { unreachable!() };
                assert!(rates_at(&cal, 0.5).unwrap().1 <= t);
            }
        }
    }

    #[test]
    fn rule_and_protocol_strings() {
        for s in ["min", "mean", "max", "weighted:1,0.5"] {
            assert_eq!(s.parse::<FusionRule>().unwrap().to_string(), s);
        }
        assert!("median".parse::<FusionRule>().is_err());
        assert!("min:1".parse::<FusionRule>().is_err());
        assert_eq!(
            "protocol-ii".parse::<CalibrationProtocol>().unwrap(),
            CalibrationProtocol::TargetBpcer(0.05)
        );
        assert_eq!(
            "bpcer:0.02".parse::<CalibrationProtocol>().unwrap().to_string(),
            "bpcer:0.02"
        );
        assert!("bpcer:1.5".parse::<CalibrationProtocol>().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn score_set() -> impl Strategy<Value = ScoreSet> {
            (
                prop::collection::vec(0.0f64..=1.0, 1..40),
                prop::collection::vec(0.0f64..=1.0, 1..40),
            )
                .prop_map(|(b, a)| ScoreSet::from_scores(&b, &a).unwrap())
        }

        proptest! {
            #[test]
            fn self_fusion_is_identity(s in score_set(), w in 0.01f64..10.0) {
                for rule in [FusionRule::MIN, FusionRule::MEAN, FusionRule::MAX,
                             FusionRule::weighted(vec![w, 1.0]).unwrap()] {
                    let pair = [s.clone(), s.clone()];
                    prop_assert_eq!(&fuse(&pair, &rule).unwrap(), &s);
                }
            }

            #[test]
            fn mapping_is_monotone_and_anchored(t in 0.001f64..0.999, a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
                let c = CalibratedScorer { threshold: t };
                prop_assert_eq!(c.map(t), 0.5);
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                prop_assert!(c.map(lo) <= c.map(hi));
                prop_assert!((0.0..=1.0).contains(&c.map(a)));
            }

            #[test]
            fn calibrated_dev_meets_target(s in score_set(), target in 0.01f64..0.5) {
                let c = calibrate(&s, CalibrationProtocol::TargetBpcer(target)).unwrap();
                let cal = apply_calibration(&c, &s);
                prop_assert!(rates_at(&cal, 0.5).unwrap().1 <= target);
            }
        }
    }
}

//! ISO/IEC 30107-3 error rates over score sets.
//!
//! Convention, applied everywhere: a higher score means "more likely an
//! attack", and a sample is classified as an attack iff `score >= threshold`.
//! APCER is then the fraction of attacks scoring below the threshold and
//! BPCER the fraction of bona fide samples at or above it.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Bonafide,
    Attack,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Bonafide => "bonafide",
            Label::Attack => "attack",
        }
    }

    pub fn is_attack(self) -> bool {
        self == Label::Attack
    }

    pub fn swapped(self) -> Label {
        match self {
            Label::Bonafide => Label::Attack,
            Label::Attack => Label::Bonafide,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "bonafide" => Ok(Label::Bonafide),
            "attack" => Ok(Label::Attack),
            other => Err(other.to_owned()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub sample_id: String,
    pub label: Label,
    pub score: f64,
}

/// Scored samples with unique ids and scores in [0, 1].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreSet {
    records: Vec<ScoreRecord>,
}

impl ScoreSet {
    pub fn new(records: Vec<ScoreRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !(0.0..=1.0).contains(&r.score) {
                return Err(Error::InvalidScore {
                    id: r.sample_id.clone(),
                    score: r.score,
                });
            }
            if !seen.insert(r.sample_id.as_str()) {
                return Err(Error::DuplicateId(r.sample_id.clone()));
            }
        }
        Ok(Self { records })
    }

    pub fn from_scores(bonafide: &[f64], attack: &[f64]) -> Result<Self> {
        let records = bonafide
            .iter()
            .map(|&s| (Label::Bonafide, s))
            .chain(attack.iter().map(|&s| (Label::Attack, s)))
            .enumerate()
            .map(|(i, (label, score))| ScoreRecord {
                sample_id: format!("s{i}"),
                label,
                score,
            })
            .collect();
        Self::new(records)
    }

    pub fn records(&self) -> &[ScoreRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn scores_for(&self, label: Label) -> impl Iterator<Item = f64> + '_ {
        self.records
            .iter()
            .filter(move |r| r.label == label)
            .map(|r| r.score)
    }

    pub fn count(&self, label: Label) -> usize {
        self.records.iter().filter(|r| r.label == label).count()
    }

    /// Records whose id satisfies `keep`, in the original order.
    pub fn filter(&self, mut keep: impl FnMut(&ScoreRecord) -> bool) -> ScoreSet {
        ScoreSet {
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }

    /// Maps every score through `f`, keeping ids and labels.
    pub fn map_scores(&self, f: impl Fn(f64) -> f64) -> Result<ScoreSet> {
        ScoreSet::new(
            self.records
                .iter()
                .map(|r| ScoreRecord {
                    score: f(r.score),
                    ..r.clone()
                })
                .collect(),
        )
    }

    fn require_both(&self) -> Result<()> {
        if self.count(Label::Bonafide) == 0 || self.count(Label::Attack) == 0 {
            return Err(Error::SingleClass);
        }
        Ok(())
    }

    /// Reads `sample_id,label,score` CSV (header required).
    pub fn read_csv<R: Read>(reader: R) -> Result<ScoreSet> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["sample_id", "label", "score"] {
            return Err(Error::Parse {
                line: 1,
                message: "expected header sample_id,label,score".into(),
            });
        }
        let mut records = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row?;
            let line = i + 2;
            let field = |k: usize| row.get(k).unwrap_or_default();
            let label = field(1)
                .parse::<Label>()
                .map_err(|label| Error::UnknownLabel { line, label })?;
            let score = field(2).trim().parse::<f64>().map_err(|e| Error::Parse {
                line,
                message: format!("score {:?}: {e}", field(2)),
            })?;
            records.push(ScoreRecord {
                sample_id: field(0).to_owned(),
                label,
                score,
            });
        }
        ScoreSet::new(records)
    }

    pub fn read_csv_file(path: &Path) -> Result<ScoreSet> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file))
    }

    /// Writes `sample_id,label,score` CSV. Scores use the shortest decimal
    /// form that reads back to the identical `f64`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["sample_id", "label", "score"])?;
        for r in &self.records {
            wtr.write_record([r.sample_id.as_str(), r.label.as_str(), &r.score.to_string()])?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

/// `(APCER, BPCER)` when everything scoring at least `threshold` is called an
/// attack.
pub fn rates_at(scores: &ScoreSet, threshold: f64) -> Result<(f64, f64)> {
    scores.require_both()?;
    Ok(rates_unchecked(scores, threshold))
}

fn rates_unchecked(scores: &ScoreSet, threshold: f64) -> (f64, f64) {
    let (mut attacks, mut missed, mut bona, mut flagged) = (0usize, 0usize, 0usize, 0usize);
    for r in scores.records() {
        match r.label {
            Label::Attack => {
                attacks += 1;
                if r.score < threshold {
                    missed += 1;
                }
            }
            Label::Bonafide => {
                bona += 1;
                if r.score >= threshold {
                    flagged += 1;
                }
            }
        }
    }
    (ratio(missed, attacks), ratio(flagged, bona))
}

#[inline]
fn ratio(num: usize, den: usize) -> f64 {
    num as f64 / den as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetPoint {
    pub threshold: f64,
    pub apcer: f64,
    pub bpcer: f64,
}

/// Operating points at every distinct score plus one threshold below 0 and
/// one above 1, in increasing threshold order.
#[derive(Debug, Clone, PartialEq)]
pub struct DetCurve {
    pub points: Vec<DetPoint>,
}

impl DetCurve {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["threshold", "apcer", "bpcer"])?;
        for p in &self.points {
            wtr.write_record([p.threshold.to_string(), p.apcer.to_string(), p.bpcer.to_string()])?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Sweep in O(n log n): sort once, then walk the distinct scores.
pub fn det_curve(scores: &ScoreSet) -> Result<DetCurve> {
    scores.require_both()?;
    let n_attack = scores.count(Label::Attack);
    let n_bona = scores.count(Label::Bonafide);

    let mut sorted: Vec<(f64, Label)> = scores.records().iter().map(|r| (r.score, r.label)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut points = Vec::with_capacity(sorted.len() + 2);
    points.push(DetPoint {
        threshold: 0f64.next_down(),
        apcer: 0.0,
        bpcer: 1.0,
    });
    // counts of samples strictly below the current threshold
    let (mut attacks_below, mut bona_below) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        points.push(DetPoint {
            threshold: t,
            apcer: ratio(attacks_below, n_attack),
            bpcer: ratio(n_bona - bona_below, n_bona),
        });
        while i < sorted.len() && sorted[i].0 == t {
            match sorted[i].1 {
                Label::Attack => attacks_below += 1,
                Label::Bonafide => bona_below += 1,
            }
            i += 1;
        }
    }
    points.push(DetPoint {
        threshold: 1f64.next_up(),
        apcer: 1.0,
        bpcer: 0.0,
    });
    points.dedup_by(|b, a| a.threshold == b.threshold);
    Ok(DetCurve { points })
}

/// Equal error rate and the threshold where it occurs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eer {
    pub eer: f64,
    pub threshold: f64,
}

/// D-EER: the rate at which APCER equals BPCER, linearly interpolated
/// between the two DET points that bracket the sign change of
/// `APCER - BPCER`.
pub fn d_eer(scores: &ScoreSet) -> Result<Eer> {
    let curve = det_curve(scores)?;
    Ok(eer_from_points(&curve.points))
}

/// Shared by [`d_eer`] and anything else holding a threshold-ordered sweep.
pub fn eer_from_points(points: &[DetPoint]) -> Eer {
    let diff = |p: &DetPoint| p.apcer - p.bpcer;
    let i = points
        .iter()
        .position(|p| diff(p) >= 0.0)
        .expect("the last sweep point always has APCER 1 and BPCER 0");
    let hi = &points[i];
    if diff(hi) == 0.0 || i == 0 {
        return Eer {
            eer: hi.apcer,
            threshold: hi.threshold,
        };
    }
    let lo = &points[i - 1];
    let (d0, d1) = (diff(lo), diff(hi));
    let lambda = -d0 / (d1 - d0);
    // Crossing of the segment with APCER = BPCER, written so that mirroring
    // the curve (swap labels, flip scores) yields a bit-identical value.
    let (a0, b0, a1, b1) = (lo.apcer, lo.bpcer, hi.apcer, hi.bpcer);
    Eer {
        eer: (a1 * b0 - a0 * b1) / ((a1 - a0) + (b0 - b1)),
        threshold: lo.threshold + lambda * (hi.threshold - lo.threshold),
    }
}

/// BPCER over bona fide scores alone, computed exactly as [`rates_at`] does.
fn bpcer_of(bona: &[f64], threshold: f64) -> f64 {
    ratio(bona.iter().filter(|&&s| s >= threshold).count(), bona.len())
}

/// Smallest candidate threshold `t` with `BPCER(t) <= target`.
///
/// Candidates are the distinct bona fide scores and the float just above the
/// largest of them, so the result is always an attainable operating point.
pub fn threshold_for_bpcer(scores: &ScoreSet, target: f64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "BPCER target {target} must lie in (0, 1)"
        )));
    }
    let mut bona: Vec<f64> = scores.scores_for(Label::Bonafide).collect();
    if bona.is_empty() {
        return Err(Error::NoBonafide);
    }
    bona.sort_by(f64::total_cmp);
    let mut candidates = bona.clone();
    candidates.dedup();
    candidates.push(bona[bona.len() - 1].next_up());
    // BPCER is nonincreasing in t, so the first passing candidate is smallest
    let idx = candidates.partition_point(|&t| bpcer_of(&bona, t) > target);
    Ok(candidates[idx])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(b: &[f64], a: &[f64]) -> ScoreSet {
        ScoreSet::from_scores(b, a).unwrap()
    }

    /// Independent D-EER: brute-force rates at midpoints between distinct
    /// scores, then interpolate at the sign change.
    fn eer_oracle(b: &[f64], a: &[f64]) -> f64 {
        let mut all: Vec<f64> = b.iter().chain(a).copied().collect();
        all.sort_by(f64::total_cmp);
        all.dedup();
        let mut thresholds = vec![all[0] - 1.0];
        thresholds.extend(all.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        thresholds.push(all[all.len() - 1] + 1.0);
        let rates: Vec<(f64, f64)> = thresholds
            .iter()
            .map(|&t| {
                let apcer = a.iter().filter(|&&s| s < t).count() as f64 / a.len() as f64;
                let bpcer = b.iter().filter(|&&s| s >= t).count() as f64 / b.len() as f64;
                (apcer, bpcer)
            })
            .collect();
        for k in 0..rates.len() {
            let d = rates[k].0 - rates[k].1;
            if d == 0.0 {
                return rates[k].0;
            }
            if d > 0.0 {
                let (a0, b0) = rates[k - 1];
                let (a1, b1) = rates[k];
                let lam = -(a0 - b0) / ((a1 - b1) - (a0 - b0));
                return a0 + lam * (a1 - a0);
            }
        }
        unreachable!()
    }

    #[test]
    fn rates_examples() {
        assert_eq!(rates_at(&set(&[0.1, 0.2], &[0.8, 0.9]), 0.5).unwrap(), (0.0, 0.0));
        assert_eq!(rates_at(&set(&[0.1, 0.2], &[0.8, 0.9]), 0.0).unwrap(), (0.0, 1.0));
        assert_eq!(rates_at(&set(&[0.1, 0.6], &[0.4, 0.9]), 0.5).unwrap(), (0.5, 0.5));
        assert!(matches!(
            rates_at(&set(&[0.1], &[]), 0.5),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn det_curve_two_points() {
        let curve = det_curve(&set(&[0.3], &[0.7])).unwrap();
        let pts: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.apcer, p.bpcer)).collect();
        assert_eq!(pts, vec![(0.0, 1.0), (0.0, 1.0), (0.0, 0.0), (1.0, 0.0)]);
        assert!(curve.points[0].threshold < 0.0 && curve.points[3].threshold > 1.0);
        assert_eq!(curve.points[1].threshold, 0.3);
        assert_eq!(curve.points[2].threshold, 0.7);
    }

    #[test]
    fn det_curve_identical_scores_jump() {
        let curve = det_curve(&set(&[0.4, 0.4], &[0.4])).unwrap();
        let pts: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.apcer, p.bpcer)).collect();
        assert_eq!(pts, vec![(0.0, 1.0), (0.0, 1.0), (1.0, 0.0)]);
    }

    #[test]
    fn det_curve_matches_rates_at_and_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let nb = rng.random_range(1..20);
            let na = rng.random_range(1..20);
            // coarse grid so ties are common
            let b: Vec<f64> = (0..nb).map(|_| rng.random_range(0..=20) as f64 / 20.0).collect();
            let a: Vec<f64> = (0..na).map(|_| rng.random_range(0..=20) as f64 / 20.0).collect();
            let s = set(&b, &a);
            let curve = det_curve(&s).unwrap();
            for w in curve.points.windows(2) {
                assert!(w[0].threshold < w[1].threshold);
                assert!(w[0].apcer <= w[1].apcer);
                assert!(w[0].bpcer >= w[1].bpcer);
            }
            for p in &curve.points {
                assert_eq!(rates_at(&s, p.threshold).unwrap(), (p.apcer, p.bpcer));
            }
        }
    }

    #[test]
    fn eer_examples() {
        assert_eq!(d_eer(&set(&[0.1, 0.2], &[0.8, 0.9])).unwrap().eer, 0.0);
        let e = d_eer(&set(&[0.1, 0.4, 0.6], &[0.5, 0.7, 0.9])).unwrap();
        assert!((e.eer - 1.0 / 3.0).abs() < 1e-12);
        assert!((e.eer - eer_oracle(&[0.1, 0.4, 0.6], &[0.5, 0.7, 0.9])).abs() < 1e-12);
        assert_eq!(e.threshold, 0.6);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let same: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
        let e = d_eer(&set(&same, &same)).unwrap();
        assert!((e.eer - 0.5).abs() <= 0.05, "{}", e.eer);
    }

    #[test]
    fn eer_matches_oracle_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..300 {
            let nb = rng.random_range(1..100);
            let na = rng.random_range(1..100);
            let shift: f64 = rng.random_range(0.0..0.5);
            let b: Vec<f64> = (0..nb).map(|_| rng.random_range(0.0..1.0 - shift)).collect();
            let a: Vec<f64> = (0..na).map(|_| rng.random_range(shift..1.0)).collect();
            let got = d_eer(&set(&b, &a)).unwrap().eer;
            assert!((got - eer_oracle(&b, &a)).abs() < 1e-9);
        }
    }

    #[test]
    fn bpcer_threshold_examples() {
        let nine: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
        let t = threshold_for_bpcer(&set(&nine, &[]), 0.2).unwrap();
        assert_eq!(t, 0.9);
        assert!(nine.iter().filter(|&&s| s >= t).count() <= 1);

        let t = threshold_for_bpcer(&set(&nine, &[]), 0.999).unwrap();
        assert_eq!(t, 0.2);

        let t = threshold_for_bpcer(&set(&[0.5, 0.5, 0.5], &[0.9]), 0.01).unwrap();
        assert_eq!(t, 0.5f64.next_up());

        let hundred: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        assert_eq!(threshold_for_bpcer(&set(&hundred, &[]), 0.02).unwrap(), 0.98);

        assert!(matches!(
            threshold_for_bpcer(&set(&[], &[0.5]), 0.1),
            Err(Error::NoBonafide)
        ));
        assert!(threshold_for_bpcer(&set(&nine, &[]), 0.0).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b: Vec<f64> = (0..20).map(|_| rng.random()).collect();
        let a: Vec<f64> = (0..20).map(|_| rng.random()).collect();
        let s = set(&b, &a);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"sample_id,label,score\n"));
        assert_eq!(ScoreSet::read_csv(buf.as_slice()).unwrap(), s);
    }

    #[test]
    fn csv_errors() {
        let bad_label = "sample_id,label,score\na,real,0.5\n";
        assert!(matches!(
            ScoreSet::read_csv(bad_label.as_bytes()),
            Err(Error::UnknownLabel { line: 2, .. })
        ));
        let out_of_range = "sample_id,label,score\na,attack,1.5\n";
        assert!(matches!(
            ScoreSet::read_csv(out_of_range.as_bytes()),
            Err(Error::InvalidScore { .. })
        ));
        let dup = "sample_id,label,score\na,attack,0.5\na,bonafide,0.1\n";
        assert!(matches!(
            ScoreSet::read_csv(dup.as_bytes()),
            Err(Error::DuplicateId(_))
        ));
        assert!(ScoreSet::read_csv("id,label,score\n".as_bytes()).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn scores() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
            (
                prop::collection::vec(0.0f64..=1.0, 1..60),
                prop::collection::vec(0.0f64..=1.0, 1..60),
            )
        }

        proptest! {
            #[test]
            fn swap_and_flip_symmetry((b, a) in scores()) {
                let original = d_eer(&set(&b, &a)).unwrap().eer;
                let flip = |v: &[f64]| v.iter().map(|s| 1.0 - s).collect::<Vec<_>>();
                // flipped attacks become bona fide and vice versa
                let mirrored = d_eer(&set(&flip(&a), &flip(&b))).unwrap().eer;
                prop_assert_eq!(original, mirrored);
            }

            #[test]
            fn bpcer_threshold_meets_target((b, a) in scores(), target in 0.001f64..0.999) {
                let s = set(&b, &a);
                let t = threshold_for_bpcer(&s, target).unwrap();
                prop_assert!(rates_at(&s, t).unwrap().1 <= target);
            }

            #[test]
            fn rates_are_monotone_in_threshold((b, a) in scores(), t1 in -0.1f64..1.1, t2 in -0.1f64..1.1) {
                let s = set(&b, &a);
                let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
                let (a_lo, b_lo) = rates_at(&s, lo).unwrap();
                let (a_hi, b_hi) = rates_at(&s, hi).unwrap();
                prop_assert!(a_lo <= a_hi && b_lo >= b_hi);
                prop_assert!((0.0..=1.0).contains(&a_lo) && (0.0..=1.0).contains(&b_hi));
            }
        }
    }
}

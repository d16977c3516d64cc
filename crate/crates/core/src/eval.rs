//! Open-set metrics: CCR and FPR at a confidence threshold, the OSCR curve,
//! CCR at a target FPR, closed-set accuracy, and openness.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One scored test sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionRecord {
    /// Largest class probability.
    pub score: f64,
    pub predicted: usize,
    pub label: usize,
    /// Whether the argmax class equals the label; always false for unknowns.
    pub correct: bool,
    pub is_unknown: bool,
}

impl PredictionRecord {
    pub fn new(score: f64, predicted: usize, label: usize, is_unknown: bool) -> Self {
        Self {
            score,
            predicted,
            label,
            correct: !is_unknown && predicted == label,
            is_unknown,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OscrPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub ccr: f64,
}

/// Points sorted by threshold, descending.
#[derive(Debug, Clone, PartialEq)]
pub struct OscrCurve {
    pub points: Vec<OscrPoint>,
}

fn counts(records: &[PredictionRecord]) -> Result<(usize, usize)> {
    let unknown = records.iter().filter(|r| r.is_unknown).count();
    let known = records.len() - unknown;
    if known == 0 || unknown == 0 {
        return Err(Error::domain(format!(
            "open-set metrics need known and unknown records, got {known} known and {unknown} unknown"
        )));
    }
    Ok((known, unknown))
}

/// `(FPR(p), CCR(p))`. Unknowns count as accepted when `score >= p`,
/// knowns as correctly accepted when correct and `score > p`.
pub fn ccr_fpr_at(records: &[PredictionRecord], p: f64) -> Result<(f64, f64)> {
    let (known, unknown) = counts(records)?;
    let fp = records.iter().filter(|r| r.is_unknown && r.score >= p).count();
    let tp = records
        .iter()
        .filter(|r| !r.is_unknown && r.correct && r.score > p)
        .count();
    Ok((fp as f64 / unknown as f64, tp as f64 / known as f64))
}

/// Fraction of known records classified correctly.
pub fn closed_set_accuracy(records: &[PredictionRecord]) -> Result<f64> {
    let known: Vec<_> = records.iter().filter(|r| !r.is_unknown).collect();
    if known.is_empty() {
        return Err(Error::domain("no known records"));
    }
    Ok(known.iter().filter(|r| r.correct).count() as f64 / known.len() as f64)
}

/// Evaluates every distinct score, zero, the midpoint of each gap between
/// consecutive ones, and one threshold above the largest score.
pub fn oscr_curve(records: &[PredictionRecord]) -> Result<OscrCurve> {
    let (known, unknown) = counts(records)?;
    if let Some(r) = records.iter().find(|r| !r.score.is_finite()) {
        return Err(Error::domain(format!("non-finite score {}", r.score)));
    }
    let mut scores: Vec<f64> = records.iter().map(|r| r.score).collect();
    scores.push(0.0);
    scores.sort_by(|a, b| b.total_cmp(a));
    scores.dedup();
    // Both rates are constant between consecutive distinct scores, so one
    // midpoint per gap covers every achievable operating point.
    let mut thresholds = vec![scores[0] + 1.0];
    for (i, &s) in scores.iter().enumerate() {
        thresholds.push(s);
        if let Some(&next) = scores.get(i + 1) {
            thresholds.push(0.5 * (s + next));
        }
    }

    let mut unknown_scores: Vec<f64> = records.iter().filter(|r| r.is_unknown).map(|r| r.score).collect();
    let mut correct_scores: Vec<f64> = records
        .iter()
        .filter(|r| !r.is_unknown && r.correct)
        .map(|r| r.score)
        .collect();
    unknown_scores.sort_by(|a, b| b.total_cmp(a));
    correct_scores.sort_by(|a, b| b.total_cmp(a));

    let (mut fp, mut tp) = (0, 0);
    let points = thresholds
        .into_iter()
        .map(|t| {
            while fp < unknown_scores.len() && unknown_scores[fp] >= t {
                fp += 1;
            }
            while tp < correct_scores.len() && correct_scores[tp] > t {
                tp += 1;
            }
            OscrPoint {
                threshold: t,
                fpr: fp as f64 / unknown as f64,
                ccr: tp as f64 / known as f64,
            }
        })
        .collect();
    Ok(OscrCurve { points })
}

/// Largest CCR among points with `fpr <= q`; zero when there is none.
pub fn ccr_at_fpr(curve: &OscrCurve, q: f64) -> Result<f64> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::domain(format!("target FPR {q} is outside (0, 1]")));
    }
    Ok(curve
        .points
        .iter()
        .filter(|p| p.fpr <= q)
        .map(|p| p.ccr)
        .fold(0.0, f64::max))
}

/// `1 - sqrt(2 known / (2 known + unknown))` over class counts.
pub fn openness(known_classes: usize, unknown_classes: usize) -> Result<f64> {
    if known_classes == 0 {
        return Err(Error::domain("openness needs at least one known class"));
    }
    let k = 2.0 * known_classes as f64;
    Ok(1.0 - (k / (k + unknown_classes as f64)).sqrt())
}

/// Number of unknown classes whose openness with `known` classes is closest
/// to `target` (ties go to the smaller count).
pub fn unknown_classes_for(known: usize, target: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&target) {
        return Err(Error::domain(format!("openness {target} is outside [0, 1)")));
    }
    let k = 2.0 * known as f64;
    let exact = k / (1.0 - target).powi(2) - k;
    let lo = exact.floor().max(0.0) as usize;
    let best = [lo, lo + 1]
        .into_iter()
        .map(|u| Ok((u, (openness(known, u)? - target).abs())))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold((lo, f64::INFINITY), |b, (u, d)| if d < b.1 { (u, d) } else { b });
    Ok(best.0)
}

/// Partition of `total` classes into known and unknown counts whose openness
/// is closest to `target`; at least two classes stay known.
pub fn split_classes_for_openness(total: usize, target: f64) -> Result<(usize, usize)> {
    if total < 2 {
        return Err(Error::domain("need at least two classes"));
    }
    if !(0.0..1.0).contains(&target) {
        return Err(Error::domain(format!("openness {target} is outside [0, 1)")));
    }
    let mut best = (total, 0, f64::INFINITY);
    for known in (2..=total).rev() {
        let d = (openness(known, total - known)? - target).abs();
        if d < best.2 - 1e-12 {
            best = (known, total - known, d);
        }
    }
    Ok((best.0, best.1))
}

#[derive(Debug, Deserialize)]
struct RecordRow {
    score: f64,
    predicted: usize,
    label: usize,
    is_unknown: u8,
}

#[derive(Debug, Serialize)]
struct RecordRowOut {
    score: f64,
    predicted: usize,
    label: usize,
    is_unknown: u8,
}

/// Reads `score,predicted,label,is_unknown` rows (with header).
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    let path = path.as_ref();
    let parse_err = |line: usize, msg: String| Error::Parse {
        file: path.to_path_buf(),
        line,
        msg,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| parse_err(0, e.to_string()))?;
    let mut out = Vec::new();
    for row in reader.deserialize::<RecordRow>() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        if row.is_unknown > 1 {
            return Err(parse_err(out.len() + 2, "is_unknown must be 0 or 1".into()));
        }
        out.push(PredictionRecord::new(
            row.score,
            row.predicted,
            row.label,
            row.is_unknown == 1,
        ));
    }
    Ok(out)
}

pub fn write_records(path: impl AsRef<Path>, records: &[PredictionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    for r in records {
        w.serialize(RecordRowOut {
            score: r.score,
            predicted: r.predicted,
            label: r.label,
            is_unknown: u8::from(r.is_unknown),
        })
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `threshold,fpr,ccr` rows.
pub fn write_curve(path: impl AsRef<Path>, curve: &OscrCurve) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    for p in &curve.points {
        w.serialize(p).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Vec<PredictionRecord> {
        vec![
            PredictionRecord::new(0.9, 0, 0, false),
            PredictionRecord::new(0.6, 1, 1, false),
            PredictionRecord::new(0.4, 2, 2, false),
            PredictionRecord::new(0.8, 1, 0, false),
            PredictionRecord::new(0.7, 0, 3, true),
            PredictionRecord::new(0.3, 1, 3, true),
        ]
    }

    #[test]
    fn hand_fixture() {
        let r = fixture();
        assert_eq!(ccr_fpr_at(&r, 0.5).unwrap(), (0.5, 0.5));
        assert_eq!(ccr_fpr_at(&r, 0.0).unwrap(), (1.0, 0.75));
        assert_eq!(ccr_fpr_at(&r, 1.01).unwrap(), (0.0, 0.0));
        assert_eq!(closed_set_accuracy(&r).unwrap(), 0.75);
        let curve = oscr_curve(&r).unwrap();
        // reached between the scores 0.4 and 0.3
        assert_eq!(ccr_at_fpr(&curve, 0.5).unwrap(), 0.75);
        assert_eq!(ccr_at_fpr(&curve, 0.25).unwrap(), 0.25);
        assert_eq!(ccr_at_fpr(&curve, 1.0).unwrap(), 0.75);
    }

    #[test]
    fn hand_curve_points() {
        let curve = oscr_curve(&fixture()).unwrap();
        let got: Vec<_> = curve.points.iter().map(|p| (p.threshold, p.fpr, p.ccr)).collect();
        let expected = vec![
            (0.9 + 1.0, 0.0, 0.0),
            (0.9, 0.0, 0.0),
            (0.5 * (0.9 + 0.8), 0.0, 0.25),
            (0.8, 0.0, 0.25),
            (0.5 * (0.8 + 0.7), 0.0, 0.25),
            (0.7, 0.5, 0.25),
            (0.5 * (0.7 + 0.6), 0.5, 0.25),
            (0.6, 0.5, 0.25),
            (0.5 * (0.6 + 0.4), 0.5, 0.5),
            (0.4, 0.5, 0.5),
            (0.5 * (0.4 + 0.3), 0.5, 0.75),
            (0.3, 1.0, 0.75),
            (0.5 * 0.3, 1.0, 0.75),
            (0.0, 1.0, 0.75),
        ];
        assert_eq!(got, expected);
    }

    #[test]
    fn degenerate_inputs() {
        let only_known = vec![PredictionRecord::new(0.5, 0, 0, false)];
        assert!(ccr_fpr_at(&only_known, 0.5).is_err());
        assert!(oscr_curve(&only_known).is_err());
        let tied = vec![
            PredictionRecord::new(0.5, 0, 0, false),
            PredictionRecord::new(0.5, 0, 1, true),
        ];
        let curve = oscr_curve(&tied).unwrap();
        assert_eq!(curve.points.len(), 4);
        let usable: Vec<(f64, f64)> = curve
            .points
            .iter()
            .filter(|p| !curve.points.iter().any(|q| q.fpr <= p.fpr && q.ccr > p.ccr))
            .map(|p| (p.fpr.to_bits(), p.ccr.to_bits()))
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .map(|(f, c): (u64, u64)| (f64::from_bits(f), f64::from_bits(c)))
            .collect();
        assert_eq!(usable, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert!(ccr_at_fpr(&curve, 0.0).is_err());
    }

    #[test]
    fn openness_examples() {
        assert_eq!(openness(7, 0).unwrap(), 0.0);
        assert!((openness(2, 1).unwrap() - (1.0 - 0.8_f64.sqrt())).abs() < 1e-15);
        assert!((openness(10, 5).unwrap() - (1.0 - 0.8_f64.sqrt())).abs() < 1e-15);
        assert!(openness(0, 3).is_err());
        assert_eq!(unknown_classes_for(10, 0.1).unwrap(), 5);
        assert_eq!(unknown_classes_for(4, 0.0).unwrap(), 0);
    }

    #[test]
    fn class_partitions_for_sweep() {
        let knowns: Vec<usize> = [0.05, 0.10, 0.15, 0.20]
            .iter()
            .map(|&t| split_classes_for_openness(8, t).unwrap().0)
            .collect();
        assert!(knowns.windows(2).all(|w| w[0] >= w[1]), "{knowns:?}");
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.csv");
        write_records(&path, &fixture()).unwrap();
        assert_eq!(read_records(&path).unwrap(), fixture());
        std::fs::write(&path, "score,predicted,label,is_unknown\n0.5,1,1,0\nx,1,1,0\n").unwrap();
        match read_records(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }
}

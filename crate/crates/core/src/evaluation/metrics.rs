//! Threshold sweeps and the ODS / OIS / AP summaries.

use crate::data::raster::{EdgeGroundTruth, EdgeMap};
use crate::error::{Error, Result};
use crate::evaluation::matching::correspond;

/// Number of recall levels `0.01, 0.02, .., 1.00` used for AP.
pub const AP_RECALL_LEVELS: usize = 100;

/// The 99 uniform thresholds `0.01, 0.02, .., 0.99`.
pub fn default_thresholds() -> Vec<f64> {
    (1..100).map(|k| k as f64 / 100.0).collect()
}

/// Raw correspondence counts; precision and recall derive from these.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PrCounts {
    pub matched_pred: usize,
    pub total_pred: usize,
    pub matched_gt: usize,
    pub total_gt: usize,
}

impl std::ops::Add for PrCounts {
    type Output = PrCounts;
    fn add(self, o: PrCounts) -> PrCounts {
        PrCounts {
            matched_pred: self.matched_pred + o.matched_pred,
            total_pred: self.total_pred + o.total_pred,
            matched_gt: self.matched_gt + o.matched_gt,
            total_gt: self.total_gt + o.total_gt,
        }
    }
}

impl PrCounts {
    /// With nothing predicted precision is 1, except that predictions on an
    /// edge-free ground truth score 0.
    pub fn precision(&self) -> f64 {
        match (self.total_pred, self.total_gt) {
            (0, _) => 1.0,
            (_, 0) => 0.0,
            (p, _) => self.matched_pred as f64 / p as f64,
        }
    }

    /// Recall is 1 only when both sides are empty, 0 on an edge-free ground
    /// truth with predictions.
    pub fn recall(&self) -> f64 {
        match (self.total_pred, self.total_gt) {
            (0, 0) => 1.0,
            (_, 0) => 0.0,
            (_, g) => self.matched_gt as f64 / g as f64,
        }
    }

    pub fn f_measure(&self) -> f64 {
        f_measure(self.precision(), self.recall())
    }

    /// Exact test of `recall >= level / AP_RECALL_LEVELS`.
    pub fn recall_at_least(&self, level: usize) -> bool {
        if self.total_gt == 0 {
            return self.recall() * AP_RECALL_LEVELS as f64 >= level as f64;
        }
        self.matched_gt * AP_RECALL_LEVELS >= level * self.total_gt
    }
}

pub fn f_measure(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// One point of a precision-recall curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub counts: PrCounts,
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

impl PrPoint {
    pub fn new(threshold: f64, counts: PrCounts) -> Self {
        Self { threshold, counts, precision: counts.precision(), recall: counts.recall(), f: counts.f_measure() }
    }
}

/// Binarizes `pred` (already suppressed) at each threshold and matches it
/// against `gt`.
pub fn pr_sweep(pred: &EdgeMap, gt: &EdgeGroundTruth, thresholds: &[f64], max_dist: f64) -> Result<Vec<PrPoint>> {
    thresholds
        .iter()
        .map(|&t| {
            let m = correspond(&pred.binarize(t), gt, max_dist)?;
            let counts = PrCounts {
                matched_pred: m.matched_pred(),
                total_pred: m.pred_total,
                matched_gt: m.matched_gt(),
                total_gt: m.gt_total,
            };
            Ok(PrPoint::new(t, counts))
        })
        .collect()
}

fn check_sweeps(sweeps: &[Vec<PrPoint>]) -> Result<usize> {
    let n = sweeps.first().map(Vec::len).ok_or_else(|| Error::invalid("benchmark", "no images"))?;
    if n == 0 || sweeps.iter().any(|s| s.len() != n) {
        return Err(Error::invalid("benchmark", "every image needs the same non-empty threshold list"));
    }
    for s in sweeps {
        if s.iter().zip(&sweeps[0]).any(|(a, b)| a.threshold != b.threshold) || s.windows(2).any(|w| w[0].threshold >= w[1].threshold) {
            return Err(Error::invalid("benchmark", "thresholds must be identical and strictly increasing"));
        }
    }
    Ok(n)
}

/// Dataset-level curve: counts summed over images at each threshold.
pub fn aggregate_curve(sweeps: &[Vec<PrPoint>]) -> Result<Vec<PrPoint>> {
    let n = check_sweeps(sweeps)?;
    Ok((0..n)
        .map(|k| PrPoint::new(sweeps[0][k].threshold, sweeps.iter().map(|s| s[k].counts).fold(PrCounts::default(), |a, b| a + b)))
        .collect())
}

/// Index of the highest F; ties go to the earliest (lowest threshold) entry.
fn best_index(points: &[PrPoint]) -> usize {
    let mut best = 0;
    for (i, p) in points.iter().enumerate() {
        if p.f > points[best].f {
            best = i;
        }
    }
    best
}

/// Best single threshold for the whole dataset: `(threshold, F)`.
pub fn ods(sweeps: &[Vec<PrPoint>]) -> Result<(f64, f64)> {
    let curve = aggregate_curve(sweeps)?;
    let p = curve[best_index(&curve)];
    Ok((p.threshold, p.f))
}

/// Per-image best thresholds, aggregated: returns the F of the summed
/// counts and each image's chosen point.
pub fn ois(sweeps: &[Vec<PrPoint>]) -> Result<(f64, Vec<PrPoint>)> {
    check_sweeps(sweeps)?;
    let chosen: Vec<PrPoint> = sweeps.iter().map(|s| s[best_index(s)]).collect();
    let total = chosen.iter().map(|p| p.counts).fold(PrCounts::default(), |a, b| a + b);
    Ok((total.f_measure(), chosen))
}

/// Interpolated average precision: the mean over recall levels
/// `0.01 .. 1.00` of the best precision reached at or above that recall
/// (0 where the level is never reached).
pub fn average_precision(sweeps: &[Vec<PrPoint>]) -> Result<f64> {
    let curve = aggregate_curve(sweeps)?;
    Ok(ap_of_curve(&curve))
}

pub fn ap_of_curve(curve: &[PrPoint]) -> f64 {
    (1..=AP_RECALL_LEVELS)
        .map(|level| {
            curve.iter().filter(|p| p.counts.recall_at_least(level)).map(|p| p.precision).fold(0.0, f64::max)
        })
        .sum::<f64>()
        / AP_RECALL_LEVELS as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(t: f64, mp: usize, tp: usize, mg: usize, tg: usize) -> PrPoint {
        PrPoint::new(t, PrCounts { matched_pred: mp, total_pred: tp, matched_gt: mg, total_gt: tg })
    }

    #[test]
    fn empty_conventions() {
        let both = PrCounts::default();
        assert_eq!((both.precision(), both.recall(), both.f_measure()), (1.0, 1.0, 1.0));
        let no_pred = PrCounts { total_gt: 5, ..Default::default() };
        assert_eq!((no_pred.precision(), no_pred.recall()), (1.0, 0.0));
        let no_gt = PrCounts { total_pred: 3, ..Default::default() };
        assert_eq!((no_gt.precision(), no_gt.recall(), no_gt.f_measure()), (0.0, 0.0, 0.0));
    }

    #[test]
    fn ap_of_three_point_curve() {
        // Recall 0.2 at precision 1, 0.5 at 0.8, 0.9 at 0.5, never 1.0.
        let curve = [point(0.1, 45, 90, 9, 10), point(0.5, 4, 5, 5, 10), point(0.9, 2, 2, 2, 10)];
        let expected = (20.0 * 1.0 + 30.0 * 0.8 + 40.0 * 0.5 + 10.0 * 0.0) / 100.0;
        assert!((ap_of_curve(&curve) - expected).abs() < 1e-12);
    }

    #[test]
    fn ods_ties_prefer_lower_threshold_and_single_image_ois_equals_ods() {
        let sweep = vec![point(0.2, 1, 2, 1, 2), point(0.4, 1, 2, 1, 2), point(0.6, 0, 0, 0, 2)];
        let (t, f) = ods(&[sweep.clone()]).unwrap();
        assert_eq!((t, f), (0.2, 0.5));
        let (o, chosen) = ois(&[sweep]).unwrap();
        assert_eq!(o, f);
        assert_eq!(chosen[0].threshold, 0.2);
    }

    #[test]
    fn ods_aggregates_counts_not_scores() {
        let a = vec![point(0.3, 1, 1, 1, 1), point(0.6, 0, 0, 0, 1)];
        let b = vec![point(0.3, 0, 9, 0, 9), point(0.6, 9, 9, 9, 9)];
        let (t, f) = ods(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(t, 0.6);
        assert!((f - 18.0 / 19.0).abs() < 1e-12, "{f}");
        let (o, _) = ois(&[a, b]).unwrap();
        assert_eq!(o, 1.0);
    }

    #[test]
    fn recall_is_non_increasing_in_threshold() {
        let pred = EdgeMap::new(4, 4, (0..16).map(|i| (i * 7 % 16) as f64 / 16.0).collect()).unwrap();
        let gt = EdgeGroundTruth::new(4, 4, (0..16).map(|i| u8::from(i % 3 == 0)).collect()).unwrap();
        let sweep = pr_sweep(&pred, &gt, &default_thresholds(), 0.2).unwrap();
        assert!(sweep.windows(2).all(|w| w[0].recall >= w[1].recall));
        assert_eq!(sweep.last().unwrap().counts.total_pred, 0);
    }
}

// SPDX-License-Identifier: Apache-2.0

use super::{match_by_center, Box3D, EvalConfig, Matching};

const RECALL_SAMPLES: usize = 101;

/// Raw precision/recall after each ranked detection.
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
}

impl PrCurve {
    pub fn from_matching(m: &Matching) -> Self {
        Self::from_flags(m.ranked.iter().map(|(_, gt)| gt.is_some()), m.n_gt)
    }

    /// Curve from true-positive flags in ranking order.
    pub fn from_flags(flags: impl IntoIterator<Item = bool>, n_gt: usize) -> Self {
        let mut tp = 0usize;
        let (mut recall, mut precision) = (Vec::new(), Vec::new());
        for (k, hit) in flags.into_iter().enumerate() {
            tp += hit as usize;
            recall.push(tp as f64 / n_gt as f64);
            precision.push(tp as f64 / (k + 1) as f64);
        }
        PrCurve { recall, precision }
    }
}

/// Precision at `RECALL_SAMPLES` evenly spaced recalls in `[0, 1]`.
///
/// Linear interpolation between the last curve point at or below the query
/// recall and the next one; queries below the first recall take the first
/// precision, queries above the last recall get 0.
pub fn interpolated_precision(curve: &PrCurve) -> Vec<f64> {
    let (rec, prec) = (&curve.recall, &curve.precision);
    (0..RECALL_SAMPLES)
        .map(|i| {
            let r = i as f64 / (RECALL_SAMPLES - 1) as f64;
            let n = rec.len();
            if n == 0 {
                return 0.0;
            }
            if r < rec[0] {
                return prec[0];
            }
            if r > rec[n - 1] {
                return 0.0;
            }
            if r == rec[n - 1] {
                return prec[n - 1];
            }
            // Last j with rec[j] <= r; rec is non-decreasing so j < n - 1.
            let j = rec.partition_point(|&x| x <= r) - 1;
            let slope = (prec[j + 1] - prec[j]) / (rec[j + 1] - rec[j]);
            slope * (r - rec[j]) + prec[j]
        })
        .collect()
}

/// AP for a single category at one match threshold.
pub fn average_precision(dets: &[Box3D], gts: &[Box3D], threshold: f64, config: &EvalConfig) -> f64 {
    if gts.is_empty() || dets.is_empty() {
        return 0.0;
    }
    let m = match_by_center(dets, gts, threshold);
    ap_from_matching(&m, config)
}

pub(crate) fn ap_from_matching(m: &Matching, config: &EvalConfig) -> f64 {
    ap_from_flags(m.ranked.iter().map(|(_, gt)| gt.is_some()), m.n_gt, config)
}

pub(crate) fn ap_from_flags(flags: impl IntoIterator<Item = bool>, n_gt: usize, config: &EvalConfig) -> f64 {
    let curve = PrCurve::from_flags(flags, n_gt);
    if n_gt == 0 || curve.recall.is_empty() {
        return 0.0;
    }
    let prec = interpolated_precision(&curve);
    let first = (100.0 * config.recall_floor).round() as usize + 1;
    let kept = &prec[first.min(prec.len())..];
    if kept.is_empty() {
        return 0.0;
    }
    let min_p = config.min_precision_floor;
    // Normalizing per sample keeps a perfect curve at exactly 1.
    let scale = 1.0 - min_p;
    kept.iter().map(|p| (p - min_p).max(0.0) / scale).sum::<f64>() / kept.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn boxat(x: f64, score: f64) -> Box3D {
        Box3D::new(Vector3::new(x, 0.0, 0.5), [1.0, 1.0, 1.0], 0.0, 0, score).unwrap()
    }

    #[test]
    fn perfect_is_one() {
        let gts: Vec<Box3D> = (0..7).map(|i| boxat(i as f64 * 10.0, 1.0)).collect();
        assert_eq!(average_precision(&gts, &gts, 0.5, &EvalConfig::default()), 1.0);
    }

    #[test]
    fn empty_cases_are_zero() {
        let gts = vec![boxat(0.0, 1.0)];
        let cfg = EvalConfig::default();
        assert_eq!(average_precision(&[], &gts, 2.0, &cfg), 0.0);
        assert_eq!(average_precision(&gts, &[], 2.0, &cfg), 0.0);
        assert_eq!(average_precision(&[], &[], 2.0, &cfg), 0.0);
    }

    #[test]
    fn interpolation_matches_numpy_interp() {
        // Frozen from numpy.interp(linspace(0, 1, 101), rec, prec, right=0)
        // for ranking TP, FP, TP, FP, TP with 4 GT.
        let curve = PrCurve {
            recall: vec![0.25, 0.25, 0.5, 0.5, 0.75],
            precision: vec![1.0, 0.5, 2.0 / 3.0, 0.5, 0.6],
        };
        let p = interpolated_precision(&curve);
        assert_eq!(p.len(), 101);
        assert_eq!(p[0], 1.0);
        assert_eq!(p[25], 0.5);
        assert!((p[30] - 0.533_333_333_333_333_3).abs() < 1e-15);
        assert_eq!(p[50], 0.5);
        assert!((p[60] - 0.54).abs() < 1e-15);
        assert_eq!(p[75], 0.6);
        assert_eq!(p[76], 0.0);
    }

    #[test]
    fn leading_false_positive() {
        let dets = vec![boxat(50.0, 0.9), boxat(0.0, 0.8)];
        let gts = vec![boxat(0.0, 1.0)];
        let m = match_by_center(&dets, &gts, 2.0);
        let curve = PrCurve::from_matching(&m);
        assert_eq!(curve.recall, vec![0.0, 1.0]);
        assert_eq!(curve.precision, vec![0.0, 0.5]);
        // Precision rises linearly from 0 to 0.5 across recall.
        let ap = ap_from_matching(&m, &EvalConfig::default());
        let oracle: f64 = (11..=100)
            .map(|i| (0.5 * i as f64 / 100.0 - 0.1_f64).max(0.0))
            .sum::<f64>()
            / 90.0
            / 0.9;
        assert!((ap - oracle).abs() < 1e-12);
    }
}

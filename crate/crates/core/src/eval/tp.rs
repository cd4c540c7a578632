// SPDX-License-Identifier: Apache-2.0

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{Box3D, Matching};

/// Mean true-positive errors. `None` when no matched pair carries the
/// quantity (no matches at all, or no velocities/attributes on either side).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TpErrors {
    pub ate: Option<f64>,
    pub ase: Option<f64>,
    pub aoe: Option<f64>,
    pub ave: Option<f64>,
    pub aae: Option<f64>,
}

impl TpErrors {
    pub const ZERO: TpErrors = TpErrors {
        ate: Some(0.0),
        ase: Some(0.0),
        aoe: Some(0.0),
        ave: Some(0.0),
        aae: Some(0.0),
    };

    pub fn as_array(&self) -> [Option<f64>; 5] {
        [self.ate, self.ase, self.aoe, self.ave, self.aae]
    }

    pub fn from_array(a: [Option<f64>; 5]) -> Self {
        TpErrors {
            ate: a[0],
            ase: a[1],
            aoe: a[2],
            ave: a[3],
            aae: a[4],
        }
    }

    /// Per-metric mean over the entries where that metric is present.
    pub fn mean_of(items: &[TpErrors]) -> TpErrors {
        let mut out = [None; 5];
        for (k, slot) in out.iter_mut().enumerate() {
            let vals: Vec<f64> = items.iter().filter_map(|t| t.as_array()[k]).collect();
            if !vals.is_empty() {
                *slot = Some(vals.iter().sum::<f64>() / vals.len() as f64);
            }
        }
        TpErrors::from_array(out)
    }
}

/// Smallest absolute difference between two headings.
pub(crate) fn yaw_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

/// IoU of two boxes after aligning their centers and headings.
pub(crate) fn aligned_iou(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let inter: f64 = (0..3).map(|k| a[k].min(b[k])).product();
    let va: f64 = a.iter().product();
    let vb: f64 = b.iter().product();
    inter / (va + vb - inter)
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Averages the five error terms over `matching.pairs`.
pub fn tp_errors(matching: &Matching, dets: &[Box3D], gts: &[Box3D]) -> TpErrors {
    let mut ate = Vec::new();
    let mut ase = Vec::new();
    let mut aoe = Vec::new();
    let mut ave = Vec::new();
    let mut attr_hits = Vec::new();
    for &(d, g) in &matching.pairs {
        let (det, gt) = (&dets[d], &gts[g]);
        ate.push(det.bev_distance(gt));
        ase.push(1.0 - aligned_iou(&det.size, &gt.size));
        aoe.push(yaw_diff(det.yaw, gt.yaw));
        if let (Some(vd), Some(vg)) = (det.velocity, gt.velocity) {
            ave.push((vd[0] - vg[0]).hypot(vd[1] - vg[1]));
        }
        if let (Some(ad), Some(ag)) = (det.attribute, gt.attribute) {
            attr_hits.push(if ad == ag { 1.0 } else { 0.0 });
        }
    }
    TpErrors {
        ate: mean(&ate),
        ase: mean(&ase),
        aoe: mean(&aoe),
        ave: mean(&ave),
        aae: mean(&attr_hits).map(|acc| 1.0 - acc),
    }
}

/// `(5·mAP + Σ (1 − min(1, e))) / 10`; a missing error scores 0.
pub fn nds(map: f64, errors: &TpErrors) -> f64 {
    let tp: f64 = errors
        .as_array()
        .iter()
        .map(|e| e.map_or(0.0, |e| 1.0 - e.clamp(0.0, 1.0)))
        .sum();
    (5.0 * map + tp) / 10.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::match_by_center;
    use nalgebra::Vector3;

    fn car(x: f64, y: f64, yaw: f64, size: [f64; 3]) -> Box3D {
        Box3D::new(Vector3::new(x, y, 0.75), size, yaw, 0, 0.9).unwrap()
    }

    #[test]
    fn identity_match_has_zero_errors() {
        let gts = vec![
            car(0.0, 0.0, 0.3, [2.0, 4.0, 1.5])
                .with_velocity([1.0, 0.0])
                .with_attribute(2),
            car(8.0, 3.0, -1.0, [1.0, 1.0, 1.8])
                .with_velocity([0.0, 0.5])
                .with_attribute(0),
        ];
        let m = match_by_center(&gts, &gts, 2.0);
        assert_eq!(tp_errors(&m, &gts, &gts), TpErrors::ZERO);
    }

    #[test]
    fn three_four_five() {
        let gt = car(1.0, 1.0, 0.0, [2.0, 4.0, 1.5]);
        let det = car(1.3, 1.4, 0.0, [2.0, 4.0, 1.5]);
        let m = match_by_center(std::slice::from_ref(&det), std::slice::from_ref(&gt), 2.0);
        let e = tp_errors(&m, &[det], &[gt]);
        assert!((e.ate.unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(e.ase, Some(0.0));
        assert_eq!(e.ave, None);
        assert_eq!(e.aae, None);
    }

    #[test]
    fn orientation_and_scale() {
        let gt = car(0.0, 0.0, 0.0, [2.0, 4.0, 1.5]);
        let det = car(0.0, 0.0, PI / 2.0, [2.0, 4.0, 1.5]);
        let m = match_by_center(std::slice::from_ref(&det), std::slice::from_ref(&gt), 2.0);
        let e = tp_errors(&m, &[det], &[gt]);
        assert!((e.aoe.unwrap() - PI / 2.0).abs() < 1e-12);
        assert_eq!(e.ase, Some(0.0));

        // Half the length: IoU = 6 / 12.
        assert!((aligned_iou(&[2.0, 2.0, 1.5], &[2.0, 4.0, 1.5]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn yaw_wraps() {
        assert!((yaw_diff(PI - 0.1, -PI + 0.1) - 0.2).abs() < 1e-12);
        assert!((yaw_diff(0.0, PI) - PI).abs() < 1e-12);
    }

    #[test]
    fn nds_bounds_and_profile() {
        assert_eq!(nds(1.0, &TpErrors::ZERO), 1.0);
        let big = TpErrors::from_array([Some(3.0), Some(1.0), Some(2.0), Some(1.5), Some(1.0)]);
        assert_eq!(nds(0.0, &big), 0.0);
        assert_eq!(nds(0.0, &TpErrors::default()), 0.0);
    }

    #[test]
    fn mean_skips_missing() {
        let a = TpErrors::from_array([Some(1.0), None, Some(0.5), None, None]);
        let b = TpErrors::from_array([Some(0.0), Some(0.2), None, None, None]);
        let m = TpErrors::mean_of(&[a, b]);
        assert_eq!(m.as_array(), [Some(0.5), Some(0.2), Some(0.5), None, None]);
    }
}

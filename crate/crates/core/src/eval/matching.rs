// SPDX-License-Identifier: Apache-2.0

use super::Box3D;

/// Greedy center-distance assignment for one category.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matching {
    /// Detection indices by descending score (stable on input order), each
    /// with the ground truth it claimed.
    pub ranked: Vec<(usize, Option<usize>)>,
    /// `(detection, ground truth)` pairs in ranking order.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_dets: Vec<usize>,
    pub unmatched_gts: Vec<usize>,
    pub n_gt: usize,
}

/// Detections, highest score first, each claim the nearest unclaimed ground
/// truth whose BEV center distance is below `threshold`. Distance ties go to
/// the lower ground-truth index.
pub fn match_by_center(dets: &[Box3D], gts: &[Box3D], threshold: f64) -> Matching {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut claimed = vec![false; gts.len()];
    let mut ranked = Vec::with_capacity(dets.len());
    let mut pairs = Vec::new();
    let mut unmatched_dets = Vec::new();
    for d in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if claimed[g] {
                continue;
            }
            let dist = dets[d].bev_distance(gt);
            if dist < threshold && best.is_none_or(|(_, bd)| dist < bd) {
                best = Some((g, dist));
            }
        }
        match best {
            Some((g, _)) => {
                claimed[g] = true;
                pairs.push((d, g));
                ranked.push((d, Some(g)));
            }
            None => {
                unmatched_dets.push(d);
                ranked.push((d, None));
            }
        }
    }
    let unmatched_gts = (0..gts.len()).filter(|&g| !claimed[g]).collect();
    Matching {
        ranked,
        pairs,
        unmatched_dets,
        unmatched_gts,
        n_gt: gts.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn boxat(x: f64, y: f64, score: f64) -> Box3D {
        Box3D::new(Vector3::new(x, y, 0.5), [1.0, 2.0, 1.0], 0.0, 0, score).unwrap()
    }

    #[test]
    fn perfect_detections_all_match() {
        let gts = vec![boxat(1.0, 1.0, 1.0), boxat(10.0, -3.0, 1.0), boxat(-5.0, 7.0, 1.0)];
        let m = match_by_center(&gts, &gts, 0.5);
        assert_eq!(m.pairs.len(), 3);
        assert!(m.pairs.iter().all(|(d, g)| d == g));
        assert!(m.unmatched_dets.is_empty() && m.unmatched_gts.is_empty());
    }

    #[test]
    fn beyond_threshold_is_unmatched() {
        let m = match_by_center(&[boxat(3.0, 0.0, 0.9)], &[boxat(0.0, 0.0, 1.0)], 2.0);
        assert_eq!(m.unmatched_dets, vec![0]);
        assert_eq!(m.unmatched_gts, vec![0]);
    }

    #[test]
    fn higher_score_claims_first() {
        // Listed low score first; ranking must still let 0.9 claim the GT even
        // though the 0.8 detection is closer.
        let dets = vec![boxat(0.1, 0.0, 0.8), boxat(1.0, 0.0, 0.9)];
        let m = match_by_center(&dets, &[boxat(0.0, 0.0, 1.0)], 2.0);
        assert_eq!(m.pairs, vec![(1, 0)]);
        assert_eq!(m.unmatched_dets, vec![0]);
        assert_eq!(m.ranked, vec![(1, Some(0)), (0, None)]);
    }

    #[test]
    fn distance_ties_prefer_lower_gt_index() {
        let gts = vec![boxat(1.0, 0.0, 1.0), boxat(-1.0, 0.0, 1.0)];
        let m = match_by_center(&[boxat(0.0, 0.0, 0.5)], &gts, 2.0);
        assert_eq!(m.pairs, vec![(0, 0)]);
    }

    #[test]
    fn deterministic() {
        let dets: Vec<Box3D> = (0..20).map(|i| boxat((i % 5) as f64, (i / 5) as f64, 0.5)).collect();
        let gts: Vec<Box3D> = (0..10).map(|i| boxat(i as f64 * 0.5, 1.0, 1.0)).collect();
        assert_eq!(match_by_center(&dets, &gts, 1.0), match_by_center(&dets, &gts, 1.0));
    }
}

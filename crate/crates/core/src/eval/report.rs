// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::Serialize;

use super::ap::ap_from_flags;
use super::{match_by_center, nds, tp_errors, Box3D, EvalConfig, Matching, TpErrors};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryMetrics {
    pub category: u32,
    pub n_gt: usize,
    pub n_det: usize,
    /// One AP per configured match threshold.
    pub ap_per_threshold: Vec<f64>,
    pub ap: f64,
    pub tp: TpErrors,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub thresholds: Vec<f64>,
    pub categories: Vec<CategoryMetrics>,
    /// mAP restricted to each threshold.
    pub map_per_threshold: Vec<f64>,
    pub map: f64,
    pub tp: TpErrors,
    pub nds: f64,
}

impl EvalSummary {
    pub fn category(&self, id: u32) -> Option<&CategoryMetrics> {
        self.categories.iter().find(|c| c.category == id)
    }

    /// mAP at one configured threshold.
    pub fn map_at(&self, threshold: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|t| *t == threshold)
            .map(|i| self.map_per_threshold[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RangeBinResult {
    pub lo: f64,
    pub hi: f64,
    pub n_gt: usize,
    pub n_det: usize,
    pub summary: EvalSummary,
}

fn of_category(boxes: &[Box3D], c: u32) -> Vec<Box3D> {
    boxes.iter().filter(|b| b.category == c).cloned().collect()
}

/// Detections and ground truth of one frame. Matching never crosses frames.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub dets: &'a [Box3D],
    pub gts: &'a [Box3D],
}

fn evaluate_category(samples: &[(Vec<Box3D>, Vec<Box3D>)], config: &EvalConfig) -> (Vec<f64>, TpErrors) {
    let n_gt: usize = samples.iter().map(|(_, g)| g.len()).sum();
    let aps = config
        .match_thresholds
        .iter()
        .map(|&t| {
            // Pool ranked detections of all frames: score descending, then
            // frame, then position within the frame.
            let mut ranked: Vec<(f64, usize, usize, bool)> = Vec::new();
            for (si, (d, g)) in samples.iter().enumerate() {
                let m = match_by_center(d, g, t);
                ranked.extend(m.ranked.iter().map(|&(di, gi)| (d[di].score, si, di, gi.is_some())));
            }
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            ap_from_flags(ranked.iter().map(|r| r.3), n_gt, config)
        })
        .collect();
    let mut pairs_d = Vec::new();
    let mut pairs_g = Vec::new();
    for (d, g) in samples {
        for (di, gi) in match_by_center(d, g, config.tp_threshold).pairs {
            pairs_d.push(d[di].clone());
            pairs_g.push(g[gi].clone());
        }
    }
    let identity = Matching {
        ranked: (0..pairs_d.len()).map(|i| (i, Some(i))).collect(),
        pairs: (0..pairs_d.len()).map(|i| (i, i)).collect(),
        unmatched_dets: Vec::new(),
        unmatched_gts: Vec::new(),
        n_gt,
    };
    (aps, tp_errors(&identity, &pairs_d, &pairs_g))
}

/// Per-category AP over every match threshold, TP errors at the TP
/// threshold, mAP, class-averaged TP errors and NDS.
pub fn evaluate(dets: &[Box3D], gts: &[Box3D], config: &EvalConfig) -> Result<EvalSummary> {
    evaluate_samples(&[Sample { dets, gts }], config)
}

/// [`evaluate`] over several frames, pooling detections across frames for
/// the precision/recall curves.
pub fn evaluate_samples(samples: &[Sample], config: &EvalConfig) -> Result<EvalSummary> {
    config.validate()?;
    for s in samples {
        for b in s.dets.iter().chain(s.gts) {
            b.validate()?;
        }
    }
    let categories: Vec<u32> = match &config.categories {
        Some(list) => list.clone(),
        None => samples
            .iter()
            .flat_map(|s| s.dets.iter().chain(s.gts))
            .map(|b| b.category)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    let per_cat: Vec<CategoryMetrics> = categories
        .iter()
        .map(|&c| {
            let split: Vec<(Vec<Box3D>, Vec<Box3D>)> = samples
                .iter()
                .map(|s| (of_category(s.dets, c), of_category(s.gts, c)))
                .collect();
            let (aps, tp) = evaluate_category(&split, config);
            CategoryMetrics {
                category: c,
                n_gt: split.iter().map(|s| s.1.len()).sum(),
                n_det: split.iter().map(|s| s.0.len()).sum(),
                ap: aps.iter().sum::<f64>() / aps.len() as f64,
                ap_per_threshold: aps,
                tp,
            }
        })
        .collect();
    let n_t = config.match_thresholds.len();
    let map_per_threshold: Vec<f64> = (0..n_t)
        .map(|t| {
            if per_cat.is_empty() {
                0.0
            } else {
                per_cat.iter().map(|c| c.ap_per_threshold[t]).sum::<f64>() / per_cat.len() as f64
            }
        })
        .collect();
    let map = map_per_threshold.iter().sum::<f64>() / n_t as f64;
    let tp = TpErrors::mean_of(&per_cat.iter().map(|c| c.tp).collect::<Vec<_>>());
    Ok(EvalSummary {
        thresholds: config.match_thresholds.clone(),
        categories: per_cat,
        map_per_threshold,
        map,
        nds: nds(map, &tp),
        tp,
    })
}

/// Index of the bin containing `range`. Bins are left-closed and
/// right-open except the last, which also holds its upper edge.
pub fn range_bin_index(range: f64, bins: &[(f64, f64)]) -> Option<usize> {
    let last = bins.len().checked_sub(1)?;
    bins.iter()
        .enumerate()
        .position(|(i, &(lo, hi))| range >= lo && (range < hi || (i == last && range == hi)))
}

/// Evaluates each range bin independently. Ground truth and detections are
/// both assigned by their own BEV center distance.
pub fn range_binned_eval(dets: &[Box3D], gts: &[Box3D], config: &EvalConfig) -> Result<Vec<RangeBinResult>> {
    range_binned_eval_samples(&[Sample { dets, gts }], config)
}

pub fn range_binned_eval_samples(samples: &[Sample], config: &EvalConfig) -> Result<Vec<RangeBinResult>> {
    config.validate()?;
    let bin_of = |b: &Box3D| range_bin_index(b.bev_range(), &config.range_bins);
    (0..config.range_bins.len())
        .map(|i| {
            let split: Vec<(Vec<Box3D>, Vec<Box3D>)> = samples
                .iter()
                .map(|s| {
                    let d = s.dets.iter().filter(|b| bin_of(b) == Some(i)).cloned().collect();
                    let g = s.gts.iter().filter(|b| bin_of(b) == Some(i)).cloned().collect();
                    (d, g)
                })
                .collect();
            let views: Vec<Sample> = split.iter().map(|(d, g)| Sample { dets: d, gts: g }).collect();
            let (lo, hi) = config.range_bins[i];
            Ok(RangeBinResult {
                lo,
                hi,
                n_gt: split.iter().map(|s| s.1.len()).sum(),
                n_det: split.iter().map(|s| s.0.len()).sum(),
                summary: evaluate_samples(&views, config)?,
            })
        })
        .collect()
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn err(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |e| format!("{e:.4}"))
}

fn category_label(id: u32, names: &[String]) -> String {
    names.get(id as usize).cloned().unwrap_or_else(|| format!("class_{id}"))
}

/// Plain-text report: a per-category AP table, the TP error summary and,
/// when given, a per-range table.
pub fn render_text(summary: &EvalSummary, bins: Option<&[RangeBinResult]>, names: &[String]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "mAP {}  NDS {}", pct(summary.map), pct(summary.nds));
    let _ = writeln!(
        s,
        "mATE {}  mASE {}  mAOE {}  mAVE {}  mAAE {}",
        err(summary.tp.ate),
        err(summary.tp.ase),
        err(summary.tp.aoe),
        err(summary.tp.ave),
        err(summary.tp.aae)
    );
    let _ = writeln!(s);
    let mut header = format!("{:<22}{:>6}{:>6}", "category", "gt", "det");
    for t in &summary.thresholds {
        header.push_str(&format!("{:>9}", format!("AP@{t}")));
    }
    header.push_str(&format!(
        "{:>9}{:>9}{:>9}{:>9}{:>9}{:>9}",
        "AP", "ATE", "ASE", "AOE", "AVE", "AAE"
    ));
    let _ = writeln!(s, "{header}");
    for c in &summary.categories {
        let mut line = format!("{:<22}{:>6}{:>6}", category_label(c.category, names), c.n_gt, c.n_det);
        for ap in &c.ap_per_threshold {
            line.push_str(&format!("{:>9}", pct(*ap)));
        }
        line.push_str(&format!("{:>9}", pct(c.ap)));
        for e in c.tp.as_array() {
            line.push_str(&format!("{:>9}", err(e)));
        }
        let _ = writeln!(s, "{line}");
    }
    let mut line = format!("{:<34}", "mean");
    for m in &summary.map_per_threshold {
        line.push_str(&format!("{:>9}", pct(*m)));
    }
    line.push_str(&format!("{:>9}", pct(summary.map)));
    let _ = writeln!(s, "{line}");
    if let Some(bins) = bins {
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<14}{:>6}{:>6}{:>9}{:>9}{:>9}{:>9}{:>9}{:>9}{:>9}",
            "range", "gt", "det", "mAP", "NDS", "mATE", "mASE", "mAOE", "mAVE", "mAAE"
        );
        for b in bins {
            let mut line = format!(
                "{:<14}{:>6}{:>6}{:>9}{:>9}",
                format!("{}-{}m", b.lo, b.hi),
                b.n_gt,
                b.n_det,
                pct(b.summary.map),
                pct(b.summary.nds)
            );
            for e in b.summary.tp.as_array() {
                line.push_str(&format!("{:>9}", err(e)));
            }
            let _ = writeln!(s, "{line}");
        }
    }
    s
}

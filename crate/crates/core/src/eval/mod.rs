// SPDX-License-Identifier: Apache-2.0

//! nuScenes-style detection evaluation.
//!
//! Conventions inherited from the nuScenes detection protocol:
//! - matching is greedy by descending score on 2D center distance, with a
//!   match requiring distance strictly below the threshold;
//! - AP samples precision at 101 evenly spaced recalls by linear
//!   interpolation of the raw precision/recall curve (precision 0 beyond the
//!   last recall), drops recalls at or below `recall_floor`, subtracts
//!   `min_precision_floor`, clips at 0 and renormalizes by
//!   `1 - min_precision_floor`;
//! - TP errors are computed at `tp_threshold` and are not normalized before
//!   entering NDS: each contributes `1 - min(1, error)`.
//!
//! A TP error with no matched pairs is missing and contributes 0 to NDS.
//! A category with no ground truth has AP 0.

mod ap;
mod matching;
mod report;
mod tp;

pub use ap::{average_precision, interpolated_precision, PrCurve};
pub use matching::{match_by_center, Matching};
pub use report::{
    evaluate, evaluate_samples, range_bin_index, range_binned_eval, range_binned_eval_samples, render_text,
    CategoryMetrics, EvalSummary, RangeBinResult, Sample,
};
pub use tp::{nds, tp_errors, TpErrors};

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Oriented 3D box in the ego frame. `size` is `(w, l, h)` with `l` along
/// the heading.
#[derive(Debug, Clone, PartialEq)]
pub struct Box3D {
    pub center: Vector3<f64>,
    pub size: [f64; 3],
    pub yaw: f64,
    pub velocity: Option<[f64; 2]>,
    pub category: u32,
    pub score: f64,
    pub attribute: Option<u32>,
}

/// Wraps an angle into `(-π, π]`.
pub fn normalize_yaw(yaw: f64) -> f64 {
    let mut a = yaw % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

impl Box3D {
    pub fn new(center: Vector3<f64>, size: [f64; 3], yaw: f64, category: u32, score: f64) -> Result<Self> {
        let b = Box3D {
            center,
            size,
            yaw: normalize_yaw(yaw),
            velocity: None,
            category,
            score,
            attribute: None,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn with_velocity(mut self, v: [f64; 2]) -> Self {
        self.velocity = Some(v);
        self
    }

    pub fn with_attribute(mut self, a: u32) -> Self {
        self.attribute = Some(a);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.size.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(Error::invalid(
                "box",
                format!("sizes must be positive, got {:?}", self.size),
            ));
        }
        if !self.center.iter().all(|v| v.is_finite()) || !self.yaw.is_finite() {
            return Err(Error::invalid("box", "non-finite pose"));
        }
        if !(-PI < self.yaw && self.yaw <= PI) {
            return Err(Error::invalid("box", format!("yaw {} outside (-π, π]", self.yaw)));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::invalid("box", format!("score {} outside [0, 1]", self.score)));
        }
        if self.velocity.is_some_and(|v| !v.iter().all(|x| x.is_finite())) {
            return Err(Error::invalid("box", "non-finite velocity"));
        }
        Ok(())
    }

    /// Distance of the center from the ego origin in the BEV plane.
    pub fn bev_range(&self) -> f64 {
        self.center.x.hypot(self.center.y)
    }

    pub fn bev_distance(&self, other: &Box3D) -> f64 {
        (self.center.x - other.center.x).hypot(self.center.y - other.center.y)
    }

    /// BEV footprint corners, counter-clockwise.
    pub fn footprint(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let (hl, hw) = (0.5 * self.size[1], 0.5 * self.size[0]);
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[a, b]| [self.center.x + c * a - s * b, self.center.y + s * a + c * b])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub match_thresholds: Vec<f64>,
    pub tp_threshold: f64,
    pub range_bins: Vec<(f64, f64)>,
    pub recall_floor: f64,
    pub min_precision_floor: f64,
    /// Categories averaged into mAP. `None` uses every category present in
    /// the ground truth or the detections.
    pub categories: Option<Vec<u32>>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            match_thresholds: vec![0.5, 1.0, 2.0, 4.0],
            tp_threshold: 2.0,
            range_bins: vec![(0.0, 18.0), (18.0, 36.0), (36.0, 54.0)],
            recall_floor: 0.1,
            min_precision_floor: 0.1,
            categories: None,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.match_thresholds.is_empty() {
            return Err(Error::invalid("eval config", "no match thresholds"));
        }
        if !self.match_thresholds.iter().all(|t| *t > 0.0 && t.is_finite())
            || self.match_thresholds.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::invalid(
                "eval config",
                "match thresholds must be positive and ascending",
            ));
        }
        if !(self.tp_threshold > 0.0 && self.tp_threshold.is_finite()) {
            return Err(Error::invalid("eval config", "tp threshold must be positive"));
        }
        if !(0.0..1.0).contains(&self.recall_floor) || !(0.0..1.0).contains(&self.min_precision_floor) {
            return Err(Error::invalid(
                "eval config",
                "recall and precision floors must lie in [0, 1)",
            ));
        }
        for (i, &(lo, hi)) in self.range_bins.iter().enumerate() {
            if !(lo >= 0.0 && lo < hi) {
                return Err(Error::invalid(
                    "eval config",
                    format!("range bin {i} [{lo}, {hi}) is empty"),
                ));
            }
            if i > 0 && self.range_bins[i - 1].1 > lo {
                return Err(Error::invalid("eval config", "range bins overlap or are unsorted"));
            }
        }
        Ok(())
    }
}

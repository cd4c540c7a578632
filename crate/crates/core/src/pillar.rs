// SPDX-License-Identifier: Apache-2.0

//! Deterministic pillar encoding of painted LiDAR points into a BEV grid.

use serde::{Deserialize, Serialize};

use crate::bucket::{CellBuckets, DROPPED};
use crate::error::{Error, Result};
use crate::grid::{BevExtent, BevGrid, BevLayout};
use crate::paint::SemanticPointCloud;
use crate::par;

/// How per-point values are combined within a pillar.
///
/// Applies to the height, intensity and category-histogram channels.
/// `count` is always a count and `max_score` is always a maximum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Sum,
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PillarChannel {
    Count,
    MeanZ,
    MeanIntensity,
    /// Expands to one channel per category.
    CategoryHistogram,
    MaxScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PillarSpec {
    pub extent: BevExtent,
    pub z_min: f64,
    pub z_max: f64,
    pub height: usize,
    pub width: usize,
    pub reduction: Reduction,
    pub layout: Vec<PillarChannel>,
}

impl Default for PillarSpec {
    fn default() -> Self {
        let bev = BevLayout::default();
        PillarSpec {
            extent: bev.extent,
            z_min: -3.0,
            z_max: 5.0,
            height: bev.height,
            width: bev.width,
            reduction: Reduction::Mean,
            layout: vec![
                PillarChannel::Count,
                PillarChannel::MeanZ,
                PillarChannel::MeanIntensity,
                PillarChannel::CategoryHistogram,
                PillarChannel::MaxScore,
            ],
        }
    }
}

impl PillarSpec {
    pub fn bev_layout(&self) -> BevLayout {
        BevLayout {
            extent: self.extent,
            height: self.height,
            width: self.width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.bev_layout().validate()?;
        if !(self.z_min < self.z_max) || !self.z_min.is_finite() || !self.z_max.is_finite() {
            return Err(Error::invalid(
                "pillar spec",
                format!("empty z range [{}, {})", self.z_min, self.z_max),
            ));
        }
        if self.layout.is_empty() {
            return Err(Error::invalid("pillar spec", "channel layout is empty"));
        }
        Ok(())
    }

    pub fn channel_count(&self, n_categories: usize) -> usize {
        self.layout
            .iter()
            .map(|c| match c {
                PillarChannel::CategoryHistogram => n_categories,
                _ => 1,
            })
            .sum()
    }

    /// Offset of the first channel of `kind` in the output, if configured.
    pub fn channel_offset(&self, kind: PillarChannel, n_categories: usize) -> Option<usize> {
        let mut offset = 0;
        for c in &self.layout {
            if *c == kind {
                return Some(offset);
            }
            offset += match c {
                PillarChannel::CategoryHistogram => n_categories,
                _ => 1,
            };
        }
        None
    }
}

#[derive(Debug, Clone)]
pub struct PillarOutput {
    pub grid: BevGrid,
    pub dropped: usize,
}

#[derive(Clone, Copy)]
struct Running {
    n: usize,
    sum: f64,
    max: f64,
}

impl Running {
    const EMPTY: Running = Running {
        n: 0,
        sum: 0.0,
        max: f64::NEG_INFINITY,
    };

    #[inline]
    fn push(&mut self, v: f64) {
        self.n += 1;
        self.sum += v;
        self.max = self.max.max(v);
    }

    fn reduce(&self, r: Reduction) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        match r {
            Reduction::Sum => self.sum,
            Reduction::Mean => self.sum / self.n as f64,
            Reduction::Max => self.max,
        }
    }
}

fn pillar_of(spec: &PillarSpec, layout: &BevLayout, x: f32, y: f32, z: f32) -> Option<usize> {
    let z = z as f64;
    if !(z >= spec.z_min && z < spec.z_max) {
        return None;
    }
    layout.cell_of(x as f64, y as f64)
}

fn encode_pillar(cloud: &SemanticPointCloud, spec: &PillarSpec, members: &[u32], out: &mut [f64]) {
    let n_cat = cloud.n_categories();
    let points = cloud.points();
    let labels = cloud.labels();
    let mut z = Running::EMPTY;
    let mut intensity = Running::EMPTY;
    let mut hist = vec![Running::EMPTY; n_cat];
    let mut max_score = 0.0f64;
    for &i in members {
        let p = &points[i as usize];
        let l = &labels[i as usize];
        z.push(p.z as f64);
        intensity.push(p.intensity as f64);
        for (k, h) in hist.iter_mut().enumerate() {
            h.push(if l.category == Some(k as u32) { 1.0 } else { 0.0 });
        }
        max_score = max_score.max(l.score as f64);
    }
    let mut o = 0;
    for ch in &spec.layout {
        match ch {
            PillarChannel::Count => {
                out[o] = members.len() as f64;
                o += 1;
            }
            PillarChannel::MeanZ => {
                out[o] = z.reduce(spec.reduction);
                o += 1;
            }
            PillarChannel::MeanIntensity => {
                out[o] = intensity.reduce(spec.reduction);
                o += 1;
            }
            PillarChannel::CategoryHistogram => {
                for h in &hist {
                    out[o] = h.reduce(spec.reduction);
                    o += 1;
                }
            }
            PillarChannel::MaxScore => {
                out[o] = max_score;
                o += 1;
            }
        }
    }
}

/// Bins points into `(x, y)` pillars and computes the configured channels.
/// Points outside the extent or the z range are dropped and counted; empty
/// pillars are zero.
pub fn pillarize(cloud: &SemanticPointCloud, spec: &PillarSpec) -> Result<PillarOutput> {
    spec.validate()?;
    let layout = spec.bev_layout();
    let channels = spec.channel_count(cloud.n_categories());
    let cells = par::map_collect(cloud.points(), |p| {
        pillar_of(spec, &layout, p.x, p.y, p.z).map_or(DROPPED, |c| c as u32)
    });
    let buckets = CellBuckets::build(&cells, layout.cells());
    let mut acc = vec![0.0; layout.cells() * channels];
    par::for_each_chunk_mut(&mut acc, channels, |cell, dst| {
        let members = buckets.members(cell);
        if !members.is_empty() {
            encode_pillar(cloud, spec, members, dst);
        }
    });
    Ok(PillarOutput {
        grid: BevGrid::from_cell_major(channels, layout, &acc),
        dropped: cloud.len() - buckets.retained(),
    })
}

/// Single-threaded pillarization with per-point scatter into running
/// reductions. Agrees bit for bit with [`pillarize`].
pub fn pillarize_sequential(cloud: &SemanticPointCloud, spec: &PillarSpec) -> Result<PillarOutput> {
    spec.validate()?;
    let layout = spec.bev_layout();
    let channels = spec.channel_count(cloud.n_categories());
    let mut members: Vec<Vec<u32>> = vec![Vec::new(); layout.cells()];
    let mut dropped = 0;
    for (i, p) in cloud.points().iter().enumerate() {
        match pillar_of(spec, &layout, p.x, p.y, p.z) {
            Some(c) => members[c].push(i as u32),
            None => dropped += 1,
        }
    }
    let mut acc = vec![0.0; layout.cells() * channels];
    for (cell, m) in members.iter().enumerate() {
        if !m.is_empty() {
            encode_pillar(cloud, spec, m, &mut acc[cell * channels..(cell + 1) * channels]);
        }
    }
    Ok(PillarOutput {
        grid: BevGrid::from_cell_major(channels, layout, &acc),
        dropped,
    })
}

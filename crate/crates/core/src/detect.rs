// SPDX-License-Identifier: Apache-2.0

//! Threshold-cluster proposals over category channels of a BEV grid.
//!
//! Cells whose strongest category response reaches `threshold` are grouped
//! into 8-connected components. Each component becomes one box: its category
//! is the one with the largest summed response, its center the response
//! weighted centroid of that category, and its size the category's nominal
//! size. Sensors only see the near side of an object, so the centroid can
//! be pushed away from the ego origin by a per-category radial offset.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Box3D;
use crate::grid::BevGrid;
use crate::synth::NOMINAL_SIZES;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProposalConfig {
    /// First category channel in the grid.
    pub channel_offset: usize,
    pub n_categories: usize,
    pub threshold: f64,
    /// Component mass giving score `1 - 1/e`.
    pub score_scale: f64,
    pub min_cells: usize,
    /// `(w, l, h)` per category.
    pub sizes: Vec<[f64; 3]>,
    /// Outward center shift per category, meters. Empty disables it.
    pub radial_offsets: Vec<f64>,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        ProposalConfig {
            channel_offset: 0,
            n_categories: NOMINAL_SIZES.len(),
            threshold: 0.5,
            score_scale: 4.0,
            min_cells: 1,
            sizes: NOMINAL_SIZES.to_vec(),
            radial_offsets: NOMINAL_SIZES.iter().map(|s| 0.25 * s[0].min(s[1])).collect(),
        }
    }
}

impl ProposalConfig {
    pub fn validate(&self, grid_channels: usize) -> Result<()> {
        if self.n_categories == 0 || self.channel_offset + self.n_categories > grid_channels {
            return Err(Error::invalid(
                "proposal config",
                format!(
                    "channels {}..{} outside a {grid_channels}-channel grid",
                    self.channel_offset,
                    self.channel_offset + self.n_categories
                ),
            ));
        }
        if self.sizes.len() < self.n_categories || self.sizes.iter().flatten().any(|s| !(*s > 0.0)) {
            return Err(Error::invalid("proposal config", "need a positive size per category"));
        }
        if !self.radial_offsets.is_empty() && self.radial_offsets.len() < self.n_categories {
            return Err(Error::invalid(
                "proposal config",
                "radial offsets must cover every category",
            ));
        }
        if !(self.threshold.is_finite() && self.score_scale > 0.0) {
            return Err(Error::invalid(
                "proposal config",
                "threshold must be finite and score scale positive",
            ));
        }
        Ok(())
    }
}

/// Row-major labels of 8-connected components over `active` cells.
fn components(active: &[bool], height: usize, width: usize) -> Vec<Vec<usize>> {
    let mut seen = vec![false; active.len()];
    let mut out = Vec::new();
    for start in 0..active.len() {
        if !active[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut cells = Vec::new();
        while let Some(c) = stack.pop() {
            cells.push(c);
            let (r, col) = ((c / width) as isize, (c % width) as isize);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (nr, nc) = (r + dr, col + dc);
                    if nr < 0 || nc < 0 || nr >= height as isize || nc >= width as isize {
                        continue;
                    }
                    let n = nr as usize * width + nc as usize;
                    if active[n] && !seen[n] {
                        seen[n] = true;
                        stack.push(n);
                    }
                }
            }
        }
        cells.sort_unstable();
        out.push(cells);
    }
    out
}

pub fn propose(grid: &BevGrid, config: &ProposalConfig) -> Result<Vec<Box3D>> {
    config.validate(grid.channels())?;
    let (h, w) = (grid.height(), grid.width());
    let chans: Vec<&[f64]> = (0..config.n_categories)
        .map(|k| grid.channel(config.channel_offset + k))
        .collect();
    let active: Vec<bool> = (0..h * w)
        .map(|i| chans.iter().any(|c| c[i] >= config.threshold))
        .collect();
    let layout = grid.layout();
    let mut out = Vec::new();
    for cells in components(&active, h, w) {
        if cells.len() < config.min_cells {
            continue;
        }
        let mass: Vec<f64> = chans
            .iter()
            .map(|c| cells.iter().map(|&i| c[i].max(0.0)).sum())
            .collect();
        let (cat, &m) = mass
            .iter()
            .enumerate()
            .fold((0, &mass[0]), |best, (k, v)| if *v > *best.1 { (k, v) } else { best });
        if !(m > 0.0) {
            continue;
        }
        let (mut x, mut y) = (0.0, 0.0);
        for &i in &cells {
            let wgt = chans[cat][i].max(0.0);
            let (cx, cy) = layout.cell_center(i / w, i % w);
            x += wgt * cx;
            y += wgt * cy;
        }
        let (mut x, mut y) = (x / m, y / m);
        if let Some(&shift) = config.radial_offsets.get(cat) {
            let r = x.hypot(y);
            if r > 0.0 {
                x += shift * x / r;
                y += shift * y / r;
            }
        }
        let size = config.sizes[cat];
        let score = 1.0 - (-m / config.score_scale).exp();
        out.push(Box3D::new(
            Vector3::new(x, y, 0.5 * size[2]),
            size,
            0.0,
            cat as u32,
            score.clamp(0.0, 1.0),
        )?);
    }
    Ok(out)
}

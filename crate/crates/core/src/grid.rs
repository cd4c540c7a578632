// SPDX-License-Identifier: Apache-2.0

//! Metric bird's-eye-view grids.
//!
//! Column index runs along ego x, row index along ego y. Cell `(row, col)`
//! covers `[x_min + col*dx, x_min + (col+1)*dx) x [y_min + row*dy, ...)`;
//! points on the upper extent boundary fall outside.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BevExtent {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl BevExtent {
    pub fn square(half: f64) -> Self {
        BevExtent {
            x_min: -half,
            x_max: half,
            y_min: -half,
            y_max: half,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.x_min, self.x_max, self.y_min, self.y_max];
        if vals.iter().any(|v| !v.is_finite()) || self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(Error::invalid("BEV extent", format!("empty or non-finite {self:?}")));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x_min, self.x_max, self.y_min, self.y_max]
    }
}

/// Extent plus resolution: everything about a grid except its channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BevLayout {
    pub extent: BevExtent,
    pub height: usize,
    pub width: usize,
}

impl Default for BevLayout {
    /// ±54 m at 0.6 m cells.
    fn default() -> Self {
        BevLayout {
            extent: BevExtent::square(54.0),
            height: 180,
            width: 180,
        }
    }
}

impl BevLayout {
    pub fn new(extent: BevExtent, height: usize, width: usize) -> Result<Self> {
        let layout = BevLayout { extent, height, width };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        self.extent.validate()?;
        if self.height == 0 || self.width == 0 {
            return Err(Error::invalid("BEV layout", "grid dimensions must be positive"));
        }
        if self
            .height
            .checked_mul(self.width)
            .is_none_or(|n| n >= u32::MAX as usize)
        {
            return Err(Error::invalid("BEV layout", "grid too large"));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn cell_size(&self) -> (f64, f64) {
        (
            (self.extent.x_max - self.extent.x_min) / self.width as f64,
            (self.extent.y_max - self.extent.y_min) / self.height as f64,
        )
    }

    /// Flat `row * width + col` index of the cell containing `(x, y)`.
    #[inline]
    pub fn cell_of(&self, x: f64, y: f64) -> Option<usize> {
        let e = &self.extent;
        if !(x >= e.x_min && x < e.x_max && y >= e.y_min && y < e.y_max) {
            return None;
        }
        let col = ((x - e.x_min) / (e.x_max - e.x_min) * self.width as f64) as usize;
        let row = ((y - e.y_min) / (e.y_max - e.y_min) * self.height as f64) as usize;
        Some(row.min(self.height - 1) * self.width + col.min(self.width - 1))
    }

    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        let (dx, dy) = self.cell_size();
        (
            self.extent.x_min + (col as f64 + 0.5) * dx,
            self.extent.y_min + (row as f64 + 0.5) * dy,
        )
    }
}

/// `channels x height x width` feature grid, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BevGrid {
    channels: usize,
    layout: BevLayout,
    data: Vec<f64>,
}

impl BevGrid {
    pub fn zeros(channels: usize, layout: BevLayout) -> Self {
        BevGrid {
            channels,
            layout,
            data: vec![0.0; channels * layout.cells()],
        }
    }

    pub fn from_data(channels: usize, layout: BevLayout, data: Vec<f64>) -> Result<Self> {
        layout.validate()?;
        if data.len() != channels * layout.cells() {
            return Err(Error::shape(format!(
                "grid {channels}x{}x{} needs {} values, got {}",
                layout.height,
                layout.width,
                channels * layout.cells(),
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("BEV grid", "non-finite value"));
        }
        Ok(BevGrid { channels, layout, data })
    }

    /// Builds from a cell-major buffer (`cells x channels`).
    pub(crate) fn from_cell_major(channels: usize, layout: BevLayout, cell_major: &[f64]) -> Self {
        let n = layout.cells();
        debug_assert_eq!(cell_major.len(), n * channels);
        let mut data = vec![0.0; n * channels];
        for cell in 0..n {
            let src = &cell_major[cell * channels..(cell + 1) * channels];
            for (c, &v) in src.iter().enumerate() {
                data[c * n + cell] = v;
            }
        }
        BevGrid { channels, layout, data }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn layout(&self) -> &BevLayout {
        &self.layout
    }

    pub fn height(&self) -> usize {
        self.layout.height
    }

    pub fn width(&self) -> usize {
        self.layout.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.layout.cells();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, row: usize, col: usize) -> f64 {
        self.data[(c * self.layout.height + row) * self.layout.width + col]
    }

    #[inline]
    pub fn set(&mut self, c: usize, row: usize, col: usize, value: f64) {
        let w = self.layout.width;
        let h = self.layout.height;
        self.data[(c * h + row) * w + col] = value;
    }

    /// Sum of one channel over all cells.
    pub fn channel_mass(&self, c: usize) -> f64 {
        self.channel(c).iter().sum()
    }

    /// Errors unless `other` has the same extent and resolution.
    pub fn ensure_aligned(&self, other: &BevGrid) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::shape(format!(
                "BEV grids are not aligned: {:?} vs {:?}",
                self.layout, other.layout
            )));
        }
        Ok(())
    }

    /// Elementwise sum of two aligned grids with equal channel counts.
    pub fn add(&self, other: &BevGrid) -> Result<BevGrid> {
        self.ensure_aligned(other)?;
        if self.channels != other.channels {
            return Err(Error::shape(format!(
                "{} vs {} channels",
                self.channels, other.channels
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(BevGrid {
            channels: self.channels,
            layout: self.layout,
            data,
        })
    }

    /// Stacks `other`'s channels after this grid's.
    pub fn concat(&self, other: &BevGrid) -> Result<BevGrid> {
        self.ensure_aligned(other)?;
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(BevGrid {
            channels: self.channels + other.channels,
            layout: self.layout,
            data,
        })
    }

    pub fn scaled(&self, alpha: f64) -> BevGrid {
        BevGrid {
            data: self.data.iter().map(|v| v * alpha).collect(),
            ..self.clone()
        }
    }

    pub fn max_abs_diff(&self, other: &BevGrid) -> f64 {
        assert_eq!(self.data.len(), other.data.len(), "grids differ in size");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout_cells() {
        let l = BevLayout::default();
        let (dx, dy) = l.cell_size();
        assert!((dx - 0.6).abs() < 1e-12 && (dy - 0.6).abs() < 1e-12);
        assert_eq!(l.cell_of(-54.0, -54.0), Some(0));
        assert_eq!(l.cell_of(54.0, 0.0), None);
        assert_eq!(l.cell_of(53.999, 53.999), Some(180 * 180 - 1));
        assert_eq!(l.cell_of(0.0, 0.0), Some(90 * 180 + 90));
    }

    #[test]
    fn cell_center_maps_back_to_cell() {
        let l = BevLayout::new(
            BevExtent {
                x_min: -3.0,
                x_max: 5.0,
                y_min: 0.0,
                y_max: 2.0,
            },
            4,
            8,
        )
        .unwrap();
        for r in 0..4 {
            for c in 0..8 {
                let (x, y) = l.cell_center(r, c);
                assert_eq!(l.cell_of(x, y), Some(r * 8 + c));
            }
        }
    }

    #[test]
    fn rejects_empty_extent() {
        assert!(BevExtent {
            x_min: 1.0,
            x_max: 1.0,
            y_min: 0.0,
            y_max: 1.0
        }
        .validate()
        .is_err());
        assert!(BevLayout::new(BevExtent::square(1.0), 0, 3).is_err());
    }

    #[test]
    fn cell_major_transpose() {
        let l = BevLayout::new(BevExtent::square(1.0), 1, 2).unwrap();
        let g = BevGrid::from_cell_major(3, l, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(g.channel(0), &[1.0, 4.0]);
        assert_eq!(g.channel(2), &[3.0, 6.0]);
        assert_eq!(g.get(1, 0, 1), 5.0);
    }

    #[test]
    fn add_and_concat_check_alignment() {
        let a = BevGrid::zeros(2, BevLayout::new(BevExtent::square(1.0), 2, 2).unwrap());
        let b = BevGrid::zeros(2, BevLayout::new(BevExtent::square(2.0), 2, 2).unwrap());
        assert!(a.add(&b).is_err());
        assert!(a.concat(&b).is_err());
        assert_eq!(a.concat(&a).unwrap().channels(), 4);
    }
}

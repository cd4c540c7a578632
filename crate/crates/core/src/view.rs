// SPDX-License-Identifier: Apache-2.0

//! Semantic view transformation: lift camera features onto depth-binned
//! pseudo points, weight them by a depth distribution, drop background or
//! low-probability points, and sum-pool the rest into a BEV grid.
//!
//! Depth attention is applied as a per-point weight rather than by scaling
//! feature vectors, so every pseudo point of a pixel shares one feature row.
//! Pooling adds `weight * feature` into the cell under the point's `(x, y)`.

use std::sync::Arc;

use nalgebra::Vector3;

use crate::bucket::{CellBuckets, DROPPED};
use crate::error::{Error, Result};
use crate::geometry::{generate_frustum, CameraModel, DepthBinning, FeatureSampling};
use crate::grid::{BevGrid, BevLayout};
use crate::masks::{FeatureImage, SemanticImage};
use crate::paint::LidarPoint;
use crate::par;

/// Where a pseudo point came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PointSource {
    pub camera: u16,
    pub pixel: u32,
    pub bin: u16,
}

/// Feature-grid size and depth-bin count the pseudo points were lifted from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SourceGrid {
    pub feature_w: u32,
    pub feature_h: u32,
    pub n_bins: usize,
}

impl SourceGrid {
    pub fn pixels(&self) -> usize {
        self.feature_w as usize * self.feature_h as usize
    }
}

/// Ego-frame pseudo points with weights and shared per-pixel features.
#[derive(Debug, Clone)]
pub struct PseudoPointSet {
    grid: SourceGrid,
    channels: usize,
    positions: Vec<Vector3<f64>>,
    weights: Vec<f64>,
    sources: Vec<PointSource>,
    feature_rows: Vec<u32>,
    table: Arc<Vec<f64>>,
}

impl PseudoPointSet {
    /// Builds a set from explicit points, each with its own feature vector.
    /// Every point is attributed to camera 0 on a `len x 1` grid with one bin.
    pub fn from_points(positions: Vec<Vector3<f64>>, weights: Vec<f64>, features: Vec<Vec<f64>>) -> Result<Self> {
        let n = positions.len();
        if weights.len() != n || features.len() != n {
            return Err(Error::shape(format!(
                "{n} positions, {} weights, {} feature vectors",
                weights.len(),
                features.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid(
                "pseudo point weight",
                "weights must be finite and non-negative",
            ));
        }
        let channels = features.first().map_or(0, Vec::len);
        if features.iter().any(|f| f.len() != channels) {
            return Err(Error::shape("feature vectors differ in length"));
        }
        let table: Vec<f64> = features.into_iter().flatten().collect();
        Ok(PseudoPointSet {
            grid: SourceGrid {
                feature_w: n.max(1) as u32,
                feature_h: 1,
                n_bins: 1,
            },
            channels,
            positions,
            weights,
            sources: (0..n)
                .map(|i| PointSource {
                    camera: 0,
                    pixel: i as u32,
                    bin: 0,
                })
                .collect(),
            feature_rows: (0..n as u32).collect(),
            table: Arc::new(table),
        })
    }

    pub fn grid(&self) -> SourceGrid {
        self.grid
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sources(&self) -> &[PointSource] {
        &self.sources
    }

    #[inline]
    pub fn feature(&self, i: usize) -> &[f64] {
        let row = self.feature_rows[i] as usize;
        &self.table[row * self.channels..(row + 1) * self.channels]
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Keeps points for which `keep(index)` holds, preserving order.
    pub fn retain_by_index(self, keep: impl Fn(usize) -> bool) -> Self {
        let mask: Vec<bool> = (0..self.len()).map(keep).collect();
        self.retain_mask(&mask)
    }

    fn retain_mask(mut self, mask: &[bool]) -> Self {
        let mut k = 0;
        for (i, &m) in mask.iter().enumerate() {
            if m {
                self.positions[k] = self.positions[i];
                self.weights[k] = self.weights[i];
                self.sources[k] = self.sources[i];
                self.feature_rows[k] = self.feature_rows[i];
                k += 1;
            }
        }
        self.positions.truncate(k);
        self.weights.truncate(k);
        self.sources.truncate(k);
        self.feature_rows.truncate(k);
        self
    }

    /// Splits into (kept, rest) by `keep(index)`.
    pub fn partition(&self, keep: impl Fn(usize) -> bool) -> (Self, Self) {
        let mask: Vec<bool> = (0..self.len()).map(keep).collect();
        let inverse: Vec<bool> = mask.iter().map(|m| !m).collect();
        (self.clone().retain_mask(&mask), self.clone().retain_mask(&inverse))
    }

    /// Concatenates sets lifted on the same feature grid and bins.
    pub fn merge(sets: Vec<PseudoPointSet>) -> Result<PseudoPointSet> {
        let mut iter = sets.into_iter();
        let Some(mut out) = iter.next() else {
            return Err(Error::invalid("pseudo point merge", "no sets to merge"));
        };
        let mut table = Arc::try_unwrap(out.table).unwrap_or_else(|shared| (*shared).clone());
        for s in iter {
            if s.grid != out.grid || s.channels != out.channels {
                return Err(Error::shape(format!(
                    "cannot merge pseudo points on {:?}/{} channels with {:?}/{}",
                    out.grid, out.channels, s.grid, s.channels
                )));
            }
            let offset = (table.len() / out.channels.max(1)) as u32;
            table.extend_from_slice(&s.table);
            out.positions.extend(s.positions);
            out.weights.extend(s.weights);
            out.sources.extend(s.sources);
            out.feature_rows.extend(s.feature_rows.iter().map(|r| r + offset));
        }
        out.table = Arc::new(table);
        Ok(out)
    }
}

/// Per-pixel weights over depth bins, pixel-major with bins contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthAttention {
    width: u32,
    height: u32,
    n_bins: usize,
    data: Vec<f64>,
    normalized: bool,
}

const NORMALIZED_TOL: f64 = 1e-6;

impl DepthAttention {
    pub fn new(width: u32, height: u32, n_bins: usize, data: Vec<f64>) -> Result<Self> {
        let n = width as usize * height as usize * n_bins;
        if width == 0 || height == 0 || n_bins == 0 {
            return Err(Error::invalid("depth attention", "dimensions must be positive"));
        }
        if data.len() != n {
            return Err(Error::shape(format!(
                "depth attention {width}x{height}x{n_bins} needs {n} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid(
                "depth attention",
                "weights must be finite and non-negative",
            ));
        }
        let normalized = data
            .chunks(n_bins)
            .all(|bins| (bins.iter().sum::<f64>() - 1.0).abs() <= NORMALIZED_TOL);
        Ok(DepthAttention {
            width,
            height,
            n_bins,
            data,
            normalized,
        })
    }

    /// All-ones weights: attention that leaves uniform mapping unchanged.
    pub fn ones(width: u32, height: u32, n_bins: usize) -> Result<Self> {
        Self::new(
            width,
            height,
            n_bins,
            vec![1.0; width as usize * height as usize * n_bins],
        )
    }

    pub fn uniform(width: u32, height: u32, n_bins: usize) -> Result<Self> {
        let v = 1.0 / n_bins as f64;
        Self::new(
            width,
            height,
            n_bins,
            vec![v; width as usize * height as usize * n_bins],
        )
    }

    /// Weight 1 at `bins[pixel]`, 0 elsewhere.
    pub fn one_hot(width: u32, height: u32, n_bins: usize, bins: &[usize]) -> Result<Self> {
        if bins.len() != width as usize * height as usize {
            return Err(Error::shape("one-hot attention needs one bin per pixel"));
        }
        let mut data = vec![0.0; bins.len() * n_bins];
        for (p, &b) in bins.iter().enumerate() {
            if b >= n_bins {
                return Err(Error::invalid("depth attention", format!("bin {b} >= {n_bins}")));
            }
            data[p * n_bins + b] = 1.0;
        }
        Self::new(width, height, n_bins, data)
    }

    /// Discretized Gaussian over bins centred on the nearest LiDAR return in
    /// each feature cell's footprint; cells without a return get a uniform
    /// distribution. Normalized.
    pub fn from_lidar_depth(
        points: &[LidarPoint],
        cam: &CameraModel,
        feature_w: u32,
        feature_h: u32,
        bins: &DepthBinning,
        sigma_bins: f64,
    ) -> Result<Self> {
        bins.validate()?;
        if !(sigma_bins > 0.0 && sigma_bins.is_finite()) {
            return Err(Error::invalid(
                "depth attention",
                format!("sigma {sigma_bins} must be positive"),
            ));
        }
        let sampling = FeatureSampling::new(feature_w, feature_h, cam.width(), cam.height())?;
        let su = cam.width() as f64 / feature_w as f64;
        let sv = cam.height() as f64 / feature_h as f64;
        let mut nearest = vec![f64::INFINITY; sampling.cells()];
        for p in points {
            let Some(proj) = cam.project(&p.position()) else {
                continue;
            };
            let fx = ((proj.u / su) as u32).min(feature_w - 1);
            let fy = ((proj.v / sv) as u32).min(feature_h - 1);
            let cell = fy as usize * feature_w as usize + fx as usize;
            nearest[cell] = nearest[cell].min(proj.depth);
        }
        let n = bins.count;
        let mut data = vec![0.0; sampling.cells() * n];
        for (cell, &depth) in nearest.iter().enumerate() {
            let row = &mut data[cell * n..(cell + 1) * n];
            if depth.is_finite() {
                let mu = ((depth - bins.d0) / bins.delta - 0.5).clamp(0.0, (n - 1) as f64);
                for (i, w) in row.iter_mut().enumerate() {
                    let z = (i as f64 - mu) / sigma_bins;
                    *w = (-0.5 * z * z).exp();
                }
                let total: f64 = row.iter().sum();
                row.iter_mut().for_each(|w| *w /= total);
            } else {
                row.iter_mut().for_each(|w| *w = 1.0 / n as f64);
            }
        }
        Self::new(feature_w, feature_h, n, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Each pixel's weights sum to 1 within 1e-6.
    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    #[inline]
    pub fn get(&self, pixel: usize, bin: usize) -> f64 {
        self.data[pixel * self.n_bins + bin]
    }

    fn check_grid(&self, grid: &SourceGrid) -> Result<()> {
        if self.width != grid.feature_w || self.height != grid.feature_h || self.n_bins != grid.n_bins {
            return Err(Error::shape(format!(
                "attention is {}x{}x{}, pseudo points come from {}x{}x{}",
                self.width, self.height, self.n_bins, grid.feature_w, grid.feature_h, grid.n_bins
            )));
        }
        Ok(())
    }
}

/// Uniform mapping: one unit-weight pseudo point per (pixel, depth bin),
/// each carrying its pixel's feature vector.
pub fn lift_mapping(
    features: &FeatureImage,
    cam: &CameraModel,
    camera_index: u16,
    bins: &DepthBinning,
) -> Result<PseudoPointSet> {
    let frustum = generate_frustum(features.width(), features.height(), cam, bins)?;
    let n_bins = bins.count;
    let n = frustum.len();
    let sources = (0..n)
        .map(|i| PointSource {
            camera: camera_index,
            pixel: (i / n_bins) as u32,
            bin: (i % n_bins) as u16,
        })
        .collect();
    let feature_rows = (0..n).map(|i| (i / n_bins) as u32).collect();
    Ok(PseudoPointSet {
        grid: SourceGrid {
            feature_w: features.width(),
            feature_h: features.height(),
            n_bins,
        },
        channels: features.channels(),
        positions: frustum.positions,
        weights: vec![1.0; n],
        sources,
        feature_rows,
        table: Arc::new(features.to_pixel_rows()),
    })
}

/// Multiplies each point's weight by the attention of its (pixel, bin).
pub fn apply_depth_attention(mut pp: PseudoPointSet, att: &DepthAttention) -> Result<PseudoPointSet> {
    att.check_grid(&pp.grid)?;
    for (w, s) in pp.weights.iter_mut().zip(&pp.sources) {
        *w *= att.get(s.pixel as usize, s.bin as usize);
    }
    Ok(pp)
}

/// Keeps points whose source pixel is foreground with score ≥ `score_threshold`.
pub fn semantic_mask_filter(pp: PseudoPointSet, sem: &SemanticImage, score_threshold: f64) -> Result<PseudoPointSet> {
    if !(0.0..=1.0).contains(&score_threshold) {
        return Err(Error::invalid(
            "score threshold",
            format!("{score_threshold} outside [0, 1]"),
        ));
    }
    if sem.width() != pp.grid.feature_w || sem.height() != pp.grid.feature_h {
        return Err(Error::shape(format!(
            "semantic image is {}x{}, pseudo points come from {}x{}",
            sem.width(),
            sem.height(),
            pp.grid.feature_w,
            pp.grid.feature_h
        )));
    }
    let keep: Vec<bool> = pp
        .sources
        .iter()
        .map(|s| {
            let p = s.pixel as usize;
            sem.is_foreground(p) && sem.score(p) >= score_threshold
        })
        .collect();
    Ok(pp.retain_mask(&keep))
}

/// Keeps points whose bin probability is at least `prob_threshold`. Weights
/// are expected to be attended already and are left as they are.
pub fn depth_threshold_filter(pp: PseudoPointSet, att: &DepthAttention, prob_threshold: f64) -> Result<PseudoPointSet> {
    att.check_grid(&pp.grid)?;
    if !att.is_normalized() {
        return Err(Error::invalid(
            "depth attention",
            "depth-threshold filtering needs a normalized distribution",
        ));
    }
    if !prob_threshold.is_finite() {
        return Err(Error::invalid("probability threshold", "must be finite"));
    }
    let keep: Vec<bool> = pp
        .sources
        .iter()
        .map(|s| att.get(s.pixel as usize, s.bin as usize) >= prob_threshold)
        .collect();
    Ok(pp.retain_mask(&keep))
}

/// Pooled grid and the number of pseudo points that fell outside it.
#[derive(Debug, Clone)]
pub struct SplatOutput {
    pub grid: BevGrid,
    pub dropped: usize,
}

fn check_splat(pp: &PseudoPointSet, layout: &BevLayout, channels: usize) -> Result<()> {
    layout.validate()?;
    if pp.channels != channels && !pp.is_empty() {
        return Err(Error::shape(format!(
            "pseudo points carry {} channels, target grid has {channels}",
            pp.channels
        )));
    }
    Ok(())
}

fn cell_assignment(pp: &PseudoPointSet, layout: &BevLayout) -> Vec<u32> {
    par::map_collect(&pp.positions, |p| {
        layout.cell_of(p.x, p.y).map_or(DROPPED, |c| c as u32)
    })
}

/// Reference scatter: points are visited in input order and each one adds
/// `weight * feature` into its cell. Single-threaded.
pub fn splat_pool_sequential(pp: &PseudoPointSet, layout: &BevLayout, channels: usize) -> Result<SplatOutput> {
    check_splat(pp, layout, channels)?;
    let mut acc = vec![0.0; layout.cells() * channels];
    let mut dropped = 0;
    for (i, p) in pp.positions.iter().enumerate() {
        let Some(cell) = layout.cell_of(p.x, p.y) else {
            dropped += 1;
            continue;
        };
        let w = pp.weights[i];
        let dst = &mut acc[cell * channels..(cell + 1) * channels];
        for (a, f) in dst.iter_mut().zip(pp.feature(i)) {
            *a += w * f;
        }
    }
    Ok(SplatOutput {
        grid: BevGrid::from_cell_major(channels, *layout, &acc),
        dropped,
    })
}

/// Cell-parallel scatter. Points are grouped by cell with a stable sort and
/// every cell accumulates its members in input order, performing the same
/// floating-point operations as [`splat_pool_sequential`]; the result is
/// bit-identical to it for any thread count.
pub fn splat_pool_bucketed(pp: &PseudoPointSet, layout: &BevLayout, channels: usize) -> Result<SplatOutput> {
    check_splat(pp, layout, channels)?;
    let cells = cell_assignment(pp, layout);
    let buckets = CellBuckets::build(&cells, layout.cells());
    let mut acc = vec![0.0; layout.cells() * channels];
    par::for_each_chunk_mut(&mut acc, channels, |cell, dst| {
        for &i in buckets.members(cell) {
            let i = i as usize;
            let w = pp.weights[i];
            for (a, f) in dst.iter_mut().zip(pp.feature(i)) {
                *a += w * f;
            }
        }
    });
    Ok(SplatOutput {
        grid: BevGrid::from_cell_major(channels, *layout, &acc),
        dropped: pp.len() - buckets.retained(),
    })
}

/// Sum-pools pseudo points into a `channels`-deep grid, collapsing z.
///
/// Uses the cell-parallel path when the `parallel` feature is enabled.
pub fn splat_pool(pp: &PseudoPointSet, layout: &BevLayout, channels: usize) -> Result<SplatOutput> {
    if cfg!(feature = "parallel") {
        splat_pool_bucketed(pp, layout, channels)
    } else {
        splat_pool_sequential(pp, layout, channels)
    }
}

// SPDX-License-Identifier: Apache-2.0

//! Instance masks, their feature-resolution form, and semantic embedding of
//! camera feature images.

use crate::error::{Error, Result};
use crate::geometry::FeatureSampling;

/// Dense binary image, row-major, one bit per pixel.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Bitmap {
    width: u32,
    height: u32,
    words: Vec<u64>,
}

impl Bitmap {
    pub fn new(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Bitmap {
            width,
            height,
            words: vec![0; n.div_ceil(64)],
        }
    }

    pub fn filled(width: u32, height: u32) -> Self {
        let mut b = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                b.set(x, y, true);
            }
        }
        b
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut b = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    b.set(x, y, true);
                }
            }
        }
        b
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    /// Out-of-bounds reads are `false`.
    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        if x >= self.width || y >= self.height {
            return false;
        }
        let i = self.index(x, y);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        assert!(x < self.width && y < self.height, "pixel ({x}, {y}) outside bitmap");
        let i = self.index(x, y);
        if value {
            self.words[i / 64] |= 1 << (i % 64);
        } else {
            self.words[i / 64] &= !(1 << (i % 64));
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// Row-major pixel values.
    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        let n = self.width as usize * self.height as usize;
        (0..n).map(move |i| self.words[i / 64] >> (i % 64) & 1 == 1)
    }
}

/// One instance-segmentation result at full image resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMask {
    pub bitmap: Bitmap,
    pub category: u32,
    pub score: f64,
}

impl InstanceMask {
    pub fn new(bitmap: Bitmap, category: u32, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::invalid("instance mask", format!("score {score} outside [0, 1]")));
        }
        Ok(InstanceMask {
            bitmap,
            category,
            score,
        })
    }
}

/// Order in which overlapping instances claim a pixel: higher score first,
/// then lower category, then lower position in the list.
pub(crate) fn precedence_order(masks: &[InstanceMask]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..masks.len()).collect();
    order.sort_by(|&a, &b| {
        masks[b]
            .score
            .total_cmp(&masks[a].score)
            .then(masks[a].category.cmp(&masks[b].category))
            .then(a.cmp(&b))
    });
    order
}

/// Instance masks resampled to the camera feature grid.
///
/// `category` is −1 for background. A cell is foreground exactly when its
/// category is non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticImage {
    width: u32,
    height: u32,
    category: Vec<i32>,
    score: Vec<f64>,
}

impl SemanticImage {
    pub fn background(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        SemanticImage {
            width,
            height,
            category: vec![-1; n],
            score: vec![0.0; n],
        }
    }

    pub fn from_channels(width: u32, height: u32, category: Vec<i32>, score: Vec<f64>) -> Result<Self> {
        let n = width as usize * height as usize;
        if category.len() != n || score.len() != n {
            return Err(Error::shape(format!(
                "semantic image {width}x{height} needs {n} cells, got {} categories and {} scores",
                category.len(),
                score.len()
            )));
        }
        for (&c, &s) in category.iter().zip(&score) {
            if c < -1 || !(0.0..=1.0).contains(&s) || (c < 0 && s != 0.0) {
                return Err(Error::invalid(
                    "semantic image",
                    format!("inconsistent cell (category {c}, score {s})"),
                ));
            }
        }
        Ok(SemanticImage {
            width,
            height,
            category,
            score,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn len(&self) -> usize {
        self.category.len()
    }

    pub fn is_empty(&self) -> bool {
        self.category.is_empty()
    }

    #[inline]
    pub fn category(&self, pixel: usize) -> i32 {
        self.category[pixel]
    }

    #[inline]
    pub fn score(&self, pixel: usize) -> f64 {
        self.score[pixel]
    }

    #[inline]
    pub fn is_foreground(&self, pixel: usize) -> bool {
        self.category[pixel] >= 0
    }

    pub fn categories(&self) -> &[i32] {
        &self.category
    }

    pub fn scores(&self) -> &[f64] {
        &self.score
    }

    pub fn foreground_count(&self) -> usize {
        self.category.iter().filter(|&&c| c >= 0).count()
    }

    /// Foreground cells with score at or above `threshold`.
    pub fn count_at_least(&self, threshold: f64) -> usize {
        (0..self.len())
            .filter(|&p| self.is_foreground(p) && self.score[p] >= threshold)
            .count()
    }

    pub fn foreground_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.foreground_count() as f64 / self.len() as f64
    }
}

/// Nearest-neighbour resampling of instance masks to a `feature_w x
/// feature_h` grid. Each cell samples the pixel under its center; where
/// instances overlap, [`precedence_order`] decides.
pub fn downscale_masks(masks: &[InstanceMask], feature_w: u32, feature_h: u32) -> Result<SemanticImage> {
    if feature_w == 0 || feature_h == 0 {
        return Err(Error::invalid("feature grid", "dimensions must be positive"));
    }
    let mut sem = SemanticImage::background(feature_w, feature_h);
    let Some(first) = masks.first() else {
        return Ok(sem);
    };
    let (w, h) = (first.bitmap.width(), first.bitmap.height());
    if let Some(bad) = masks.iter().find(|m| m.bitmap.width() != w || m.bitmap.height() != h) {
        return Err(Error::shape(format!(
            "mask is {}x{} but the image is {w}x{h}",
            bad.bitmap.width(),
            bad.bitmap.height()
        )));
    }
    let sampling = FeatureSampling::new(feature_w, feature_h, w, h)?;
    let order = precedence_order(masks);
    for fy in 0..feature_h {
        for fx in 0..feature_w {
            let (px, py) = sampling.sample_pixel(fx, fy);
            if let Some(&j) = order.iter().find(|&&j| masks[j].bitmap.get(px, py)) {
                let cell = fy as usize * feature_w as usize + fx as usize;
                sem.category[cell] = masks[j].category as i32;
                sem.score[cell] = masks[j].score;
            }
        }
    }
    Ok(sem)
}

/// Per-camera feature tensor, channel-major `C x H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImage {
    channels: usize,
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl FeatureImage {
    pub fn zeros(channels: usize, width: u32, height: u32) -> Self {
        FeatureImage {
            channels,
            width,
            height,
            data: vec![0.0; channels * width as usize * height as usize],
        }
    }

    pub fn from_data(channels: usize, width: u32, height: u32, data: Vec<f64>) -> Result<Self> {
        let n = channels * width as usize * height as usize;
        if channels == 0 || width == 0 || height == 0 {
            return Err(Error::invalid("feature image", "dimensions must be positive"));
        }
        if data.len() != n {
            return Err(Error::shape(format!(
                "feature image {channels}x{height}x{width} needs {n} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature image", "non-finite value"));
        }
        Ok(FeatureImage {
            channels,
            width,
            height,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, channel: usize, pixel: usize) -> f64 {
        self.data[channel * self.pixels() + pixel]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, pixel: usize, value: f64) {
        let n = self.pixels();
        self.data[channel * n + pixel] = value;
    }

    /// Pixel-major copy: row `p` holds the feature vector of pixel `p`.
    pub fn to_pixel_rows(&self) -> Vec<f64> {
        let n = self.pixels();
        let mut rows = vec![0.0; n * self.channels];
        for c in 0..self.channels {
            for p in 0..n {
                rows[p * self.channels + c] = self.data[c * n + p];
            }
        }
        rows
    }
}

/// Affine map from the `N + 1` semantic channels (one-hot category, then
/// score) to the camera feature channels.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SemanticCombiner {
    pub out_channels: usize,
    pub n_categories: usize,
    /// Row-major `out_channels x (n_categories + 1)`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl SemanticCombiner {
    pub fn zeros(out_channels: usize, n_categories: usize) -> Self {
        SemanticCombiner {
            out_channels,
            n_categories,
            weights: vec![0.0; out_channels * (n_categories + 1)],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cols = self.n_categories + 1;
        if self.weights.len() != self.out_channels * cols {
            return Err(Error::shape(format!(
                "combiner weights need {}x{cols} entries, got {}",
                self.out_channels,
                self.weights.len()
            )));
        }
        if self.bias.len() != self.out_channels {
            return Err(Error::shape(format!(
                "combiner bias needs {} entries, got {}",
                self.out_channels,
                self.bias.len()
            )));
        }
        if self.weights.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::invalid("combiner", "non-finite weight"));
        }
        Ok(())
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        SemanticCombiner {
            weights: self.weights.iter().map(|w| w * alpha).collect(),
            bias: self.bias.iter().map(|b| b * alpha).collect(),
            ..self.clone()
        }
    }

    /// `W s + b` for the semantic vector of a cell. Only the category column
    /// and the score column of `W` are non-zero in `s`.
    #[inline]
    fn term(&self, out: usize, category: i32, score: f64) -> f64 {
        let cols = self.n_categories + 1;
        let row = &self.weights[out * cols..(out + 1) * cols];
        let mut acc = self.bias[out];
        if category >= 0 {
            acc += row[category as usize];
            acc += row[self.n_categories] * score;
        }
        acc
    }
}

/// Adds `combiner(semantic_vector(p))` to every pixel's features. Background
/// cells contribute the all-zero semantic vector, so only the bias reaches them.
pub fn embed_semantics(
    features: &FeatureImage,
    sem: &SemanticImage,
    combiner: &SemanticCombiner,
) -> Result<FeatureImage> {
    combiner.validate()?;
    if combiner.out_channels != features.channels {
        return Err(Error::shape(format!(
            "combiner produces {} channels, features have {}",
            combiner.out_channels, features.channels
        )));
    }
    if sem.width != features.width || sem.height != features.height {
        return Err(Error::shape(format!(
            "semantic image is {}x{}, features are {}x{}",
            sem.width, sem.height, features.width, features.height
        )));
    }
    if let Some(&bad) = sem.category.iter().find(|&&c| c >= combiner.n_categories as i32) {
        return Err(Error::shape(format!(
            "category {bad} outside the combiner's {} categories",
            combiner.n_categories
        )));
    }
    let mut out = features.clone();
    let n = features.pixels();
    for c in 0..features.channels {
        let plane = &mut out.data[c * n..(c + 1) * n];
        for (p, value) in plane.iter_mut().enumerate() {
            *value += combiner.term(c, sem.category[p], sem.score[p]);
        }
    }
    Ok(out)
}

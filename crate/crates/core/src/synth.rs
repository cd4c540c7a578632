// SPDX-License-Identifier: Apache-2.0

//! Deterministic synthetic driving scenes: ground-truth boxes, ray-culled
//! LiDAR, instance masks and stand-in feature images.
//!
//! Cameras share the LiDAR origin, so a point the LiDAR sees is never
//! hidden from the cameras by another box. Masks are rendered by casting
//! five rays per pixel (center and corners) against every box and keeping
//! the nearest hit of each ray, so a pixel belongs to every box that owns
//! any of its samples. Pixels are therefore covered conservatively at
//! silhouette edges, and occluded parts of farther boxes are excluded.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Poisson};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{normalize_yaw, Box3D};
use crate::geometry::{CameraModel, FeatureSampling, RigidTransform};
use crate::masks::{downscale_masks, Bitmap, FeatureImage, InstanceMask, SemanticImage};
use crate::paint::LidarPoint;
use crate::par;

pub const CATEGORY_NAMES: [&str; 10] = [
    "car",
    "truck",
    "construction_vehicle",
    "bus",
    "trailer",
    "barrier",
    "motorcycle",
    "bicycle",
    "pedestrian",
    "traffic_cone",
];

/// Typical `(w, l, h)` per category in meters.
pub const NOMINAL_SIZES: [[f64; 3]; 10] = [
    [1.95, 4.62, 1.73],
    [2.51, 6.93, 2.84],
    [2.85, 6.37, 3.19],
    [2.94, 10.5, 3.47],
    [2.90, 12.29, 3.87],
    [2.53, 0.50, 0.98],
    [0.77, 2.11, 1.47],
    [0.60, 1.70, 1.28],
    [0.67, 0.73, 1.77],
    [0.41, 0.41, 1.07],
];

const STREAM_PLACEMENT: u64 = 1;
const STREAM_LIDAR: u64 = 2;
const STREAM_FEATURES: u64 = 16;

/// Horizontal ring of identical cameras mounted at the LiDAR origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RigSpec {
    pub n_cameras: usize,
    pub width: u32,
    pub height: u32,
    pub hfov_deg: f64,
    pub mount_height: f64,
    pub yaw_offset_deg: f64,
}

impl Default for RigSpec {
    fn default() -> Self {
        RigSpec {
            n_cameras: 6,
            width: 704,
            height: 256,
            hfov_deg: 70.0,
            mount_height: 1.8,
            yaw_offset_deg: 0.0,
        }
    }
}

impl RigSpec {
    pub fn origin(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, self.mount_height)
    }

    /// Camera `k` looks along `yaw_offset + k * 360 / n_cameras` degrees.
    pub fn build(&self) -> Result<Vec<CameraModel>> {
        if self.n_cameras == 0 || self.n_cameras > u16::MAX as usize {
            return Err(Error::invalid("rig", format!("{} cameras", self.n_cameras)));
        }
        if !(self.mount_height > 0.0 && self.mount_height.is_finite()) {
            return Err(Error::invalid("rig", "mount height must be positive"));
        }
        (0..self.n_cameras)
            .map(|k| {
                let yaw = (self.yaw_offset_deg + k as f64 * 360.0 / self.n_cameras as f64).to_radians();
                let pose = RigidTransform::camera_looking_along(yaw, self.origin());
                CameraModel::with_hfov(self.width, self.height, self.hfov_deg, pose)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub seed: u64,
    /// Ignored when `target_fg_fraction` is set.
    pub n_objects: usize,
    /// Sampling weight per category; its length is the category count.
    pub category_weights: Vec<f64>,
    /// Objects and ground points stay within this BEV radius.
    pub extent: f64,
    pub points_per_m2: f64,
    pub rig: RigSpec,
    /// Per-pixel mask dropout probability.
    pub mask_noise: f64,
    /// Mean foreground fraction over the rig's feature grids to aim for.
    pub target_fg_fraction: Option<f64>,
    pub feature_width: u32,
    pub feature_height: u32,
    pub feature_channels: usize,
    /// Closest object center distance from the ego origin.
    pub min_range: f64,
    /// Gap kept between the bounding circles of neighbouring boxes.
    pub min_separation: f64,
    pub max_attempts: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            seed: 0,
            n_objects: 8,
            category_weights: vec![1.0; CATEGORY_NAMES.len()],
            extent: 54.0,
            points_per_m2: 10.0,
            rig: RigSpec::default(),
            mask_noise: 0.0,
            target_fg_fraction: None,
            feature_width: 88,
            feature_height: 32,
            feature_channels: 80,
            min_range: 5.0,
            min_separation: 1.0,
            max_attempts: 4000,
        }
    }
}

/// Tolerance on the achieved foreground fraction.
pub const FG_TOLERANCE: f64 = 0.002;
// Placement aims slightly inside the tolerance band.
const FG_AIM: f64 = 0.0015;

impl SceneConfig {
    pub fn n_categories(&self) -> usize {
        self.category_weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.category_weights;
        if w.is_empty() || w.len() > CATEGORY_NAMES.len() {
            return Err(Error::invalid(
                "scene config",
                format!(
                    "between 1 and {} category weights required, got {}",
                    CATEGORY_NAMES.len(),
                    w.len()
                ),
            ));
        }
        if w.iter().any(|x| !(*x >= 0.0 && x.is_finite())) || w.iter().all(|x| *x == 0.0) {
            return Err(Error::invalid(
                "scene config",
                "category weights must be nonnegative and not all zero",
            ));
        }
        if !(self.points_per_m2 > 0.0 && self.points_per_m2.is_finite()) {
            return Err(Error::invalid("scene config", "point density must be positive"));
        }
        if !(self.extent > self.min_range && self.min_range > 0.0 && self.extent.is_finite()) {
            return Err(Error::invalid("scene config", "need 0 < min_range < extent"));
        }
        if !(0.0..1.0).contains(&self.mask_noise) {
            return Err(Error::invalid(
                "scene config",
                format!("mask noise {} outside [0, 1)", self.mask_noise),
            ));
        }
        if let Some(t) = self.target_fg_fraction {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::invalid(
                    "scene config",
                    format!("target foreground fraction {t} outside (0, 1)"),
                ));
            }
        }
        if self.feature_width == 0 || self.feature_height == 0 || self.feature_channels == 0 {
            return Err(Error::invalid("scene config", "feature grid must be non-empty"));
        }
        if self.min_separation < 0.0 {
            return Err(Error::invalid("scene config", "min separation must be nonnegative"));
        }
        FeatureSampling::new(self.feature_width, self.feature_height, self.rig.width, self.rig.height)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub config: SceneConfig,
    pub rig: Vec<CameraModel>,
    pub gt_boxes: Vec<Box3D>,
    /// Confidence given to each box's instance masks.
    pub mask_scores: Vec<f64>,
    pub cloud: Vec<LidarPoint>,
    /// Generating box of each point; `None` for ground.
    pub point_box: Vec<Option<u32>>,
    pub masks_per_camera: Vec<Vec<InstanceMask>>,
    /// Generating box of each mask, parallel to `masks_per_camera`.
    pub mask_boxes: Vec<Vec<u32>>,
    pub feature_images: Vec<FeatureImage>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneCensus {
    pub objects: usize,
    pub points: usize,
    pub object_points: usize,
    pub per_camera_fg: Vec<f64>,
    pub foreground_fraction: f64,
}

impl Scene {
    pub fn n_categories(&self) -> usize {
        self.config.n_categories()
    }

    /// Masks resampled onto each camera's feature grid.
    pub fn semantic_images(&self) -> Result<Vec<SemanticImage>> {
        self.masks_per_camera
            .iter()
            .map(|m| downscale_masks(m, self.config.feature_width, self.config.feature_height))
            .collect()
    }

    pub fn census(&self) -> Result<SceneCensus> {
        let per_camera_fg: Vec<f64> = self
            .semantic_images()?
            .iter()
            .map(|s| s.foreground_fraction())
            .collect();
        Ok(SceneCensus {
            objects: self.gt_boxes.len(),
            points: self.cloud.len(),
            object_points: self.point_box.iter().filter(|b| b.is_some()).count(),
            foreground_fraction: per_camera_fg.iter().sum::<f64>() / per_camera_fg.len() as f64,
            per_camera_fg,
        })
    }

    /// SHA-256 over every generated byte, hex encoded.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for b in &self.gt_boxes {
            for v in b.center.iter().chain(&b.size).chain([&b.yaw, &b.score]) {
                h.update(v.to_le_bytes());
            }
            h.update(b.category.to_le_bytes());
        }
        for s in &self.mask_scores {
            h.update(s.to_le_bytes());
        }
        for (p, b) in self.cloud.iter().zip(&self.point_box) {
            for v in [p.x, p.y, p.z, p.t, p.intensity] {
                h.update(v.to_le_bytes());
            }
            h.update(b.map_or(u32::MAX, |b| b).to_le_bytes());
        }
        for (cam, masks) in self.masks_per_camera.iter().enumerate() {
            h.update((cam as u32).to_le_bytes());
            for m in masks {
                h.update(m.category.to_le_bytes());
                h.update(m.score.to_le_bytes());
                let bits: Vec<u8> = m.bitmap.iter().map(u8::from).collect();
                h.update(&bits);
            }
        }
        for f in &self.feature_images {
            for v in f.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

fn stream(seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform in `[0, 1)` from a hash of the inputs.
fn hash_unit(seed: u64, camera: usize, box_index: u32, pixel: usize) -> f64 {
    let h =
        splitmix(splitmix(splitmix(seed ^ 0x6d61_736b) ^ camera as u64) ^ ((box_index as u64) << 32 | pixel as u64));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Entry distance along `o + t·d` into the box, when the ray enters it at
/// `t > 0`.
pub(crate) fn ray_box_entry(b: &Box3D, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
    let (s, c) = b.yaw.sin_cos();
    let p = o - b.center;
    let lo = [c * p.x + s * p.y, -s * p.x + c * p.y, p.z];
    let ld = [c * d.x + s * d.y, -s * d.x + c * d.y, d.z];
    let half = [0.5 * b.size[1], 0.5 * b.size[0], 0.5 * b.size[2]];
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for k in 0..3 {
        if ld[k] == 0.0 {
            if lo[k].abs() > half[k] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / ld[k];
        let (a, b) = ((-half[k] - lo[k]) * inv, (half[k] - lo[k]) * inv);
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    (t0 <= t1 && t0 > 0.0).then_some(t0)
}

fn box_corners(b: &Box3D) -> [Vector3<f64>; 8] {
    let (s, c) = b.yaw.sin_cos();
    let (hl, hw, hh) = (0.5 * b.size[1], 0.5 * b.size[0], 0.5 * b.size[2]);
    let mut out = [Vector3::zeros(); 8];
    for (i, o) in out.iter_mut().enumerate() {
        let a = if i & 1 == 0 { hl } else { -hl };
        let w = if i & 2 == 0 { hw } else { -hw };
        let z = if i & 4 == 0 { hh } else { -hh };
        *o = b.center + Vector3::new(c * a - s * w, s * a + c * w, z);
    }
    out
}

const EDGES: [(usize, usize); 12] = [
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7),
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

/// Inclusive pixel rectangle `(c0, c1, r0, r1)` that can contain the box's
/// silhouette, padded by one pixel. Edges are clipped to the front of the
/// camera before projecting.
fn pixel_bounds(cam: &CameraModel, b: &Box3D) -> Option<(u32, u32, u32, u32)> {
    const NEAR: f64 = 1e-3;
    let pc = box_corners(b).map(|p| cam.cam_from_ego().apply(&p));
    let (mut umin, mut umax, mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    let mut any = false;
    let mut take = |p: Vector3<f64>| {
        let u = cam.fx() * p.x / p.z + cam.cx();
        let v = cam.fy() * p.y / p.z + cam.cy();
        umin = umin.min(u);
        umax = umax.max(u);
        vmin = vmin.min(v);
        vmax = vmax.max(v);
        any = true;
    };
    for (a, b) in EDGES {
        let (pa, pb) = (pc[a], pc[b]);
        match (pa.z >= NEAR, pb.z >= NEAR) {
            (true, true) => {
                take(pa);
                take(pb);
            }
            (true, false) | (false, true) => {
                let t = (NEAR - pa.z) / (pb.z - pa.z);
                let clip = pa + (pb - pa) * t;
                take(if pa.z >= NEAR { pa } else { pb });
                take(clip);
            }
            (false, false) => {}
        }
    }
    let (w, h) = (cam.width() as f64, cam.height() as f64);
    if !any || umax < -1.0 || vmax < -1.0 || umin > w || vmin > h {
        return None;
    }
    let clamp = |x: f64, hi: f64| x.clamp(0.0, hi - 1.0) as u32;
    Some((
        clamp(umin.floor() - 1.0, w),
        clamp(umax.floor() + 1.0, w),
        clamp(vmin.floor() - 1.0, h),
        clamp(vmax.floor() + 1.0, h),
    ))
}

const SAMPLE_OFFSETS: [(f64, f64); 5] = [(0.5, 0.5), (0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)];
const NO_BOX: u32 = u32::MAX;

/// Nearest-hit buffers for a set of pixels of one camera.
struct Raster<'a> {
    cam: &'a CameraModel,
    /// Full-resolution pixel index of each slot.
    pixels: Vec<usize>,
    /// Whether `pixels` is the whole image in row-major order.
    dense: bool,
    best_t: Vec<[f64; 5]>,
    best_box: Vec<[u32; 5]>,
}

impl<'a> Raster<'a> {
    fn dense(cam: &'a CameraModel) -> Self {
        let n = cam.width() as usize * cam.height() as usize;
        Raster {
            cam,
            pixels: (0..n).collect(),
            dense: true,
            best_t: vec![[f64::INFINITY; 5]; n],
            best_box: vec![[NO_BOX; 5]; n],
        }
    }

    fn sparse(cam: &'a CameraModel, pixels: Vec<usize>) -> Self {
        let n = pixels.len();
        Raster {
            cam,
            pixels,
            dense: false,
            best_t: vec![[f64::INFINITY; 5]; n],
            best_box: vec![[NO_BOX; 5]; n],
        }
    }

    fn slots_in(&self, (c0, c1, r0, r1): (u32, u32, u32, u32)) -> Vec<usize> {
        let w = self.cam.width() as usize;
        if self.dense {
            (r0 as usize..=r1 as usize)
                .flat_map(|r| (c0 as usize..=c1 as usize).map(move |c| r * w + c))
                .collect()
        } else {
            (0..self.pixels.len())
                .filter(|&s| {
                    let (c, r) = ((self.pixels[s] % w) as u32, (self.pixels[s] / w) as u32);
                    (c0..=c1).contains(&c) && (r0..=r1).contains(&r)
                })
                .collect()
        }
    }

    /// Per-slot sample hits `(slot, sample, t)` that `b` would win.
    fn wins(&self, b: &Box3D) -> Vec<(usize, usize, f64)> {
        let Some(bounds) = pixel_bounds(self.cam, b) else {
            return Vec::new();
        };
        let w = self.cam.width() as usize;
        let origin = self.cam.center();
        let mut out = Vec::new();
        for s in self.slots_in(bounds) {
            let (c, r) = ((self.pixels[s] % w) as f64, (self.pixels[s] / w) as f64);
            for (k, (du, dv)) in SAMPLE_OFFSETS.iter().enumerate() {
                let d = self.cam.ray_direction(c + du, r + dv);
                if let Some(t) = ray_box_entry(b, &origin, &d) {
                    if t < self.best_t[s][k] {
                        out.push((s, k, t));
                    }
                }
            }
        }
        out
    }

    fn commit(&mut self, box_index: u32, wins: &[(usize, usize, f64)]) {
        for &(s, k, t) in wins {
            self.best_t[s][k] = t;
            self.best_box[s][k] = box_index;
        }
    }

    fn owners(ids: &[u32; 5]) -> impl Iterator<Item = u32> + '_ {
        ids.iter()
            .enumerate()
            .filter_map(move |(k, &b)| (b != NO_BOX && !ids[..k].contains(&b)).then_some(b))
    }
}

struct Dropout {
    seed: u64,
    rate: f64,
}

impl Dropout {
    fn dropped(&self, camera: usize, box_index: u32, pixel: usize) -> bool {
        self.rate > 0.0 && hash_unit(self.seed, camera, box_index, pixel) < self.rate
    }

    fn foreground(&self, camera: usize, ids: &[u32; 5], pixel: usize) -> bool {
        Raster::owners(ids).any(|b| !self.dropped(camera, b, pixel))
    }
}

struct Placer<'a> {
    config: &'a SceneConfig,
    rng: ChaCha8Rng,
    categories: WeightedIndex<f64>,
}

impl Placer<'_> {
    fn propose(&mut self) -> (Box3D, f64) {
        let cat = self.categories.sample(&mut self.rng);
        let nominal = NOMINAL_SIZES[cat];
        let size = nominal.map(|s| s * self.rng.random_range(0.9..1.1));
        let radius = 0.5 * size[0].hypot(size[1]);
        let max_r = (self.config.extent - radius).max(self.config.min_range);
        let r = self.rng.random_range(self.config.min_range..=max_r);
        let theta = self.rng.random_range(-PI..PI);
        let yaw = normalize_yaw(self.rng.random_range(-PI..PI));
        let score = self.rng.random_range(0.55..0.95);
        let b = Box3D {
            center: Vector3::new(r * theta.cos(), r * theta.sin(), 0.5 * size[2]),
            size,
            yaw,
            velocity: Some([0.0, 0.0]),
            category: cat as u32,
            score: 1.0,
            attribute: Some(0),
        };
        (b, score)
    }

    fn fits(&self, b: &Box3D, placed: &[Box3D]) -> bool {
        let ra = 0.5 * b.size[0].hypot(b.size[1]);
        placed.iter().all(|o| {
            let rb = 0.5 * o.size[0].hypot(o.size[1]);
            b.bev_distance(o) >= ra + rb + self.config.min_separation
        })
    }
}

fn place_count(placer: &mut Placer) -> Result<(Vec<Box3D>, Vec<f64>)> {
    let n = placer.config.n_objects;
    let (mut boxes, mut scores) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let mut attempts = 0;
    while boxes.len() < n {
        if attempts == placer.config.max_attempts {
            return Err(Error::invalid(
                "scene config",
                format!("placed {} of {n} objects in {attempts} attempts", boxes.len()),
            ));
        }
        attempts += 1;
        let (b, s) = placer.propose();
        if placer.fits(&b, &boxes) {
            boxes.push(b);
            scores.push(s);
        }
    }
    Ok((boxes, scores))
}

/// Greedy acceptance: a proposal is kept when it fits and does not push the
/// foreground fraction over the band; stops once inside the band.
fn place_to_fraction(placer: &mut Placer, rig: &[CameraModel], target: f64) -> Result<(Vec<Box3D>, Vec<f64>)> {
    let cfg = placer.config;
    let sampling = FeatureSampling::new(cfg.feature_width, cfg.feature_height, cfg.rig.width, cfg.rig.height)?;
    let sample_pixels: Vec<usize> = (0..cfg.feature_height)
        .flat_map(|fy| (0..cfg.feature_width).map(move |fx| (fx, fy)))
        .map(|(fx, fy)| {
            let (px, py) = sampling.sample_pixel(fx, fy);
            py as usize * cfg.rig.width as usize + px as usize
        })
        .collect();
    let mut rasters: Vec<Raster> = rig.iter().map(|c| Raster::sparse(c, sample_pixels.clone())).collect();
    let dropout = Dropout {
        seed: cfg.seed,
        rate: cfg.mask_noise,
    };
    let total = (rig.len() * sample_pixels.len()) as f64;
    let mut fg = 0i64;
    let (mut boxes, mut scores) = (Vec::new(), Vec::new());
    for attempt in 0..cfg.max_attempts {
        if fg as f64 / total >= target - FG_AIM {
            log::debug!(
                "foreground {:.5} with {} boxes after {attempt} attempts",
                fg as f64 / total,
                boxes.len()
            );
            return Ok((boxes, scores));
        }
        let (b, s) = placer.propose();
        if !placer.fits(&b, &boxes) {
            continue;
        }
        let k = boxes.len() as u32;
        let wins: Vec<Vec<(usize, usize, f64)>> = par::map_collect(&rasters, |r| r.wins(&b));
        let mut delta = 0i64;
        for (cam, (r, w)) in rasters.iter().zip(&wins).enumerate() {
            // Wins come grouped by slot.
            for group in w.chunk_by(|a, b| a.0 == b.0) {
                let s = group[0].0;
                let before = r.best_box[s];
                let mut after = before;
                for &(_, kk, _) in group {
                    after[kk] = k;
                }
                let px = r.pixels[s];
                delta += dropout.foreground(cam, &after, px) as i64 - dropout.foreground(cam, &before, px) as i64;
            }
        }
        if (fg + delta) as f64 / total > target + FG_AIM {
            continue;
        }
        for (r, w) in rasters.iter_mut().zip(&wins) {
            r.commit(k, w);
        }
        fg += delta;
        boxes.push(b);
        scores.push(s);
    }
    let reached = fg as f64 / total;
    if (reached - target).abs() <= FG_TOLERANCE {
        return Ok((boxes, scores));
    }
    Err(Error::Unreachable {
        target,
        reached,
        attempts: cfg.max_attempts,
    })
}

type Face = (f64, [f64; 3], [f64; 3], [f64; 3]);

/// Masks of one camera and the generating box of each.
type CameraMasks = (Vec<InstanceMask>, Vec<u32>);
type RigMasks = (Vec<Vec<InstanceMask>>, Vec<Vec<u32>>);

fn render_masks(rig: &[CameraModel], boxes: &[Box3D], scores: &[f64], dropout: &Dropout) -> Result<RigMasks> {
    let per_cam: Vec<Result<CameraMasks>> = par::map_range(rig.len(), |cam| {
        let c = &rig[cam];
        let mut raster = Raster::dense(c);
        for (k, b) in boxes.iter().enumerate() {
            let w = raster.wins(b);
            raster.commit(k as u32, &w);
        }
        let (w, h) = (c.width(), c.height());
        let mut bitmaps: Vec<Option<Bitmap>> = vec![None; boxes.len()];
        for (px, ids) in raster.best_box.iter().enumerate() {
            for b in Raster::owners(ids) {
                if !dropout.dropped(cam, b, px) {
                    bitmaps[b as usize].get_or_insert_with(|| Bitmap::new(w, h)).set(
                        px as u32 % w,
                        px as u32 / w,
                        true,
                    );
                }
            }
        }
        let mut masks = Vec::new();
        let mut ids = Vec::new();
        for (k, bm) in bitmaps.into_iter().enumerate() {
            if let Some(bm) = bm {
                masks.push(InstanceMask::new(bm, boxes[k].category, scores[k])?);
                ids.push(k as u32);
            }
        }
        Ok((masks, ids))
    });
    let mut masks = Vec::with_capacity(rig.len());
    let mut ids = Vec::with_capacity(rig.len());
    for r in per_cam {
        let (m, i) = r?;
        masks.push(m);
        ids.push(i);
    }
    Ok((masks, ids))
}

struct Candidate {
    p: Vector3<f64>,
    owner: Option<u32>,
    intensity: f32,
}

/// Ground disc and box-surface samples, culled by the boxes along the ray
/// from the LiDAR origin.
fn sample_lidar(cfg: &SceneConfig, boxes: &[Box3D]) -> (Vec<LidarPoint>, Vec<Option<u32>>) {
    let mut rng = stream(cfg.seed, STREAM_LIDAR);
    let density = cfg.points_per_m2;
    let mut cands = Vec::new();
    let n_ground = (PI * cfg.extent * cfg.extent * density).round() as usize;
    for _ in 0..n_ground {
        let r = cfg.extent * rng.random::<f64>().sqrt();
        let th = rng.random_range(-PI..PI);
        cands.push(Candidate {
            p: Vector3::new(r * th.cos(), r * th.sin(), 0.0),
            owner: None,
            intensity: rng.random_range(0.05..0.3),
        });
    }
    for (k, b) in boxes.iter().enumerate() {
        let (s, c) = b.yaw.sin_cos();
        let [w, l, h] = b.size;
        // Side faces (local normal ±x, ±y) and the top: area, center, two edges.
        let faces: [Face; 5] = [
            (w * h, [0.5 * l, 0.0, 0.0], [0.0, w, 0.0], [0.0, 0.0, h]),
            (w * h, [-0.5 * l, 0.0, 0.0], [0.0, w, 0.0], [0.0, 0.0, h]),
            (l * h, [0.0, 0.5 * w, 0.0], [l, 0.0, 0.0], [0.0, 0.0, h]),
            (l * h, [0.0, -0.5 * w, 0.0], [l, 0.0, 0.0], [0.0, 0.0, h]),
            (l * w, [0.0, 0.0, 0.5 * h], [l, 0.0, 0.0], [0.0, w, 0.0]),
        ];
        for (area, base, e1, e2) in faces {
            let n = (area * density + rng.random::<f64>()).floor() as usize;
            for _ in 0..n {
                let (a, bb) = (rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
                let local = [0, 1, 2].map(|i| base[i] + a * e1[i] + bb * e2[i]);
                let p = b.center + Vector3::new(c * local[0] - s * local[1], s * local[0] + c * local[1], local[2]);
                cands.push(Candidate {
                    p,
                    owner: Some(k as u32),
                    intensity: rng.random_range(0.3..0.9),
                });
            }
        }
    }
    let origin = cfg.rig.origin();
    let visible = par::map_collect(&cands, |cand| {
        let d = cand.p - origin;
        boxes
            .iter()
            .all(|b| ray_box_entry(b, &origin, &d).is_none_or(|t| t >= 1.0 - 1e-9))
    });
    cands
        .iter()
        .zip(visible)
        .filter(|(_, v)| *v)
        .map(|(c, _)| {
            (
                LidarPoint::new(c.p.x as f32, c.p.y as f32, c.p.z as f32, 0.0, c.intensity),
                c.owner,
            )
        })
        .unzip()
}

fn feature_images(cfg: &SceneConfig) -> Vec<FeatureImage> {
    par::map_range(cfg.rig.n_cameras, |cam| {
        let mut rng = stream(cfg.seed, STREAM_FEATURES + cam as u64);
        let n = cfg.feature_channels * cfg.feature_width as usize * cfg.feature_height as usize;
        // Drawn as f32 so the feature file format stores them exactly.
        let data = (0..n).map(|_| rng.random_range(-1.0f32..1.0) as f64).collect();
        FeatureImage::from_data(cfg.feature_channels, cfg.feature_width, cfg.feature_height, data)
            .expect("feature dimensions match by construction")
    })
}

/// Builds a scene. Identical configs give identical scenes.
pub fn synthesize(config: &SceneConfig) -> Result<Scene> {
    config.validate()?;
    let rig = config.rig.build()?;
    let mut placer = Placer {
        config,
        rng: stream(config.seed, STREAM_PLACEMENT),
        categories: WeightedIndex::new(&config.category_weights)
            .map_err(|e| Error::invalid("scene config", e.to_string()))?,
    };
    let (gt_boxes, mask_scores) = match config.target_fg_fraction {
        Some(t) => place_to_fraction(&mut placer, &rig, t)?,
        None => place_count(&mut placer)?,
    };
    let dropout = Dropout {
        seed: config.seed,
        rate: config.mask_noise,
    };
    let (masks_per_camera, mask_boxes) = render_masks(&rig, &gt_boxes, &mask_scores, &dropout)?;
    let (cloud, point_box) = sample_lidar(config, &gt_boxes);
    Ok(Scene {
        config: config.clone(),
        rig,
        gt_boxes,
        mask_scores,
        cloud,
        point_box,
        masks_per_camera,
        mask_boxes,
        feature_images: feature_images(config),
    })
}

/// Noise model for [`oracle_detections`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Perturbation {
    /// Std-dev of the center offset per axis, meters.
    pub sigma_center: f64,
    /// Std-dev of the relative size change per dimension.
    pub sigma_size: f64,
    pub sigma_yaw: f64,
    pub drop_rate: f64,
    /// Expected false positives per ground-truth box.
    pub fp_rate: f64,
}

impl Perturbation {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.sigma_center,
            self.sigma_size,
            self.sigma_yaw,
            self.drop_rate,
            self.fp_rate,
        ];
        if all.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid(
                "perturbation",
                "magnitudes must be nonnegative and finite",
            ));
        }
        if self.drop_rate > 1.0 {
            return Err(Error::invalid("perturbation", "drop rate above 1"));
        }
        Ok(())
    }
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("sigma validated nonnegative")
}

/// Ground truth perturbed by zero-mean noise, randomly dropped, plus
/// uniformly placed false positives. Kept boxes score in `[0.5, 1)`, false
/// positives in `[0, 0.6)`.
pub fn oracle_detections(scene: &Scene, perturb: &Perturbation, seed: u64) -> Result<Vec<Box3D>> {
    perturb.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (nc, ns, ny) = (
        normal(perturb.sigma_center),
        normal(perturb.sigma_size),
        normal(perturb.sigma_yaw),
    );
    let mut dets = Vec::new();
    for gt in &scene.gt_boxes {
        let keep = rng.random::<f64>() >= perturb.drop_rate;
        let offset = Vector3::new(nc.sample(&mut rng), nc.sample(&mut rng), nc.sample(&mut rng));
        let scale = [0; 3].map(|_| (1.0 + ns.sample(&mut rng)).max(0.05));
        let yaw = gt.yaw + ny.sample(&mut rng);
        let score = rng.random_range(0.5..1.0);
        if !keep {
            continue;
        }
        dets.push(Box3D {
            center: gt.center + offset,
            size: [0, 1, 2].map(|k| gt.size[k] * scale[k]),
            yaw: normalize_yaw(yaw),
            score,
            ..gt.clone()
        });
    }
    if perturb.fp_rate > 0.0 && !scene.gt_boxes.is_empty() {
        let lambda = perturb.fp_rate * scene.gt_boxes.len() as f64;
        let n_fp = Poisson::new(lambda)
            .map_err(|e| Error::invalid("perturbation", e.to_string()))?
            .sample(&mut rng) as usize;
        let cats = WeightedIndex::new(&scene.config.category_weights)
            .map_err(|e| Error::invalid("scene config", e.to_string()))?;
        let extent = scene.config.extent;
        for _ in 0..n_fp {
            let cat = cats.sample(&mut rng);
            let size = NOMINAL_SIZES[cat];
            let r = extent * rng.random::<f64>().sqrt();
            let th = rng.random_range(-PI..PI);
            dets.push(Box3D {
                center: Vector3::new(r * th.cos(), r * th.sin(), 0.5 * size[2]),
                size,
                yaw: normalize_yaw(rng.random_range(-PI..PI)),
                velocity: Some([0.0, 0.0]),
                category: cat as u32,
                score: rng.random_range(0.0..0.6),
                attribute: Some(0),
            });
        }
    }
    Ok(dets)
}

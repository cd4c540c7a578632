// SPDX-License-Identifier: Apache-2.0

//! Decorating LiDAR points with instance-mask semantics.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::CameraModel;
use crate::masks::{precedence_order, InstanceMask};
use crate::par;

/// One LiDAR return in the ego frame. `t` is a time offset in seconds and is
/// carried through untouched.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarPoint {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub t: f32,
    pub intensity: f32,
}

impl LidarPoint {
    pub fn new(x: f32, y: f32, z: f32, t: f32, intensity: f32) -> Self {
        LidarPoint { x, y, z, t, intensity }
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x as f64, self.y as f64, self.z as f64)
    }

    pub fn is_finite(&self) -> bool {
        [self.x, self.y, self.z, self.t, self.intensity]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Category and confidence painted onto a point. Unpainted points have no
/// category and score 0.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PaintLabel {
    pub category: Option<u32>,
    pub score: f32,
}

/// LiDAR points with a one-hot category and a score appended to each.
///
/// Labels are stored compactly; [`SemanticPointCloud::record`] expands a
/// point to its `5 + N + 1` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticPointCloud {
    points: Vec<LidarPoint>,
    labels: Vec<PaintLabel>,
    n_categories: usize,
}

impl SemanticPointCloud {
    pub fn new(points: Vec<LidarPoint>, labels: Vec<PaintLabel>, n_categories: usize) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(Error::shape(format!(
                "{} points but {} labels",
                points.len(),
                labels.len()
            )));
        }
        for l in &labels {
            match l.category {
                Some(c) if c as usize >= n_categories => {
                    return Err(Error::invalid("paint label", format!("category {c} >= {n_categories}")));
                }
                Some(_) if !(l.score > 0.0 && l.score <= 1.0) => {
                    return Err(Error::invalid(
                        "paint label",
                        format!("painted point with score {}", l.score),
                    ));
                }
                None if l.score != 0.0 => {
                    return Err(Error::invalid("paint label", "unpainted point with non-zero score"));
                }
                _ => {}
            }
        }
        Ok(SemanticPointCloud {
            points,
            labels,
            n_categories,
        })
    }

    pub fn unpainted(points: Vec<LidarPoint>, n_categories: usize) -> Self {
        let labels = vec![PaintLabel::default(); points.len()];
        SemanticPointCloud {
            points,
            labels,
            n_categories,
        }
    }

    pub fn points(&self) -> &[LidarPoint] {
        &self.points
    }

    pub fn labels(&self) -> &[PaintLabel] {
        &self.labels
    }

    pub fn n_categories(&self) -> usize {
        self.n_categories
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn painted_count(&self) -> usize {
        self.labels.iter().filter(|l| l.category.is_some()).count()
    }

    /// `(x, y, z, t, i, one_hot[N], s)` for point `i`.
    pub fn record(&self, i: usize) -> Vec<f32> {
        let p = &self.points[i];
        let l = &self.labels[i];
        let mut out = Vec::with_capacity(6 + self.n_categories);
        out.extend_from_slice(&[p.x, p.y, p.z, p.t, p.intensity]);
        out.extend((0..self.n_categories).map(|c| if l.category == Some(c as u32) { 1.0 } else { 0.0 }));
        out.push(l.score);
        out
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    score: f64,
    category: u32,
    camera: usize,
}

impl Candidate {
    /// Higher score, then lower category, then lower camera index.
    fn beats(&self, other: &Candidate) -> bool {
        self.score > other.score
            || (self.score == other.score
                && (self.category < other.category || (self.category == other.category && self.camera < other.camera)))
    }
}

/// Paints each point from the highest-scoring instance that covers its
/// projection in any camera.
///
/// Masks are looked up at full resolution at the pixel containing the
/// projection. Instances with score 0 never paint. Points seen by no camera,
/// or only on background, stay unpainted.
pub fn paint_points(
    points: &[LidarPoint],
    rig: &[CameraModel],
    masks_per_camera: &[Vec<InstanceMask>],
    n_categories: usize,
) -> Result<SemanticPointCloud> {
    if rig.len() != masks_per_camera.len() {
        return Err(Error::shape(format!(
            "{} cameras but {} mask lists",
            rig.len(),
            masks_per_camera.len()
        )));
    }
    for (ci, (cam, masks)) in rig.iter().zip(masks_per_camera).enumerate() {
        for m in masks {
            if m.bitmap.width() != cam.width() || m.bitmap.height() != cam.height() {
                return Err(Error::shape(format!(
                    "camera {ci} is {}x{} but a mask is {}x{}",
                    cam.width(),
                    cam.height(),
                    m.bitmap.width(),
                    m.bitmap.height()
                )));
            }
            if m.category as usize >= n_categories {
                return Err(Error::shape(format!(
                    "camera {ci} mask category {} >= {n_categories}",
                    m.category
                )));
            }
        }
    }
    let orders: Vec<Vec<usize>> = masks_per_camera
        .iter()
        .map(|masks| {
            precedence_order(masks)
                .into_iter()
                .filter(|&j| masks[j].score > 0.0)
                .collect()
        })
        .collect();

    let labels = par::map_collect(points, |p| {
        let pos = p.position();
        let mut best: Option<Candidate> = None;
        for (ci, cam) in rig.iter().enumerate() {
            let Some(proj) = cam.project(&pos) else { continue };
            let (px, py) = proj.pixel();
            let masks = &masks_per_camera[ci];
            if let Some(&j) = orders[ci].iter().find(|&&j| masks[j].bitmap.get(px, py)) {
                let cand = Candidate {
                    score: masks[j].score,
                    category: masks[j].category,
                    camera: ci,
                };
                if best.is_none_or(|b| cand.beats(&b)) {
                    best = Some(cand);
                }
            }
        }
        match best {
            Some(b) => PaintLabel {
                category: Some(b.category),
                // Scores are stored as f32 in the painted record; keep a
                // positive score positive after narrowing.
                score: (b.score as f32).max(f32::MIN_POSITIVE),
            },
            None => PaintLabel::default(),
        }
    });

    Ok(SemanticPointCloud {
        points: points.to_vec(),
        labels,
        n_categories,
    })
}

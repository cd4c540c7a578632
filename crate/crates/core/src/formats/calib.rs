// SPDX-License-Identifier: Apache-2.0

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{read_json, write_json};
use crate::error::{Error, Result};
use crate::geometry::{CameraModel, RigidTransform};

/// One camera of the calibration manifest. The pose is `cam_from_ego`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraEntry {
    pub name: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub rotation_wxyz: [f64; 4],
    pub translation: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub cameras: Vec<CameraEntry>,
}

impl Calibration {
    pub fn from_rig(rig: &[CameraModel], names: impl Fn(usize) -> String) -> Self {
        let cameras = rig
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let t = c.cam_from_ego().translation();
                CameraEntry {
                    name: names(i),
                    fx: c.fx(),
                    fy: c.fy(),
                    cx: c.cx(),
                    cy: c.cy(),
                    width: c.width(),
                    height: c.height(),
                    rotation_wxyz: c.cam_from_ego().to_quaternion_wxyz(),
                    translation: [t.x, t.y, t.z],
                }
            })
            .collect();
        Calibration { cameras }
    }

    pub fn names(&self) -> Vec<String> {
        self.cameras.iter().map(|c| c.name.clone()).collect()
    }

    pub fn build(&self) -> Result<Vec<CameraModel>> {
        let mut seen = std::collections::BTreeSet::new();
        self.cameras
            .iter()
            .map(|c| {
                if !seen.insert(c.name.as_str()) {
                    return Err(Error::invalid(
                        "calibration",
                        format!("duplicate camera name {:?}", c.name),
                    ));
                }
                let [x, y, z] = c.translation;
                let pose = RigidTransform::from_quaternion_wxyz(c.rotation_wxyz, Vector3::new(x, y, z))?;
                CameraModel::new(c.fx, c.fy, c.cx, c.cy, c.width, c.height, pose)
            })
            .collect()
    }
}

pub fn read_calibration(path: &Path) -> Result<(Calibration, Vec<CameraModel>)> {
    let calib: Calibration = read_json(path)?;
    if calib.cameras.is_empty() {
        return Err(Error::parse(path.display().to_string(), "no cameras"));
    }
    let rig = calib.build()?;
    Ok((calib, rig))
}

pub fn write_calibration(path: &Path, calib: &Calibration) -> Result<()> {
    write_json(path, calib)
}

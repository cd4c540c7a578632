// SPDX-License-Identifier: Apache-2.0

//! Boxes as whitespace-separated text records:
//!
//! ```text
//! category score cx cy cz w l h yaw vx vy attribute
//! ```
//!
//! `vx vy` are `nan` and `attribute` is `-1` when absent. Blank lines and
//! lines starting with `#` are ignored.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use super::{read_text, write_bytes};
use crate::error::{Error, Result};
use crate::eval::Box3D;

pub fn render_boxes(boxes: &[Box3D]) -> String {
    let mut s = String::from("# category score cx cy cz w l h yaw vx vy attribute\n");
    for b in boxes {
        let [vx, vy] = b.velocity.unwrap_or([f64::NAN, f64::NAN]);
        let attr = b.attribute.map_or(-1, i64::from);
        let _ = writeln!(
            s,
            "{} {} {} {} {} {} {} {} {} {} {} {}",
            b.category,
            b.score,
            b.center.x,
            b.center.y,
            b.center.z,
            b.size[0],
            b.size[1],
            b.size[2],
            b.yaw,
            vx,
            vy,
            attr
        );
    }
    s
}

pub fn parse_boxes(text: &str, context: &str) -> Result<Vec<Box3D>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let ctx = || format!("{context}:{}", i + 1);
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 12 {
            return Err(Error::parse(ctx(), format!("expected 12 fields, got {}", f.len())));
        }
        let category: u32 = f[0]
            .parse()
            .map_err(|_| Error::parse(ctx(), format!("bad category {:?}", f[0])))?;
        let mut v = [0.0f64; 10];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = f[k + 1]
                .parse()
                .map_err(|_| Error::parse(ctx(), format!("bad number {:?}", f[k + 1])))?;
        }
        let attribute: i64 = f[11]
            .parse()
            .map_err(|_| Error::parse(ctx(), format!("bad attribute {:?}", f[11])))?;
        let velocity = match (v[8].is_nan(), v[9].is_nan()) {
            (true, true) => None,
            (false, false) => Some([v[8], v[9]]),
            _ => return Err(Error::parse(ctx(), "velocity must be both nan or both finite")),
        };
        let attribute = match attribute {
            -1 => None,
            a => Some(u32::try_from(a).map_err(|_| Error::parse(ctx(), format!("bad attribute {a}")))?),
        };
        let mut b = Box3D::new(Vector3::new(v[1], v[2], v[3]), [v[4], v[5], v[6]], v[7], category, v[0])
            .map_err(|e| Error::parse(ctx(), e.to_string()))?;
        b.velocity = velocity;
        b.attribute = attribute;
        b.validate().map_err(|e| Error::parse(ctx(), e.to_string()))?;
        out.push(b);
    }
    Ok(out)
}

pub fn read_boxes(path: &Path) -> Result<Vec<Box3D>> {
    parse_boxes(&read_text(path)?, &path.display().to_string())
}

pub fn write_boxes(path: &Path, boxes: &[Box3D]) -> Result<()> {
    write_bytes(path, render_boxes(boxes).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let a = Box3D::new(Vector3::new(1.25, -3.0, 0.8), [1.9, 4.6, 1.7], 0.3, 0, 0.9)
            .unwrap()
            .with_velocity([0.1, -2.0])
            .with_attribute(3);
        let b = Box3D::new(Vector3::new(0.1 + 0.2, 7.0, 1.0), [0.6, 0.7, 1.8], -3.0, 8, 1.0 / 3.0).unwrap();
        let boxes = vec![a, b];
        assert_eq!(parse_boxes(&render_boxes(&boxes), "t").unwrap(), boxes);
    }

    #[test]
    fn malformed_lines() {
        assert!(parse_boxes("0 0.5 1 2 3\n", "t").unwrap_err().is_input_error());
        assert!(parse_boxes("0 0.5 1 2 3 1 1 1 0 nan 0 -1\n", "t").is_err());
        assert!(parse_boxes("0 0.5 1 2 3 -1 1 1 0 nan nan -1\n", "t").is_err());
        assert!(parse_boxes("# only a comment\n\n", "t").unwrap().is_empty());
    }
}

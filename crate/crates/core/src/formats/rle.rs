// SPDX-License-Identifier: Apache-2.0

//! Instance masks as run-length text.
//!
//! A mask file holds any number of masks for one image:
//!
//! ```text
//! MASK <width> <height> <category> <score>
//! <run> <run> ...
//! ```
//!
//! Runs cover the bitmap in row-major order and alternate between unset and
//! set pixels, starting with unset (the first run may be 0). Lines starting
//! with `#` are comments. A manifest maps camera names to mask files, one
//! `<camera> <relative path>` pair per line.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{read_text, write_bytes};
use crate::error::{Error, Result};
use crate::masks::{Bitmap, InstanceMask};

pub fn encode_masks(masks: &[InstanceMask]) -> String {
    let mut s = String::from("# instance masks, row-major runs starting with unset\n");
    for m in masks {
        let (w, h) = (m.bitmap.width(), m.bitmap.height());
        let _ = writeln!(s, "MASK {w} {h} {} {}", m.category, m.score);
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u64;
        for bit in m.bitmap.iter() {
            if bit != current {
                runs.push(len);
                current = bit;
                len = 0;
            }
            len += 1;
        }
        runs.push(len);
        let line: Vec<String> = runs.iter().map(u64::to_string).collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
    s
}

pub fn decode_masks(text: &str, context: &str) -> Result<Vec<InstanceMask>> {
    let err = |line: usize, reason: String| Error::parse(format!("{context}:{line}"), reason);
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let mut out = Vec::new();
    while let Some((ln, header)) = lines.next() {
        let f: Vec<&str> = header.split_whitespace().collect();
        if f.len() != 5 || f[0] != "MASK" {
            return Err(err(ln, format!("expected `MASK w h category score`, got {header:?}")));
        }
        let w: u32 = f[1].parse().map_err(|_| err(ln, format!("bad width {:?}", f[1])))?;
        let h: u32 = f[2].parse().map_err(|_| err(ln, format!("bad height {:?}", f[2])))?;
        let category: u32 = f[3].parse().map_err(|_| err(ln, format!("bad category {:?}", f[3])))?;
        let score: f64 = f[4].parse().map_err(|_| err(ln, format!("bad score {:?}", f[4])))?;
        let (rl, runs) = lines.next().ok_or_else(|| err(ln, "header without runs".into()))?;
        let mut bitmap = Bitmap::new(w, h);
        let total = w as u64 * h as u64;
        let mut pos = 0u64;
        for (k, tok) in runs.split_whitespace().enumerate() {
            let n: u64 = tok.parse().map_err(|_| err(rl, format!("bad run {tok:?}")))?;
            if pos + n > total {
                return Err(err(rl, format!("runs exceed {w}x{h}")));
            }
            if k % 2 == 1 {
                for p in pos..pos + n {
                    bitmap.set((p % w as u64) as u32, (p / w as u64) as u32, true);
                }
            }
            pos += n;
        }
        if pos != total {
            return Err(err(rl, format!("runs cover {pos} of {total} pixels")));
        }
        out.push(InstanceMask::new(bitmap, category, score).map_err(|e| err(ln, e.to_string()))?);
    }
    Ok(out)
}

/// Writes one mask file per camera next to `manifest` and the manifest
/// itself.
pub fn write_mask_manifest(manifest: &Path, names: &[String], masks_per_camera: &[Vec<InstanceMask>]) -> Result<()> {
    let dir = manifest.parent().unwrap_or(Path::new(""));
    let mut text = String::from("# camera mask-file\n");
    for (name, masks) in names.iter().zip(masks_per_camera) {
        let file = format!("{name}.rle");
        write_bytes(&dir.join(&file), encode_masks(masks).as_bytes())?;
        let _ = writeln!(text, "{name} {file}");
    }
    write_bytes(manifest, text.as_bytes())
}

/// Mask lists in the order of `camera_names`. Paths in the manifest are
/// relative to its directory. Every camera must be listed exactly once.
pub fn read_mask_manifest(manifest: &Path, camera_names: &[String]) -> Result<Vec<Vec<InstanceMask>>> {
    let text = read_text(manifest)?;
    let ctx = manifest.display().to_string();
    let dir = manifest.parent().unwrap_or(Path::new(""));
    let mut files: Vec<Option<PathBuf>> = vec![None; camera_names.len()];
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 2 {
            return Err(Error::parse(format!("{ctx}:{}", i + 1), "expected `<camera> <path>`"));
        }
        let cam = camera_names
            .iter()
            .position(|n| n == f[0])
            .ok_or_else(|| Error::parse(format!("{ctx}:{}", i + 1), format!("unknown camera {:?}", f[0])))?;
        if files[cam].replace(dir.join(f[1])).is_some() {
            return Err(Error::parse(
                format!("{ctx}:{}", i + 1),
                format!("camera {:?} listed twice", f[0]),
            ));
        }
    }
    files
        .into_iter()
        .enumerate()
        .map(|(cam, f)| {
            let path = f.ok_or_else(|| Error::parse(&ctx, format!("camera {:?} missing", camera_names[cam])))?;
            decode_masks(&read_text(&path)?, &path.display().to_string())
        })
        .collect()
}

// SPDX-License-Identifier: Apache-2.0

use std::path::Path;

use super::{read_bytes, write_bytes, Reader};
use crate::error::{Error, Result};
use crate::grid::{BevExtent, BevGrid, BevLayout};
use crate::masks::FeatureImage;
use crate::paint::{LidarPoint, PaintLabel, SemanticPointCloud};
use crate::view::DepthAttention;

const CLOUD_MAGIC: &[u8; 4] = b"SFPC";
const FEATURE_MAGIC: &[u8; 4] = b"SFFT";
const ATTENTION_MAGIC: &[u8; 4] = b"SFDA";
const BEV_MAGIC: &[u8; 4] = b"SFBV";
const VERSION: u32 = 1;

fn push_f32s(out: &mut Vec<u8>, vals: impl IntoIterator<Item = f32>) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn dim(v: u32, context: &str, what: &str) -> Result<u32> {
    if v == 0 {
        return Err(Error::parse(context, format!("{what} is zero")));
    }
    Ok(v)
}

/// A point-cloud file: raw points, or points with paint labels.
#[derive(Debug, Clone, PartialEq)]
pub enum CloudFile {
    Raw(Vec<LidarPoint>),
    Painted(SemanticPointCloud),
}

impl CloudFile {
    pub fn points(&self) -> &[LidarPoint] {
        match self {
            CloudFile::Raw(p) => p,
            CloudFile::Painted(c) => c.points(),
        }
    }
}

/// `SFPC | u32 version | u64 count | u32 n_categories` then `count` records
/// of 5 f32 (raw, `n_categories = 0`) or `5 + N + 1` f32 (painted).
pub fn write_cloud(path: &Path, cloud: &CloudFile) -> Result<()> {
    let (n, n_cat) = match cloud {
        CloudFile::Raw(p) => (p.len(), 0),
        CloudFile::Painted(c) => (c.len(), c.n_categories()),
    };
    let stride = if n_cat == 0 { 5 } else { 6 + n_cat };
    let mut out = Vec::with_capacity(20 + n * stride * 4);
    out.extend_from_slice(CLOUD_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(n_cat as u32).to_le_bytes());
    match cloud {
        CloudFile::Raw(points) => {
            for p in points {
                push_f32s(&mut out, [p.x, p.y, p.z, p.t, p.intensity]);
            }
        }
        CloudFile::Painted(c) => {
            for i in 0..c.len() {
                push_f32s(&mut out, c.record(i));
            }
        }
    }
    write_bytes(path, &out)
}

pub fn read_cloud(path: &Path) -> Result<CloudFile> {
    let bytes = read_bytes(path)?;
    let ctx = path.display().to_string();
    let mut r = Reader::new(&bytes, &ctx);
    r.magic(CLOUD_MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::parse(&ctx, format!("unsupported version {version}")));
    }
    let n = usize::try_from(r.u64()?).map_err(|_| Error::parse(&ctx, "count overflows"))?;
    let n_cat = r.u32()? as usize;
    let stride = if n_cat == 0 { 5 } else { 6 + n_cat };
    let vals = r.f32s(
        n.checked_mul(stride)
            .ok_or_else(|| Error::parse(&ctx, "count overflows"))?,
    )?;
    r.finish()?;
    let points: Vec<LidarPoint> = vals
        .chunks_exact(stride)
        .map(|c| LidarPoint::new(c[0], c[1], c[2], c[3], c[4]))
        .collect();
    if let Some(i) = points.iter().position(|p| !p.is_finite()) {
        return Err(Error::parse(&ctx, format!("point {i} is not finite")));
    }
    if n_cat == 0 {
        return Ok(CloudFile::Raw(points));
    }
    let mut labels = Vec::with_capacity(n);
    for (i, c) in vals.chunks_exact(stride).enumerate() {
        let one_hot = &c[5..5 + n_cat];
        let hot: Vec<usize> = (0..n_cat).filter(|&k| one_hot[k] != 0.0).collect();
        if one_hot.iter().any(|&v| v != 0.0 && v != 1.0) || hot.len() > 1 {
            return Err(Error::parse(&ctx, format!("point {i} has a malformed one-hot block")));
        }
        labels.push(PaintLabel {
            category: hot.first().map(|&k| k as u32),
            score: c[5 + n_cat],
        });
    }
    let cloud = SemanticPointCloud::new(points, labels, n_cat).map_err(|e| Error::parse(&ctx, e.to_string()))?;
    Ok(CloudFile::Painted(cloud))
}

/// `SFFT | u32 C | u32 H | u32 W` then `C*H*W` f32, channel-major.
pub fn write_features(path: &Path, f: &FeatureImage) -> Result<()> {
    let mut out = Vec::with_capacity(16 + f.data().len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    for v in [f.channels() as u32, f.height(), f.width()] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    push_f32s(&mut out, f.data().iter().map(|&v| v as f32));
    write_bytes(path, &out)
}

pub fn read_features(path: &Path) -> Result<FeatureImage> {
    let bytes = read_bytes(path)?;
    let ctx = path.display().to_string();
    let mut r = Reader::new(&bytes, &ctx);
    r.magic(FEATURE_MAGIC)?;
    let c = dim(r.u32()?, &ctx, "channel count")?;
    let h = dim(r.u32()?, &ctx, "height")?;
    let w = dim(r.u32()?, &ctx, "width")?;
    let n = c as usize * h as usize * w as usize;
    let data: Vec<f64> = r.f32s(n)?.into_iter().map(f64::from).collect();
    r.finish()?;
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::parse(&ctx, "non-finite feature value"));
    }
    FeatureImage::from_data(c as usize, w, h, data).map_err(|e| Error::parse(&ctx, e.to_string()))
}

/// `SFDA | u32 W | u32 H | u32 n_bins` then `H*W*n_bins` f32, pixel-major.
pub fn write_attention(path: &Path, a: &DepthAttention) -> Result<()> {
    let mut out = Vec::with_capacity(16 + a.data().len() * 4);
    out.extend_from_slice(ATTENTION_MAGIC);
    for v in [a.width(), a.height(), a.n_bins() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    push_f32s(&mut out, a.data().iter().map(|&v| v as f32));
    write_bytes(path, &out)
}

pub fn read_attention(path: &Path) -> Result<DepthAttention> {
    let bytes = read_bytes(path)?;
    let ctx = path.display().to_string();
    let mut r = Reader::new(&bytes, &ctx);
    r.magic(ATTENTION_MAGIC)?;
    let w = dim(r.u32()?, &ctx, "width")?;
    let h = dim(r.u32()?, &ctx, "height")?;
    let n = dim(r.u32()?, &ctx, "bin count")? as usize;
    let data: Vec<f64> = r
        .f32s(w as usize * h as usize * n)?
        .into_iter()
        .map(f64::from)
        .collect();
    r.finish()?;
    DepthAttention::new(w, h, n, data).map_err(|e| Error::parse(&ctx, e.to_string()))
}

/// `SFBV | u32 C | u32 H | u32 W | f64 x_min, x_max, y_min, y_max` then
/// `C*H*W` f32, channel-major with row-major planes.
pub fn write_bev(path: &Path, g: &BevGrid) -> Result<()> {
    let mut out = Vec::with_capacity(48 + g.data().len() * 4);
    out.extend_from_slice(BEV_MAGIC);
    for v in [g.channels() as u32, g.height() as u32, g.width() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in g.layout().extent.as_array() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    push_f32s(&mut out, g.data().iter().map(|&v| v as f32));
    write_bytes(path, &out)
}

pub fn read_bev(path: &Path) -> Result<BevGrid> {
    let bytes = read_bytes(path)?;
    let ctx = path.display().to_string();
    let mut r = Reader::new(&bytes, &ctx);
    r.magic(BEV_MAGIC)?;
    let c = dim(r.u32()?, &ctx, "channel count")? as usize;
    let h = dim(r.u32()?, &ctx, "height")? as usize;
    let w = dim(r.u32()?, &ctx, "width")? as usize;
    let e = [r.f64()?, r.f64()?, r.f64()?, r.f64()?];
    let data: Vec<f64> = r.f32s(c * h * w)?.into_iter().map(f64::from).collect();
    r.finish()?;
    let layout = BevLayout::new(
        BevExtent {
            x_min: e[0],
            x_max: e[1],
            y_min: e[2],
            y_max: e[3],
        },
        h,
        w,
    )
    .map_err(|err| Error::parse(&ctx, err.to_string()))?;
    BevGrid::from_data(c, layout, data).map_err(|err| Error::parse(&ctx, err.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cloud_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pts = vec![
            LidarPoint::new(1.0, -2.0, 0.5, 0.1, 0.7),
            LidarPoint::new(3.0, 4.0, 0.0, 0.0, 0.2),
        ];
        let raw = CloudFile::Raw(pts.clone());
        let p = dir.path().join("raw.bin");
        write_cloud(&p, &raw).unwrap();
        assert_eq!(read_cloud(&p).unwrap(), raw);

        let labels = vec![
            PaintLabel {
                category: Some(2),
                score: 0.75,
            },
            PaintLabel::default(),
        ];
        let painted = CloudFile::Painted(SemanticPointCloud::new(pts, labels, 3).unwrap());
        write_cloud(&p, &painted).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 20 + 2 * 9 * 4);
        assert_eq!(read_cloud(&p).unwrap(), painted);
    }

    #[test]
    fn truncated_cloud_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.bin");
        write_cloud(&p, &CloudFile::Raw(vec![LidarPoint::new(1.0, 1.0, 1.0, 0.0, 0.0)])).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 2]).unwrap();
        assert!(read_cloud(&p).unwrap_err().is_input_error());
        std::fs::write(&p, b"XXXX").unwrap();
        assert!(read_cloud(&p).unwrap_err().is_input_error());
    }

    #[test]
    fn bev_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let layout = BevLayout::new(BevExtent::square(3.0), 2, 3).unwrap();
        let g = BevGrid::from_data(2, layout, (0..12).map(|v| v as f64 * 0.5).collect()).unwrap();
        let p = dir.path().join("g.bev");
        write_bev(&p, &g).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 48 + 12 * 4);
        assert_eq!(read_bev(&p).unwrap(), g);
    }

    #[test]
    fn tensors_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let f = FeatureImage::from_data(2, 3, 2, (0..12).map(|v| v as f64 - 4.0).collect()).unwrap();
        let p = dir.path().join("f.feat");
        write_features(&p, &f).unwrap();
        assert_eq!(read_features(&p).unwrap(), f);

        let a = DepthAttention::one_hot(3, 2, 4, &[0, 1, 2, 3, 0, 1]).unwrap();
        let p = dir.path().join("a.att");
        write_attention(&p, &a).unwrap();
        assert_eq!(read_attention(&p).unwrap().data(), a.data());
    }
}

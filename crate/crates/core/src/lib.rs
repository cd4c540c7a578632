// SPDX-License-Identifier: Apache-2.0

//! Deterministic LiDAR-camera fusion in a shared bird's-eye-view grid.
//!
//! The camera stream embeds instance-mask semantics into per-pixel features,
//! lifts them onto depth-binned pseudo points, weights them by a depth
//! distribution, drops background pixels and sum-pools the survivors into a
//! BEV grid. The LiDAR stream paints points with the same instance masks and
//! encodes them into pillars. Two fusers combine the grids. An evaluation
//! stack scores detections with center-distance AP, true-positive errors and
//! NDS, and a synthetic scene generator closes the loop without datasets.
//!
//! With the default `parallel` feature the hot loops run on rayon. Every
//! parallel reduction sums in a fixed per-cell order, so results are
//! bit-identical to the sequential path and independent of thread count.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detect;
pub mod error;
pub mod eval;
pub mod formats;
pub mod fuse;
pub mod geometry;
pub mod grid;
pub mod masks;
pub mod paint;
pub mod pillar;
pub mod pipeline;
pub mod synth;
pub mod view;

mod bucket;
mod par;

pub use error::{Error, Result};
pub use eval::{Box3D, EvalConfig};
pub use geometry::{CameraModel, DepthBinning, Projection, RigidTransform};
pub use grid::{BevExtent, BevGrid, BevLayout};
pub use masks::{Bitmap, FeatureImage, InstanceMask, SemanticCombiner, SemanticImage};
pub use paint::{LidarPoint, SemanticPointCloud};
pub use view::{DepthAttention, PseudoPointSet};

/// Environment variable read by [`configure_threads`].
pub const THREADS_ENV: &str = "SEMFUSE_THREADS";

/// Sizes the global rayon pool from `SEMFUSE_THREADS` when it is set.
///
/// Returns the thread count that was requested, if any. Without the
/// `parallel` feature this only validates the variable. Results never depend
/// on the value.
pub fn configure_threads() -> Result<Option<usize>> {
    let raw = match std::env::var(THREADS_ENV) {
        Ok(raw) => raw,
        Err(_) => return Ok(None),
    };
    let threads: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::invalid(THREADS_ENV, format!("expected a positive integer, got {raw:?}")))?;
    if threads == 0 {
        return Err(Error::invalid(THREADS_ENV, "must be at least 1"));
    }
    #[cfg(feature = "parallel")]
    {
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    Ok(Some(threads))
}

// SPDX-License-Identifier: Apache-2.0

//! Camera/LiDAR BEV fusion: concatenate-then-convolve and convolve-then-add.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::BevGrid;
use crate::par;

/// Single 2D convolution layer. Weights are `out x in x k x k`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvKernel {
    pub out_channels: usize,
    pub in_channels: usize,
    pub size: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvKernel {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        size: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        let k = ConvKernel {
            out_channels,
            in_channels,
            size,
            weights,
            bias,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn zeros(out_channels: usize, in_channels: usize, size: usize) -> Self {
        ConvKernel {
            out_channels,
            in_channels,
            size,
            weights: vec![0.0; out_channels * in_channels * size * size],
            bias: vec![0.0; out_channels],
        }
    }

    /// 1x1 identity on `channels`.
    pub fn identity(channels: usize) -> Self {
        let mut k = Self::zeros(channels, channels, 1);
        for c in 0..channels {
            k.set(c, c, 0, 0, 1.0);
        }
        k
    }

    pub fn validate(&self) -> Result<()> {
        if self.size.is_multiple_of(2) {
            return Err(Error::invalid("conv kernel", format!("size {} must be odd", self.size)));
        }
        if self.out_channels == 0 || self.in_channels == 0 {
            return Err(Error::invalid("conv kernel", "channel counts must be positive"));
        }
        let n = self.out_channels * self.in_channels * self.size * self.size;
        if self.weights.len() != n || self.bias.len() != self.out_channels {
            return Err(Error::shape(format!(
                "kernel {}x{}x{}x{} needs {n} weights and {} biases, got {} and {}",
                self.out_channels,
                self.in_channels,
                self.size,
                self.size,
                self.out_channels,
                self.weights.len(),
                self.bias.len()
            )));
        }
        if self.weights.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::invalid("conv kernel", "non-finite weight"));
        }
        Ok(())
    }

    #[inline]
    fn index(&self, o: usize, i: usize, dy: usize, dx: usize) -> usize {
        ((o * self.in_channels + i) * self.size + dy) * self.size + dx
    }

    pub fn get(&self, o: usize, i: usize, dy: usize, dx: usize) -> f64 {
        self.weights[self.index(o, i, dy, dx)]
    }

    pub fn set(&mut self, o: usize, i: usize, dy: usize, dx: usize, w: f64) {
        let idx = self.index(o, i, dy, dx);
        self.weights[idx] = w;
    }

    /// Kernel over the concatenated inputs of `a` and `b` that computes
    /// `conv(A, a) + conv(B, b)`: `a` occupies the first input channels, `b`
    /// the rest, the smaller kernel is zero-padded to the larger size and the
    /// biases are summed.
    pub fn block_diagonal(a: &ConvKernel, b: &ConvKernel) -> Result<ConvKernel> {
        a.validate()?;
        b.validate()?;
        if a.out_channels != b.out_channels {
            return Err(Error::shape(format!(
                "block-diagonal kernels need equal outputs, got {} and {}",
                a.out_channels, b.out_channels
            )));
        }
        let size = a.size.max(b.size);
        let mut k = ConvKernel::zeros(a.out_channels, a.in_channels + b.in_channels, size);
        for (src, in_offset) in [(a, 0), (b, a.in_channels)] {
            let pad = (size - src.size) / 2;
            for o in 0..src.out_channels {
                for i in 0..src.in_channels {
                    for dy in 0..src.size {
                        for dx in 0..src.size {
                            k.set(o, in_offset + i, dy + pad, dx + pad, src.get(o, i, dy, dx));
                        }
                    }
                }
            }
        }
        k.bias = a.bias.iter().zip(&b.bias).map(|(x, y)| x + y).collect();
        Ok(k)
    }
}

/// Zero-padded, stride-1 2D cross-correlation plus bias.
pub fn conv2d(input: &BevGrid, kernel: &ConvKernel) -> Result<BevGrid> {
    kernel.validate()?;
    if kernel.in_channels != input.channels() {
        return Err(Error::shape(format!(
            "kernel expects {} input channels, grid has {}",
            kernel.in_channels,
            input.channels()
        )));
    }
    let (h, w) = (input.height(), input.width());
    let k = kernel.size;
    let pad = (k / 2) as isize;
    let mut out = BevGrid::zeros(kernel.out_channels, *input.layout());
    par::for_each_chunk_mut(out.data_mut(), h * w, |o, plane| {
        plane.fill(kernel.bias[o]);
        for i in 0..kernel.in_channels {
            let src = input.channel(i);
            for dy in 0..k {
                for dx in 0..k {
                    let wgt = kernel.get(o, i, dy, dx);
                    if wgt == 0.0 {
                        continue;
                    }
                    let oy = dy as isize - pad;
                    let ox = dx as isize - pad;
                    let r0 = (-oy).max(0) as usize;
                    let r1 = (h as isize - oy).min(h as isize).max(0) as usize;
                    let c0 = (-ox).max(0) as usize;
                    let c1 = (w as isize - ox).min(w as isize).max(0) as usize;
                    for r in r0..r1 {
                        let sr = (r as isize + oy) as usize;
                        let dst = &mut plane[r * w + c0..r * w + c1];
                        let s = &src[sr * w + (c0 as isize + ox) as usize..sr * w + (c1 as isize + ox) as usize];
                        for (d, v) in dst.iter_mut().zip(s) {
                            *d += wgt * v;
                        }
                    }
                }
            }
        }
    });
    Ok(out)
}

/// `conv(concat(cam, lidar))`.
pub fn fuse_concat_conv(cam: &BevGrid, lidar: &BevGrid, kernel: &ConvKernel) -> Result<BevGrid> {
    cam.ensure_aligned(lidar)?;
    if kernel.in_channels != cam.channels() + lidar.channels() {
        return Err(Error::shape(format!(
            "concat kernel expects {} inputs, streams provide {} + {}",
            kernel.in_channels,
            cam.channels(),
            lidar.channels()
        )));
    }
    conv2d(&cam.concat(lidar)?, kernel)
}

/// `conv(cam, kernel_cam) + conv(lidar, kernel_lidar)`.
pub fn fuse_additive(
    cam: &BevGrid,
    lidar: &BevGrid,
    kernel_cam: &ConvKernel,
    kernel_lidar: &ConvKernel,
) -> Result<BevGrid> {
    cam.ensure_aligned(lidar)?;
    if kernel_cam.out_channels != kernel_lidar.out_channels {
        return Err(Error::shape(format!(
            "additive kernels produce {} and {} channels",
            kernel_cam.out_channels, kernel_lidar.out_channels
        )));
    }
    conv2d(cam, kernel_cam)?.add(&conv2d(lidar, kernel_lidar)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{BevExtent, BevLayout};

    fn layout(n: usize) -> BevLayout {
        BevLayout::new(BevExtent::square(1.0), n, n).unwrap()
    }

    fn ramp(channels: usize, n: usize, seed: f64) -> BevGrid {
        let data = (0..channels * n * n)
            .map(|i| ((i as f64 + seed) * 0.731).sin())
            .collect();
        BevGrid::from_data(channels, layout(n), data).unwrap()
    }

    /// Direct definition: out[o][r][c] = b[o] + Σ w[o][i][dy][dx] in[i][r+dy-p][c+dx-p].
    fn conv_oracle(input: &BevGrid, k: &ConvKernel) -> BevGrid {
        let (h, w) = (input.height() as isize, input.width() as isize);
        let p = (k.size / 2) as isize;
        let mut out = BevGrid::zeros(k.out_channels, *input.layout());
        for o in 0..k.out_channels {
            for r in 0..h {
                for c in 0..w {
                    let mut acc = k.bias[o];
                    for i in 0..k.in_channels {
                        for dy in 0..k.size as isize {
                            for dx in 0..k.size as isize {
                                let (sr, sc) = (r + dy - p, c + dx - p);
                                if sr >= 0 && sr < h && sc >= 0 && sc < w {
                                    acc +=
                                        k.get(o, i, dy as usize, dx as usize) * input.get(i, sr as usize, sc as usize);
                                }
                            }
                        }
                    }
                    out.set(o, r as usize, c as usize, acc);
                }
            }
        }
        out
    }

    #[test]
    fn projection_kernel_selects_camera_stream() {
        let cam = ramp(2, 5, 0.0);
        let lidar = ramp(3, 5, 9.0);
        let mut k = ConvKernel::zeros(2, 5, 1);
        k.set(0, 0, 0, 0, 1.0);
        k.set(1, 1, 0, 0, 1.0);
        assert_eq!(fuse_concat_conv(&cam, &lidar, &k).unwrap(), cam);
    }

    #[test]
    fn bias_only_kernel_is_constant() {
        let mut k = ConvKernel::zeros(2, 3, 3);
        k.bias = vec![0.5, -2.0];
        let out = fuse_concat_conv(&ramp(1, 4, 0.0), &ramp(2, 4, 1.0), &k).unwrap();
        assert!(out.channel(0).iter().all(|&v| v == 0.5));
        assert!(out.channel(1).iter().all(|&v| v == -2.0));
    }

    #[test]
    fn averaging_kernel_on_impulse() {
        let mut grid = BevGrid::zeros(1, layout(5));
        grid.set(0, 2, 2, 1.0);
        let k = ConvKernel::new(1, 1, 3, vec![1.0 / 9.0; 9], vec![0.0]).unwrap();
        let out = conv2d(&grid, &k).unwrap();
        let oracle = conv_oracle(&grid, &k);
        assert!(out.max_abs_diff(&oracle) < 1e-15);
        for r in 0..5 {
            for c in 0..5 {
                let inside = (1..=3).contains(&r) && (1..=3).contains(&c);
                let expected = if inside { 1.0 / 9.0 } else { 0.0 };
                assert!((out.get(0, r, c) - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn conv_matches_oracle_with_borders() {
        let input = ramp(3, 6, 2.0);
        let weights = (0..2 * 3 * 25).map(|i| ((i as f64) * 0.37).cos()).collect();
        let k = ConvKernel::new(2, 3, 5, weights, vec![0.1, -0.3]).unwrap();
        assert!(conv2d(&input, &k).unwrap().max_abs_diff(&conv_oracle(&input, &k)) < 1e-12);
    }

    #[test]
    fn identity_additive_is_sum() {
        let cam = ramp(2, 4, 0.0);
        let lidar = ramp(2, 4, 5.0);
        let out = fuse_additive(&cam, &lidar, &ConvKernel::identity(2), &ConvKernel::identity(2)).unwrap();
        assert_eq!(out, cam.add(&lidar).unwrap());
    }

    #[test]
    fn zero_camera_absorbs() {
        let cam = BevGrid::zeros(2, layout(4));
        let lidar = ramp(3, 4, 1.0);
        let kc = ConvKernel::new(2, 2, 3, vec![0.3; 36], vec![0.0; 2]).unwrap();
        let kl = ConvKernel::new(2, 3, 3, (0..54).map(|i| i as f64 * 0.01).collect(), vec![0.2, 0.1]).unwrap();
        let out = fuse_additive(&cam, &lidar, &kc, &kl).unwrap();
        assert_eq!(out, conv2d(&lidar, &kl).unwrap());
    }

    #[test]
    fn additive_equals_block_diagonal_concat() {
        let cam = ramp(2, 6, 0.0);
        let lidar = ramp(3, 6, 3.0);
        let kc = ConvKernel::new(2, 2, 1, vec![0.5, -1.0, 2.0, 0.25], vec![0.1, 0.2]).unwrap();
        let kl = ConvKernel::new(
            2,
            3,
            3,
            (0..54).map(|i| (i as f64 * 0.3).sin()).collect(),
            vec![-0.4, 0.3],
        )
        .unwrap();
        let add = fuse_additive(&cam, &lidar, &kc, &kl).unwrap();
        let cat = fuse_concat_conv(&cam, &lidar, &ConvKernel::block_diagonal(&kc, &kl).unwrap()).unwrap();
        assert!(add.max_abs_diff(&cat) < 1e-6);
    }

    #[test]
    fn rejects_mismatch() {
        let a = ramp(2, 4, 0.0);
        let b = BevGrid::zeros(2, layout(5));
        assert!(fuse_concat_conv(&a, &b, &ConvKernel::zeros(1, 4, 1)).is_err());
        assert!(fuse_concat_conv(&a, &a, &ConvKernel::zeros(1, 3, 1)).is_err());
        assert!(fuse_additive(&a, &a, &ConvKernel::identity(2), &ConvKernel::zeros(3, 2, 1)).is_err());
        assert!(ConvKernel::new(1, 1, 2, vec![0.0; 4], vec![0.0]).is_err());
    }
}

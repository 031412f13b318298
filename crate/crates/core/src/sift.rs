//! Dense, upright SIFT description on every channel of a map set.
//!
//! Patches are tiled on a regular grid; each patch is split into 4x4 cells
//! with 8 orientation bins per cell. Gradient magnitude is spread over
//! neighbouring cells and orientation bins by trilinear interpolation. No
//! Gaussian window, no keypoint detection and no dominant-orientation
//! rotation.

use std::f64::consts::TAU;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binfmt::{read_file, write_atomic, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::vgg::ConvMapSet;

pub const SIFT_DIM: usize = 128;
pub const GRID_CELLS: usize = 4;
pub const ORIENTATION_BINS: usize = 8;
const CLAMP: f64 = 0.2;
const DUMP_MAGIC: &[u8; 4] = b"CDSD";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseGridParams {
    pub patch_size: usize,
    pub step: usize,
}

impl Default for DenseGridParams {
    fn default() -> Self {
        Self {
            patch_size: 16,
            step: 8,
        }
    }
}

impl DenseGridParams {
    pub fn new(patch_size: usize, step: usize) -> Result<Self> {
        let p = Self { patch_size, step };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 4 || self.patch_size % 4 != 0 {
            return Err(Error::invalid(format!(
                "patch size must be a positive multiple of 4, got {}",
                self.patch_size
            )));
        }
        if self.step == 0 {
            return Err(Error::invalid("grid step must be at least 1"));
        }
        Ok(())
    }

    /// Patches per channel on an `h x w` map, or 0 if the patch does not fit.
    pub fn patches_per_channel(&self, h: usize, w: usize) -> usize {
        if self.patch_size > h || self.patch_size > w {
            return 0;
        }
        ((h - self.patch_size) / self.step + 1) * ((w - self.patch_size) / self.step + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiftDescriptor {
    pub values: [f32; SIFT_DIM],
    /// Patch center `(y, x)` in map pixels.
    pub position: (f32, f32),
    pub channel: usize,
}

impl SiftDescriptor {
    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Per-pixel gradient magnitude and orientation in `[0, 2pi)`.
#[derive(Debug, Clone)]
pub struct GradientField {
    pub magnitude: Tensor,
    pub orientation: Tensor,
}

/// Central differences inside the map, one-sided differences on the border.
pub fn gradient_field(map: &Tensor) -> Result<GradientField> {
    if map.channels() != 1 {
        return Err(Error::invalid("gradient field needs a single-channel map"));
    }
    let (h, w) = (map.height(), map.width());
    if h < 3 || w < 3 {
        return Err(Error::invalid(format!(
            "gradient field needs at least 3x3, got {h}x{w}"
        )));
    }
    let d = map.data();
    let at = |y: usize, x: usize| d[y * w + x] as f64;
    let mut mag = Vec::with_capacity(h * w);
    let mut ori = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let gx = if x == 0 {
                at(y, 1) - at(y, 0)
            } else if x == w - 1 {
                at(y, w - 1) - at(y, w - 2)
            } else {
                (at(y, x + 1) - at(y, x - 1)) / 2.0
            };
            let gy = if y == 0 {
                at(1, x) - at(0, x)
            } else if y == h - 1 {
                at(h - 1, x) - at(h - 2, x)
            } else {
                (at(y + 1, x) - at(y - 1, x)) / 2.0
            };
            mag.push(gx.hypot(gy) as f32);
            let mut theta = gy.atan2(gx);
            if theta < 0.0 {
                theta += TAU;
            }
            // atan2 of a tiny negative gy can round up to exactly 2pi
            if theta >= TAU {
                theta = 0.0;
            }
            ori.push(theta as f32);
        }
    }
    Ok(GradientField {
        magnitude: Tensor::from_plane(h, w, mag)?,
        orientation: Tensor::from_plane(h, w, ori)?,
    })
}

/// Raw (unnormalized) 4x4x8 histogram of one patch with top-left corner `(top, left)`.
///
/// Layout is `(cell_y * 4 + cell_x) * 8 + bin`.
pub fn patch_histogram(
    field: &GradientField,
    top: usize,
    left: usize,
    patch_size: usize,
) -> [f64; SIFT_DIM] {
    let w = field.magnitude.width();
    let mag = field.magnitude.data();
    let ori = field.orientation.data();
    let cell = patch_size as f64 / GRID_CELLS as f64;
    let mut hist = [0f64; SIFT_DIM];
    for v in 0..patch_size {
        let cy = (v as f64 + 0.5) / cell - 0.5;
        let cy0 = cy.floor();
        let fy = cy - cy0;
        for u in 0..patch_size {
            let idx = (top + v) * w + left + u;
            let m = mag[idx] as f64;
            if m == 0.0 {
                continue;
            }
            let cx = (u as f64 + 0.5) / cell - 0.5;
            let cx0 = cx.floor();
            let fx = cx - cx0;
            let ob = ori[idx] as f64 / TAU * ORIENTATION_BINS as f64;
            let ob0 = ob.floor();
            let fo = ob - ob0;
            for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
                let iy = cy0 as i64 + dy;
                if !(0..GRID_CELLS as i64).contains(&iy) || wy == 0.0 {
                    continue;
                }
                for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                    let ix = cx0 as i64 + dx;
                    if !(0..GRID_CELLS as i64).contains(&ix) || wx == 0.0 {
                        continue;
                    }
                    let base = (iy as usize * GRID_CELLS + ix as usize) * ORIENTATION_BINS;
                    for (db, wo) in [(0, 1.0 - fo), (1, fo)] {
                        if wo == 0.0 {
                            continue;
                        }
                        let bin = (ob0 as usize + db) % ORIENTATION_BINS;
                        hist[base + bin] += m * wy * wx * wo;
                    }
                }
            }
        }
    }
    hist
}

/// L2-normalize, clamp at 0.2, renormalize. Zero histograms stay zero.
pub fn normalize_descriptor(hist: &[f64; SIFT_DIM]) -> [f32; SIFT_DIM] {
    let mut v = *hist;
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return [0.0; SIFT_DIM];
    }
    v.iter_mut().for_each(|x| *x = (*x / norm).min(CLAMP));
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.map(|x| (x / norm) as f32)
}

fn describe_channel(map: &Tensor, channel: usize, grid: &DenseGridParams) -> Result<Vec<SiftDescriptor>> {
    let field = gradient_field(map)?;
    let (h, w) = (map.height(), map.width());
    let half = grid.patch_size as f32 / 2.0;
    let mut out = Vec::with_capacity(grid.patches_per_channel(h, w));
    for top in (0..=h - grid.patch_size).step_by(grid.step) {
        for left in (0..=w - grid.patch_size).step_by(grid.step) {
            let hist = patch_histogram(&field, top, left, grid.patch_size);
            out.push(SiftDescriptor {
                values: normalize_descriptor(&hist),
                position: (top as f32 + half, left as f32 + half),
                channel,
            });
        }
    }
    Ok(out)
}

/// Describes every channel independently. Output is channel-major, then
/// row-major patch order.
pub fn dense_sift(maps: &ConvMapSet, grid: &DenseGridParams) -> Result<Vec<SiftDescriptor>> {
    grid.validate()?;
    let t = maps.maps();
    let (h, w) = (t.height(), t.width());
    if grid.patch_size > h || grid.patch_size > w {
        return Err(Error::invalid(format!(
            "patch size {} exceeds the {h}x{w} map",
            grid.patch_size
        )));
    }
    let per_channel: Vec<Vec<SiftDescriptor>> = (0..t.channels())
        .into_par_iter()
        .map(|c| describe_channel(&t.channel(c), c, grid))
        .collect::<Result<_>>()?;
    Ok(per_channel.into_iter().flatten().collect())
}

/// Row-major `count x dim` matrix of descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorMatrix {
    dim: usize,
    data: Vec<f32>,
}

impl DescriptorMatrix {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::invalid(format!(
                "descriptor data length {} is not a multiple of dim {dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("descriptor matrix contains non-finite values"));
        }
        Ok(Self { dim, data })
    }

    pub fn from_descriptors(descs: &[SiftDescriptor]) -> Self {
        let mut data = Vec::with_capacity(descs.len() * SIFT_DIM);
        for d in descs {
            data.extend_from_slice(&d.values);
        }
        Self { dim: SIFT_DIM, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::new(DUMP_MAGIC);
        w.len_u32(self.len())?;
        w.len_u32(self.dim)?;
        w.f32s(&self.data);
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new("descriptor dump", bytes, DUMP_MAGIC)?;
        let count = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let data = r.f32s(count * dim)?;
        r.finish()?;
        Self::new(dim, data).map_err(|e| Error::format(format!("descriptor dump: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

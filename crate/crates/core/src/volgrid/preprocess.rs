//! Resampling, foreground cropping and z-score normalization.
//!
//! The pipeline order is resample → crop → z-score so that intensity
//! statistics reflect the cropped field of view rather than empty background.

use super::{BinaryMask, Geometry, ImageVolume, Result, VolumeError};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Trilinear,
    Nearest,
}

/// Z-score normalization using the population standard deviation over all voxels.
pub fn zscore_normalize(vol: &ImageVolume) -> Result<ImageVolume> {
    zscore_with(vol, false)
}

fn zscore_with(vol: &ImageVolume, nonzero_only: bool) -> Result<ImageVolume> {
    let mut n = 0usize;
    let mut sum = 0.0f64;
    for &v in vol.data() {
        if !nonzero_only || v != 0.0 {
            sum += v as f64;
            n += 1;
        }
    }
    if n == 0 {
        return Err(VolumeError::Degenerate(0.0));
    }
    let mean = sum / n as f64;
    let mut ss = 0.0f64;
    for &v in vol.data() {
        if !nonzero_only || v != 0.0 {
            ss += (v as f64 - mean).powi(2);
        }
    }
    let std = (ss / n as f64).sqrt();
    if !(std > 1e-8) {
        return Err(VolumeError::Degenerate(std));
    }
    let data = vol.data().iter().map(|&v| ((v as f64 - mean) / std) as f32).collect();
    ImageVolume::new(vol.geometry().clone(), data)
}

/// Geometry obtained by changing the spacing of `g` while keeping the
/// first-voxel center fixed. Shape uses `ceil`.
pub fn resampled_geometry(g: &Geometry, target_spacing: [f64; 3]) -> Result<Geometry> {
    if target_spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(VolumeError::BadSpacing(target_spacing));
    }
    let mut shape = [0usize; 3];
    for a in 0..3 {
        let exact = g.shape[a] as f64 * g.spacing[a] / target_spacing[a];
        shape[a] = ((exact - 1e-9).ceil() as usize).max(1);
    }
    Geometry::new(shape, target_spacing, g.origin, g.direction)
}

/// Affine map from target voxel index to source continuous index.
struct IndexMap {
    m: [[f64; 3]; 3],
    b: [f64; 3],
}

impl IndexMap {
    fn new(src: &Geometry, dst: &Geometry) -> Self {
        let mut m = [[0.0; 3]; 3];
        let mut b = [0.0; 3];
        let d_origin = [
            dst.origin[0] - src.origin[0],
            dst.origin[1] - src.origin[1],
            dst.origin[2] - src.origin[2],
        ];
        for a in 0..3 {
            for c in 0..3 {
                let dot: f64 = (0..3).map(|r| src.direction[r][a] * dst.direction[r][c]).sum();
                m[a][c] = dot * dst.spacing[c] / src.spacing[a];
            }
            let proj: f64 = (0..3).map(|r| src.direction[r][a] * d_origin[r]).sum();
            b[a] = proj / src.spacing[a];
        }
        IndexMap { m, b }
    }

    #[inline]
    fn apply(&self, idx: [f64; 3]) -> [f64; 3] {
        let mut out = self.b;
        for (a, o) in out.iter_mut().enumerate() {
            *o += self.m[a][0] * idx[0] + self.m[a][1] * idx[1] + self.m[a][2] * idx[2];
            let r = o.round();
            if (*o - r).abs() < 1e-6 {
                *o = r;
            }
        }
        out
    }
}

/// Trilinear sample with edge clamping.
pub(crate) fn sample_trilinear(data: &[f32], shape: [usize; 3], p: [f64; 3]) -> f32 {
    let mut i0 = [0usize; 3];
    let mut i1 = [0usize; 3];
    let mut t = [0.0f64; 3];
    for a in 0..3 {
        let hi = (shape[a] - 1) as f64;
        let c = p[a].clamp(0.0, hi);
        let f = c.floor();
        i0[a] = f as usize;
        i1[a] = (i0[a] + 1).min(shape[a] - 1);
        t[a] = c - f;
    }
    let at = |z: usize, y: usize, x: usize| data[(z * shape[1] + y) * shape[2] + x] as f64;
    // Skip neighbours with zero weight so integer positions reproduce the input exactly.
    let mut acc = 0.0f64;
    for (dz, wz) in [(0, 1.0 - t[0]), (1, t[0])] {
        if wz == 0.0 {
            continue;
        }
        let z = if dz == 0 { i0[0] } else { i1[0] };
        for (dy, wy) in [(0, 1.0 - t[1]), (1, t[1])] {
            if wy == 0.0 {
                continue;
            }
            let y = if dy == 0 { i0[1] } else { i1[1] };
            for (dx, wx) in [(0, 1.0 - t[2]), (1, t[2])] {
                if wx == 0.0 {
                    continue;
                }
                let x = if dx == 0 { i0[2] } else { i1[2] };
                acc += wz * wy * wx * at(z, y, x);
            }
        }
    }
    acc as f32
}

/// Nearest-neighbour lookup; positions more than half a voxel outside the grid are `None`.
#[inline]
pub(crate) fn nearest_index(shape: [usize; 3], p: [f64; 3]) -> Option<usize> {
    let mut idx = [0usize; 3];
    for a in 0..3 {
        let r = p[a].round();
        if r < 0.0 || r > (shape[a] - 1) as f64 {
            return None;
        }
        idx[a] = r as usize;
    }
    Some((idx[0] * shape[1] + idx[1]) * shape[2] + idx[2])
}

fn for_each_target(dst: &Geometry, map: &IndexMap, mut f: impl FnMut([f64; 3])) {
    let [d, h, w] = dst.shape;
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                f(map.apply([z as f64, y as f64, x as f64]));
            }
        }
    }
}

/// Resample an image onto an explicit target grid.
pub fn resample_to(vol: &ImageVolume, target: &Geometry, mode: Interpolation) -> Result<ImageVolume> {
    target.validate()?;
    if vol.geometry() == target {
        return Ok(vol.clone());
    }
    let map = IndexMap::new(vol.geometry(), target);
    let shape = vol.shape();
    let mut out = Vec::with_capacity(target.len());
    for_each_target(target, &map, |p| {
        let v = match mode {
            Interpolation::Trilinear => sample_trilinear(vol.data(), shape, p),
            Interpolation::Nearest => {
                let clamped = [0, 1, 2].map(|a| p[a].clamp(0.0, (shape[a] - 1) as f64));
                vol.data()[nearest_index(shape, clamped).expect("clamped")]
            }
        };
        out.push(v);
    });
    ImageVolume::new(target.clone(), out)
}

/// Resample a mask onto an explicit target grid (nearest neighbour; outside is background).
pub fn resample_mask_to(mask: &BinaryMask, target: &Geometry) -> Result<BinaryMask> {
    target.validate()?;
    if mask.geometry() == target {
        return Ok(mask.clone());
    }
    let map = IndexMap::new(mask.geometry(), target);
    let shape = mask.shape();
    let mut out = Vec::with_capacity(target.len());
    for_each_target(target, &map, |p| {
        out.push(nearest_index(shape, p).map_or(0, |i| mask.data()[i]));
    });
    BinaryMask::new(target.clone(), out)
}

pub fn resample(vol: &ImageVolume, target_spacing: [f64; 3], mode: Interpolation) -> Result<ImageVolume> {
    let target = resampled_geometry(vol.geometry(), target_spacing)?;
    resample_to(vol, &target, mode)
}

/// Masks only support nearest-neighbour interpolation.
pub fn resample_mask(mask: &BinaryMask, target_spacing: [f64; 3], mode: Interpolation) -> Result<BinaryMask> {
    if mode == Interpolation::Trilinear {
        return Err(VolumeError::TrilinearMask);
    }
    let target = resampled_geometry(mask.geometry(), target_spacing)?;
    resample_mask_to(mask, &target)
}

/// Inclusive voxel box cut out of a larger grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropRecord {
    pub lower: [usize; 3],
    /// Inclusive upper corner.
    pub upper: [usize; 3],
    pub original: Geometry,
}

impl CropRecord {
    pub fn cropped_shape(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| self.upper[a] - self.lower[a] + 1)
    }

    pub fn cropped_geometry(&self) -> Geometry {
        let l = self.lower.map(|v| v as f64);
        Geometry {
            shape: self.cropped_shape(),
            spacing: self.original.spacing,
            origin: self.original.index_to_world(l),
            direction: self.original.direction,
        }
    }

    /// Record that keeps the whole grid.
    pub fn identity(g: &Geometry) -> Self {
        CropRecord { lower: [0; 3], upper: g.shape.map(|n| n - 1), original: g.clone() }
    }

    fn extract<T: Copy>(&self, src: &[T]) -> Vec<T> {
        let shape = self.original.shape;
        let mut out = Vec::with_capacity(self.cropped_shape().iter().product());
        for z in self.lower[0]..=self.upper[0] {
            for y in self.lower[1]..=self.upper[1] {
                let row = (z * shape[1] + y) * shape[2];
                out.extend_from_slice(&src[row + self.lower[2]..=row + self.upper[2]]);
            }
        }
        out
    }
}

/// Tight bounding box of voxels strictly above `threshold`, dilated by `margin`.
pub fn crop_to_foreground_with(vol: &ImageVolume, margin: usize, threshold: f32) -> Result<(ImageVolume, CropRecord)> {
    let g = vol.geometry();
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    for (i, &v) in vol.data().iter().enumerate() {
        if v > threshold {
            any = true;
            let c = g.coords(i);
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
        }
    }
    if !any {
        return Err(VolumeError::AllBackground(threshold));
    }
    let lower = [0, 1, 2].map(|a| lo[a].saturating_sub(margin));
    let upper = [0, 1, 2].map(|a| (hi[a] + margin).min(g.shape[a] - 1));
    let record = CropRecord { lower, upper, original: g.clone() };
    let cropped = ImageVolume::new(record.cropped_geometry(), record.extract(vol.data()))?;
    Ok((cropped, record))
}

/// Crop with the default background threshold (`> 0`).
pub fn crop_to_foreground(vol: &ImageVolume, margin: usize) -> Result<(ImageVolume, CropRecord)> {
    crop_to_foreground_with(vol, margin, 0.0)
}

/// Apply a recorded crop to a mask on the same grid.
pub fn crop_mask(mask: &BinaryMask, record: &CropRecord) -> Result<BinaryMask> {
    if mask.shape() != record.original.shape {
        return Err(VolumeError::ShapeMismatch { expected: record.original.shape, got: mask.shape() });
    }
    BinaryMask::new(record.cropped_geometry(), record.extract(mask.data()))
}

/// Place a cropped mask back into the original grid, zero elsewhere.
pub fn uncrop(mask: &BinaryMask, record: &CropRecord) -> Result<BinaryMask> {
    let expected = record.cropped_shape();
    if mask.shape() != expected {
        return Err(VolumeError::ShapeMismatch { expected, got: mask.shape() });
    }
    let shape = record.original.shape;
    let mut data = vec![0u8; record.original.len()];
    let w = expected[2];
    let mut src = 0;
    for z in record.lower[0]..=record.upper[0] {
        for y in record.lower[1]..=record.upper[1] {
            let row = (z * shape[1] + y) * shape[2] + record.lower[2];
            data[row..row + w].copy_from_slice(&mask.data()[src..src + w]);
            src += w;
        }
    }
    BinaryMask::new(record.original.clone(), data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// `None` keeps the native spacing.
    pub target_spacing: Option<[f64; 3]>,
    pub crop: bool,
    pub crop_margin: usize,
    pub crop_threshold: f32,
    pub zscore_nonzero_only: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            target_spacing: Some([1.0; 3]),
            crop: true,
            crop_margin: 4,
            crop_threshold: 0.0,
            zscore_nonzero_only: false,
        }
    }
}

/// Everything needed to map masks between original and preprocessed space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessRecord {
    pub original: Geometry,
    pub resampled: Geometry,
    pub crop: CropRecord,
}

impl PreprocessRecord {
    /// Record of a volume that was used as-is.
    pub fn identity(g: &Geometry) -> Self {
        PreprocessRecord { original: g.clone(), resampled: g.clone(), crop: CropRecord::identity(g) }
    }

    /// Original-space mask → preprocessed space.
    pub fn forward_mask(&self, mask: &BinaryMask) -> Result<BinaryMask> {
        if mask.shape() != self.original.shape {
            return Err(VolumeError::ShapeMismatch { expected: self.original.shape, got: mask.shape() });
        }
        let resampled = resample_mask_to(mask, &self.resampled)?;
        crop_mask(&resampled, &self.crop)
    }

    /// Preprocessed-space mask → original geometry.
    pub fn inverse_mask(&self, mask: &BinaryMask) -> Result<BinaryMask> {
        let full = uncrop(mask, &self.crop)?;
        resample_mask_to(&full, &self.original)
    }

    pub fn preprocessed_geometry(&self) -> Geometry {
        self.crop.cropped_geometry()
    }
}

#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub image: ImageVolume,
    pub record: PreprocessRecord,
}

impl Preprocessed {
    pub fn run(vol: &ImageVolume, cfg: &PreprocessConfig) -> Result<Self> {
        let original = vol.geometry().clone();
        let resampled = match cfg.target_spacing {
            Some(sp) => resample(vol, sp, Interpolation::Trilinear)?,
            None => vol.clone(),
        };
        let (cropped, crop) = if cfg.crop {
            crop_to_foreground_with(&resampled, cfg.crop_margin, cfg.crop_threshold)?
        } else {
            (resampled.clone(), CropRecord::identity(resampled.geometry()))
        };
        let image = zscore_with(&cropped, cfg.zscore_nonzero_only)?;
        Ok(Preprocessed {
            image,
            record: PreprocessRecord { original, resampled: resampled.geometry().clone(), crop },
        })
    }
}

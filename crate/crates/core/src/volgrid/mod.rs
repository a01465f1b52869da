//! Volumetric data model: geometry, image volumes, binary masks, and the
//! preprocessing/augmentation pipeline that feeds the network.
//!
//! All arrays are C-contiguous with axis order `(z, y, x)`; `x` varies fastest.

mod augment;
mod nifti;
mod preprocess;

pub use augment::{augment, AugmentConfig};
pub use nifti::{
    load_mask, load_volume, mask_from_nifti_bytes, mask_to_nifti_bytes, save_mask, save_volume,
    volume_from_nifti_bytes, volume_to_nifti_bytes, NiftiDtype,
};
pub use preprocess::{
    crop_mask, crop_to_foreground, crop_to_foreground_with, resample, resample_mask, resample_mask_to, resample_to,
    resampled_geometry, uncrop, zscore_normalize, CropRecord, Interpolation, PreprocessConfig, PreprocessRecord,
    Preprocessed,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("data length {got} does not match shape {shape:?}")]
    DataLength { got: usize, shape: [usize; 3] },
    #[error("non-finite voxel value at flat index {0}")]
    NonFinite(usize),
    #[error("mask value {value} at flat index {index} is not 0 or 1")]
    NonBinary { index: usize, value: f64 },
    #[error("expected 3D scalar volume, got dims {0:?}")]
    NotScalar3d(Vec<i64>),
    #[error("malformed NIfTI: {0}")]
    Nifti(String),
    #[error("degenerate intensity distribution (std {0:e})")]
    Degenerate(f64),
    #[error("volume contains no voxel above the background threshold {0}")]
    AllBackground(f32),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: [usize; 3], got: [usize; 3] },
    #[error("geometry mismatch between image and mask")]
    GeometryMismatch,
    #[error("non-positive target spacing {0:?}")]
    BadSpacing([f64; 3]),
    #[error("trilinear interpolation is not allowed for binary masks")]
    TrilinearMask,
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = VolumeError> = std::result::Result<T, E>;

/// Physical placement of a voxel grid.
///
/// `direction[r][a]` is the world component `r` of the unit vector along
/// array axis `a`; `origin` is the world position of voxel `(0, 0, 0)`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Geometry {
    pub shape: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub direction: [[f64; 3]; 3],
}

pub const IDENTITY_DIRECTION: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

impl Geometry {
    pub fn new(
        shape: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        direction: [[f64; 3]; 3],
    ) -> Result<Self> {
        let g = Geometry { shape, spacing, origin, direction };
        g.validate()?;
        Ok(g)
    }

    /// Unit-spaced, axis-aligned geometry at the world origin.
    pub fn isotropic(shape: [usize; 3]) -> Self {
        Geometry { shape, spacing: [1.0; 3], origin: [0.0; 3], direction: IDENTITY_DIRECTION }
    }

    pub fn with_spacing(mut self, spacing: [f64; 3]) -> Result<Self> {
        self.spacing = spacing;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape.iter().any(|&n| n == 0) {
            return Err(VolumeError::Geometry(format!("zero-length axis in {:?}", self.shape)));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(VolumeError::Geometry(format!("spacing must be > 0, got {:?}", self.spacing)));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(VolumeError::Geometry("non-finite origin".into()));
        }
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = (0..3).map(|r| self.direction[r][a] * self.direction[r][b]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-6 {
                    return Err(VolumeError::Geometry(format!(
                        "direction columns not orthonormal: {:?}",
                        self.direction
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.shape[1] + y) * self.shape[2] + x
    }

    #[inline]
    pub fn coords(&self, flat: usize) -> [usize; 3] {
        let x = flat % self.shape[2];
        let y = (flat / self.shape[2]) % self.shape[1];
        let z = flat / (self.shape[1] * self.shape[2]);
        [z, y, x]
    }

    pub fn contains(&self, idx: [i64; 3]) -> bool {
        (0..3).all(|a| idx[a] >= 0 && (idx[a] as usize) < self.shape[a])
    }

    /// World position of a continuous voxel index.
    pub fn index_to_world(&self, idx: [f64; 3]) -> [f64; 3] {
        let mut w = self.origin;
        for (r, wr) in w.iter_mut().enumerate() {
            for a in 0..3 {
                *wr += self.direction[r][a] * self.spacing[a] * idx[a];
            }
        }
        w
    }

    /// Continuous voxel index of a world position.
    pub fn world_to_index(&self, world: [f64; 3]) -> [f64; 3] {
        let d = [world[0] - self.origin[0], world[1] - self.origin[1], world[2] - self.origin[2]];
        let mut idx = [0.0; 3];
        for a in 0..3 {
            let proj: f64 = (0..3).map(|r| self.direction[r][a] * d[r]).sum();
            idx[a] = proj / self.spacing[a];
        }
        idx
    }

    /// Physical extent per axis (number of voxels times spacing).
    pub fn extent(&self) -> [f64; 3] {
        [
            self.shape[0] as f64 * self.spacing[0],
            self.shape[1] as f64 * self.spacing[1],
            self.shape[2] as f64 * self.spacing[2],
        ]
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(VolumeError::DataLength { got: len, shape: self.shape });
        }
        Ok(())
    }
}

/// Scalar intensity volume.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageVolume {
    geometry: Geometry,
    data: Vec<f32>,
}

impl ImageVolume {
    pub fn new(geometry: Geometry, data: Vec<f32>) -> Result<Self> {
        geometry.validate()?;
        geometry.check_len(data.len())?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(VolumeError::NonFinite(i));
        }
        Ok(ImageVolume { geometry, data })
    }

    pub fn filled(geometry: Geometry, value: f32) -> Result<Self> {
        let n = geometry.len();
        Self::new(geometry, vec![value; n])
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn shape(&self) -> [usize; 3] {
        self.geometry.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> f32 {
        self.data[self.geometry.index(z, y, x)]
    }

    /// Axial slice `z` as a row-major `(y, x)` buffer.
    pub fn slice(&self, z: usize) -> &[f32] {
        let n = self.geometry.shape[1] * self.geometry.shape[2];
        &self.data[z * n..(z + 1) * n]
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Binary {0,1} label grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    geometry: Geometry,
    data: Vec<u8>,
}

impl Eq for Geometry {}

impl std::hash::Hash for Geometry {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.shape.hash(state);
        for v in self.spacing.iter().chain(&self.origin).chain(self.direction.iter().flatten()) {
            v.to_bits().hash(state);
        }
    }
}

impl BinaryMask {
    pub fn new(geometry: Geometry, data: Vec<u8>) -> Result<Self> {
        geometry.validate()?;
        geometry.check_len(data.len())?;
        if let Some(i) = data.iter().position(|&v| v > 1) {
            return Err(VolumeError::NonBinary { index: i, value: data[i] as f64 });
        }
        Ok(BinaryMask { geometry, data })
    }

    pub fn zeros(geometry: Geometry) -> Self {
        let n = geometry.len();
        BinaryMask { geometry, data: vec![0; n] }
    }

    /// Builds a mask from a predicate over voxel indices.
    pub fn from_fn(geometry: Geometry, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let [d, h, w] = geometry.shape;
        let mut data = Vec::with_capacity(d * h * w);
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    data.push(f(z, y, x) as u8);
                }
            }
        }
        BinaryMask { geometry, data }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn shape(&self) -> [usize; 3] {
        self.geometry.shape
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> bool {
        self.data[self.geometry.index(z, y, x)] != 0
    }

    pub fn set(&mut self, z: usize, y: usize, x: usize, on: bool) {
        let i = self.geometry.index(z, y, x);
        self.data[i] = on as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn is_empty_mask(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn slice(&self, z: usize) -> &[u8] {
        let n = self.geometry.shape[1] * self.geometry.shape[2];
        &self.data[z * n..(z + 1) * n]
    }

    /// Foreground voxel count per axial slice.
    pub fn slice_areas(&self) -> Vec<usize> {
        (0..self.geometry.shape[0])
            .map(|z| self.slice(z).iter().map(|&v| v as usize).sum())
            .collect()
    }

    pub fn foreground_indices(&self) -> Vec<[usize; 3]> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(|(i, _)| self.geometry.coords(i))
            .collect()
    }

    /// Voxelwise `self & !other`.
    pub fn minus(&self, other: &BinaryMask) -> Result<BinaryMask> {
        if self.shape() != other.shape() {
            return Err(VolumeError::ShapeMismatch { expected: self.shape(), got: other.shape() });
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a & (1 - b)).collect();
        Ok(BinaryMask { geometry: self.geometry.clone(), data })
    }

    /// Number of voxels that differ.
    pub fn hamming(&self, other: &BinaryMask) -> Result<usize> {
        if self.shape() != other.shape() {
            return Err(VolumeError::ShapeMismatch { expected: self.shape(), got: other.shape() });
        }
        Ok(self.data.iter().zip(&other.data).filter(|(a, b)| a != b).count())
    }

    pub fn to_image(&self) -> ImageVolume {
        ImageVolume {
            geometry: self.geometry.clone(),
            data: self.data.iter().map(|&v| v as f32).collect(),
        }
    }
}

/// Per-voxel foreground probabilities sharing a grid with the image.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    geometry: Geometry,
    data: Vec<f32>,
}

impl ProbabilityMap {
    pub fn new(geometry: Geometry, data: Vec<f32>) -> Result<Self> {
        geometry.validate()?;
        geometry.check_len(data.len())?;
        if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(VolumeError::Geometry(format!(
                "probability {} at {} outside [0,1]",
                data[i], i
            )));
        }
        Ok(ProbabilityMap { geometry, data })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn shape(&self) -> [usize; 3] {
        self.geometry.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// `p >= threshold` becomes foreground.
    pub fn threshold(&self, threshold: f32) -> BinaryMask {
        BinaryMask {
            geometry: self.geometry.clone(),
            data: self.data.iter().map(|&p| (p >= threshold) as u8).collect(),
        }
    }
}

impl From<&BinaryMask> for ProbabilityMap {
    fn from(mask: &BinaryMask) -> Self {
        ProbabilityMap {
            geometry: mask.geometry.clone(),
            data: mask.data.iter().map(|&v| v as f32).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_rejects_bad_spacing_and_direction() {
        assert!(Geometry::new([2, 2, 2], [1.0, 0.0, 1.0], [0.0; 3], IDENTITY_DIRECTION).is_err());
        let skew = [[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(Geometry::new([2, 2, 2], [1.0; 3], [0.0; 3], skew).is_err());
        assert!(Geometry::new([0, 2, 2], [1.0; 3], [0.0; 3], IDENTITY_DIRECTION).is_err());
    }

    #[test]
    fn world_index_round_trip() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let dir = [[s, -s, 0.0], [s, s, 0.0], [0.0, 0.0, 1.0]];
        let g = Geometry::new([4, 5, 6], [1.5, 0.5, 2.0], [3.0, -1.0, 7.0], dir).unwrap();
        let w = g.index_to_world([1.0, 2.5, 3.0]);
        let back = g.world_to_index(w);
        for a in 0..3 {
            assert!((back[a] - [1.0, 2.5, 3.0][a]).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_index_round_trip() {
        let g = Geometry::isotropic([3, 4, 5]);
        for i in 0..g.len() {
            let [z, y, x] = g.coords(i);
            assert_eq!(g.index(z, y, x), i);
        }
    }

    #[test]
    fn image_rejects_nan_and_mask_rejects_two() {
        let g = Geometry::isotropic([1, 1, 2]);
        assert!(matches!(ImageVolume::new(g.clone(), vec![0.0, f32::NAN]), Err(VolumeError::NonFinite(1))));
        assert!(BinaryMask::new(g, vec![0, 2]).is_err());
    }
}

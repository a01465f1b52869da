//! Joint spatial/intensity augmentation for training pairs.

use super::preprocess::{nearest_index, sample_trilinear};
use super::{BinaryMask, ImageVolume, Result, VolumeError};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Maximum absolute rotation per axis, degrees.
    pub rotation_deg: f64,
    pub scale_range: [f64; 2],
    pub elastic_prob: f64,
    /// Control-point displacement standard deviation, voxels.
    pub elastic_sigma: f64,
    /// Control points per axis.
    pub elastic_grid: usize,
    /// Multiplicative intensity gain range.
    pub gain_range: [f64; 2],
    /// Additive intensity shift range (applied after gain, in z-score units).
    pub shift_range: [f64; 2],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rotation_deg: 15.0,
            scale_range: [0.9, 1.1],
            elastic_prob: 0.3,
            elastic_sigma: 3.0,
            elastic_grid: 4,
            gain_range: [0.9, 1.1],
            shift_range: [-0.1, 0.1],
        }
    }
}

impl AugmentConfig {
    /// Every range collapsed so that `augment` returns its inputs unchanged.
    pub fn identity() -> Self {
        AugmentConfig {
            rotation_deg: 0.0,
            scale_range: [1.0, 1.0],
            elastic_prob: 0.0,
            elastic_sigma: 0.0,
            elastic_grid: 4,
            gain_range: [1.0, 1.0],
            shift_range: [0.0, 0.0],
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn rotation(angles: [f64; 3]) -> [[f64; 3]; 3] {
    let (s0, c0) = angles[0].sin_cos();
    let (s1, c1) = angles[1].sin_cos();
    let (s2, c2) = angles[2].sin_cos();
    // rotations about the z, y and x index axes, composed z·y·x
    let rz = [[1.0, 0.0, 0.0], [0.0, c0, -s0], [0.0, s0, c0]];
    let ry = [[c1, 0.0, s1], [0.0, 1.0, 0.0], [-s1, 0.0, c1]];
    let rx = [[c2, -s2, 0.0], [s2, c2, 0.0], [0.0, 0.0, 1.0]];
    matmul(matmul(rz, ry), rx)
}

fn matmul(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

struct ElasticField {
    grid: usize,
    /// `[component][control point]`, control points C-ordered.
    disp: [Vec<f32>; 3],
}

impl ElasticField {
    fn sample<R: Rng + ?Sized>(rng: &mut R, grid: usize, sigma: f64) -> Self {
        let normal = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
        let n = grid * grid * grid;
        let disp = std::array::from_fn(|_| (0..n).map(|_| normal.sample(rng) as f32).collect());
        ElasticField { grid, disp }
    }

    fn at(&self, p: [f64; 3], shape: [usize; 3]) -> [f64; 3] {
        let g = self.grid;
        let gp = [0, 1, 2].map(|a| if shape[a] > 1 { p[a] * (g - 1) as f64 / (shape[a] - 1) as f64 } else { 0.0 });
        let gshape = [g, g, g];
        [0, 1, 2].map(|c| sample_trilinear(&self.disp[c], gshape, gp) as f64)
    }
}

/// Applies one random spatial transform to both image (trilinear) and mask
/// (nearest), then an intensity gain/shift to the image only.
pub fn augment<R: Rng + ?Sized>(
    vol: &ImageVolume,
    mask: &BinaryMask,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(ImageVolume, BinaryMask)> {
    if vol.geometry() != mask.geometry() {
        return Err(VolumeError::GeometryMismatch);
    }
    let max_rad = cfg.rotation_deg.to_radians();
    let angles = [0; 3].map(|_| uniform(rng, -max_rad, max_rad));
    let scale = uniform(rng, cfg.scale_range[0], cfg.scale_range[1]);
    let elastic = if cfg.elastic_prob > 0.0 && rng.random::<f64>() < cfg.elastic_prob {
        Some(ElasticField::sample(rng, cfg.elastic_grid.max(2), cfg.elastic_sigma))
    } else {
        None
    };
    let gain = uniform(rng, cfg.gain_range[0], cfg.gain_range[1]);
    let shift = uniform(rng, cfg.shift_range[0], cfg.shift_range[1]);

    let shape = vol.shape();
    let center = shape.map(|n| (n as f64 - 1.0) / 2.0);
    let rot = rotation(angles);
    // output voxel p samples input at center + Rᵀ(p - center)/scale (+ elastic displacement)
    let elastic_dense = elastic.as_ref().map(|field| {
        let mut dense = Vec::with_capacity(vol.data().len());
        for z in 0..shape[0] {
            for y in 0..shape[1] {
                for x in 0..shape[2] {
                    dense.push(field.at([z as f64, y as f64, x as f64], shape));
                }
            }
        }
        dense
    });
    let mut img = Vec::with_capacity(vol.data().len());
    let mut lab = Vec::with_capacity(vol.data().len());
    let mut flat = 0;
    for z in 0..shape[0] {
        for y in 0..shape[1] {
            for x in 0..shape[2] {
                let d = [z as f64 - center[0], y as f64 - center[1], x as f64 - center[2]];
                let mut q = [0.0; 3];
                for a in 0..3 {
                    let r: f64 = (0..3).map(|k| rot[k][a] * d[k]).sum();
                    q[a] = center[a] + r / scale;
                    if let Some(e) = &elastic_dense {
                        q[a] += e[flat][a];
                    }
                    let rq = q[a].round();
                    if (q[a] - rq).abs() < 1e-9 {
                        q[a] = rq;
                    }
                }
                let v = sample_trilinear(vol.data(), shape, q) as f64;
                img.push((v * gain + shift) as f32);
                lab.push(nearest_index(shape, q).map_or(0, |i| mask.data()[i]));
                flat += 1;
            }
        }
    }
    Ok((ImageVolume::new(vol.geometry().clone(), img)?, BinaryMask::new(mask.geometry().clone(), lab)?))
}

#[cfg(test)]
mod tests {
    use super::super::Geometry;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ellipsoid(n: usize, radii: [f64; 3]) -> (ImageVolume, BinaryMask) {
        let g = Geometry::isotropic([n, n, n]);
        let c = (n as f64 - 1.0) / 2.0;
        let mask = BinaryMask::from_fn(g.clone(), |z, y, x| {
            let p = [z, y, x].map(|v| v as f64 - c);
            (0..3).map(|a| (p[a] / radii[a]).powi(2)).sum::<f64>() <= 1.0
        });
        let img = ImageVolume::new(g, mask.data().iter().enumerate().map(|(i, &m)| m as f32 * 2.0 + (i % 7) as f32 * 0.1).collect()).unwrap();
        (img, mask)
    }

    #[test]
    fn identity_config_is_identity() {
        let (img, mask) = ellipsoid(16, [5.0, 4.0, 6.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = augment(&img, &mask, &AugmentConfig::identity(), &mut rng).unwrap();
        assert_eq!(a, img);
        assert_eq!(b, mask);
    }

    #[test]
    fn seeded_output_is_deterministic() {
        let (img, mask) = ellipsoid(16, [5.0, 4.0, 6.0]);
        let cfg = AugmentConfig { elastic_prob: 1.0, ..AugmentConfig::default() };
        let run = |seed| augment(&img, &mask, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        assert_eq!(run(7), run(7));
        assert_ne!(run(7).0, run(8).0);
    }

    #[test]
    fn volume_change_stays_within_scale_bounds() {
        let (img, mask) = ellipsoid(48, [12.0, 9.0, 14.0]);
        let before = mask.count() as f64;
        let cfg = AugmentConfig { elastic_prob: 0.0, ..AugmentConfig::default() };
        for seed in 0..6 {
            let (_, out) = augment(&img, &mask, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let ratio = out.count() as f64 / before;
            assert!(ratio >= 0.9f64.powi(3) * 0.9 && ratio <= 1.1f64.powi(3) * 1.1, "ratio {ratio}");
            assert!(out.data().iter().all(|&v| v <= 1));
        }
    }

    #[test]
    fn rejects_geometry_mismatch() {
        let (img, _) = ellipsoid(8, [2.0; 3]);
        let mask = BinaryMask::zeros(Geometry::isotropic([8, 8, 9]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(augment(&img, &mask, &AugmentConfig::default(), &mut rng), Err(VolumeError::GeometryMismatch)));
    }
}

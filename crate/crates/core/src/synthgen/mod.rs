//! Synthetic head phantoms with ellipsoidal tumors.
//!
//! A phantom is a zero-valued background holding a textured "brain"
//! ellipsoid with one or two rotated, optionally lobulated tumors. Noise is
//! added inside the head only, so foreground cropping sees the head.

use crate::volgrid::{load_mask, load_volume, save_mask, save_volume, BinaryMask, Geometry, ImageVolume, VolumeError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid phantom config: {0}")]
    Config(String),
    #[error("could not place tumors after {0} attempts")]
    Infeasible(usize),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

pub type Result<T, E = SynthError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Easy,
    Hard,
}

impl std::str::FromStr for Preset {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "easy" => Ok(Preset::Easy),
            "hard" => Ok(Preset::Hard),
            other => Err(format!("unknown preset {other:?} (expected easy or hard)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub shape: [usize; 3],
    /// Semi-axis range of the head ellipsoid as a fraction of the half-extent.
    pub head_scale: [f64; 2],
    pub background: f64,
    /// Amplitude of the smooth low-frequency texture inside the head.
    pub texture: f64,
    pub noise_sigma: f64,
    pub tumor_count: [usize; 2],
    /// Unlabeled lesions drawn exactly like tumors but left out of the mask.
    pub mimic_count: [usize; 2],
    /// Tumor semi-axis range, voxels.
    pub tumor_radius: [f64; 2],
    /// Tumor intensity above the local background.
    pub contrast: [f64; 2],
    pub rim_probability: f64,
    pub rim_width: f64,
    /// Extra intensity of the enhancing rim.
    pub rim_boost: f64,
    /// Relative amplitude of the radial shape perturbation; 0 gives plain ellipsoids.
    pub lobulation: f64,
    /// Upper bound on the tumor volume fraction; draws above it are rejected.
    pub max_mask_fraction: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self::preset(Preset::Easy, 64, 0)
    }
}

impl PhantomConfig {
    pub fn preset(preset: Preset, size: usize, seed: u64) -> Self {
        let base = PhantomConfig {
            shape: [size; 3],
            head_scale: [0.5, 0.6],
            background: 1.0,
            texture: 0.1,
            noise_sigma: 0.05,
            tumor_count: [1, 2],
            mimic_count: [0, 2],
            tumor_radius: [4.0, 10.0],
            contrast: [0.4, 1.0],
            rim_probability: 0.5,
            rim_width: 1.5,
            rim_boost: 0.3,
            lobulation: 0.0,
            max_mask_fraction: 0.025,
            seed,
        };
        match preset {
            Preset::Easy => base,
            Preset::Hard => PhantomConfig {
                mimic_count: [1, 2],
                noise_sigma: 0.12,
                contrast: [0.15, 0.35],
                rim_probability: 0.3,
                rim_boost: 0.15,
                lobulation: 0.3,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        let range_ok = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if self.shape.iter().any(|&n| n < 8) {
            return bad("every dimension must be at least 8");
        }
        if !range_ok(self.head_scale) || self.head_scale[0] <= 0.0 || self.head_scale[1] > 1.0 {
            return bad("head_scale must lie in (0, 1]");
        }
        if self.tumor_count[0] < 1 || self.tumor_count[0] > self.tumor_count[1] {
            return bad("tumor_count must satisfy 1 <= lo <= hi");
        }
        if self.mimic_count[0] > self.mimic_count[1] {
            return bad("mimic_count must satisfy lo <= hi");
        }
        if !range_ok(self.tumor_radius) || self.tumor_radius[0] < 1.0 {
            return bad("tumor_radius must satisfy 1 <= lo <= hi");
        }
        if !range_ok(self.contrast) || self.contrast[0] <= self.noise_sigma {
            return bad("contrast must exceed noise_sigma");
        }
        if !(self.noise_sigma >= 0.0 && self.texture >= 0.0 && self.rim_width >= 0.0 && self.rim_boost >= 0.0) {
            return bad("noise, texture and rim parameters must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.rim_probability) {
            return bad("rim_probability must lie in [0, 1]");
        }
        if !(0.0..0.9).contains(&self.lobulation) {
            return bad("lobulation must lie in [0, 0.9)");
        }
        let half_min = *self.shape.iter().min().unwrap() as f64 / 2.0;
        if self.tumor_radius[0] * (1.0 + self.lobulation) >= self.head_scale[1] * half_min {
            return bad("tumors cannot fit inside the head");
        }
        Ok(())
    }
}

/// One tumor: center, rotation (rows are the local axes), semi-axes, shape perturbation.
#[derive(Debug, Clone)]
struct Tumor {
    center: [f64; 3],
    axes: [[f64; 3]; 3],
    radii: [f64; 3],
    lobes: Vec<([f64; 3], f64, f64)>,
    lobulation: f64,
    contrast: f64,
    rim: bool,
    /// Part of the ground truth; mimics are not.
    target: bool,
}

impl Tumor {
    fn bound(&self) -> f64 {
        self.radii.iter().cloned().fold(0.0, f64::max) * (1.0 + self.lobulation)
    }

    /// Normalized radius ρ (≤ 1 inside) and the local effective radius in voxels.
    fn rho(&self, p: [f64; 3]) -> (f64, f64) {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        let q: Vec<f64> = (0..3).map(|i| (0..3).map(|j| self.axes[i][j] * d[j]).sum::<f64>() / self.radii[i]).collect();
        let r = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
        let dist = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if r < 1e-12 {
            return (0.0, self.radii[0]);
        }
        let mut scale = 1.0;
        if self.lobulation > 0.0 {
            let u = [q[0] / r, q[1] / r, q[2] / r];
            let bump: f64 = self.lobes.iter().map(|(v, f, ph)| (f * (v[0] * u[0] + v[1] * u[1] + v[2] * u[2]) + ph).sin()).sum::<f64>()
                / self.lobes.len() as f64;
            scale = 1.0 + self.lobulation * bump;
        }
        let rho = r / scale;
        (rho, dist / rho.max(1e-12))
    }
}

fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> [[f64; 3]; 3] {
    // Gram–Schmidt on Gaussian vectors gives a uniformly random orientation.
    let n = Normal::new(0.0, 1.0).unwrap();
    let mut rows = [[0.0; 3]; 3];
    for i in 0..3 {
        loop {
            let mut v = [n.sample(rng), n.sample(rng), n.sample(rng)];
            for r in rows.iter().take(i) {
                let d: f64 = (0..3).map(|k| v[k] * r[k]).sum();
                for k in 0..3 {
                    v[k] -= d * r[k];
                }
            }
            let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if len > 1e-6 {
                rows[i] = [v[0] / len, v[1] / len, v[2] / len];
                break;
            }
        }
    }
    rows
}

fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    random_rotation(rng)[0]
}

const PLACEMENT_ATTEMPTS: usize = 200;

/// Draws a phantom image and its exact tumor mask.
pub fn generate_phantom<R: Rng + ?Sized>(cfg: &PhantomConfig, rng: &mut R) -> Result<(ImageVolume, BinaryMask)> {
    cfg.validate()?;
    let shape = cfg.shape;
    let geometry = Geometry::isotropic(shape);
    let center = shape.map(|n| (n as f64 - 1.0) / 2.0);
    let head_r: [f64; 3] = std::array::from_fn(|a| rng.random_range(cfg.head_scale[0]..=cfg.head_scale[1]) * shape[a] as f64 / 2.0);
    let head_rho = |p: [f64; 3]| -> f64 { (0..3).map(|a| ((p[a] - center[a]) / head_r[a]).powi(2)).sum::<f64>().sqrt() };
    let head_min = head_r.iter().cloned().fold(f64::INFINITY, f64::min);

    let texture: Vec<([f64; 3], f64)> = (0..3)
        .map(|_| {
            let v = unit_vector(rng);
            let freq = rng.random_range(0.05..0.15);
            (v.map(|c| c * freq), rng.random_range(0.0..std::f64::consts::TAU))
        })
        .collect();

    let mut tumors: Vec<Tumor> = Vec::new();
    let mut mask = BinaryMask::zeros(geometry.clone());
    let mut accepted = false;
    for _ in 0..PLACEMENT_ATTEMPTS {
        let count = rng.random_range(cfg.tumor_count[0]..=cfg.tumor_count[1]);
        let mimics = rng.random_range(cfg.mimic_count[0]..=cfg.mimic_count[1]);
        tumors.clear();
        let mut ok = true;
        for k in 0..count + mimics {
            let radii: [f64; 3] = std::array::from_fn(|_| rng.random_range(cfg.tumor_radius[0]..=cfg.tumor_radius[1]));
            let lobes = (0..4)
                .map(|_| (unit_vector(rng), rng.random_range(2.0..4.0), rng.random_range(0.0..std::f64::consts::TAU)))
                .collect();
            let mut t = Tumor {
                center: [0.0; 3],
                axes: random_rotation(rng),
                radii,
                lobes,
                lobulation: cfg.lobulation,
                contrast: rng.random_range(cfg.contrast[0]..=cfg.contrast[1]),
                rim: rng.random_bool(cfg.rim_probability),
                target: k < count,
            };
            let b = t.bound();
            // The tumor's bounding sphere must sit inside the head with one voxel to spare.
            let limit = 1.0 - (b + 1.0) / head_min;
            if limit <= 0.0 {
                if t.target {
                    ok = false;
                    break;
                }
                continue;
            }
            let mut placed = false;
            for _ in 0..PLACEMENT_ATTEMPTS {
                let c: [f64; 3] = std::array::from_fn(|a| center[a] + rng.random_range(-1.0..1.0) * head_r[a] * limit);
                if head_rho(c) > limit {
                    continue;
                }
                let clear = tumors.iter().all(|o| {
                    let d = (0..3).map(|a| (c[a] - o.center[a]).powi(2)).sum::<f64>().sqrt();
                    d > b + o.bound() + 2.0
                });
                if clear {
                    t.center = c;
                    placed = true;
                    break;
                }
            }
            if !placed {
                // A mimic that does not fit is dropped; a tumor restarts the draw.
                if t.target {
                    ok = false;
                    break;
                }
                continue;
            }
            tumors.push(t);
        }
        if !ok {
            continue;
        }
        mask = BinaryMask::from_fn(geometry.clone(), |z, y, x| {
            let p = [z as f64, y as f64, x as f64];
            tumors.iter().any(|t| t.target && t.rho(p).0 <= 1.0)
        });
        let frac = mask.count() as f64 / geometry.len() as f64;
        if mask.count() > 0 && frac <= cfg.max_mask_fraction {
            accepted = true;
            break;
        }
    }
    if !accepted {
        return Err(SynthError::Infeasible(PLACEMENT_ATTEMPTS));
    }

    let noise = Normal::new(0.0, cfg.noise_sigma.max(0.0)).map_err(|e| SynthError::Config(e.to_string()))?;
    let mut data = vec![0f32; geometry.len()];
    for z in 0..shape[0] {
        for y in 0..shape[1] {
            for x in 0..shape[2] {
                let p = [z as f64, y as f64, x as f64];
                if head_rho(p) > 1.0 {
                    continue;
                }
                let tex: f64 = texture.iter().map(|(k, ph)| (k[0] * p[0] + k[1] * p[1] + k[2] * p[2] + ph).sin()).sum::<f64>() / 3.0;
                let mut v = cfg.background + cfg.texture * tex;
                let i = geometry.index(z, y, x);
                if let Some((t, (rho, eff))) = tumors.iter().map(|t| (t, t.rho(p))).find(|(_, (rho, _))| *rho <= 1.0) {
                    v += t.contrast;
                    if t.rim && (1.0 - rho) * eff <= cfg.rim_width {
                        v += cfg.rim_boost;
                    }
                }
                if cfg.noise_sigma > 0.0 {
                    v += noise.sample(rng);
                }
                // Keep the head strictly non-zero so foreground cropping finds it.
                data[i] = v.max(1e-3) as f32;
            }
        }
    }
    Ok((ImageVolume::new(geometry, data)?, mask))
}

/// Number of 26-connected foreground components.
pub fn component_count(mask: &BinaryMask) -> usize {
    let [d, h, w] = mask.shape();
    let mut seen = vec![false; mask.data().len()];
    let mut count = 0;
    for start in 0..seen.len() {
        if mask.data()[start] == 0 || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            let (z, y, x) = (i / (h * w), (i / w) % h, i % w);
            for dz in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (nz, ny, nx) = (z as i64 + dz, y as i64 + dy, x as i64 + dx);
                        if nz < 0 || ny < 0 || nx < 0 || nz >= d as i64 || ny >= h as i64 || nx >= w as i64 {
                            continue;
                        }
                        let j = (nz as usize * h + ny as usize) * w + nx as usize;
                        if mask.data()[j] != 0 && !seen[j] {
                            seen[j] = true;
                            queue.push_back(j);
                        }
                    }
                }
            }
        }
    }
    count
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

/// A labelled volume held in memory.
#[derive(Debug, Clone)]
pub struct Case {
    pub id: String,
    pub split: Split,
    pub image: ImageVolume,
    pub mask: BinaryMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub image: String,
    pub mask: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config: PhantomConfig,
    pub cases: Vec<ManifestEntry>,
}

pub fn case_id(index: usize) -> String {
    format!("case_{index:04}")
}

/// Phantom `index` of a dataset: an independent ChaCha stream per case.
pub fn generate_case(cfg: &PhantomConfig, index: usize, split: Split) -> Result<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let (image, mask) = generate_phantom(cfg, &mut rng)?;
    Ok(Case { id: case_id(index), split, image, mask })
}

/// `n_train` training cases followed by `n_val` validation cases, in memory.
pub fn generate_cases(cfg: &PhantomConfig, n_train: usize, n_val: usize) -> Result<Vec<Case>> {
    (0..n_train + n_val)
        .map(|i| generate_case(cfg, i, if i < n_train { Split::Train } else { Split::Val }))
        .collect()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io { path: path.to_owned(), source }
}

/// Writes `<id>_img.nii.gz`, `<id>_gt.nii.gz` per case and `manifest.json`.
pub fn generate_dataset(cfg: &PhantomConfig, n_train: usize, n_val: usize, out_dir: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut cases = Vec::with_capacity(n_train + n_val);
    for i in 0..n_train + n_val {
        let case = generate_case(cfg, i, if i < n_train { Split::Train } else { Split::Val })?;
        let entry = ManifestEntry {
            image: format!("{}_img.nii.gz", case.id),
            mask: format!("{}_gt.nii.gz", case.id),
            id: case.id.clone(),
            split: case.split,
        };
        save_volume(&case.image, &out_dir.join(&entry.image))?;
        save_mask(&case.mask, &out_dir.join(&entry.mask))?;
        log::debug!("wrote {}", entry.id);
        cases.push(entry);
    }
    let manifest = Manifest { seed: cfg.seed, config: cfg.clone(), cases };
    let path = out_dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json + "\n").map_err(io_err(&path))?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| SynthError::Manifest(format!("{}: {e}", path.display())))
}

/// Loads every case listed in `<dir>/manifest.json`.
pub fn load_dataset(dir: &Path) -> Result<Vec<Case>> {
    load_manifest(dir)?
        .cases
        .into_iter()
        .map(|e| {
            Ok(Case {
                image: load_volume(&dir.join(&e.image))?,
                mask: load_mask(&dir.join(&e.mask))?,
                id: e.id,
                split: e.split,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_tumor_is_brighter_than_background() {
        let cfg = PhantomConfig { noise_sigma: 0.0, contrast: [1.0, 1.0], mimic_count: [0, 0], ..PhantomConfig::preset(Preset::Easy, 32, 1) };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = PhantomConfig { tumor_radius: [3.0, 5.0], ..cfg };
        let (img, mask) = generate_phantom(&cfg, &mut rng).unwrap();
        let (mut lo_fg, mut hi_bg) = (f32::INFINITY, f32::NEG_INFINITY);
        for (v, m) in img.data().iter().zip(mask.data()) {
            if *m != 0 {
                lo_fg = lo_fg.min(*v);
            } else {
                hi_bg = hi_bg.max(*v);
            }
        }
        assert!(lo_fg > hi_bg);
    }

    #[test]
    fn mimics_are_bright_but_unlabeled() {
        let cfg = PhantomConfig {
            noise_sigma: 0.0,
            contrast: [1.0, 1.0],
            tumor_count: [1, 1],
            mimic_count: [1, 1],
            tumor_radius: [3.0, 4.0],
            ..PhantomConfig::preset(Preset::Easy, 48, 1)
        };
        let (img, mask) = generate_phantom(&cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(component_count(&mask), 1);
        // texture keeps plain head tissue within background ± 0.1
        let bright_unlabeled = img.data().iter().zip(mask.data()).filter(|(v, m)| **v > 1.5 && **m == 0).count();
        assert!(bright_unlabeled >= 27, "{bright_unlabeled}");
    }

    #[test]
    fn same_seed_same_case() {
        let cfg = PhantomConfig::preset(Preset::Hard, 32, 9);
        let cfg = PhantomConfig { tumor_radius: [3.0, 5.0], ..cfg };
        let a = generate_case(&cfg, 2, Split::Train).unwrap();
        let b = generate_case(&cfg, 2, Split::Train).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.mask, b.mask);
        let c = generate_case(&cfg, 3, Split::Train).unwrap();
        assert_ne!(a.mask, c.mask);
    }

    #[test]
    fn outside_head_is_exactly_zero() {
        let cfg = PhantomConfig { tumor_radius: [3.0, 4.0], ..PhantomConfig::preset(Preset::Easy, 32, 0) };
        let case = generate_case(&cfg, 0, Split::Train).unwrap();
        assert_eq!(case.image.get(0, 0, 0), 0.0);
        assert!(case.image.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn config_validation() {
        let mut c = PhantomConfig::default();
        c.contrast = [0.01, 0.02];
        assert!(c.validate().is_err());
        let mut c = PhantomConfig::default();
        c.tumor_count = [0, 1];
        assert!(c.validate().is_err());
        assert_eq!("hard".parse::<Preset>().unwrap(), Preset::Hard);
        assert!("medium".parse::<Preset>().is_err());
    }

    #[test]
    fn component_counting() {
        let g = Geometry::isotropic([4, 4, 4]);
        let mut m = BinaryMask::zeros(g);
        m.set(0, 0, 0, true);
        m.set(1, 1, 1, true);
        m.set(3, 3, 3, true);
        assert_eq!(component_count(&m), 2);
    }
}

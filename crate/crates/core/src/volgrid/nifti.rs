//! Minimal NIfTI-1 codec for 3D scalar volumes (`.nii` and `.nii.gz`).
//!
//! Images are written as float32, masks as uint8. Geometry goes into the
//! sform (code 1, scanner anat); on read the sform is preferred, then the
//! qform quaternion, then plain pixdim scaling.

use super::{BinaryMask, Geometry, ImageVolume, Result, VolumeError, IDENTITY_DIRECTION};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use std::io::{Read, Write};
use std::path::Path;

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NiftiDtype {
    U8,
    I8,
    I16,
    U16,
    I32,
    U32,
    I64,
    F32,
    F64,
}

impl NiftiDtype {
    fn from_code(code: i16) -> Option<Self> {
        Some(match code {
            2 => Self::U8,
            256 => Self::I8,
            4 => Self::I16,
            512 => Self::U16,
            8 => Self::I32,
            768 => Self::U32,
            1024 => Self::I64,
            16 => Self::F32,
            64 => Self::F64,
            _ => return None,
        })
    }

    fn code(self) -> i16 {
        match self {
            Self::U8 => 2,
            Self::I8 => 256,
            Self::I16 => 4,
            Self::U16 => 512,
            Self::I32 => 8,
            Self::U32 => 768,
            Self::I64 => 1024,
            Self::F32 => 16,
            Self::F64 => 64,
        }
    }

    fn size(self) -> usize {
        match self {
            Self::U8 | Self::I8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::I64 | Self::F64 => 8,
        }
    }
}

/// Parsed header fields plus the raw voxel payload, decoded to f64.
struct Decoded {
    geometry: Geometry,
    values: Vec<f64>,
}

fn is_gzip(bytes: &[u8]) -> bool {
    bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b
}

fn nifti_err(msg: impl Into<String>) -> VolumeError {
    VolumeError::Nifti(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    big_endian: bool,
}

impl Reader<'_> {
    fn bytes<const N: usize>(&self, off: usize) -> [u8; N] {
        let mut b = [0u8; N];
        b.copy_from_slice(&self.buf[off..off + N]);
        if self.big_endian {
            b.reverse();
        }
        b
    }
    fn i16(&self, off: usize) -> i16 {
        i16::from_le_bytes(self.bytes(off))
    }
    fn f32(&self, off: usize) -> f32 {
        f32::from_le_bytes(self.bytes(off))
    }
}

fn decode(raw: &[u8]) -> Result<Decoded> {
    let bytes: std::borrow::Cow<[u8]> = if is_gzip(raw) {
        let mut out = Vec::new();
        GzDecoder::new(raw)
            .read_to_end(&mut out)
            .map_err(|e| nifti_err(format!("gzip: {e}")))?;
        out.into()
    } else {
        raw.into()
    };
    if bytes.len() < HEADER_SIZE {
        return Err(nifti_err(format!("file too small ({} bytes)", bytes.len())));
    }
    let le = i32::from_le_bytes(bytes[0..4].try_into().unwrap());
    let be = i32::from_be_bytes(bytes[0..4].try_into().unwrap());
    let big_endian = match (le, be) {
        (348, _) => false,
        (_, 348) => true,
        _ => return Err(nifti_err(format!("sizeof_hdr is {le}, expected 348"))),
    };
    let r = Reader { buf: &bytes, big_endian };
    let magic = &bytes[344..348];
    if magic != b"n+1\0" && magic != b"ni1\0" {
        return Err(nifti_err("missing n+1 magic"));
    }
    let dims: Vec<i64> = (0..8).map(|i| r.i16(40 + 2 * i) as i64).collect();
    let ndim = dims[0];
    if !(1..=7).contains(&ndim) {
        return Err(nifti_err(format!("dim[0] = {ndim}")));
    }
    let extra: i64 = (4..=ndim as usize).map(|i| dims[i].max(1)).product();
    if ndim < 3 || extra != 1 {
        return Err(VolumeError::NotScalar3d(dims[..=ndim as usize].to_vec()));
    }
    let (nx, ny, nz) = (dims[1], dims[2], dims[3]);
    if nx < 1 || ny < 1 || nz < 1 {
        return Err(nifti_err(format!("bad dims {dims:?}")));
    }
    let code = r.i16(70);
    let dtype = NiftiDtype::from_code(code)
        .ok_or_else(|| nifti_err(format!("unsupported datatype code {code}")))?;
    let pixdim: Vec<f64> = (0..8).map(|i| r.f32(76 + 4 * i) as f64).collect();
    let vox_offset = r.f32(108) as usize;
    let slope = r.f32(112) as f64;
    let inter = r.f32(116) as f64;
    let qform_code = r.i16(252);
    let sform_code = r.i16(254);

    let spacing_nifti = [pixdim[1].abs(), pixdim[2].abs(), pixdim[3].abs()];
    let spacing_nifti = spacing_nifti.map(|s| if s > 0.0 { s } else { 1.0 });

    // Columns of `axes` are world vectors for NIfTI axes i, j, k (unit length).
    let (axes, origin) = if sform_code > 0 {
        let srow: Vec<[f64; 4]> = (0..3)
            .map(|row| {
                let base = 280 + 16 * row;
                [
                    r.f32(base) as f64,
                    r.f32(base + 4) as f64,
                    r.f32(base + 8) as f64,
                    r.f32(base + 12) as f64,
                ]
            })
            .collect();
        let mut axes = [[0.0; 3]; 3];
        for c in 0..3 {
            let norm = (0..3).map(|row| srow[row][c].powi(2)).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(nifti_err("degenerate sform"));
            }
            for row in 0..3 {
                axes[row][c] = srow[row][c] / norm;
            }
        }
        (axes, [srow[0][3], srow[1][3], srow[2][3]])
    } else if qform_code > 0 {
        let (b, c, d) = (r.f32(256) as f64, r.f32(260) as f64, r.f32(264) as f64);
        let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
        let qfac = if pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        let mut axes = [
            [a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), 2.0 * (b * d + a * c)],
            [2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, 2.0 * (c * d - a * b)],
            [2.0 * (b * d - a * c), 2.0 * (c * d + a * b), a * a + d * d - c * c - b * b],
        ];
        for row in axes.iter_mut() {
            row[2] *= qfac;
        }
        let origin = [r.f32(268) as f64, r.f32(272) as f64, r.f32(276) as f64];
        (axes, origin)
    } else {
        (IDENTITY_DIRECTION, [0.0; 3])
    };

    // Array axis a = (z, y, x) corresponds to NIfTI axis k, j, i.
    let mut direction = [[0.0; 3]; 3];
    for row in 0..3 {
        for a in 0..3 {
            direction[row][a] = axes[row][2 - a];
        }
    }
    let geometry = Geometry::new(
        [nz as usize, ny as usize, nx as usize],
        [spacing_nifti[2], spacing_nifti[1], spacing_nifti[0]],
        origin,
        direction,
    )?;

    let n = geometry.len();
    let offset = if vox_offset >= HEADER_SIZE { vox_offset } else { VOX_OFFSET };
    let need = offset + n * dtype.size();
    if bytes.len() < need {
        return Err(nifti_err(format!("truncated payload: {} of {} bytes", bytes.len(), need)));
    }
    let payload = &bytes[offset..need];
    let pr = Reader { buf: payload, big_endian };
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let off = i * dtype.size();
        let v = match dtype {
            NiftiDtype::U8 => payload[off] as f64,
            NiftiDtype::I8 => payload[off] as i8 as f64,
            NiftiDtype::I16 => i16::from_le_bytes(pr.bytes(off)) as f64,
            NiftiDtype::U16 => u16::from_le_bytes(pr.bytes(off)) as f64,
            NiftiDtype::I32 => i32::from_le_bytes(pr.bytes(off)) as f64,
            NiftiDtype::U32 => u32::from_le_bytes(pr.bytes(off)) as f64,
            NiftiDtype::I64 => i64::from_le_bytes(pr.bytes(off)) as f64,
            NiftiDtype::F32 => f32::from_le_bytes(pr.bytes(off)) as f64,
            NiftiDtype::F64 => f64::from_le_bytes(pr.bytes(off)),
        };
        values.push(v);
    }
    let scaled = slope != 0.0 && slope.is_finite() && !(slope == 1.0 && inter == 0.0);
    if scaled {
        for v in values.iter_mut() {
            *v = *v * slope + inter;
        }
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(VolumeError::NonFinite(i));
    }
    Ok(Decoded { geometry, values })
}

fn encode(geometry: &Geometry, dtype: NiftiDtype, payload: &[u8], gzip: bool) -> Vec<u8> {
    let mut h = vec![0u8; VOX_OFFSET];
    let put_i16 = |h: &mut Vec<u8>, off: usize, v: i16| h[off..off + 2].copy_from_slice(&v.to_le_bytes());
    let put_f32 = |h: &mut Vec<u8>, off: usize, v: f32| h[off..off + 4].copy_from_slice(&v.to_le_bytes());
    h[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    let [nz, ny, nx] = geometry.shape;
    let dims = [3i16, nx as i16, ny as i16, nz as i16, 1, 1, 1, 1];
    for (i, d) in dims.iter().enumerate() {
        put_i16(&mut h, 40 + 2 * i, *d);
    }
    put_i16(&mut h, 70, dtype.code());
    put_i16(&mut h, 72, (dtype.size() * 8) as i16);
    let pixdim = [1.0, geometry.spacing[2], geometry.spacing[1], geometry.spacing[0], 1.0, 1.0, 1.0, 1.0];
    for (i, p) in pixdim.iter().enumerate() {
        put_f32(&mut h, 76 + 4 * i, *p as f32);
    }
    put_f32(&mut h, 108, VOX_OFFSET as f32);
    put_f32(&mut h, 112, 1.0);
    h[123] = 10; // xyzt_units: mm + seconds
    put_i16(&mut h, 254, 1); // sform_code
    for row in 0..3 {
        for c in 0..3 {
            // NIfTI axis c = array axis 2 - c
            let a = 2 - c;
            put_f32(&mut h, 280 + 16 * row + 4 * c, (geometry.direction[row][a] * geometry.spacing[a]) as f32);
        }
        put_f32(&mut h, 280 + 16 * row + 12, geometry.origin[row] as f32);
    }
    h[344..348].copy_from_slice(b"n+1\0");
    h.extend_from_slice(payload);
    if gzip {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&h).expect("in-memory gzip");
        enc.finish().expect("in-memory gzip")
    } else {
        h
    }
}

fn is_gz_path(path: &Path) -> bool {
    path.to_string_lossy().ends_with(".gz")
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| VolumeError::Io { path: path.display().to_string(), source })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| VolumeError::Io { path: path.display().to_string(), source })
}

pub fn volume_from_nifti_bytes(bytes: &[u8]) -> Result<ImageVolume> {
    let d = decode(bytes)?;
    let data = d.values.into_iter().map(|v| v as f32).collect();
    ImageVolume::new(d.geometry, data)
}

/// Reads a mask; stored values must be exactly 0 or 1.
pub fn mask_from_nifti_bytes(bytes: &[u8]) -> Result<BinaryMask> {
    let d = decode(bytes)?;
    let mut data = Vec::with_capacity(d.values.len());
    for (i, v) in d.values.into_iter().enumerate() {
        if v == 0.0 {
            data.push(0);
        } else if v == 1.0 {
            data.push(1);
        } else {
            return Err(VolumeError::NonBinary { index: i, value: v });
        }
    }
    BinaryMask::new(d.geometry, data)
}

pub fn volume_to_nifti_bytes(vol: &ImageVolume, gzip: bool) -> Vec<u8> {
    let payload: Vec<u8> = vol.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    encode(vol.geometry(), NiftiDtype::F32, &payload, gzip)
}

pub fn mask_to_nifti_bytes(mask: &BinaryMask, gzip: bool) -> Vec<u8> {
    encode(mask.geometry(), NiftiDtype::U8, mask.data(), gzip)
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<ImageVolume> {
    volume_from_nifti_bytes(&read_file(path.as_ref())?)
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    mask_from_nifti_bytes(&read_file(path.as_ref())?)
}

/// Writes float32 NIfTI; gzip when the path ends in `.gz`.
pub fn save_volume(vol: &ImageVolume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_file(path, &volume_to_nifti_bytes(vol, is_gz_path(path)))
}

/// Writes uint8 NIfTI; gzip when the path ends in `.gz`.
pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_file(path, &mask_to_nifti_bytes(mask, is_gz_path(path)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: [usize; 3], spacing: [f64; 3]) -> ImageVolume {
        let g = Geometry::new(shape, spacing, [-10.0, 4.5, 2.25], IDENTITY_DIRECTION).unwrap();
        let data = (0..g.len()).map(|i| (i as f32) * 0.37 - 11.0).collect();
        ImageVolume::new(g, data).unwrap()
    }

    #[test]
    fn image_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let vol = ramp([6, 5, 4], [1.0, 1.0, 1.0]);
        for name in ["a.nii", "a.nii.gz"] {
            let p = dir.path().join(name);
            save_volume(&vol, &p).unwrap();
            assert_eq!(load_volume(&p).unwrap(), vol);
        }
    }

    #[test]
    fn spacing_passes_through_header() {
        let vol = ramp([3, 3, 3], [1.0, 0.98f32 as f64, 0.98f32 as f64]);
        let back = volume_from_nifti_bytes(&volume_to_nifti_bytes(&vol, false)).unwrap();
        assert_eq!(back.geometry().spacing, [1.0, 0.98f32 as f64, 0.98f32 as f64]);
    }

    #[test]
    fn on_disk_dtypes() {
        let vol = ramp([2, 2, 2], [1.0; 3]);
        let img = volume_to_nifti_bytes(&vol, false);
        assert_eq!(i16::from_le_bytes([img[70], img[71]]), 16);
        let mask = BinaryMask::zeros(vol.geometry().clone());
        let m = mask_to_nifti_bytes(&mask, false);
        assert_eq!(i16::from_le_bytes([m[70], m[71]]), 2);
        assert_eq!(m.len(), VOX_OFFSET + 8);
    }

    #[test]
    fn rejects_4d() {
        let vol = ramp([2, 2, 2], [1.0; 3]);
        let mut bytes = volume_to_nifti_bytes(&vol, false);
        bytes[40..42].copy_from_slice(&4i16.to_le_bytes());
        bytes[48..50].copy_from_slice(&3i16.to_le_bytes());
        let err = volume_from_nifti_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("expected 3D scalar volume"), "{err}");
    }

    #[test]
    fn rejects_non_finite_and_garbage() {
        let vol = ramp([2, 2, 2], [1.0; 3]);
        let mut bytes = volume_to_nifti_bytes(&vol, false);
        bytes[VOX_OFFSET..VOX_OFFSET + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(volume_from_nifti_bytes(&bytes), Err(VolumeError::NonFinite(0))));
        assert!(volume_from_nifti_bytes(b"not a nifti file").is_err());
    }

    #[test]
    fn oblique_direction_survives_within_float_precision() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let dir = [[s, -s, 0.0], [s, s, 0.0], [0.0, 0.0, 1.0]];
        let g = Geometry::new([3, 4, 5], [2.0, 1.0, 1.0], [1.0, 2.0, 3.0], dir).unwrap();
        let mask = BinaryMask::from_fn(g.clone(), |z, y, x| (z + y + x) % 2 == 0);
        let back = mask_from_nifti_bytes(&mask_to_nifti_bytes(&mask, true)).unwrap();
        assert_eq!(back.data(), mask.data());
        for r in 0..3 {
            for c in 0..3 {
                assert!((back.geometry().direction[r][c] - dir[r][c]).abs() < 1e-6);
            }
        }
    }
}

use super::polygon::voxel_center_inside;
use super::{Prompt, PromptKind, Result};
use crate::volgrid::{BinaryMask, Geometry};

/// Integer line stepping between two voxels (both endpoints included).
pub(crate) fn line_voxels(a: [usize; 2], b: [usize; 2]) -> Vec<[usize; 2]> {
    let dy = b[0] as i64 - a[0] as i64;
    let dx = b[1] as i64 - a[1] as i64;
    let steps = dy.abs().max(dx.abs());
    if steps == 0 {
        return vec![a];
    }
    (0..=steps)
        .map(|i| {
            let t = i as f64 / steps as f64;
            let y = (a[0] as f64 + dy as f64 * t).round() as usize;
            let x = (a[1] as f64 + dx as f64 * t).round() as usize;
            [y, x]
        })
        .collect()
}

/// In-plane voxels covered by a scribble polyline with its square brush.
pub(crate) fn scribble_voxels(vertices: &[[usize; 2]], thickness: u32, h: usize, w: usize) -> Vec<[usize; 2]> {
    let mut out = Vec::new();
    let mut visit = |v: [usize; 2]| {
        for oy in 0..thickness as usize {
            for ox in 0..thickness as usize {
                let (y, x) = (v[0] + oy, v[1] + ox);
                if y < h && x < w {
                    out.push([y, x]);
                }
            }
        }
    };
    if vertices.len() == 1 {
        visit(vertices[0]);
    }
    for seg in vertices.windows(2) {
        for v in line_voxels(seg[0], seg[1]) {
            visit(v);
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Calls `set` with the flat `(z, y, x)` index of every voxel the prompt covers.
///
/// * point: voxels with Euclidean distance ≤ radius from the center;
/// * box: `min ≤ (y, x) < max` on its slice;
/// * scribble: line-stepped polyline under a `thickness`² brush on its slice;
/// * lasso: voxels whose centers lie inside the polygon (even-odd rule).
pub fn stamp_prompt(prompt: &Prompt, shape: [usize; 3], mut set: impl FnMut(usize)) -> Result<()> {
    prompt.validate(shape)?;
    let [d, h, w] = shape;
    let flat = |z: usize, y: usize, x: usize| (z * h + y) * w + x;
    match &prompt.kind {
        PromptKind::Point(p) => {
            let r = p.radius as i64;
            let c = p.center.map(|v| v as i64);
            for dz in -r..=r {
                for dy in -r..=r {
                    for dx in -r..=r {
                        if dz * dz + dy * dy + dx * dx > r * r {
                            continue;
                        }
                        let (z, y, x) = (c[0] + dz, c[1] + dy, c[2] + dx);
                        if z >= 0 && y >= 0 && x >= 0 && (z as usize) < d && (y as usize) < h && (x as usize) < w {
                            set(flat(z as usize, y as usize, x as usize));
                        }
                    }
                }
            }
        }
        PromptKind::Box(b) => {
            for y in b.min[0]..b.max[0] {
                for x in b.min[1]..b.max[1] {
                    set(flat(b.slice, y, x));
                }
            }
        }
        PromptKind::Scribble(s) => {
            for [y, x] in scribble_voxels(&s.vertices, s.thickness, h, w) {
                set(flat(s.slice, y, x));
            }
        }
        PromptKind::Lasso(l) => {
            let ymin = l.vertices.iter().map(|v| v[0]).min().unwrap_or(0).max(0) as usize;
            let ymax = (l.vertices.iter().map(|v| v[0]).max().unwrap_or(0) as usize).min(h);
            let xmin = l.vertices.iter().map(|v| v[1]).min().unwrap_or(0).max(0) as usize;
            let xmax = (l.vertices.iter().map(|v| v[1]).max().unwrap_or(0) as usize).min(w);
            for y in ymin..ymax {
                for x in xmin..xmax {
                    if voxel_center_inside(&l.vertices, y as i64, x as i64) {
                        set(flat(l.slice, y, x));
                    }
                }
            }
        }
    }
    Ok(())
}

pub fn rasterize_prompt(prompt: &Prompt, geometry: &Geometry) -> Result<BinaryMask> {
    let mut data = vec![0u8; geometry.len()];
    stamp_prompt(prompt, geometry.shape, |i| data[i] = 1)?;
    Ok(BinaryMask::new(geometry.clone(), data).expect("binary by construction"))
}

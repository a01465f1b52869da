//! PNG overlays of a prediction and ground truth on one axial slice.

use super::{EvalError, Result};
use crate::volgrid::{BinaryMask, ImageVolume};
use std::path::Path;

const PRED: [u8; 3] = [255, 48, 48];
const GT: [u8; 3] = [48, 220, 48];
const BOTH: [u8; 3] = [255, 220, 0];

/// In-slice boundary: foreground with a 4-neighbour outside the mask or the image.
fn contour(mask: &BinaryMask, z: usize) -> Vec<bool> {
    let [_, h, w] = mask.shape();
    let s = mask.slice(z);
    let on = |y: isize, x: isize| y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && s[y as usize * w + x as usize] != 0;
    let mut out = vec![false; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            if on(y, x) && !(on(y - 1, x) && on(y + 1, x) && on(y, x - 1) && on(y, x + 1)) {
                out[y as usize * w + x as usize] = true;
            }
        }
    }
    out
}

/// Grayscale slice `z` windowed to its own range, with prediction contours in red,
/// ground-truth contours in green and shared contour pixels in yellow. Returns PNG bytes.
pub fn render_overlay(volume: &ImageVolume, pred: &BinaryMask, gt: &BinaryMask, z: usize) -> Result<Vec<u8>> {
    let shape = volume.shape();
    for m in [pred, gt] {
        if m.shape() != shape {
            return Err(EvalError::ShapeMismatch { a: shape, b: m.shape() });
        }
    }
    if z >= shape[0] {
        return Err(EvalError::SliceOutOfRange { slice: z, depth: shape[0] });
    }
    let [_, h, w] = shape;
    let slice = volume.slice(z);
    let (lo, hi) = slice.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = hi - lo;
    let (cp, cg) = (contour(pred, z), contour(gt, z));
    let mut rgb = Vec::with_capacity(h * w * 3);
    for i in 0..h * w {
        let g = if span > 0.0 { ((slice[i] - lo) / span * 255.0).round() as u8 } else { 0 };
        let px = match (cp[i], cg[i]) {
            (true, true) => BOTH,
            (true, false) => PRED,
            (false, true) => GT,
            (false, false) => [g; 3],
        };
        rgb.extend_from_slice(&px);
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| EvalError::Png(e.to_string()))?;
        writer.write_image_data(&rgb).map_err(|e| EvalError::Png(e.to_string()))?;
    }
    Ok(out)
}

pub fn save_overlay(path: &Path, volume: &ImageVolume, pred: &BinaryMask, gt: &BinaryMask, z: usize) -> Result<()> {
    let bytes = render_overlay(volume, pred, gt, z)?;
    std::fs::write(path, bytes).map_err(|source| EvalError::Io { path: path.to_owned(), source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgrid::Geometry;

    fn decode(bytes: &[u8]) -> Vec<u8> {
        let mut r = png::Decoder::new(std::io::Cursor::new(bytes)).read_info().unwrap();
        let mut buf = vec![0; r.output_buffer_size().unwrap()];
        let info = r.next_frame(&mut buf).unwrap();
        buf.truncate(info.buffer_size());
        buf
    }

    fn setup() -> (ImageVolume, BinaryMask) {
        let g = Geometry::isotropic([3, 8, 8]);
        let img = ImageVolume::new(g.clone(), (0..g.len()).map(|i| (i % 64) as f32).collect()).unwrap();
        let m = BinaryMask::from_fn(g, |_, y, x| (2..6).contains(&y) && (2..6).contains(&x));
        (img, m)
    }

    #[test]
    fn empty_masks_give_plain_grayscale() {
        let (img, m) = setup();
        let e = BinaryMask::zeros(m.geometry().clone());
        let px = decode(&render_overlay(&img, &e, &e, 1).unwrap());
        assert!(px.chunks(3).all(|p| p[0] == p[1] && p[1] == p[2]));
        assert_eq!(&px[..3], &[0, 0, 0]);
        assert_eq!(&px[px.len() - 3..], &[255, 255, 255]);
    }

    #[test]
    fn identical_masks_draw_shared_contour() {
        let (img, m) = setup();
        let px = decode(&render_overlay(&img, &m, &m, 0).unwrap());
        let colored: Vec<[u8; 3]> = px.chunks(3).map(|p| [p[0], p[1], p[2]]).filter(|p| p[0] != p[1] || p[1] != p[2]).collect();
        assert_eq!(colored.len(), 12);
        assert!(colored.iter().all(|&p| p == BOTH));
        assert_eq!(render_overlay(&img, &m, &m, 0).unwrap(), render_overlay(&img, &m, &m, 0).unwrap());
        assert!(matches!(render_overlay(&img, &m, &m, 3), Err(EvalError::SliceOutOfRange { .. })));
    }
}

//! Resample an anisotropic volume to 1 mm, crop, normalize, and map a mask back.

use promptseg::evalkit::dice;
use promptseg::volgrid::*;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let g = Geometry::new([24, 60, 60], [2.5, 0.7, 0.7], [0.0, -20.0, 5.0], IDENTITY_DIRECTION)?;
    let g2 = g.clone();
    let mask = BinaryMask::from_fn(g.clone(), |z, y, x| {
        let w = g2.index_to_world([z as f64, y as f64, x as f64]);
        (w[0] - 30.0).powi(2) + (w[1] - 2.0).powi(2) + (w[2] - 25.0).powi(2) < 64.0
    });
    let head = BinaryMask::from_fn(g.clone(), |_, y, x| (y as f64 - 30.0).powi(2) + (x as f64 - 30.0).powi(2) < 500.0);
    let data = head.data().iter().zip(mask.data()).map(|(&h, &m)| 100.0 * h as f32 + 60.0 * m as f32).collect();
    let image = ImageVolume::new(g, data)?;

    let pre = Preprocessed::run(&image, &PreprocessConfig::default())?;
    println!("original  {:?} spacing {:?}", image.shape(), image.geometry().spacing);
    println!("resampled {:?}", pre.record.resampled.shape);
    println!("cropped   {:?} lower {:?} upper {:?}", pre.image.shape(), pre.record.crop.lower, pre.record.crop.upper);
    let n = pre.image.data().len() as f64;
    let mean = pre.image.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    println!("z-scored mean {mean:.2e}");

    let fwd = pre.record.forward_mask(&mask)?;
    let back = pre.record.inverse_mask(&fwd)?;
    println!("mask {} -> {} -> {} voxels, Dice after round trip {:.3}", mask.count(), fwd.count(), back.count(), dice(&mask, &back)?);
    Ok(())
}

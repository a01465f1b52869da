//! Interactive refinement: add prompts round by round, undo, export, replay,
//! and write an overlay PNG of the final round.
//!
//! The segmenter here is a hand-written region grower so the example runs
//! without trained weights.

use promptseg::evalkit::{dice, save_overlay};
use promptseg::promptsim::*;
use promptseg::segnet::{Result as SegResult, Segmenter};
use promptseg::session::{Session, SessionConfig, Transcript};
use promptseg::synthgen::{generate_case, PhantomConfig, Preset, Split};
use promptseg::volgrid::{ImageVolume, PreprocessConfig, ProbabilityMap};
use rand::SeedableRng;
use std::collections::VecDeque;
use std::sync::Arc;

/// Floods from positive stamps into voxels within `tolerance` of the stamp
/// mean intensity; negative stamps erase.
struct Grower {
    guidance: GuidanceConfig,
    tolerance: f32,
}

impl Segmenter for Grower {
    fn guidance(&self) -> &GuidanceConfig {
        &self.guidance
    }

    fn segment(&self, image: &ImageVolume, prompts: &[Prompt], prev: Option<&ProbabilityMap>) -> SegResult<ProbabilityMap> {
        let [d, h, w] = image.shape();
        let mut out = prev.map_or_else(|| vec![0.0; image.data().len()], |p| p.data().to_vec());
        let mut queue = VecDeque::new();
        for p in prompts.iter().filter(|p| p.polarity == Polarity::Positive) {
            stamp_prompt(p, [d, h, w], |i| queue.push_back(i))?;
        }
        let seeds: Vec<f32> = queue.iter().map(|&i| image.data()[i]).collect();
        let level = seeds.iter().sum::<f32>() / seeds.len().max(1) as f32;
        while let Some(i) = queue.pop_front() {
            if out[i] == 1.0 || (image.data()[i] - level).abs() > self.tolerance {
                continue;
            }
            out[i] = 1.0;
            let (z, y, x) = (i / (h * w), i / w % h, i % w);
            for (dz, dy, dx) in [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)] {
                let (nz, ny, nx) = (z as i64 + dz, y as i64 + dy, x as i64 + dx);
                if nz >= 0 && ny >= 0 && nx >= 0 && (nz as usize) < d && (ny as usize) < h && (nx as usize) < w {
                    queue.push_back((nz as usize * h + ny as usize) * w + nx as usize);
                }
            }
        }
        for p in prompts.iter().filter(|p| p.polarity == Polarity::Negative) {
            stamp_prompt(p, [d, h, w], |i| out[i] = 0.0)?;
        }
        Ok(ProbabilityMap::new(image.geometry().clone(), out)?)
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let case = generate_case(&PhantomConfig::preset(Preset::Easy, 48, 9), 0, Split::Val)?;
    let model: Arc<dyn Segmenter> = Arc::new(Grower { guidance: GuidanceConfig::default(), tolerance: 0.8 });
    let pp = PreprocessConfig::default();
    let mut s = Session::from_raw(&case.id, &case.image, &pp, model.clone(), SessionConfig::default())?;
    let gt = s.state().record.forward_mask(&case.mask)?;

    let cfg = GuidanceConfig::default();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    s.add_prompts(simulate_point_prompts(&gt, &mut rng, &cfg)?)?;
    println!("round 1 dice {:.3}", dice(s.current_mask().unwrap(), &gt)?);
    while s.round() < 6 {
        let current = s.current_mask().expect("a round was added").clone();
        let missed = gt.minus(&current)?.count();
        let extra = current.minus(&gt)?.count();
        let click = if missed >= extra {
            corrective_point(&gt, &current, &mut rng, &cfg)?
        } else {
            corrective_negative_point(&gt, &current, &mut rng, &cfg)?
        };
        let Some(p) = click else { break };
        let d = dice(s.add_prompt(p)?, &gt)?;
        println!("round {} dice {d:.3}", s.round());
    }

    let exported = s.export()?;
    println!("exported {:?} mask, dice vs original GT {:.3}", exported.shape(), dice(&exported, &case.mask)?);

    let path = std::env::temp_dir().join("session_transcript.json");
    s.transcript().save(&path)?;
    let mut again = Session::from_raw(&case.id, &case.image, &pp, model, SessionConfig::default())?;
    again.replay(&Transcript::load(&path)?)?;
    println!("replay from {} identical: {}", path.display(), again.current_mask() == s.current_mask());

    let z = gt.slice_areas().iter().enumerate().max_by_key(|(_, a)| **a).map(|(z, _)| z).unwrap_or(0);
    let png = std::env::temp_dir().join("session_overlay.png");
    save_overlay(&png, s.image(), s.current_mask().unwrap(), &gt, z)?;
    println!("overlay of slice {z} -> {}", png.display());

    while s.round() > 0 {
        s.undo()?;
    }
    println!("undone to round {}", s.round());
    Ok(())
}

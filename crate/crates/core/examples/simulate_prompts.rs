//! Draw every prompt type from a phantom's ground truth and print the wire JSON.

use promptseg::promptsim::*;
use promptseg::synthgen::{generate_case, PhantomConfig, Preset, Split};
use rand::SeedableRng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let case = generate_case(&PhantomConfig::preset(Preset::Easy, 48, 3), 0, Split::Val)?;
    let cfg = GuidanceConfig::default();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    println!("slice areas: {:?}", case.mask.slice_areas().iter().filter(|&&a| a > 0).collect::<Vec<_>>());
    for t in [PromptType::Point, PromptType::Box, PromptType::Lasso, PromptType::Scribble] {
        for p in simulate_prompts(t, &case.mask, &mut rng, &cfg)? {
            let stamped = rasterize_prompt(&p, case.mask.geometry())?;
            let inside = stamped.data().iter().zip(case.mask.data()).filter(|(&a, &b)| a == 1 && b == 1).count();
            println!("{:<8} {} voxels ({} inside GT) {}", t.name(), stamped.count(), inside, p.to_json());
        }
    }
    let mut pred = case.mask.clone();
    for (z, y, x) in case.mask.foreground_indices().iter().step_by(3).map(|c| (c[0], c[1], c[2])) {
        pred.set(z, y, x, false);
    }
    if let Some(p) = corrective_point(&case.mask, &pred, &mut rng, &cfg)? {
        println!("corrective {}", p.to_json());
    }
    Ok(())
}

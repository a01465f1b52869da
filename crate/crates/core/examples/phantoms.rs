//! Generate a small phantom dataset on disk and summarize it.
//!
//!     cargo run --example phantoms -- /tmp/phantoms

use promptseg::synthgen::{component_count, generate_dataset, load_dataset, PhantomConfig, Preset};
use std::path::PathBuf;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("promptseg-phantoms"));
    for (preset, dir) in [(Preset::Easy, "easy"), (Preset::Hard, "hard")] {
        let dir = out.join(dir);
        let manifest = generate_dataset(&PhantomConfig::preset(preset, 48, 7), 3, 2, &dir)?;
        println!("{preset:?}: {} cases in {}", manifest.cases.len(), dir.display());
        for case in load_dataset(&dir)? {
            let (lo, hi) = case.image.min_max();
            println!(
                "  {} {:?} tumor voxels {:5} components {} intensity [{lo:.2}, {hi:.2}]",
                case.id,
                case.split,
                case.mask.count(),
                component_count(&case.mask)
            );
        }
    }
    Ok(())
}

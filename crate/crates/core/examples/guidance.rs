//! Encode prompts into the network input stack in both channel layouts.

use promptseg::promptsim::*;
use promptseg::volgrid::{Geometry, ImageVolume, ProbabilityMap};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let g = Geometry::isotropic([16, 32, 32]);
    let image = ImageVolume::new(g.clone(), (0..g.len()).map(|i| (i % 7) as f32 - 3.0).collect())?;
    let prev = ProbabilityMap::new(g.clone(), vec![0.25; g.len()])?;
    let prompts = [
        Prompt::point([8, 16, 16], 2, Polarity::Positive),
        Prompt::bbox(8, [10, 10], [22, 24], Polarity::Positive),
        Prompt::lasso(9, vec![[8, 8], [8, 20], [20, 20], [20, 8]], Polarity::Positive),
        Prompt::scribble(7, vec![[12, 12], [14, 18], [18, 15]], 2, Polarity::Negative),
    ];
    for layout in [GuidanceLayout::Shared, GuidanceLayout::PerType] {
        let cfg = GuidanceConfig { layout, ..Default::default() };
        let stack = encode_guidance(&prompts, Some(&prev), &image, &cfg)?;
        let lit: Vec<usize> = (2..stack.channels()).map(|c| stack.channel(c).iter().filter(|&&v| v > 0.0).count()).collect();
        println!("{layout:?}: {} channels, lit voxels per guidance channel {lit:?}", stack.channels());
    }
    Ok(())
}

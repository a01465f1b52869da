//! Train a small network on easy phantoms and save the weights.
//!
//!     cargo run --example train_toy -- /tmp/toy.psw [epochs]

use promptseg::promptsim::{GuidanceConfig, GuidanceLayout};
use promptseg::segnet::{train, NetworkConfig, TrainConfig};
use promptseg::synthgen::{generate_cases, PhantomConfig, Preset};
use std::path::PathBuf;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("toy.psw"));
    let epochs = args.next().map(|s| s.parse()).transpose()?.unwrap_or(4);

    let cases = generate_cases(&PhantomConfig::preset(Preset::Easy, 48, 1), 40, 8)?;
    let net = NetworkConfig::toy(GuidanceLayout::Shared);
    let cfg = TrainConfig { epochs, steps_per_epoch: 20, val_instances: 4, ..TrainConfig::toy() };
    let outcome = train(&cases, &net, &cfg, &GuidanceConfig::default(), None)?;
    for e in &outcome.history.epochs {
        println!("epoch {:2} lr {:.5} loss {:.4} val dice {:?}", e.epoch, e.learning_rate, e.train_loss, e.val_dice);
    }
    outcome.weights.save(&out)?;
    println!("kept epoch {} -> {}", outcome.history.best_epoch, out.display());
    Ok(())
}

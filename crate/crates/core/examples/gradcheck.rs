//! Compare backpropagated gradients of the toy network with central differences.

use promptseg::promptsim::GuidanceLayout;
use promptseg::segnet::{gradient_check, NetworkConfig, Tensor, UNet};
use rand::{Rng, SeedableRng};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = UNet::build(&NetworkConfig::toy(GuidanceLayout::Shared))?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let params = net.init_params::<f64, _>(&mut rng);
    println!("{} tensors, {} parameters", params.len(), params.num_scalars());
    let x = Tensor::from_vec([1, 4, 8, 8, 8], (0..2048).map(|_| rng.random_range(-1.0..1.0)).collect());
    let t = Tensor::from_vec([1, 1, 8, 8, 8], (0..512).map(|i| (i % 64 > 20 && i / 64 > 2) as u8 as f64).collect());
    let report = gradient_check(&net, &params, &x, &t, 40, 1e-5, &mut rng)?;
    for p in report.probes.iter().take(8) {
        println!("{:<28} [{:5}] analytic {:+.6e} numeric {:+.6e} rel {:.1e}", p.param, p.index, p.analytic, p.numeric, p.rel_error);
    }
    println!("max relative error over {} probes: {:.2e}", report.probes.len(), report.max_rel_error());
    Ok(())
}

//! Simulated-interaction benchmark over every prompt type.
//!
//! With a weights file the network is evaluated; without one the oracle and
//! all-background bounds are shown.
//!
//!     cargo run --example benchmark -- [/tmp/toy.psw]

use promptseg::evalkit::*;
use promptseg::promptsim::PromptType;
use promptseg::segnet::load_weights;
use promptseg::synthgen::{generate_cases, PhantomConfig, Preset};

fn main() -> std::result::Result<(), Box<dyn std::error::Error>> {
    let cases = generate_cases(&PhantomConfig::preset(Preset::Hard, 48, 2), 0, 6)?;
    let models: Vec<Box<dyn BenchModel>> = match std::env::args().nth(1) {
        Some(p) => vec![Box::new(NetworkModel::from_weights("toy", &load_weights(p.as_ref(), None)?)?)],
        None => vec![Box::new(OracleModel), Box::new(AllBackgroundModel)],
    };
    let mut rows = Vec::new();
    for t in PromptType::ALL {
        for m in &models {
            let r = run_benchmark(m.as_ref(), &cases, &BenchmarkConfig::new(t, 2, 0))?;
            rows.push(r.row());
        }
    }
    print!("{}", format_table(&rows));
    Ok(())
}

//! Runs one ablation suite on the static toy scene and prints the CSV table.
//!
//! ```text
//! cargo run --release --example ablation_grid -- scales 1000
//! ```

use kplanes::ablation::{rows_csv, run_suite, Suite};
use kplanes::scene_io::{make_toy_scene, ToySpec, TrainConfig};

fn main() -> kplanes::Result<()> {
    let mut args = std::env::args().skip(1);
    let suite: Suite = args.next().as_deref().unwrap_or("hadamard").parse()?;
    let iterations = args.next().map_or(300, |s| s.parse().expect("iteration count"));
    let (spec, mut base) = match suite {
        Suite::Smoothness => (ToySpec::dynamic_scene(), TrainConfig::toy_dynamic()),
        _ => (ToySpec::static_scene(), TrainConfig::toy_static()),
    };
    base.schedule.iterations = iterations;
    let (ds, _) = make_toy_scene(&spec, 0);
    print!("{}", rows_csv(&run_suite(suite, &base, &ds)?));
    Ok(())
}

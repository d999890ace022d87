//! Trains the eight-view procedural static scene and writes a held-out
//! render next to its ground truth.
//!
//! ```text
//! cargo run --release --example train_static -- 2000 /tmp/kplanes-static
//! ```

use kplanes::optim::{evaluate_frames, train, TrainOutput, TrainState};
use kplanes::scene_io::{make_toy_scene, ToySpec, TrainConfig};

fn main() -> kplanes::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let iterations = args.next().map_or(1000, |s| s.parse().expect("iteration count"));
    let out = std::path::PathBuf::from(args.next().unwrap_or_else(|| "kplanes-static".into()));

    let (ds, _) = make_toy_scene(&ToySpec::static_scene(), 0);
    let mut config = TrainConfig::toy_static();
    config.schedule.iterations = iterations;
    config.output.log_every = 250;
    let mut state = TrainState::new(config, &ds)?;
    let report = train(&mut state, &ds, &TrainOutput { dir: Some(out.clone()) })?;
    if let Some((psnr, ssim)) = report.final_val() {
        println!("validation psnr {psnr:.2} dB, ssim {ssim:.3}");
    }
    let (_, _, images) = evaluate_frames(&state.model, &ds.val[..1])?;
    images[0].save_png(out.join("val0.png"))?;
    ds.val[0].image.save_png(out.join("val0_gt.png"))?;
    println!("wrote {}", out.display());
    Ok(())
}

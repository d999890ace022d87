//! Fits the moving-sphere video, splits a view into its static and dynamic
//! parts and exports the space-time planes.
//!
//! ```text
//! cargo run --release --example dynamic_decomposition -- 1500 /tmp/kplanes-dynamic
//! ```

use kplanes::optim::{train, TrainOutput, TrainState};
use kplanes::planes::plane_pairs;
use kplanes::scene_io::{export_time_plane_image, make_toy_scene, mass_inside, ToySpec, TrainConfig};

fn main() -> kplanes::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations = args.next().map_or(1000, |s| s.parse().expect("iteration count"));
    let out = std::path::PathBuf::from(args.next().unwrap_or_else(|| "kplanes-dynamic".into()));
    std::fs::create_dir_all(&out).map_err(|e| kplanes::Error::io(&out, e))?;

    let (ds, scene) = make_toy_scene(&ToySpec::dynamic_scene(), 0);
    let mut config = TrainConfig::toy_dynamic();
    config.schedule.iterations = iterations;
    let mut state = TrainState::new(config, &ds)?;
    train(&mut state, &ds, &TrainOutput::default())?;

    let cam = &ds.train[0].camera;
    let mask = scene.motion_mask(cam, 16);
    for t in [0.0, 0.5, 1.0] {
        let d = state.model.decompose(cam, Some(t), None)?;
        println!("t = {t}: {:.1}% of the dynamic residual lies on moving pixels", 100.0 * mass_inside(&d.dynamic, &mask));
        d.full.save_png(out.join(format!("full_t{t}.png")))?;
        d.static_part.save_png(out.join(format!("static_t{t}.png")))?;
        d.dynamic.save_png(out.join(format!("dynamic_t{t}.png")))?;
    }
    for axes in plane_pairs(4).into_iter().filter(|&(_, b)| b == 3) {
        let name = kplanes::planes::pair_name(axes);
        export_time_plane_image(&state.model.field, 0, axes, out.join(format!("plane_{name}.png")))?;
    }
    println!("wrote {}", out.display());
    Ok(())
}

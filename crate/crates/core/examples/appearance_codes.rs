//! Per-image appearance codes on the variable-lighting toy scene: renders a
//! strip interpolating between two codes and confirms the opacity never moves.
//!
//! ```text
//! cargo run --release --example appearance_codes -- 600 /tmp/kplanes-appearance
//! ```

use kplanes::decoders::DecoderKind;
use kplanes::optim::{train, TrainOutput, TrainState};
use kplanes::scene_io::{make_toy_scene, ToySpec, TrainConfig};

fn main() -> kplanes::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations = args.next().map_or(600, |s| s.parse().expect("iteration count"));
    let out = std::path::PathBuf::from(args.next().unwrap_or_else(|| "kplanes-appearance".into()));
    std::fs::create_dir_all(&out).map_err(|e| kplanes::Error::io(&out, e))?;

    let (ds, _) = make_toy_scene(&ToySpec::appearance_scene(), 0);
    let mut config = TrainConfig::toy_static();
    config.decoder.kind = DecoderKind::Hybrid;
    config.decoder.appearance_dim = 8;
    config.schedule.iterations = iterations;
    let mut state = TrainState::new(config, &ds)?;
    train(&mut state, &ds, &TrainOutput::default())?;

    let table = state.model.appearance.as_ref().expect("appearance codes");
    let (a, b) = (0, table.len() - 1);
    let cam = &ds.val[0].camera;
    let mut reference = None;
    for (k, alpha) in [0.0, 0.25, 0.5, 0.75, 1.0].into_iter().enumerate() {
        let code = table.interpolate(a, b, alpha)?;
        let r = state.model.render_image(cam, None, Some(&code), false)?;
        let same = reference.get_or_insert_with(|| r.opacity.clone()) == &r.opacity;
        println!("alpha {alpha:.2}: opacity identical to alpha 0: {same}");
        r.rgb.save_png(out.join(format!("interp_{k}.png")))?;
    }
    println!("wrote {}", out.display());
    Ok(())
}

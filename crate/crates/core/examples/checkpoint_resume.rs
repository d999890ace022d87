//! Training, interrupting at a checkpoint and resuming gives the same
//! metrics as an uninterrupted run.
//!
//! ```text
//! cargo run --release --example checkpoint_resume
//! ```

use kplanes::optim::{train, TrainOutput, TrainState};
use kplanes::scene_io::{load_checkpoint, make_toy_scene, ToySpec, TrainConfig};

fn main() -> kplanes::Result<()> {
    let mut spec = ToySpec::static_scene();
    spec.width = 24;
    spec.height = 24;
    let (ds, _) = make_toy_scene(&spec, 0);
    let mut config = TrainConfig::toy_static();
    config.field.resolutions = vec![16, 32];
    config.schedule.iterations = 200;
    config.output.log_every = 50;
    config.output.checkpoint_every = 100;

    let dir = std::env::temp_dir().join("kplanes-resume");
    let mut straight = TrainState::new(config, &ds)?;
    let full = train(&mut straight, &ds, &TrainOutput { dir: Some(dir.clone()) })?;

    let mut resumed = load_checkpoint(dir.join("ckpt_000100.kplckpt"))?;
    let tail = train(&mut resumed, &ds, &TrainOutput::default())?;
    for row in &tail.rows {
        let twin = full.rows.iter().find(|r| r.stats.iteration == row.stats.iteration).unwrap();
        println!("iteration {:>4}: loss {:.6e} resumed, {:.6e} straight", row.stats.iteration, row.stats.loss, twin.stats.loss);
    }
    println!("final models identical: {}", resumed.model == straight.model);
    Ok(())
}

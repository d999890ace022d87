//! Writes a procedural scene in the transforms layout, reads it back and
//! compares the round-tripped images.
//!
//! ```text
//! cargo run --example dataset_io -- /tmp/kplanes-data
//! ```

use kplanes::scene_io::{load_transforms_dataset, make_toy_scene, psnr, write_transforms_dataset, ToySpec};

fn main() -> kplanes::Result<()> {
    let dir = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "kplanes-data".into()));
    let mut spec = ToySpec::dynamic_scene();
    spec.frames = 4;
    let (ds, _) = make_toy_scene(&spec, 0);
    write_transforms_dataset(&ds, &dir)?;
    let back = load_transforms_dataset(&dir, None)?;
    println!("{:?}: {} train, {} val, {} test frames", back.kind, back.train.len(), back.val.len(), back.test.len());
    for (a, b) in ds.train.iter().zip(&back.train).take(3) {
        println!("{} -> {}: {:.1} dB after 8-bit quantization", a.file_path, b.file_path, psnr(&a.image, &b.image));
    }
    Ok(())
}

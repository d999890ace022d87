//! Plane regularizers on a freshly initialized 4D field and IST pixel
//! weights on the moving-sphere toy video.
//!
//! ```text
//! cargo run --release --example regularizers
//! ```

use kplanes::losses::{field_regularizer_values, ist_weights, IstOptions};
use kplanes::planes::{Combine, FieldSpec, KPlaneField};
use kplanes::scene_io::{make_toy_scene, ToySpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> kplanes::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let spec = FieldSpec {
        dims: 4,
        resolutions: vec![8, 16],
        feature_dims: vec![4, 4],
        time_resolution: 8,
        bounds: vec![[-1.0, 1.0], [-1.0, 1.0], [-1.0, 1.0], [0.0, 1.0]],
        combine: Combine::Multiply,
    };
    let mut field = KPlaneField::random(spec, &mut rng)?;
    println!("at init:   {:?}", field_regularizer_values(&field));
    for p in field.planes_mut().filter(|p| p.is_spacetime()) {
        p.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.1..0.1));
    }
    println!("perturbed: {:?}", field_regularizer_values(&field));

    let (ds, scene) = make_toy_scene(&ToySpec::dynamic_scene(), 0);
    let table = ist_weights(&ds.camera_videos(), IstOptions::default())?;
    let cam = &ds.train[0].camera;
    let mask = scene.motion_mask(cam, 16);
    let (mut moving, mut still) = (0.0, 0.0);
    for (p, m) in mask.iter().enumerate() {
        let w = table.weight(0, 0, p);
        if *m {
            moving += w;
        } else {
            still += w;
        }
    }
    let n_moving = mask.iter().filter(|m| **m).count() as f64;
    let n_still = mask.len() as f64 - n_moving;
    println!(
        "IST weight per pixel, first frame of camera 0: moving {:.3e}, static {:.3e}",
        moving / n_moving,
        still / n_still
    );
    Ok(())
}

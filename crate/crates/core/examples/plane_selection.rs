//! Multiplying plane features selects a single point; adding them lights up
//! whole slabs.
//!
//! ```text
//! cargo run --example plane_selection
//! ```

use kplanes::planes::{Combine, FieldSpec, KPlaneField};

fn main() -> kplanes::Result<()> {
    for combine in [Combine::Multiply, Combine::Add] {
        let spec = FieldSpec {
            dims: 3,
            resolutions: vec![4],
            feature_dims: vec![1],
            time_resolution: 1,
            bounds: vec![[0.0, 4.0]; 3],
            combine,
        };
        let mut field = KPlaneField::constant(spec, 0.0)?;
        // one bright node per plane, all consistent with the point (1, 2, 1)
        for (plane, (i, j)) in field.planes_mut().zip([(1, 2), (1, 1), (2, 1)]) {
            plane.feature_mut(i, j)[0] = 1.0;
        }
        let mut lit = 0;
        let n = 17;
        for x in 0..n {
            for y in 0..n {
                for z in 0..n {
                    let q = [x, y, z].map(|v| v as f64 * 0.25);
                    if field.eval_features(&q)[0] != 0.0 {
                        lit += 1;
                    }
                }
            }
        }
        println!("{combine:?}: {lit} of {} lattice points have nonzero features", n * n * n);
    }
    Ok(())
}

//! Compositing a hand-built density profile, the ln 2 halving example and the
//! unbounded-scene contraction.
//!
//! ```text
//! cargo run --example volume_rendering
//! ```

use kplanes::render::{contract_linf, volume_render};

fn main() {
    // a thin red slab in front of a thicker blue one, on a white background
    let sigmas = [0.0, 8.0, 0.0, 2.0];
    let deltas = [0.5, 0.1, 0.3, 0.4];
    let colors = [[0.0; 3], [1.0, 0.1, 0.1], [0.0; 3], [0.1, 0.2, 1.0]];
    let c = volume_render(&sigmas, &deltas, &colors, [1.0; 3]);
    println!("rgb {:.4?} opacity {:.4}", c.rgb, c.opacity);
    println!("weights {:.4?}", c.weights);

    let ln2 = std::f64::consts::LN_2;
    let halving = volume_render(&[ln2; 3], &[1.0; 3], &[[1.0; 3]; 3], [0.0; 3]);
    println!("ln2 weights {:?}", halving.weights);

    for x in [[0.5, -0.2, 0.9], [3.0, 0.0, 0.0], [100.0, -50.0, 2.0]] {
        println!("contract({x:?}) = {:.4?}", contract_linf(x));
    }
}

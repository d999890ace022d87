//! Decoding one plane feature vector with the explicit (learned color basis)
//! and hybrid (small MLP) decoders. The hybrid decoder takes an appearance
//! code that changes color but never density.
//!
//! ```text
//! cargo run --example decoders
//! ```

use kplanes::decoders::{Decoder, DecoderKind, DecoderSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> kplanes::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let f: Vec<f64> = (0..16).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let dir = [0.0, 0.6, -0.8];

    let explicit = Decoder::new(&DecoderSpec::new(DecoderKind::Linear, 16), &mut rng)?;
    let out = explicit.decode_once(&f, dir, None)?;
    println!("explicit: rgb {:.4?} raw sigma {:.4}", out.rgb, out.sigma);

    let mut spec = DecoderSpec::new(DecoderKind::Hybrid, 16);
    spec.appearance_dim = 4;
    let hybrid = Decoder::new(&spec, &mut rng)?;
    for code in [[0.0; 4], [0.8, -0.3, 0.1, 0.5]] {
        let out = hybrid.decode_once(&f, dir, Some(&code))?;
        println!("hybrid code {code:?}: rgb {:.4?} raw sigma {:.6}", out.rgb, out.sigma);
    }
    Ok(())
}

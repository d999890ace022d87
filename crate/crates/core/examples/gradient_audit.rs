//! Checks the hand-written backward pass against central differences on a
//! small hybrid model with proposal sampling.
//!
//! ```text
//! cargo run --release --example gradient_audit
//! ```

use kplanes::decoders::DecoderKind;
use kplanes::model::Sampler;
use kplanes::optim::{finite_difference_audit, AuditOptions, TrainState};
use kplanes::scene_io::{make_toy_scene, ToySpec, TrainConfig};

fn main() -> kplanes::Result<()> {
    let mut spec = ToySpec::static_scene();
    spec.width = 8;
    spec.height = 8;
    spec.supersample = 1;
    let (ds, _) = make_toy_scene(&spec, 0);
    let mut c = TrainConfig::default();
    c.field.resolutions = vec![4, 8];
    c.field.feature_dims = vec![4, 4];
    c.decoder.kind = DecoderKind::Hybrid;
    c.decoder.hidden_width = 8;
    c.sampler = Sampler::Proposal { stages: vec![8], samples: 6 };
    c.proposal.resolution = 8;
    c.proposal.hidden_width = 4;
    let state = TrainState::new(c, &ds)?;
    let report = finite_difference_audit(&state, &ds, AuditOptions { params: 120, ..AuditOptions::default() })?;
    for g in report.groups() {
        let worst = report
            .samples
            .iter()
            .filter(|s| s.group == g)
            .map(|s| s.rel_error)
            .fold(0.0, f64::max);
        println!("{g:>16}: worst relative error {worst:.2e}");
    }
    println!("overall {:.2e} over {} parameters", report.max_rel_error, report.samples.len());
    Ok(())
}

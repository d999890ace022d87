#![allow(dead_code)]

use kplanes::planes::{interp_bilinear, project, Combine, FieldSpec, KPlaneField};

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn unit_spec(dims: usize, resolutions: &[usize], m: usize, time_res: usize) -> FieldSpec {
    let mut bounds = vec![[-1.0, 1.0]; dims.min(3)];
    if dims == 4 {
        bounds.push([0.0, 1.0]);
    }
    FieldSpec {
        dims,
        resolutions: resolutions.to_vec(),
        feature_dims: vec![m; resolutions.len()],
        time_resolution: time_res,
        bounds,
        combine: Combine::Multiply,
    }
}

/// One positive node per plane on a 4^3 grid, queried on a dense lattice.
///
/// Returns `(support of the combined field, support predicted from the
/// individual planes)`, where the prediction intersects the per-plane
/// supports under multiplication and unions them under addition.
pub fn selection_supports(combine: Combine) -> (Vec<bool>, Vec<bool>) {
    let spec = FieldSpec {
        dims: 3,
        resolutions: vec![4],
        feature_dims: vec![1],
        time_resolution: 2,
        bounds: vec![[0.0, 4.0]; 3],
        combine,
    };
    let mut field = KPlaneField::constant(spec, 0.0).unwrap();
    let nodes = [(1, 2), (1, 1), (2, 1)]; // xy, xz, yz
    for (plane, (i, j)) in field.scales_mut()[0].planes.iter_mut().zip(nodes) {
        plane.feature_mut(i, j)[0] = 1.0;
    }
    let steps = 17;
    let mut combined = Vec::new();
    let mut predicted = Vec::new();
    for a in 0..steps {
        for b in 0..steps {
            for c in 0..steps {
                let q = [a as f64 * 0.25, b as f64 * 0.25, c as f64 * 0.25];
                combined.push(field.eval_features(&q)[0] != 0.0);
                let (g, _) = field.normalize_coord(&q, 0);
                let each: Vec<bool> = field.scales()[0]
                    .planes
                    .iter()
                    .map(|p| interp_bilinear(p, project(&g, p.axes()))[0] != 0.0)
                    .collect();
                predicted.push(match combine {
                    Combine::Multiply => each.iter().all(|x| *x),
                    Combine::Add => each.iter().any(|x| *x),
                });
            }
        }
    }
    (combined, predicted)
}

use kplanes::decoders::DecoderKind;
use kplanes::model::Sampler;
use kplanes::optim::TrainState;
use kplanes::params::Parameters;
use kplanes::scene_io::config::TrainConfig;
use kplanes::scene_io::dataset::SceneDataset;
use kplanes::scene_io::toy::{make_toy_scene, ToySpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny(mut spec: ToySpec, size: usize) -> ToySpec {
    spec.width = size;
    spec.height = size;
    spec.supersample = 1;
    spec
}

/// Static 3D scene, explicit decoder, uniform sampling.
pub fn micro_explicit() -> (TrainState, SceneDataset) {
    let mut spec = tiny(ToySpec::static_scene(), 8);
    spec.views = 2;
    spec.val_views = 0;
    let (ds, _) = make_toy_scene(&spec, 1);
    let mut c = TrainConfig::default();
    c.seed = 3;
    c.field.resolutions = vec![4, 6];
    c.field.feature_dims = vec![3, 2];
    c.decoder.kind = DecoderKind::Linear;
    c.decoder.hidden_width = 8;
    c.sampler = Sampler::Uniform { samples: 6 };
    c.loss.tv_space = 0.3;
    (TrainState::new(c, &ds).unwrap(), ds)
}

/// 4D video, hybrid decoder with appearance codes and two proposal
/// stages. Time planes and codes are moved off their initial values so
/// every group carries gradient.
pub fn micro_full() -> (TrainState, SceneDataset) {
    let mut spec = tiny(ToySpec::dynamic_scene(), 8);
    spec.views = 2;
    spec.frames = 3;
    spec.val_views = 0;
    let (ds, _) = make_toy_scene(&spec, 2);
    let mut c = TrainConfig::default();
    c.seed = 4;
    c.field.dims = 4;
    c.field.resolutions = vec![4];
    c.field.feature_dims = vec![4];
    c.field.time_resolution = 3;
    c.decoder.kind = DecoderKind::Hybrid;
    c.decoder.hidden_width = 8;
    c.decoder.geo_features = 3;
    c.decoder.appearance_dim = 2;
    c.sampler = Sampler::Proposal { stages: vec![6, 5], samples: 4 };
    c.proposal.resolution = 4;
    c.proposal.feature_dim = 2;
    c.proposal.hidden_width = 4;
    c.loss.tv_space = 0.2;
    c.loss.smooth_time = 0.1;
    c.loss.sparse_transients = 0.05;
    let mut state = TrainState::new(c, &ds).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for p in state.model.field.planes_mut().filter(|p| p.is_spacetime()) {
        for v in p.data_mut() {
            *v = 1.0 + rng.gen_range(0.05..0.3) * if rng.gen() { 1.0 } else { -1.0 };
        }
    }
    if let Some(table) = state.model.appearance.as_mut() {
        for t in table.tensors_mut() {
            t.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
        }
    }
    (state, ds)
}

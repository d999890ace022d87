mod common;

use common::{rel_err, selection_supports, unit_spec};
use kplanes::params::Parameters;
use kplanes::planes::{interp_bilinear, plane_pairs, Combine, FeatureMode, KPlaneField, PlaneGrid};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn randomized(dims: usize, scales: usize, m: usize, combine: Combine, seed: u64) -> KPlaneField {
    let res: Vec<usize> = [3, 5].iter().take(scales).copied().collect();
    let mut spec = unit_spec(dims, &res, m, 4);
    spec.combine = combine;
    let mut field = KPlaneField::constant(spec, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in field.tensors_mut() {
        for v in t.iter_mut() {
            *v = rng.gen_range(0.3..1.7);
        }
    }
    field
}

fn random_point(rng: &mut impl Rng, dims: usize) -> Vec<f64> {
    let mut q: Vec<f64> = (0..dims.min(3)).map(|_| rng.gen_range(-0.95..0.95)).collect();
    if dims == 4 {
        q.push(rng.gen_range(0.02..0.98));
    }
    q
}

#[test]
fn colex_plane_order() {
    assert_eq!(plane_pairs(3), vec![(0, 1), (0, 2), (1, 2)]);
    assert_eq!(plane_pairs(4), vec![(0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3)]);
}

#[test]
fn multiplication_selects_intersection() {
    let (combined, predicted) = selection_supports(Combine::Multiply);
    assert_eq!(combined, predicted);
    assert!(combined.iter().any(|x| *x));
}

#[test]
fn addition_selects_union_of_slabs() {
    let (combined, predicted) = selection_supports(Combine::Add);
    assert_eq!(combined, predicted);
    let (product, _) = selection_supports(Combine::Multiply);
    let n_add = combined.iter().filter(|x| **x).count();
    let n_mul = product.iter().filter(|x| **x).count();
    assert!(n_add > n_mul, "union {n_add} should exceed intersection {n_mul}");
}

#[test]
fn random_init_keeps_time_planes_at_one() {
    let field = KPlaneField::random(unit_spec(4, &[4, 8], 3, 5), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    for p in field.planes() {
        if p.is_spacetime() {
            assert!(p.data().iter().all(|v| *v == 1.0));
        } else {
            let h = 2.0 * 0.1f64.powf(1.0 / 3.0);
            assert!(p.data().iter().all(|v| v.abs() <= h));
        }
    }
}

#[test]
fn static_mode_equals_ones_in_time_planes() {
    let field = randomized(4, 2, 3, Combine::Multiply, 11);
    let mut ones = field.clone();
    for p in ones.planes_mut().filter(|p| p.is_spacetime()) {
        p.data_mut().fill(1.0);
    }
    let q = [0.1, -0.4, 0.7, 0.3];
    assert_eq!(field.eval_features_static(&q).unwrap(), ones.eval_features(&q));
}

#[test]
fn backprop_matches_central_differences_everywhere() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for dims in [3, 4] {
        for scales in [1, 2] {
            for m in [1, 4] {
                for combine in [Combine::Multiply, Combine::Add] {
                    let field = randomized(dims, scales, m, combine, rng.gen());
                    let q = random_point(&mut rng, dims);
                    let up: Vec<f64> = (0..field.feature_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let loss = |f: &KPlaneField| -> f64 { f.eval_features(&q).iter().zip(&up).map(|(a, b)| a * b).sum() };
                    let mut grads = field.zero_grads();
                    field.backprop_features(&q, &up, &mut grads).unwrap();
                    let h = 1e-4;
                    for (t, g) in grads.tensors.iter().enumerate() {
                        for (i, analytic) in g.iter().enumerate() {
                            let mut plus = field.clone();
                            plus.tensors_mut()[t][i] += h;
                            let mut minus = field.clone();
                            minus.tensors_mut()[t][i] -= h;
                            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
                            let e = rel_err(*analytic, numeric, 1e-8);
                            assert!(
                                e <= 1e-5,
                                "d={dims} S={scales} M={m} {combine:?} tensor {t}[{i}]: {analytic} vs {numeric}"
                            );
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn backprop_rejects_wrong_length_and_non_finite() {
    let field = randomized(3, 1, 2, Combine::Multiply, 1);
    let mut g = field.zero_grads();
    assert!(field.backprop_features(&[0.0; 3], &[1.0], &mut g).is_err());
    let bad = vec![f64::NAN; field.feature_len()];
    let err = field.backprop_features(&[0.0; 3], &bad, &mut g).unwrap_err();
    assert!(err.is_numerical());
}

#[test]
fn invalid_dimensions_rejected() {
    for dims in [2, 5] {
        let mut spec = unit_spec(3, &[4], 2, 4);
        spec.dims = dims;
        spec.bounds = vec![[-1.0, 1.0]; dims];
        assert!(KPlaneField::constant(spec, 1.0).is_err());
    }
}

proptest! {
    #[test]
    fn constant_field_has_closed_form_features(value in -2.0f64..2.0, x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0) {
        let mut spec = unit_spec(3, &[4, 6], 2, 4);
        let f = KPlaneField::constant(spec.clone(), value).unwrap();
        for v in f.eval_features(&[x, y, z]) {
            prop_assert!((v - value.powi(3)).abs() <= 1e-12 * value.abs().powi(3).max(1.0));
        }
        spec.combine = Combine::Add;
        let f = KPlaneField::constant(spec, value).unwrap();
        for v in f.eval_features(&[x, y, z]) {
            prop_assert!((v - 3.0 * value).abs() <= 1e-12);
        }
    }

    #[test]
    fn bilinear_reproduces_affine_planes(a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0, u in 0.0f64..4.0, v in 0.0f64..3.0) {
        let (nu, nv) = (5, 4);
        let data: Vec<f64> = (0..nv).flat_map(|j| (0..nu).map(move |i| a * i as f64 + b * j as f64 + c)).collect();
        let plane = PlaneGrid::from_data((0, 1), (nu, nv), 1, false, data).unwrap();
        let got = interp_bilinear(&plane, [u, v])[0];
        prop_assert!((got - (a * u + b * v + c)).abs() <= 1e-12);
    }

    #[test]
    fn out_of_box_queries_clamp_to_the_boundary(x in 1.0f64..10.0, seed in 0u64..50) {
        let field = randomized(3, 2, 2, Combine::Multiply, seed);
        let inside = field.eval_features(&[1.0, 0.2, -0.3]);
        let outside = field.eval_features(&[x, 0.2, -0.3]);
        prop_assert_eq!(inside, outside);
    }

    #[test]
    fn static_mode_is_independent_of_time(t0 in 0.0f64..1.0, t1 in 0.0f64..1.0, seed in 0u64..50) {
        let field = randomized(4, 1, 2, Combine::Multiply, seed);
        let mut out0 = vec![0.0; field.feature_len()];
        let mut out1 = out0.clone();
        field.eval_into(&[0.3, 0.1, -0.2, t0], FeatureMode::StaticOnly, &mut out0);
        field.eval_into(&[0.3, 0.1, -0.2, t1], FeatureMode::StaticOnly, &mut out1);
        prop_assert_eq!(out0, out1);
    }
}

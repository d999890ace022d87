mod common;

use common::{rel_err, unit_spec};
use kplanes::imaging::Image;
use kplanes::losses::{
    field_regularizer_values, field_regularizers, ist_weights, photometric_loss, smooth_time_loss,
    sparse_transients_loss, tv_loss, CameraVideo, IstOptions, LossWeights,
};
use kplanes::params::Parameters;
use kplanes::planes::{KPlaneField, PlaneGrid};
use kplanes::render::Camera;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const IDENTITY: [[f64; 4]; 3] = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]];

#[test]
fn photometric_is_channel_mean() {
    let pred = [[0.1, 0.2, 0.3], [0.5, 0.5, 0.5]];
    let target = [[0.0, 0.2, 0.5], [0.5, 0.6, 0.2]];
    let want = (0.01 + 0.0 + 0.04 + 0.0 + 0.01 + 0.09) / 6.0;
    assert!((photometric_loss(&pred, &target) - want).abs() < 1e-15);
    let offset: Vec<_> = target.iter().map(|t| t.map(|v| v + 0.1)).collect();
    assert!((photometric_loss(&offset, &target) - 0.01).abs() < 1e-15);
}

#[test]
fn tv_hand_expanded_2x2() {
    // rows (0, 1): both horizontal pairs differ by 1, vertical pairs by 0
    let p = PlaneGrid::from_data((0, 1), (2, 2), 1, false, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
    assert!((tv_loss(&p) - 2.0 / 4.0).abs() < 1e-12);
    // space-time planes only difference along space
    let st = PlaneGrid::from_data((0, 3), (2, 2), 1, true, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
    assert!((tv_loss(&st) - 1.0).abs() < 1e-12);
    let st = PlaneGrid::from_data((0, 3), (2, 2), 1, true, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
    assert_eq!(tv_loss(&st), 0.0);
}

#[test]
fn tv_is_quadratic_in_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data: Vec<f64> = (0..4 * 3 * 2).map(|_| rng.gen()).collect();
    let p = PlaneGrid::from_data((0, 1), (4, 3), 2, false, data.clone()).unwrap();
    let q = PlaneGrid::from_data((0, 1), (4, 3), 2, false, data.iter().map(|v| 3.0 * v).collect()).unwrap();
    assert!(rel_err(tv_loss(&q), 9.0 * tv_loss(&p), 1e-12) < 1e-12);
}

#[test]
fn smooth_time_hand_expanded() {
    // (0, 1, 0) along time at one spatial node: one Laplacian term of 4
    let p = PlaneGrid::from_data((0, 3), (1, 3), 1, true, vec![0.0, 1.0, 0.0]).unwrap();
    assert!((smooth_time_loss(&p) - 4.0).abs() < 1e-12);
    let affine: Vec<f64> = (0..4).flat_map(|t| (0..3).map(move |x| 0.5 * t as f64 - 0.2 * x as f64 + 1.0)).collect();
    let p = PlaneGrid::from_data((0, 3), (3, 4), 1, true, affine).unwrap();
    assert!(smooth_time_loss(&p).abs() < 1e-24);
}

#[test]
fn sparse_transients_counts_deviation() {
    let mut data = vec![1.0; 6];
    let p = PlaneGrid::from_data((0, 3), (3, 2), 1, true, data.clone()).unwrap();
    assert_eq!(sparse_transients_loss([&p]), 0.0);
    data[4] = 1.5;
    let q = PlaneGrid::from_data((0, 3), (3, 2), 1, true, data).unwrap();
    assert!((sparse_transients_loss([&q]) - 0.5).abs() < 1e-15);
}

#[test]
fn regularizers_vanish_at_initialization() {
    let field = KPlaneField::random(unit_spec(4, &[4, 6], 2, 5), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let terms = field_regularizer_values(&field);
    assert_eq!(terms.sparse_transients, 0.0);
    assert_eq!(terms.smooth_time, 0.0);
    let mut g = field.zero_grads();
    let w = LossWeights { tv_space: 0.0, smooth_time: 1.0, sparse_transients: 1.0, histogram: 0.0 };
    field_regularizers(&field, &w, Some(&mut g));
    assert!(g.is_zero());
}

#[test]
fn regularizer_gradients_match_central_differences() {
    let mut field = KPlaneField::constant(unit_spec(4, &[3, 4], 2, 4), 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for t in field.tensors_mut() {
        for v in t.iter_mut() {
            // stay clear of the l1 kink at 1
            *v = if rng.gen() { rng.gen_range(0.2..0.9) } else { rng.gen_range(1.1..1.8) };
        }
    }
    let w = LossWeights { tv_space: 0.7, smooth_time: 0.3, sparse_transients: 0.2, histogram: 0.0 };
    let mut g = field.zero_grads();
    field_regularizers(&field, &w, Some(&mut g));
    let h = 1e-4;
    for (t, gt) in g.tensors.iter().enumerate() {
        for (i, a) in gt.iter().enumerate() {
            let mut p = field.clone();
            p.tensors_mut()[t][i] += h;
            let mut m = field.clone();
            m.tensors_mut()[t][i] -= h;
            let num = (field_regularizer_values(&p).weighted(&w) - field_regularizer_values(&m).weighted(&w)) / (2.0 * h);
            assert!(rel_err(*a, num, 1e-8) < 1e-6, "tensor {t}[{i}]: {a} vs {num}");
        }
    }
}

fn gray_video(frames: &[[f64; 4]]) -> Vec<Image> {
    frames.iter().map(|f| Image::from_gray(2, 2, f)).collect()
}

#[test]
fn ist_hand_computed_table() {
    let cam = Camera::from_fov(2, 2, 0.7, IDENTITY);
    let frames = gray_video(&[[0.0, 0.5, 0.0, 0.0], [0.0, 0.5, 0.2, 0.0], [0.0, 0.5, 0.0, 1.0]]);
    let video = CameraVideo { cameras: vec![&cam; 3], frames: frames.iter().collect() };
    let opts = IstOptions { window: 25, pool: 1, floor: 1e-2 };
    let table = ist_weights(&[video], opts).unwrap();
    // every frame sees variation 0.2 at pixel 2 and 1.0 at pixel 3
    let floor = 1e-2 / 12.0;
    let z = 3.0 * (0.2 + 1.0) / 3.6 + 6.0 * floor;
    for t in 0..3 {
        for (p, raw) in [(0, None), (1, None), (2, Some(0.2)), (3, Some(1.0))] {
            let want = raw.map_or(floor, |r: f64| r / 3.6) / z;
            assert!((table.weight(0, t, p) - want).abs() < 1e-15, "frame {t} pixel {p}");
        }
    }
    assert!((table.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn ist_static_video_is_uniform_and_blink_dominates() {
    let cam = Camera::from_fov(2, 2, 0.7, IDENTITY);
    let still = gray_video(&[[0.3; 4]; 4]);
    let t = ist_weights(&[CameraVideo { cameras: vec![&cam; 4], frames: still.iter().collect() }], IstOptions::default())
        .unwrap();
    assert!(t.weights.iter().all(|w| (w - 1.0 / 16.0).abs() < 1e-15));

    let blink = gray_video(&[[0.3, 0.3, 0.3, 0.0], [0.3, 0.3, 0.3, 1.0], [0.3, 0.3, 0.3, 0.0]]);
    let opts = IstOptions { pool: 1, ..IstOptions::default() };
    let t = ist_weights(&[CameraVideo { cameras: vec![&cam; 3], frames: blink.iter().collect() }], opts).unwrap();
    for f in 0..3 {
        for p in 0..3 {
            assert!(t.weight(0, f, 3) > t.weight(0, f, p));
        }
    }
}

#[test]
fn ist_rejects_moving_cameras() {
    let a = Camera::from_fov(2, 2, 0.7, IDENTITY);
    let mut moved = IDENTITY;
    moved[0][3] = 0.5;
    let b = Camera::from_fov(2, 2, 0.7, moved);
    let frames = gray_video(&[[0.0; 4], [1.0; 4]]);
    let err = ist_weights(&[CameraVideo { cameras: vec![&a, &b], frames: frames.iter().collect() }], IstOptions::default())
        .unwrap_err();
    assert!(err.to_string().contains("monocular"));
}

#[test]
fn negative_weights_rejected() {
    let w = LossWeights { tv_space: -1.0, ..LossWeights::zero() };
    assert!(w.validate().is_err());
}

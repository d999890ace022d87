mod common;

use kplanes::model::Sampler;
use kplanes::optim::{train, TrainOutput, TrainState};
use kplanes::scene_io::checkpoint::load_checkpoint;
use kplanes::scene_io::{make_toy_scene, SceneDataset, ToySpec, TrainConfig};

/// A short video run that crosses the IST switch and uses proposal sampling.
fn video_run() -> (TrainConfig, SceneDataset) {
    let mut spec = common::tiny(ToySpec::dynamic_scene(), 12);
    spec.frames = 4;
    let (ds, _) = make_toy_scene(&spec, 5);
    let mut c = TrainConfig::toy_dynamic();
    c.field.resolutions = vec![4, 8];
    c.field.feature_dims = vec![4, 4];
    c.field.time_resolution = 4;
    c.decoder.hidden_width = 8;
    c.sampler = Sampler::Proposal { stages: vec![8], samples: 8 };
    c.proposal.resolution = 8;
    c.schedule.iterations = 30;
    c.schedule.batch_size = 32;
    c.schedule.warmup = 4;
    c.output.log_every = 5;
    c.output.val_every = 10;
    c.output.checkpoint_every = 10;
    (c, ds)
}

#[test]
fn same_seed_same_metrics() {
    let (c, ds) = video_run();
    let run = || {
        let mut s = TrainState::new(c.clone(), &ds).unwrap();
        train(&mut s, &ds, &TrainOutput::default()).unwrap().csv()
    };
    let a = run();
    assert_eq!(a, run());
    let mut other = c.clone();
    other.seed += 1;
    let mut s = TrainState::new(other, &ds).unwrap();
    assert_ne!(a, train(&mut s, &ds, &TrainOutput::default()).unwrap().csv());
}

#[test]
fn resume_matches_straight_run() {
    let (c, ds) = video_run();
    assert!(c.schedule.ist_iteration() > 10 && c.schedule.ist_iteration() < 30);
    let dir = tempfile::tempdir().unwrap();
    let straight_dir = dir.path().join("straight");
    let mut s = TrainState::new(c.clone(), &ds).unwrap();
    let straight = train(&mut s, &ds, &TrainOutput { dir: Some(straight_dir.clone()) }).unwrap();

    let mut resumed = load_checkpoint(straight_dir.join("ckpt_000010.kplckpt")).unwrap();
    assert_eq!(resumed.iteration, 10);
    let tail = train(&mut resumed, &ds, &TrainOutput::default()).unwrap();
    let after: Vec<String> = straight.rows.iter().filter(|r| r.stats.iteration > 10).map(|r| r.to_csv()).collect();
    let got: Vec<String> = tail.rows.iter().map(|r| r.to_csv()).collect();
    assert_eq!(got, after);
    assert_eq!(resumed.model, s.model);
}

#[test]
fn thread_count_does_not_change_results() {
    let (c, ds) = video_run();
    let mut a = TrainState::new(c.clone(), &ds).unwrap();
    let mut b = TrainState::new(c, &ds).unwrap();
    std::env::set_var("KPLANES_THREADS", "1");
    let ra = train(&mut a, &ds, &TrainOutput::default()).unwrap();
    std::env::set_var("KPLANES_THREADS", "3");
    let rb = train(&mut b, &ds, &TrainOutput::default()).unwrap();
    std::env::remove_var("KPLANES_THREADS");
    assert_eq!(ra.csv(), rb.csv());
}

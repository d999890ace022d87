//! Training loop: ray batches, sharded backward passes and Adam.
//!
//! Every random draw comes from a ChaCha stream keyed by
//! `(seed, iteration, stream)`, so a run is reproducible from its seed and
//! iteration counter alone and can resume from any checkpoint. Gradients are
//! accumulated per worker shard and reduced in shard order; results are
//! therefore deterministic for a fixed worker count.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::losses::{field_regularizers, ist_weights, IstOptions, IstTable, RegularizerTerms};
use crate::model::{AppearanceInput, GroupKind, ModelGrads, RayQuery, RayScratch, RenderSettings, SceneModel, TrainTarget};
use crate::parallel::{map_shards, worker_count};
use crate::planes::FeatureMode;
use crate::render::{pixel_ray, DepthPlan, Ray, RaySegment};
use crate::scene_io::checkpoint::{save_checkpoint, CHECKPOINT_EXT};
use crate::scene_io::config::TrainConfig;
use crate::scene_io::dataset::{DatasetKind, Frame, SceneDataset};
use crate::scene_io::metrics::{psnr, ssim};

const STREAM_BATCH: u64 = 0;
const STREAM_RAYS: u64 = 1;

/// ChaCha stream for one `(seed, iteration, stream)` triple.
pub fn rng_for(seed: u64, iteration: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration);
    rng.set_word_pos((stream as u128) << 32);
    rng
}

/// One bias-corrected Adam update at step `t` (1-based).
#[allow(clippy::too_many_arguments)]
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
) {
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let mh = m[i] / bc1;
        let vh = v[i] / bc2;
        params[i] -= lr * mh / (vh.sqrt() + eps);
    }
}

/// First and second moments, `[group][tensor][entry]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<Vec<Vec<f64>>>,
    pub v: Vec<Vec<Vec<f64>>>,
}

impl AdamMoments {
    pub fn zeros(model: &SceneModel) -> Self {
        let m: Vec<Vec<Vec<f64>>> = model
            .groups()
            .iter()
            .map(|g| g.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect())
            .collect();
        Self { v: m.clone(), m }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub model: SceneModel,
    pub moments: AdamMoments,
    pub iteration: u64,
}

/// Scene-dependent render settings with config overrides applied.
pub fn resolve_render(config: &TrainConfig, dataset: &SceneDataset) -> RenderSettings {
    RenderSettings {
        coord_mode: config.scene.coord_mode.unwrap_or(dataset.coord_mode),
        background: config.scene.background.unwrap_or(dataset.background),
        sampler: config.sampler.clone(),
        scene_bounds: config.scene.bounds.unwrap_or(dataset.bounds),
    }
}

impl TrainState {
    /// Fresh model initialized from the configured seed.
    pub fn new(config: TrainConfig, dataset: &SceneDataset) -> Result<Self> {
        config.validate()?;
        dataset.validate()?;
        let render = resolve_render(&config, dataset);
        let spec = config.model_spec(render, dataset.appearance_count().max(dataset.train.len()));
        let mut rng = rng_for(config.seed, u64::MAX, 0);
        let model = SceneModel::new(&spec, &mut rng)?;
        let moments = AdamMoments::zeros(&model);
        Ok(Self {
            config,
            model,
            moments,
            iteration: 0,
        })
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }
}

/// Loss terms of one step (weighted as they enter the total).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    pub iteration: u64,
    pub loss: f64,
    pub photometric: f64,
    pub histogram: f64,
    /// Unweighted regularizer values.
    pub regularizers: RegularizerTerms,
    pub regularization: f64,
    pub lr_factor: f64,
}

/// One training ray with its supervision.
#[derive(Clone, Copy, Debug)]
pub struct TrainRay {
    pub frame: usize,
    pub ray: Ray,
    pub target: [f64; 3],
    /// Per-ray background override; the target is already composited on it.
    pub background: Option<[f64; 3]>,
}

/// Ray batches and their forward/backward evaluation for a dataset.
pub struct Trainer<'a> {
    pub dataset: &'a SceneDataset,
    ist: Option<(IstTable, Vec<Vec<usize>>)>,
    workers: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(state: &TrainState, dataset: &'a SceneDataset) -> Result<Self> {
        let ist = if state.config.schedule.ist && dataset.kind == DatasetKind::MultiviewVideo {
            let table = ist_weights(&dataset.camera_videos(), IstOptions::default())?;
            Some((table, dataset.camera_video_indices()))
        } else {
            None
        };
        Ok(Self {
            dataset,
            ist,
            workers: worker_count(),
        })
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    fn train_ray(&self, frame_idx: usize, pixel: usize, random_bg: bool, rng: &mut impl Rng) -> TrainRay {
        let f: &Frame = &self.dataset.train[frame_idx];
        let (row, col) = (pixel / f.image.width, pixel % f.image.width);
        let mut target = f.image.get(row, col);
        let mut background = None;
        if let (true, Some(alpha)) = (random_bg, &f.alpha) {
            // recomposite over a random color so empty space cannot hide
            // density that happens to match the dataset background
            let b: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
            let a = alpha[pixel];
            let bg = self.dataset.background;
            for k in 0..3 {
                target[k] += (1.0 - a) * (b[k] - bg[k]);
            }
            background = Some(b);
        }
        TrainRay {
            frame: frame_idx,
            ray: pixel_ray(&f.camera, (row, col), f.time, f.appearance_id.or(Some(frame_idx))),
            target,
            background,
        }
    }

    /// Rays for `iteration`: uniform over all training pixels, or importance
    /// sampled once the schedule enables it.
    pub fn batch(&self, state: &TrainState, iteration: u64) -> Vec<TrainRay> {
        let sched = &state.config.schedule;
        let mut rng = rng_for(state.seed(), iteration, STREAM_BATCH);
        let use_ist = iteration >= sched.ist_iteration() && self.ist.is_some();
        let frames = &self.dataset.train;
        let pixels = frames[0].image.pixel_count();
        let random_bg = sched.random_background;
        (0..sched.batch_size)
            .map(|_| {
                if let (true, Some((table, videos))) = (use_ist, &self.ist) {
                    let (v, t, p) = table.locate(table.sample(&mut rng));
                    self.train_ray(videos[v][t], p, random_bg, &mut rng)
                } else {
                    let flat = rng.gen_range(0..frames.len() * pixels);
                    self.train_ray(flat / pixels, flat % pixels, random_bg, &mut rng)
                }
            })
            .collect()
    }

    /// Depth plans for a batch (jittered from the per-ray streams).
    pub fn plan_batch(&self, model: &SceneModel, rays: &[TrainRay], seed: u64, iteration: u64) -> Result<Vec<Option<(RaySegment, DepthPlan)>>> {
        let mut scratch = RayScratch::default();
        rays.iter()
            .enumerate()
            .map(|(i, r)| {
                let frame = &self.dataset.train[r.frame];
                let Some(segment) = model.segment(&r.ray, &frame.camera)? else {
                    return Ok(None);
                };
                let query = ray_query(model, r, segment);
                let mut rng = rng_for(seed, iteration, STREAM_RAYS + i as u64);
                Ok(Some((segment, model.plan_depths(&query, Some(&mut rng), &mut scratch))))
            })
            .collect()
    }

    /// Photometric and histogram terms with gradients for a planned batch.
    ///
    /// `scales` are `(photometric per ray, histogram per ray)`.
    pub fn evaluate(
        &self,
        model: &SceneModel,
        rays: &[TrainRay],
        plans: &[Option<(RaySegment, DepthPlan)>],
        scales: (f64, f64),
        with_grads: bool,
    ) -> Result<(f64, f64, Option<ModelGrads>)> {
        let shards = map_shards(rays.len(), self.workers, |range| -> Result<(f64, f64, Option<ModelGrads>)> {
            let mut grads = with_grads.then(|| model.zero_grads());
            let mut scratch = RayScratch::default();
            let (mut photo, mut hist) = (0.0, 0.0);
            for i in range {
                let r = &rays[i];
                let Some((segment, plan)) = &plans[i] else {
                    let bg = r.background.unwrap_or(model.render.background);
                    photo += scales.0 * (0..3).map(|k| (bg[k] - r.target[k]).powi(2)).sum::<f64>();
                    continue;
                };
                let query = ray_query(model, r, *segment);
                let target = TrainTarget {
                    rgb: r.target,
                    photometric_scale: scales.0,
                    histogram_scale: scales.1,
                };
                let out = model.trace_ray(&query, plan, Some(&target), grads.as_mut(), &mut scratch)?;
                photo += scales.0 * out.sq_error;
                hist += scales.1 * out.histogram;
            }
            Ok((photo, hist, grads))
        });
        let mut photo = 0.0;
        let mut hist = 0.0;
        let mut total: Option<ModelGrads> = None;
        for shard in shards {
            let (p, h, g) = shard?;
            photo += p;
            hist += h;
            match (&mut total, g) {
                (None, g) => total = g,
                (Some(t), Some(g)) => t.add_assign(&g),
                _ => {}
            }
        }
        Ok((photo, hist, total))
    }

    /// Runs one optimization step in place.
    pub fn step(&self, state: &mut TrainState) -> Result<StepStats> {
        let it = state.iteration;
        let rays = self.batch(state, it);
        let plans = self.plan_batch(&state.model, &rays, state.seed(), it)?;
        let b = rays.len() as f64;
        let weights = state.config.loss;
        let scales = (1.0 / (3.0 * b), weights.histogram / b);
        let (photometric, histogram, grads) = self.evaluate(&state.model, &rays, &plans, scales, true)?;
        let mut grads = grads.expect("gradients requested");
        let regularizers = field_regularizers(&state.model.field, &weights, Some(&mut grads.field));
        let regularization = regularizers.weighted(&weights);
        let loss = photometric + histogram + regularization;
        for (term, v) in [
            ("photometric", photometric),
            ("histogram", histogram),
            ("tv_space", regularizers.tv_space),
            ("smooth_time", regularizers.smooth_time),
            ("sparse_transients", regularizers.sparse_transients),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    iteration: it,
                    term: term.into(),
                });
            }
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite {
                iteration: it,
                term: "gradients".into(),
            });
        }
        let sched = &state.config.schedule;
        let factor = sched.lr_factor(it);
        let kinds: Vec<GroupKind> = state.model.groups().iter().map(|g| g.kind).collect();
        let t = it + 1;
        for (((params, g), (m, v)), kind) in state
            .model
            .groups_mut()
            .into_iter()
            .zip(grads.groups())
            .zip(state.moments.m.iter_mut().zip(state.moments.v.iter_mut()))
            .zip(kinds)
        {
            let lr = factor
                * match kind {
                    GroupKind::Planes => sched.lr_planes,
                    GroupKind::Network => sched.lr_networks,
                };
            for (((p, g), m), v) in params.into_iter().zip(&g.tensors).zip(m.iter_mut()).zip(v.iter_mut()) {
                adam_step(p, g, m, v, lr, sched.beta1, sched.beta2, sched.eps, t);
            }
        }
        state.iteration += 1;
        Ok(StepStats {
            iteration: state.iteration,
            loss,
            photometric,
            histogram,
            regularizers,
            regularization,
            lr_factor: factor,
        })
    }
}

fn ray_query<'a>(model: &SceneModel, r: &TrainRay, segment: RaySegment) -> RayQuery<'a> {
    let appearance = match (&model.appearance, r.ray.appearance_id) {
        (Some(table), Some(id)) if id < table.len() => AppearanceInput::Id(id),
        _ => AppearanceInput::None,
    };
    RayQuery {
        segment,
        time: r.ray.time,
        appearance,
        mode: FeatureMode::Full,
        background: r.background,
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub stats: StepStats,
    pub val: Option<(f64, f64)>,
}

pub const METRICS_HEADER: &str =
    "iteration,loss,photometric,train_psnr,histogram,tv_space,smooth_time,sparse_transients,lr_factor,val_psnr,val_ssim";

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let s = &self.stats;
        let train_psnr = crate::scene_io::metrics::psnr_from_mse(s.photometric);
        let (vp, vs) = match self.val {
            Some((p, q)) => (format!("{p:.6}"), format!("{q:.6}")),
            None => (String::new(), String::new()),
        };
        format!(
            "{},{:.10e},{:.10e},{:.6},{:.10e},{:.10e},{:.10e},{:.10e},{:.6e},{},{}",
            s.iteration,
            s.loss,
            s.photometric,
            train_psnr,
            s.histogram,
            s.regularizers.tv_space,
            s.regularizers.smooth_time,
            s.regularizers.sparse_transients,
            s.lr_factor,
            vp,
            vs
        )
    }
}

/// Mean PSNR and SSIM over frames.
pub fn evaluate_frames(model: &SceneModel, frames: &[Frame]) -> Result<(f64, f64, Vec<Image>)> {
    let mut ps = 0.0;
    let mut ss = 0.0;
    let mut images = Vec::with_capacity(frames.len());
    for f in frames {
        let code = match (&model.appearance, f.appearance_id) {
            (Some(t), Some(id)) => t.code(id).map(|c| c.to_vec()),
            _ => None,
        };
        let out = model.render_image(&f.camera, f.time, code.as_deref(), false)?;
        ps += psnr(&out.rgb, &f.image);
        ss += ssim(&out.rgb, &f.image);
        images.push(out.rgb);
    }
    let n = frames.len().max(1) as f64;
    Ok((ps / n, ss / n, images))
}

/// Where training writes artifacts; `None` keeps everything in memory.
#[derive(Clone, Debug, Default)]
pub struct TrainOutput {
    pub dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub rows: Vec<MetricsRow>,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainReport {
    pub fn final_val(&self) -> Option<(f64, f64)> {
        self.rows.iter().rev().find_map(|r| r.val)
    }

    /// The metrics log as it is written to disk.
    pub fn csv(&self) -> String {
        let mut s = String::from(METRICS_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.to_csv());
            s.push('\n');
        }
        s
    }
}

fn checkpoint_path(dir: &Path, iteration: u64) -> PathBuf {
    dir.join(format!("ckpt_{iteration:06}.{CHECKPOINT_EXT}"))
}

fn append_line(path: &Path, header: &str, line: &str) -> Result<()> {
    let fresh = !path.exists();
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    if fresh {
        writeln!(f, "{header}").map_err(|e| Error::io(path, e))?;
    }
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

/// Trains until `config.schedule.iterations`, continuing from `state.iteration`.
///
/// Writes `metrics.csv` (deterministic), `timing.csv` (wall clock) and
/// checkpoints when an output directory is given.
pub fn train(state: &mut TrainState, dataset: &SceneDataset, output: &TrainOutput) -> Result<TrainReport> {
    let trainer = Trainer::new(state, dataset)?;
    let mut report = TrainReport::default();
    if let Some(dir) = &output.dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        if state.iteration == 0 {
            let p = checkpoint_path(dir, 0);
            save_checkpoint(state, &p)?;
            report.checkpoints.push(p);
        }
    }
    let total = state.config.schedule.iterations;
    let out = state.config.output.clone();
    let val_frames: Vec<Frame> = {
        let n = if out.val_views == 0 { dataset.val.len() } else { out.val_views.min(dataset.val.len()) };
        dataset.val[..n].to_vec()
    };
    let start = Instant::now();
    while state.iteration < total {
        let stats = trainer.step(state)?;
        let it = stats.iteration;
        let last = it == total;
        let validate = !val_frames.is_empty() && (last || (out.val_every > 0 && it % out.val_every == 0));
        let log = last || validate || (out.log_every > 0 && it % out.log_every == 0);
        if log {
            let val = if validate {
                let (p, s, _) = evaluate_frames(&state.model, &val_frames)?;
                Some((p, s))
            } else {
                None
            };
            let row = MetricsRow { stats, val };
            log::info!("{}", row.to_csv());
            if let Some(dir) = &output.dir {
                append_line(&dir.join("metrics.csv"), METRICS_HEADER, &row.to_csv())?;
                append_line(
                    &dir.join("timing.csv"),
                    "iteration,elapsed_seconds",
                    &format!("{it},{:.3}", start.elapsed().as_secs_f64()),
                )?;
            }
            report.rows.push(row);
        }
        if let Some(dir) = &output.dir {
            if last || (out.checkpoint_every > 0 && it % out.checkpoint_every == 0) {
                let p = checkpoint_path(dir, it);
                save_checkpoint(state, &p)?;
                report.checkpoints.push(p);
            }
        }
    }
    Ok(report)
}

/// One audited parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AuditSample {
    pub group: String,
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuditReport {
    pub samples: Vec<AuditSample>,
    pub max_rel_error: f64,
}

impl AuditReport {
    pub fn groups(&self) -> Vec<String> {
        let mut g: Vec<String> = self.samples.iter().map(|s| s.group.clone()).collect();
        g.dedup();
        g
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AuditOptions {
    pub params: usize,
    pub rays: usize,
    pub step: f64,
    /// Gradients below this magnitude are compared absolutely.
    pub floor: f64,
    pub seed: u64,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self {
            params: 200,
            rays: 6,
            step: 1e-4,
            floor: 1e-6,
            seed: 0,
        }
    }
}

/// Compares analytic gradients of the full training loss against central
/// differences on a fixed micro-batch with frozen sample depths.
///
/// Parameters are drawn from every non-empty group; half of each group's
/// share comes from entries with nonzero analytic gradient. The histogram
/// loss treats the main model's weights as constants, so main-model
/// parameters are differenced without it.
pub fn finite_difference_audit(state: &TrainState, dataset: &SceneDataset, opts: AuditOptions) -> Result<AuditReport> {
    let trainer = Trainer::new(state, dataset)?.with_workers(1);
    let mut probe = state.clone();
    probe.config.schedule.batch_size = opts.rays;
    let rays = trainer.batch(&probe, state.iteration);
    let plans = trainer.plan_batch(&state.model, &rays, opts.seed, state.iteration)?;
    let weights = state.config.loss;
    let scales = (1.0, weights.histogram);
    let loss_of = |model: &SceneModel, histogram: bool| -> Result<f64> {
        let scales = if histogram { scales } else { (1.0, 0.0) };
        let (p, h, _) = trainer.evaluate(model, &rays, &plans, scales, false)?;
        let reg = field_regularizers(&model.field, &weights, None).weighted(&weights);
        Ok(p + h + reg)
    };
    let (_, _, grads) = trainer.evaluate(&state.model, &rays, &plans, scales, true)?;
    let mut grads = grads.expect("gradients requested");
    field_regularizers(&state.model.field, &weights, Some(&mut grads.field));

    let groups = state.model.groups();
    let names: Vec<(String, Vec<String>)> = groups
        .iter()
        .map(|g| (g.name.clone(), g.tensors.iter().map(|t| t.name.clone()).collect()))
        .collect();
    let sizes: Vec<Vec<usize>> = groups.iter().map(|g| g.tensors.iter().map(|t| t.data.len()).collect()).collect();
    drop(groups);
    let live: Vec<usize> = (0..sizes.len()).filter(|&g| sizes[g].iter().sum::<usize>() > 0).collect();
    let ggroups = grads.groups();
    let mut rng = rng_for(opts.seed, u64::MAX - 1, 0);
    let mut picks: Vec<(usize, usize, usize)> = Vec::new();
    for (k, &g) in live.iter().enumerate() {
        let share = opts.params / live.len() + usize::from(k < opts.params % live.len());
        let flat: Vec<(usize, usize)> = sizes[g]
            .iter()
            .enumerate()
            .flat_map(|(t, &n)| (0..n).map(move |i| (t, i)))
            .collect();
        let nonzero: Vec<(usize, usize)> =
            flat.iter().copied().filter(|&(t, i)| ggroups[g].tensors[t][i] != 0.0).collect();
        for j in 0..share {
            let pool = if j % 2 == 0 && !nonzero.is_empty() { &nonzero } else { &flat };
            let (t, i) = pool[rng.gen_range(0..pool.len())];
            picks.push((g, t, i));
        }
    }

    let mut model = state.model.clone();
    let mut samples = Vec::with_capacity(picks.len());
    let mut max_rel: f64 = 0.0;
    for (g, t, i) in picks {
        let histogram = names[g].0.starts_with("proposal");
        let orig = model.groups_mut()[g][t][i];
        model.groups_mut()[g][t][i] = orig + opts.step;
        let lp = loss_of(&model, histogram)?;
        model.groups_mut()[g][t][i] = orig - opts.step;
        let lm = loss_of(&model, histogram)?;
        model.groups_mut()[g][t][i] = orig;
        let numeric = (lp - lm) / (2.0 * opts.step);
        let analytic = ggroups[g].tensors[t][i];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(opts.floor);
        max_rel = max_rel.max(rel);
        samples.push(AuditSample {
            group: names[g].0.clone(),
            tensor: names[g].1[t].clone(),
            index: i,
            analytic,
            numeric,
            rel_error: rel,
        });
    }
    Ok(AuditReport {
        samples,
        max_rel_error: max_rel,
    })
}

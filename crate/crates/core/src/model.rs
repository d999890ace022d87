//! The trainable scene model and its per-ray forward/backward pipeline.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decoders::{
    density_activation, sigmoid, AppearanceTable, DecodeScratch, Decoder, DecoderSpec, RawOutput,
};
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::nn::{NetTrace, TinyNet};
use crate::parallel::{map_shards, worker_count};
use crate::params::{Grads, Parameters, TensorView};
use crate::planes::{FeatureMode, FieldSpec, KPlaneField};
use crate::render::{
    composite_weights, contract_linf, edges, histogram_loss, intersect_aabb, intervals,
    ndc_transform, pixel_ray, proposal_refine, sample_uniform, volume_render,
    volume_render_backward, Camera, DepthPlan, Ray, RaySegment, Vec3,
};

/// How world-space sample points reach the field's bounding box.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordMode {
    /// Bounded scene; rays are clipped to the scene box.
    #[default]
    Box,
    /// Forward-facing scene warped to normalized device coordinates.
    Ndc,
    /// Unbounded scene squashed into `[-2, 2]^3`.
    Contract,
}

impl CoordMode {
    /// Spatial field bounds implied by the mode.
    pub fn field_bounds(self, scene_bounds: [[f64; 2]; 3]) -> [[f64; 2]; 3] {
        match self {
            CoordMode::Box => scene_bounds,
            CoordMode::Ndc => [[-1.0, 1.0]; 3],
            CoordMode::Contract => [[-2.0, 2.0]; 3],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Sampler {
    Uniform { samples: usize },
    /// `stages[k]` samples evaluated by proposal `k`, then `samples` final ones.
    Proposal { stages: Vec<usize>, samples: usize },
}

impl Default for Sampler {
    fn default() -> Self {
        Sampler::Uniform { samples: 64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderSettings {
    pub coord_mode: CoordMode,
    pub background: [f64; 3],
    pub sampler: Sampler,
    pub scene_bounds: [[f64; 2]; 3],
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            coord_mode: CoordMode::Box,
            background: [1.0; 3],
            sampler: Sampler::default(),
            scene_bounds: [[-1.0, 1.0]; 3],
        }
    }
}

/// Small density-only model that places samples for the main model.
#[derive(Clone, Debug, PartialEq)]
pub struct ProposalModel {
    pub field: KPlaneField,
    pub head: TinyNet,
}

impl ProposalModel {
    pub fn new<R: Rng + ?Sized>(spec: FieldSpec, hidden: usize, rng: &mut R) -> Result<Self> {
        let field = KPlaneField::random(spec, rng)?;
        let head = TinyNet::new(&[field.feature_len(), hidden, 1], rng)?;
        Ok(Self { field, head })
    }

    fn raw_density(&self, q: &[f64], mode: FeatureMode, feat: &mut Vec<f64>, trace: &mut NetTrace) -> f64 {
        feat.resize(self.field.feature_len(), 0.0);
        self.field.eval_into(q, mode, feat);
        self.head.forward_into(feat, trace);
        trace.output()[0]
    }
}

/// Where a ray's appearance code comes from.
#[derive(Clone, Copy, Debug, Default)]
pub enum AppearanceInput<'a> {
    #[default]
    None,
    /// Row of the model's appearance table; receives gradients.
    Id(usize),
    /// Explicit code, e.g. an interpolated one.
    Code(&'a [f64]),
}

#[derive(Clone, Copy, Debug)]
pub struct RayQuery<'a> {
    pub segment: RaySegment,
    pub time: Option<f64>,
    pub appearance: AppearanceInput<'a>,
    pub mode: FeatureMode,
    /// Overrides the model's background color for this ray.
    pub background: Option<Vec3>,
}

/// Supervision and loss scaling for one training ray.
#[derive(Clone, Copy, Debug)]
pub struct TrainTarget {
    pub rgb: Vec3,
    /// Multiplies the ray's squared error (e.g. `1 / (3 * batch)`).
    pub photometric_scale: f64,
    /// Multiplies the ray's histogram loss; 0 disables it.
    pub histogram_scale: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RayOutput {
    pub rgb: Vec3,
    pub opacity: f64,
    /// Sum of squared channel errors (0 without a target).
    pub sq_error: f64,
    /// Unscaled histogram loss summed over proposal stages.
    pub histogram: f64,
}

/// Reusable per-worker buffers for [`SceneModel::trace_ray`].
#[derive(Clone, Debug, Default)]
pub struct RayScratch {
    decode: DecodeScratch,
    field: Vec<f64>,
    d_f: Vec<f64>,
    feat: Vec<f64>,
    trace: NetTrace,
    nn: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProposalGrads {
    pub field: Grads,
    pub head: Grads,
}

/// Gradient buffers for every parameter group of a [`SceneModel`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelGrads {
    pub field: Grads,
    pub decoder: Grads,
    pub appearance: Grads,
    pub proposals: Vec<ProposalGrads>,
}

impl ModelGrads {
    pub fn groups(&self) -> Vec<&Grads> {
        let mut g = vec![&self.field, &self.decoder, &self.appearance];
        for p in &self.proposals {
            g.push(&p.field);
            g.push(&p.head);
        }
        g
    }

    pub fn groups_mut(&mut self) -> Vec<&mut Grads> {
        let mut g = vec![&mut self.field, &mut self.decoder, &mut self.appearance];
        for p in &mut self.proposals {
            g.push(&mut p.field);
            g.push(&mut p.head);
        }
        g
    }

    pub fn clear(&mut self) {
        for g in self.groups_mut() {
            g.clear();
        }
    }

    pub fn add_assign(&mut self, other: &ModelGrads) {
        for (a, b) in self.groups_mut().into_iter().zip(other.groups()) {
            a.add_assign(b);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.groups().iter().all(|g| g.is_finite())
    }
}

/// Optimizer treatment of a parameter group.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupKind {
    Planes,
    Network,
}

pub struct ParamGroup<'a> {
    pub name: String,
    pub kind: GroupKind,
    pub tensors: Vec<TensorView<'a>>,
}

/// Everything needed to build a fresh [`SceneModel`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub field: FieldSpec,
    pub decoder: DecoderSpec,
    /// Number of appearance codes (training images); ignored when the
    /// decoder has no appearance input.
    pub appearance_count: usize,
    pub proposals: Vec<FieldSpec>,
    pub proposal_hidden: usize,
    pub render: RenderSettings,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneModel {
    pub field: KPlaneField,
    pub decoder: Decoder,
    pub appearance: Option<AppearanceTable>,
    pub proposals: Vec<ProposalModel>,
    pub render: RenderSettings,
}

impl SceneModel {
    pub fn new<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Result<Self> {
        let field = KPlaneField::random(spec.field.clone(), rng)?;
        let mut dspec = spec.decoder.clone();
        dspec.feature_len = field.feature_len();
        let decoder = Decoder::new(&dspec, rng)?;
        let appearance = (dspec.appearance_dim > 0)
            .then(|| AppearanceTable::zeros(spec.appearance_count, dspec.appearance_dim));
        let proposals = spec
            .proposals
            .iter()
            .map(|p| ProposalModel::new(p.clone(), spec.proposal_hidden, rng))
            .collect::<Result<Vec<_>>>()?;
        let model = Self {
            field,
            decoder,
            appearance,
            proposals,
            render: spec.render.clone(),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if let Sampler::Proposal { stages, .. } = &self.render.sampler {
            if stages.len() != self.proposals.len() {
                return Err(Error::Config(format!(
                    "{} proposal stages configured but {} proposal models",
                    stages.len(),
                    self.proposals.len()
                )));
            }
        }
        if self.decoder.feature_len() != self.field.feature_len() {
            return Err(Error::Shape(format!(
                "decoder expects {} features, field produces {}",
                self.decoder.feature_len(),
                self.field.feature_len()
            )));
        }
        for p in &self.proposals {
            if p.field.dims() != self.field.dims() {
                return Err(Error::Config("proposal fields must match the main field dimension".into()));
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> usize {
        self.field.dims()
    }

    pub fn groups(&self) -> Vec<ParamGroup<'_>> {
        let mut out = vec![
            ParamGroup {
                name: "field".into(),
                kind: GroupKind::Planes,
                tensors: self.field.tensors(),
            },
            ParamGroup {
                name: "decoder".into(),
                kind: GroupKind::Network,
                tensors: self.decoder.tensors(),
            },
            ParamGroup {
                name: "appearance".into(),
                kind: GroupKind::Network,
                tensors: self.appearance.as_ref().map(|a| a.tensors()).unwrap_or_default(),
            },
        ];
        for (k, p) in self.proposals.iter().enumerate() {
            out.push(ParamGroup {
                name: format!("proposal{k}.field"),
                kind: GroupKind::Planes,
                tensors: p.field.tensors(),
            });
            out.push(ParamGroup {
                name: format!("proposal{k}.head"),
                kind: GroupKind::Network,
                tensors: p.head.tensors(),
            });
        }
        out
    }

    pub fn groups_mut(&mut self) -> Vec<Vec<&mut [f64]>> {
        let mut out = vec![
            self.field.tensors_mut(),
            self.decoder.tensors_mut(),
            self.appearance.as_mut().map(|a| a.tensors_mut()).unwrap_or_default(),
        ];
        for p in &mut self.proposals {
            out.push(p.field.tensors_mut());
            out.push(p.head.tensors_mut());
        }
        out
    }

    pub fn zero_grads(&self) -> ModelGrads {
        ModelGrads {
            field: self.field.zero_grads(),
            decoder: self.decoder.zero_grads(),
            appearance: self.appearance.as_ref().map(|a| a.zero_grads()).unwrap_or_default(),
            proposals: self
                .proposals
                .iter()
                .map(|p| ProposalGrads {
                    field: p.field.zero_grads(),
                    head: p.head.zero_grads(),
                })
                .collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.groups().iter().flat_map(|g| g.tensors.iter()).map(|t| t.data.len()).sum()
    }

    /// Parameters of the main field plus decoder (what the ablation tables count).
    pub fn main_param_count(&self) -> usize {
        self.field.param_count() + self.decoder.param_count()
    }

    /// The portion of `ray` the model samples, if any.
    pub fn segment(&self, ray: &Ray, camera: &Camera) -> Result<Option<RaySegment>> {
        Ok(match self.render.coord_mode {
            CoordMode::Box => {
                let b = self.render.scene_bounds;
                intersect_aabb(ray, [b[0][0], b[1][0], b[2][0]], [b[0][1], b[1][1], b[2][1]])
                    .map(|(t0, t1)| (t0.max(camera.near), t1.min(camera.far)))
                    .filter(|(t0, t1)| t0 < t1)
                    .map(|(near, far)| RaySegment { ray: *ray, near, far })
            }
            CoordMode::Ndc => Some(ndc_transform(ray, camera)?),
            CoordMode::Contract => Some(RaySegment {
                ray: *ray,
                near: camera.near,
                far: camera.far,
            }),
        })
    }

    #[inline]
    pub fn field_point(&self, segment: &RaySegment, t: f64, time: Option<f64>) -> [f64; 4] {
        let p = segment.point(t);
        let p = match self.render.coord_mode {
            CoordMode::Contract => contract_linf(p),
            _ => p,
        };
        [p[0], p[1], p[2], time.unwrap_or(0.0)]
    }

    fn proposal_densities(&self, k: usize, query: &RayQuery, depths: &[f64], scratch: &mut RayScratch) -> Vec<f64> {
        let p = &self.proposals[k];
        depths
            .iter()
            .map(|&t| {
                let q = self.field_point(&query.segment, t, query.time);
                let raw = p.raw_density(&q, query.mode, &mut scratch.feat, &mut scratch.trace);
                density_activation(raw).0
            })
            .collect()
    }

    /// Chooses sample depths for a ray (no gradients flow through this).
    pub fn plan_depths<R: Rng + ?Sized>(
        &self,
        query: &RayQuery,
        rng: Option<&mut R>,
        scratch: &mut RayScratch,
    ) -> DepthPlan {
        let seg = &query.segment;
        match &self.render.sampler {
            Sampler::Uniform { samples } => DepthPlan {
                stages: Vec::new(),
                final_depths: sample_uniform(seg.near, seg.far, *samples, rng),
            },
            Sampler::Proposal { stages, samples } => proposal_refine(
                seg.near,
                seg.far,
                stages,
                *samples,
                |k, depths| self.proposal_densities(k, query, depths, scratch),
                rng,
            ),
        }
    }

    fn appearance_code<'a>(&'a self, input: AppearanceInput<'a>) -> Result<Option<&'a [f64]>> {
        Ok(match input {
            AppearanceInput::None => None,
            AppearanceInput::Code(c) => Some(c),
            AppearanceInput::Id(id) => {
                let table = self.appearance.as_ref().ok_or_else(|| {
                    Error::Config("appearance id given but the model has no appearance codes".into())
                })?;
                Some(table.code(id).ok_or_else(|| {
                    Error::Config(format!("appearance id {id} out of range ({} codes)", table.len()))
                })?)
            }
        })
    }

    /// Renders one ray at the planned depths; with a target, evaluates its
    /// losses, and with `grads`, backpropagates them.
    ///
    /// The main model receives only photometric gradients; proposal models
    /// receive only histogram-loss gradients, with the main weights treated
    /// as constants.
    pub fn trace_ray(
        &self,
        query: &RayQuery,
        plan: &DepthPlan,
        target: Option<&TrainTarget>,
        mut grads: Option<&mut ModelGrads>,
        scratch: &mut RayScratch,
    ) -> Result<RayOutput> {
        let seg = &query.segment;
        let depths = &plan.final_depths;
        let n = depths.len();
        let code = self.appearance_code(query.appearance)?;
        let ctx = self.decoder.prepare(seg.ray.direction, code)?;
        let fl = self.field.feature_len();
        let deltas = intervals(depths, seg.far);
        let mut feats = vec![0.0; n * fl];
        let mut qs = Vec::with_capacity(n);
        let mut sigmas = Vec::with_capacity(n);
        let mut d_sigma_raw = Vec::with_capacity(n);
        let mut colors = Vec::with_capacity(n);
        for (i, &t) in depths.iter().enumerate() {
            let q = self.field_point(seg, t, query.time);
            let f = &mut feats[i * fl..(i + 1) * fl];
            self.field.eval_into(&q, query.mode, f);
            let raw = self.decoder.decode(&ctx, f, &mut scratch.decode);
            let (s, ds) = density_activation(raw.sigma);
            sigmas.push(s);
            d_sigma_raw.push(ds);
            colors.push(raw.rgb.map(sigmoid));
            qs.push(q);
        }
        let bg = query.background.unwrap_or(self.render.background);
        let comp = volume_render(&sigmas, &deltas, &colors, bg);
        let mut out = RayOutput {
            rgb: comp.rgb,
            opacity: comp.opacity,
            ..Default::default()
        };
        let Some(target) = target else {
            return Ok(out);
        };
        let err = [
            comp.rgb[0] - target.rgb[0],
            comp.rgb[1] - target.rgb[1],
            comp.rgb[2] - target.rgb[2],
        ];
        out.sq_error = err.iter().map(|e| e * e).sum();

        if let Some(g) = grads.as_deref_mut() {
            let d_rgb = err.map(|e| 2.0 * e * target.photometric_scale);
            let (d_sigma, d_color) =
                volume_render_backward(&sigmas, &deltas, &colors, bg, d_rgb, None);
            let mut ray_grad = self.decoder.new_ray_grad(&ctx);
            scratch.d_f.resize(fl, 0.0);
            for i in 0..n {
                let c = colors[i];
                let d_raw = RawOutput {
                    rgb: [
                        d_color[i][0] * c[0] * (1.0 - c[0]),
                        d_color[i][1] * c[1] * (1.0 - c[1]),
                        d_color[i][2] * c[2] * (1.0 - c[2]),
                    ],
                    sigma: d_sigma[i] * d_sigma_raw[i],
                };
                if d_raw.sigma == 0.0 && d_raw.rgb.iter().all(|v| *v == 0.0) {
                    continue;
                }
                let f = &feats[i * fl..(i + 1) * fl];
                self.decoder.backward_sample(
                    &ctx,
                    f,
                    d_raw,
                    &mut scratch.decode,
                    &mut ray_grad,
                    &mut g.decoder,
                    &mut scratch.d_f,
                );
                self.field.backprop_with(&qs[i], &scratch.d_f, query.mode, &mut g.field, &mut scratch.field);
            }
            let d_app = self.decoder.finish_ray(&ctx, &ray_grad, &mut g.decoder, &mut scratch.decode);
            if let (AppearanceInput::Id(id), Some(table)) = (query.appearance, &self.appearance) {
                let dim = table.dim();
                let row = &mut g.appearance.tensors[0][id * dim..(id + 1) * dim];
                for (r, d) in row.iter_mut().zip(&d_app) {
                    *r += d;
                }
            }
        }

        if target.histogram_scale > 0.0 && !plan.stages.is_empty() {
            let final_edges = edges(depths, seg.far);
            for (k, stage) in plan.stages.iter().enumerate() {
                out.histogram += self.proposal_stage(
                    k,
                    query,
                    stage,
                    &final_edges,
                    &comp.weights,
                    target.histogram_scale,
                    grads.as_deref_mut(),
                    scratch,
                );
            }
        }
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn proposal_stage(
        &self,
        k: usize,
        query: &RayQuery,
        depths: &[f64],
        final_edges: &[f64],
        final_weights: &[f64],
        scale: f64,
        grads: Option<&mut ModelGrads>,
        scratch: &mut RayScratch,
    ) -> f64 {
        let p = &self.proposals[k];
        let seg = &query.segment;
        let mut sigmas = Vec::with_capacity(depths.len());
        let mut ds = Vec::with_capacity(depths.len());
        for &t in depths {
            let q = self.field_point(seg, t, query.time);
            let raw = p.raw_density(&q, query.mode, &mut scratch.feat, &mut scratch.trace);
            let (s, d) = density_activation(raw);
            sigmas.push(s);
            ds.push(d);
        }
        let deltas = intervals(depths, seg.far);
        let w = composite_weights(&sigmas, &deltas);
        let (loss, mut gw) = histogram_loss(&edges(depths, seg.far), &w, final_edges, final_weights);
        let Some(g) = grads else {
            return loss;
        };
        if loss == 0.0 {
            return loss;
        }
        gw.iter_mut().for_each(|v| *v *= scale);
        let zeros = vec![[0.0; 3]; depths.len()];
        let (d_sigma, _) = volume_render_backward(&sigmas, &deltas, &zeros, [0.0; 3], [0.0; 3], Some(&gw));
        let pg = &mut g.proposals[k];
        let fl = p.field.feature_len();
        let mut d_f = vec![0.0; fl];
        for (i, &t) in depths.iter().enumerate() {
            let d_raw = d_sigma[i] * ds[i];
            if d_raw == 0.0 {
                continue;
            }
            let q = self.field_point(seg, t, query.time);
            p.raw_density(&q, query.mode, &mut scratch.feat, &mut scratch.trace);
            p.head.backward(&scratch.trace, &[d_raw], &mut pg.head.tensors, Some(&mut d_f), &mut scratch.nn);
            p.field.backprop_with(&q, &d_f, query.mode, &mut pg.field, &mut scratch.field);
        }
        loss
    }

    /// Deterministic full-image render (no jitter).
    pub fn render_image(
        &self,
        camera: &Camera,
        time: Option<f64>,
        appearance: Option<&[f64]>,
        static_only: bool,
    ) -> Result<RenderOutput> {
        if static_only && self.dims() != 4 {
            return Err(Error::InvalidDimension(
                "static-only rendering needs a 4D (dynamic) model".into(),
            ));
        }
        if time.is_none() && self.dims() == 4 {
            log::debug!("rendering a dynamic model without a time; using t = 0");
        }
        let mode = if static_only { FeatureMode::StaticOnly } else { FeatureMode::Full };
        let (w, h) = (camera.width, camera.height);
        let rows = map_shards(h, worker_count(), |range| -> Result<Vec<(Vec3, f64)>> {
            let mut scratch = RayScratch::default();
            let mut px = Vec::with_capacity(range.len() * w);
            for row in range {
                for col in 0..w {
                    let ray = pixel_ray(camera, (row, col), time, None);
                    px.push(self.render_ray(&ray, camera, appearance, mode, &mut scratch)?);
                }
            }
            Ok(px)
        });
        let mut rgb = Image::new(w, h);
        let mut opacity = Vec::with_capacity(w * h);
        let mut i = 0;
        for shard in rows {
            for (c, o) in shard? {
                rgb.set(i / w, i % w, c);
                opacity.push(o);
                i += 1;
            }
        }
        Ok(RenderOutput { rgb, opacity })
    }

    /// Full render, static-only render and their clamped difference.
    pub fn decompose(&self, camera: &Camera, time: Option<f64>, appearance: Option<&[f64]>) -> Result<Decomposition> {
        let full = self.render_image(camera, time, appearance, false)?.rgb;
        let static_part = self.render_image(camera, time, appearance, true)?.rgb;
        let mut dynamic = Image::new(full.width, full.height);
        for (d, (f, s)) in dynamic.data.iter_mut().zip(full.data.iter().zip(&static_part.data)) {
            *d = (f - s).clamp(0.0, 1.0);
        }
        Ok(Decomposition {
            full,
            static_part,
            dynamic,
        })
    }

    /// Color and opacity of a single ray without jitter.
    pub fn render_ray(
        &self,
        ray: &Ray,
        camera: &Camera,
        appearance: Option<&[f64]>,
        mode: FeatureMode,
        scratch: &mut RayScratch,
    ) -> Result<(Vec3, f64)> {
        let Some(segment) = self.segment(ray, camera)? else {
            return Ok((self.render.background, 0.0));
        };
        let query = RayQuery {
            segment,
            time: ray.time,
            appearance: appearance.map_or(AppearanceInput::None, AppearanceInput::Code),
            mode,
            background: None,
        };
        let plan = self.plan_depths::<rand_chacha::ChaCha8Rng>(&query, None, scratch);
        let out = self.trace_ray(&query, &plan, None, None, scratch)?;
        Ok((out.rgb, out.opacity))
    }
}

/// Rendered colors plus the per-pixel accumulated opacity.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub rgb: Image,
    pub opacity: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub full: Image,
    pub static_part: Image,
    /// `clamp(full - static, 0, 1)` per channel.
    pub dynamic: Image,
}

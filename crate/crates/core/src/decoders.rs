//! Feature decoders: learned color basis (explicit) and two-network (hybrid).
//!
//! Both decoders work per ray: direction-dependent quantities are computed
//! once by [`Decoder::prepare`] and reused for every sample on the ray.
//! Density never sees the view direction or the appearance code.

use std::sync::Once;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{dot, NetTrace, TinyNet};
use crate::params::{Grads, Parameters, TensorView};

/// Bounds of the truncated exponential used for density.
pub const DENSITY_CLAMP: f64 = 15.0;

static NON_UNIT_WARNING: Once = Once::new();

/// `[d, sin(2^k pi d), cos(2^k pi d) for k in 0..octaves]`, length `3 + 6 * octaves`.
pub fn embed_direction(dir: [f64; 3], octaves: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(embedding_len(octaves));
    embed_direction_into(dir, octaves, &mut out);
    out
}

pub fn embedding_len(octaves: usize) -> usize {
    3 + 6 * octaves
}

fn embed_direction_into(dir: [f64; 3], octaves: usize, out: &mut Vec<f64>) {
    let norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
    let d = if (norm - 1.0).abs() > 1e-6 && norm > 0.0 {
        NON_UNIT_WARNING.call_once(|| {
            log::warn!("view direction with norm {norm} normalized before embedding");
        });
        [dir[0] / norm, dir[1] / norm, dir[2] / norm]
    } else {
        dir
    };
    out.extend_from_slice(&d);
    let mut freq = std::f64::consts::PI;
    for _ in 0..octaves {
        out.extend(d.iter().map(|x| (freq * x).sin()));
        out.extend(d.iter().map(|x| (freq * x).cos()));
        freq *= 2.0;
    }
}

/// Sigmoid color and truncated-exponential density.
pub fn activate(raw_rgb: [f64; 3], raw_sigma: f64) -> ([f64; 3], f64) {
    (raw_rgb.map(sigmoid), density_activation(raw_sigma).0)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `(exp(clamp(raw)), d sigma / d raw)`; the derivative is zero outside the clamp.
#[inline]
pub fn density_activation(raw: f64) -> (f64, f64) {
    if raw.abs() <= DENSITY_CLAMP {
        let s = raw.exp();
        (s, s)
    } else {
        (raw.clamp(-DENSITY_CLAMP, DENSITY_CLAMP).exp(), 0.0)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    #[default]
    Linear,
    Hybrid,
}

/// Architecture of either decoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderSpec {
    pub kind: DecoderKind,
    pub feature_len: usize,
    pub dir_octaves: usize,
    pub hidden_width: usize,
    /// Hidden layers of the color basis network.
    pub basis_layers: usize,
    /// Hidden layers of the hybrid density network.
    pub sigma_layers: usize,
    /// Hidden layers of the hybrid color network.
    pub rgb_layers: usize,
    /// Extra features passed from the density to the color network.
    pub geo_features: usize,
    /// Appearance code width, 0 when disabled.
    pub appearance_dim: usize,
}

impl DecoderSpec {
    pub fn new(kind: DecoderKind, feature_len: usize) -> Self {
        Self {
            kind,
            feature_len,
            dir_octaves: 4,
            hidden_width: 64,
            basis_layers: 2,
            sigma_layers: 1,
            rgb_layers: 2,
            geo_features: 15,
            appearance_dim: 0,
        }
    }

    fn widths(&self, input: usize, hidden: usize, output: usize) -> Vec<usize> {
        let mut w = vec![input];
        w.extend(std::iter::repeat(self.hidden_width).take(hidden));
        w.push(output);
        w
    }
}

/// Color from `f . b_i(d)`, density from `f . b_sigma`.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnedBasisDecoder {
    pub basis_net: TinyNet,
    pub density_basis: Vec<f64>,
    pub dir_octaves: usize,
    pub appearance_dim: usize,
}

/// `sigma, f_hat = g_sigma(f)`, `rgb = g_rgb(f_hat, embed(d), code)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridDecoder {
    pub g_sigma: TinyNet,
    pub g_rgb: TinyNet,
    pub dir_octaves: usize,
    pub appearance_dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Decoder {
    Linear(LearnedBasisDecoder),
    Hybrid(HybridDecoder),
}

/// Raw (pre-activation) decoder outputs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RawOutput {
    pub rgb: [f64; 3],
    pub sigma: f64,
}

/// Per-ray decoder state.
#[derive(Clone, Debug, Default)]
pub struct RayContext {
    /// Embedded direction followed by the appearance code.
    input: Vec<f64>,
    /// Linear decoder: concatenated `b_R, b_G, b_B`.
    basis: Vec<f64>,
    basis_trace: NetTrace,
}

/// Per-ray gradient accumulator filled by [`Decoder::backward_sample`].
#[derive(Clone, Debug, Default)]
pub struct RayContextGrad {
    d_basis: Vec<f64>,
    d_input: Vec<f64>,
}

/// Reusable per-sample buffers.
#[derive(Clone, Debug, Default)]
pub struct DecodeScratch {
    sigma_trace: NetTrace,
    rgb_trace: NetTrace,
    rgb_in: Vec<f64>,
    d_rgb_in: Vec<f64>,
    d_sigma_out: Vec<f64>,
    nn: Vec<f64>,
}

impl Decoder {
    pub fn new<R: Rng + ?Sized>(spec: &DecoderSpec, rng: &mut R) -> Result<Self> {
        let f = spec.feature_len;
        if f == 0 {
            return Err(Error::Shape("decoder feature length must be positive".into()));
        }
        let embed = embedding_len(spec.dir_octaves);
        Ok(match spec.kind {
            DecoderKind::Linear => {
                let widths = spec.widths(embed + spec.appearance_dim, spec.basis_layers, 3 * f);
                let bound = (6.0 / f as f64).sqrt();
                Decoder::Linear(LearnedBasisDecoder {
                    basis_net: TinyNet::new(&widths, rng)?,
                    density_basis: (0..f).map(|_| rng.gen_range(-bound..bound)).collect(),
                    dir_octaves: spec.dir_octaves,
                    appearance_dim: spec.appearance_dim,
                })
            }
            DecoderKind::Hybrid => {
                let sw = spec.widths(f, spec.sigma_layers, 1 + spec.geo_features);
                let cw = spec.widths(
                    spec.geo_features + embed + spec.appearance_dim,
                    spec.rgb_layers,
                    3,
                );
                Decoder::Hybrid(HybridDecoder {
                    g_sigma: TinyNet::new(&sw, rng)?,
                    g_rgb: TinyNet::new(&cw, rng)?,
                    dir_octaves: spec.dir_octaves,
                    appearance_dim: spec.appearance_dim,
                })
            }
        })
    }

    pub fn kind(&self) -> DecoderKind {
        match self {
            Decoder::Linear(_) => DecoderKind::Linear,
            Decoder::Hybrid(_) => DecoderKind::Hybrid,
        }
    }

    pub fn feature_len(&self) -> usize {
        match self {
            Decoder::Linear(d) => d.density_basis.len(),
            Decoder::Hybrid(d) => d.g_sigma.input_width(),
        }
    }

    pub fn appearance_dim(&self) -> usize {
        match self {
            Decoder::Linear(d) => d.appearance_dim,
            Decoder::Hybrid(d) => d.appearance_dim,
        }
    }

    fn dir_octaves(&self) -> usize {
        match self {
            Decoder::Linear(d) => d.dir_octaves,
            Decoder::Hybrid(d) => d.dir_octaves,
        }
    }

    /// Computes the direction- and appearance-dependent parts for one ray.
    ///
    /// An appearance-enabled decoder given no code uses the zero code.
    pub fn prepare(&self, dir: [f64; 3], appearance: Option<&[f64]>) -> Result<RayContext> {
        let app_dim = self.appearance_dim();
        let mut input = Vec::with_capacity(embedding_len(self.dir_octaves()) + app_dim);
        embed_direction_into(dir, self.dir_octaves(), &mut input);
        match appearance {
            Some(code) if app_dim == 0 => {
                return Err(Error::Config(format!(
                    "appearance code of width {} given to a decoder without appearance input",
                    code.len()
                )))
            }
            Some(code) if code.len() != app_dim => {
                return Err(Error::Shape(format!(
                    "appearance code has width {}, decoder expects {app_dim}",
                    code.len()
                )))
            }
            Some(code) => input.extend_from_slice(code),
            None => input.extend(std::iter::repeat(0.0).take(app_dim)),
        }
        let mut ctx = RayContext {
            input,
            ..Default::default()
        };
        if let Decoder::Linear(d) = self {
            d.basis_net.forward_into(&ctx.input, &mut ctx.basis_trace);
            ctx.basis = ctx.basis_trace.output().to_vec();
        }
        Ok(ctx)
    }

    pub fn new_ray_grad(&self, ctx: &RayContext) -> RayContextGrad {
        RayContextGrad {
            d_basis: vec![0.0; ctx.basis.len()],
            d_input: vec![0.0; ctx.input.len()],
        }
    }

    /// Raw density only; cheaper than [`Self::decode`] for hybrid decoders.
    pub fn raw_density(&self, f: &[f64], scratch: &mut DecodeScratch) -> f64 {
        match self {
            Decoder::Linear(d) => dot(f, &d.density_basis),
            Decoder::Hybrid(d) => {
                d.g_sigma.forward_into(f, &mut scratch.sigma_trace);
                scratch.sigma_trace.output()[0]
            }
        }
    }

    pub fn decode(&self, ctx: &RayContext, f: &[f64], scratch: &mut DecodeScratch) -> RawOutput {
        match self {
            Decoder::Linear(d) => {
                let n = f.len();
                RawOutput {
                    rgb: [
                        dot(f, &ctx.basis[..n]),
                        dot(f, &ctx.basis[n..2 * n]),
                        dot(f, &ctx.basis[2 * n..3 * n]),
                    ],
                    sigma: dot(f, &d.density_basis),
                }
            }
            Decoder::Hybrid(d) => {
                d.forward_traces(ctx, f, scratch);
                let rgb = scratch.rgb_trace.output();
                RawOutput {
                    rgb: [rgb[0], rgb[1], rgb[2]],
                    sigma: scratch.sigma_trace.output()[0],
                }
            }
        }
    }

    /// Backward for one sample given `dL/d raw`. Parameter gradients are
    /// accumulated into `grads`, ray-level gradients into `ray_grad`, and the
    /// feature gradient is written to `d_f`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward_sample(
        &self,
        ctx: &RayContext,
        f: &[f64],
        d_raw: RawOutput,
        scratch: &mut DecodeScratch,
        ray_grad: &mut RayContextGrad,
        grads: &mut Grads,
        d_f: &mut [f64],
    ) {
        match self {
            Decoder::Linear(d) => {
                let n = f.len();
                let db_sigma = grads.tensors.last_mut().expect("density basis grad");
                for i in 0..n {
                    d_f[i] = d_raw.rgb[0] * ctx.basis[i]
                        + d_raw.rgb[1] * ctx.basis[n + i]
                        + d_raw.rgb[2] * ctx.basis[2 * n + i]
                        + d_raw.sigma * d.density_basis[i];
                    db_sigma[i] += d_raw.sigma * f[i];
                }
                for (c, g) in d_raw.rgb.iter().enumerate() {
                    if *g != 0.0 {
                        for (db, fi) in ray_grad.d_basis[c * n..(c + 1) * n].iter_mut().zip(f) {
                            *db += g * fi;
                        }
                    }
                }
            }
            Decoder::Hybrid(d) => {
                d.forward_traces(ctx, f, scratch);
                let n_sigma = d.g_sigma.layers().len() * 2;
                let (g_sigma, g_rgb) = grads.tensors.split_at_mut(n_sigma);
                scratch.d_rgb_in.resize(d.g_rgb.input_width(), 0.0);
                d.g_rgb.backward(
                    &scratch.rgb_trace,
                    &d_raw.rgb,
                    g_rgb,
                    Some(&mut scratch.d_rgb_in),
                    &mut scratch.nn,
                );
                let geo = d.g_sigma.output_width() - 1;
                for (acc, g) in ray_grad.d_input.iter_mut().zip(&scratch.d_rgb_in[geo..]) {
                    *acc += g;
                }
                scratch.d_sigma_out.clear();
                scratch.d_sigma_out.push(d_raw.sigma);
                scratch.d_sigma_out.extend_from_slice(&scratch.d_rgb_in[..geo]);
                d.g_sigma.backward(
                    &scratch.sigma_trace,
                    &scratch.d_sigma_out,
                    g_sigma,
                    Some(d_f),
                    &mut scratch.nn,
                );
            }
        }
    }

    /// Closes a ray's backward pass. Returns the appearance-code gradient
    /// (empty when appearance is disabled).
    pub fn finish_ray(
        &self,
        ctx: &RayContext,
        ray_grad: &RayContextGrad,
        grads: &mut Grads,
        scratch: &mut DecodeScratch,
    ) -> Vec<f64> {
        let app_dim = self.appearance_dim();
        match self {
            Decoder::Linear(d) => {
                let n_net = d.basis_net.layers().len() * 2;
                let need_input = app_dim > 0;
                let mut d_in = vec![0.0; if need_input { ctx.input.len() } else { 0 }];
                d.basis_net.backward(
                    &ctx.basis_trace,
                    &ray_grad.d_basis,
                    &mut grads.tensors[..n_net],
                    need_input.then_some(d_in.as_mut_slice()),
                    &mut scratch.nn,
                );
                if need_input {
                    d_in.split_off(ctx.input.len() - app_dim)
                } else {
                    Vec::new()
                }
            }
            Decoder::Hybrid(_) => ray_grad.d_input[ctx.input.len() - app_dim..].to_vec(),
        }
    }

    /// One-shot decode of a single feature vector.
    pub fn decode_once(
        &self,
        f: &[f64],
        dir: [f64; 3],
        appearance: Option<&[f64]>,
    ) -> Result<RawOutput> {
        if f.len() != self.feature_len() {
            return Err(Error::Shape(format!(
                "feature vector has length {}, decoder expects {}",
                f.len(),
                self.feature_len()
            )));
        }
        let ctx = self.prepare(dir, appearance)?;
        Ok(self.decode(&ctx, f, &mut DecodeScratch::default()))
    }
}

impl HybridDecoder {
    fn forward_traces(&self, ctx: &RayContext, f: &[f64], scratch: &mut DecodeScratch) {
        self.g_sigma.forward_into(f, &mut scratch.sigma_trace);
        let out = scratch.sigma_trace.output();
        scratch.rgb_in.clear();
        scratch.rgb_in.extend_from_slice(&out[1..]);
        scratch.rgb_in.extend_from_slice(&ctx.input);
        self.g_rgb.forward_into(&scratch.rgb_in, &mut scratch.rgb_trace);
    }
}

/// Explicit decoder applied to one feature vector.
pub fn decode_linear(
    decoder: &LearnedBasisDecoder,
    f: &[f64],
    dir: [f64; 3],
    appearance: Option<&[f64]>,
) -> Result<RawOutput> {
    Decoder::Linear(decoder.clone()).decode_once(f, dir, appearance)
}

/// Hybrid decoder applied to one feature vector.
pub fn decode_hybrid(
    decoder: &HybridDecoder,
    f: &[f64],
    dir: [f64; 3],
    appearance: Option<&[f64]>,
) -> Result<RawOutput> {
    Decoder::Hybrid(decoder.clone()).decode_once(f, dir, appearance)
}

fn prefixed<'a>(prefix: &str, net: &'a TinyNet) -> Vec<TensorView<'a>> {
    net.tensors()
        .into_iter()
        .map(|mut t| {
            t.name = format!("{prefix}.{}", t.name);
            t
        })
        .collect()
}

impl Parameters for Decoder {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        match self {
            Decoder::Linear(d) => {
                let mut out = prefixed("basis", &d.basis_net);
                out.push(TensorView {
                    name: "density_basis".into(),
                    shape: vec![d.density_basis.len()],
                    data: &d.density_basis,
                });
                out
            }
            Decoder::Hybrid(d) => {
                let mut out = prefixed("sigma", &d.g_sigma);
                out.extend(prefixed("rgb", &d.g_rgb));
                out
            }
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Decoder::Linear(d) => {
                let mut out = d.basis_net.tensors_mut();
                out.push(&mut d.density_basis);
                out
            }
            Decoder::Hybrid(d) => {
                let mut out = d.g_sigma.tensors_mut();
                out.extend(d.g_rgb.tensors_mut());
                out
            }
        }
    }
}

/// One learned code per training image.
#[derive(Clone, Debug, PartialEq)]
pub struct AppearanceTable {
    dim: usize,
    codes: Vec<f64>,
}

impl AppearanceTable {
    pub fn zeros(images: usize, dim: usize) -> Self {
        Self {
            dim,
            codes: vec![0.0; images * dim],
        }
    }

    pub fn from_codes(dim: usize, codes: Vec<f64>) -> Result<Self> {
        if dim == 0 || codes.len() % dim != 0 {
            return Err(Error::Shape(format!(
                "{} appearance values do not split into rows of {dim}",
                codes.len()
            )));
        }
        Ok(Self { dim, codes })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.codes.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn code(&self, id: usize) -> Option<&[f64]> {
        (id < self.len()).then(|| &self.codes[id * self.dim..(id + 1) * self.dim])
    }

    pub fn code_mut(&mut self, id: usize) -> Option<&mut [f64]> {
        let dim = self.dim;
        (id < self.len()).then(move || &mut self.codes[id * dim..(id + 1) * dim])
    }

    /// `(1 - alpha) * a + alpha * b`, exact at both endpoints.
    pub fn interpolate(&self, a: usize, b: usize, alpha: f64) -> Result<Vec<f64>> {
        let (ca, cb) = match (self.code(a), self.code(b)) {
            (Some(ca), Some(cb)) => (ca, cb),
            _ => {
                return Err(Error::Config(format!(
                    "appearance ids {a}, {b} out of range for {} codes",
                    self.len()
                )))
            }
        };
        Ok(ca.iter().zip(cb).map(|(x, y)| (1.0 - alpha) * x + alpha * y).collect())
    }
}

impl Parameters for AppearanceTable {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        vec![TensorView {
            name: "codes".into(),
            shape: vec![self.len(), self.dim],
            data: &self.codes,
        }]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.codes]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn embedding_without_octaves_is_identity() {
        assert_eq!(embed_direction([0.0, 0.0, 1.0], 0), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn embedding_one_octave_by_hand() {
        let e = embed_direction([1.0, 0.0, 0.0], 1);
        let pi = std::f64::consts::PI;
        let expect = [1.0, 0.0, 0.0, pi.sin(), 0.0, 0.0, pi.cos(), 1.0, 1.0];
        assert_eq!(e.len(), 9);
        for (a, b) in e.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(e, embed_direction([1.0, 0.0, 0.0], 1));
    }

    #[test]
    fn non_unit_direction_is_normalized() {
        assert_eq!(embed_direction([0.0, 2.0, 0.0], 0), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn activation_values() {
        let (rgb, sigma) = activate([0.0; 3], 0.0);
        assert_eq!(rgb, [0.5; 3]);
        assert_eq!(sigma, 1.0);
        let (s, ds) = density_activation(100.0);
        assert_eq!(s, 15f64.exp());
        assert_eq!(ds, 0.0);
        let (s, ds) = density_activation(-3.0);
        assert_eq!(s, ds);
    }

    #[test]
    fn zero_features_decode_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dec = Decoder::new(&DecoderSpec::new(DecoderKind::Linear, 6), &mut rng).unwrap();
        let raw = dec.decode_once(&[0.0; 6], [0.0, 0.0, 1.0], None).unwrap();
        assert_eq!(raw, RawOutput::default());
    }

    #[test]
    fn unit_basis_picks_feature() {
        let mut spec = DecoderSpec::new(DecoderKind::Linear, 4);
        spec.basis_layers = 0;
        spec.dir_octaves = 0;
        let mut dec = match Decoder::new(&spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap() {
            Decoder::Linear(d) => d,
            _ => unreachable!(),
        };
        let layer = &mut dec.basis_net.layers_mut()[0];
        layer.weight.fill(0.0);
        layer.bias.fill(0.0);
        layer.bias[0] = 1.0; // b_R = e_1
        let raw = decode_linear(&dec, &[7.0, 1.0, 2.0, 3.0], [0.0, 0.0, 1.0], None).unwrap();
        assert_eq!(raw.rgb[0], 7.0);
    }

    #[test]
    fn appearance_without_support_is_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for kind in [DecoderKind::Linear, DecoderKind::Hybrid] {
            let dec = Decoder::new(&DecoderSpec::new(kind, 4), &mut rng).unwrap();
            let err = dec.decode_once(&[0.1; 4], [0.0, 0.0, 1.0], Some(&[0.0; 32])).unwrap_err();
            assert!(matches!(err, Error::Config(_)));
        }
    }

    #[test]
    fn zero_hybrid_outputs_zero() {
        let spec = DecoderSpec::new(DecoderKind::Hybrid, 5);
        let mut dec = Decoder::new(&spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for t in dec.tensors_mut() {
            t.fill(0.0);
        }
        let raw = dec.decode_once(&[0.3; 5], [0.0, 1.0, 0.0], None).unwrap();
        assert_eq!(raw, RawOutput::default());
    }

    #[test]
    fn interpolation_endpoints_exact() {
        let mut table = AppearanceTable::zeros(2, 3);
        table.code_mut(0).unwrap().copy_from_slice(&[0.1, -0.7, 3.3]);
        table.code_mut(1).unwrap().copy_from_slice(&[1.9, 0.2, -0.1]);
        assert_eq!(table.interpolate(0, 1, 0.0).unwrap(), table.code(0).unwrap());
        assert_eq!(table.interpolate(0, 1, 1.0).unwrap(), table.code(1).unwrap());
        assert!(table.interpolate(0, 2, 0.5).is_err());
    }
}

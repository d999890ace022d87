//! Factorized feature planes.
//!
//! A d-dimensional field is stored as one 2D grid of feature vectors per
//! unordered axis pair, repeated at several spatial resolutions. A query
//! point is projected onto every plane, bilinearly interpolated, and the
//! per-plane vectors are combined elementwise (product by default). Scales
//! are concatenated coarse to fine.
//!
//! Plane order is colexicographic in the axis pair, which for d = 4 gives
//! `xy, xz, yz, xt, yt, zt`: space-only planes first, then space-time.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Grads, Parameters, TensorView};

/// Largest dimension count the evaluation kernels are compiled for.
pub const MAX_DIMS: usize = 4;

const AXIS_NAMES: [char; MAX_DIMS] = ['x', 'y', 'z', 't'];

/// How per-plane features are merged into one vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combine {
    #[default]
    Multiply,
    /// Elementwise sum; kept for the plane-combination ablation.
    Add,
}

/// Whether space-time planes take part in evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FeatureMode {
    #[default]
    Full,
    /// Space-time planes replaced by the all-ones vector.
    StaticOnly,
}

/// Unordered axis pairs in canonical (colex) order.
pub fn plane_pairs(dims: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(dims * dims.saturating_sub(1) / 2);
    for b in 1..dims {
        for a in 0..b {
            pairs.push((a, b));
        }
    }
    pairs
}

/// Short name of an axis pair such as `"xt"`.
pub fn pair_name(axes: (usize, usize)) -> String {
    let name = |a: usize| AXIS_NAMES.get(a).copied().unwrap_or('?');
    format!("{}{}", name(axes.0), name(axes.1))
}

/// One 2D grid of `feature_dim`-vectors.
///
/// Storage is `data[(j * n_u + i) * feature_dim + m]` where `i` indexes the
/// first axis of the pair and `j` the second.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaneGrid {
    axes: (usize, usize),
    resolution: (usize, usize),
    feature_dim: usize,
    is_spacetime: bool,
    data: Vec<f64>,
}

impl PlaneGrid {
    pub fn filled(
        axes: (usize, usize),
        resolution: (usize, usize),
        feature_dim: usize,
        is_spacetime: bool,
        value: f64,
    ) -> Result<Self> {
        if axes.0 == axes.1 {
            return Err(Error::Shape(format!("plane axes must differ, got {axes:?}")));
        }
        if resolution.0 == 0 || resolution.1 == 0 || feature_dim == 0 {
            return Err(Error::Shape(format!(
                "plane {} needs non-zero resolution and features, got {resolution:?} x {feature_dim}",
                pair_name(axes)
            )));
        }
        Ok(Self {
            axes,
            resolution,
            feature_dim,
            is_spacetime,
            data: vec![value; resolution.0 * resolution.1 * feature_dim],
        })
    }

    pub fn from_data(
        axes: (usize, usize),
        resolution: (usize, usize),
        feature_dim: usize,
        is_spacetime: bool,
        data: Vec<f64>,
    ) -> Result<Self> {
        let mut plane = Self::filled(axes, resolution, feature_dim, is_spacetime, 0.0)?;
        if data.len() != plane.data.len() {
            return Err(Error::Shape(format!(
                "plane {} expects {} values, got {}",
                pair_name(axes),
                plane.data.len(),
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("plane {} holds non-finite values", pair_name(axes))));
        }
        plane.data = data;
        Ok(plane)
    }

    pub fn axes(&self) -> (usize, usize) {
        self.axes
    }

    pub fn resolution(&self) -> (usize, usize) {
        self.resolution
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn is_spacetime(&self) -> bool {
        self.is_spacetime
    }

    pub fn name(&self) -> String {
        pair_name(self.axes)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Offset of the feature vector at node `(i, j)`.
    #[inline]
    pub fn offset(&self, i: usize, j: usize) -> usize {
        (j * self.resolution.0 + i) * self.feature_dim
    }

    pub fn feature(&self, i: usize, j: usize) -> &[f64] {
        let o = self.offset(i, j);
        &self.data[o..o + self.feature_dim]
    }

    pub fn feature_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let o = self.offset(i, j);
        let m = self.feature_dim;
        &mut self.data[o..o + m]
    }
}

/// Lower node index and blend factor along one grid axis.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub(crate) struct AxisTap {
    i0: usize,
    i1: usize,
    frac: f64,
}

impl AxisTap {
    /// Cell index clamped to `[0, n - 2]`, fraction clamped to `[0, 1]`.
    #[inline]
    pub(crate) fn new(coord: f64, n: usize) -> Self {
        if n < 2 {
            return Self { i0: 0, i1: 0, frac: 0.0 };
        }
        let cell = coord.floor().max(0.0) as usize;
        let i0 = cell.min(n - 2);
        let frac = (coord - i0 as f64).clamp(0.0, 1.0);
        Self { i0, i1: i0 + 1, frac }
    }
}

#[inline]
fn taps(plane: &PlaneGrid, u: AxisTap, v: AxisTap) -> [(usize, f64); 4] {
    [
        (plane.offset(u.i0, v.i0), (1.0 - u.frac) * (1.0 - v.frac)),
        (plane.offset(u.i1, v.i0), u.frac * (1.0 - v.frac)),
        (plane.offset(u.i0, v.i1), (1.0 - u.frac) * v.frac),
        (plane.offset(u.i1, v.i1), u.frac * v.frac),
    ]
}

#[inline]
fn interp_taps(plane: &PlaneGrid, u: AxisTap, v: AxisTap, out: &mut [f64]) {
    let m = plane.feature_dim;
    let [(o0, w0), (o1, w1), (o2, w2), (o3, w3)] = taps(plane, u, v);
    let d = &plane.data;
    let (a, b, c, e) = (&d[o0..o0 + m], &d[o1..o1 + m], &d[o2..o2 + m], &d[o3..o3 + m]);
    for k in 0..m {
        out[k] = w0 * a[k] + w1 * b[k] + w2 * c[k] + w3 * e[k];
    }
}

/// Bilinear interpolation of `plane` at grid-space point `uv`.
pub fn interp_bilinear(plane: &PlaneGrid, uv: [f64; 2]) -> Vec<f64> {
    let mut out = vec![0.0; plane.feature_dim];
    let u = AxisTap::new(uv[0], plane.resolution.0);
    let v = AxisTap::new(uv[1], plane.resolution.1);
    interp_taps(plane, u, v, &mut out);
    out
}

/// Selects the coordinates of `q` named by `axes`, in pair order.
pub fn project(q: &[f64], axes: (usize, usize)) -> [f64; 2] {
    [q[axes.0], q[axes.1]]
}

/// Construction parameters for a [`KPlaneField`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub dims: usize,
    /// Spatial resolution per scale, coarse to fine.
    pub resolutions: Vec<usize>,
    /// Feature length per scale.
    pub feature_dims: Vec<usize>,
    /// Time-axis resolution; ignored for d = 3.
    pub time_resolution: usize,
    /// Per-dimension `[min, max]`. The time axis is always `[0, 1]`.
    pub bounds: Vec<[f64; 2]>,
    pub combine: Combine,
}

impl FieldSpec {
    pub fn validate(&self) -> Result<()> {
        if !(3..=MAX_DIMS).contains(&self.dims) {
            return Err(Error::InvalidDimension(format!(
                "fields support 3 or 4 dimensions, got {}",
                self.dims
            )));
        }
        if self.resolutions.is_empty() || self.resolutions.len() != self.feature_dims.len() {
            return Err(Error::Config(format!(
                "{} resolutions but {} feature dims",
                self.resolutions.len(),
                self.feature_dims.len()
            )));
        }
        if self.bounds.len() != self.dims {
            return Err(Error::Config(format!(
                "bounds must list {} axes, got {}",
                self.dims,
                self.bounds.len()
            )));
        }
        if self.bounds.iter().any(|[lo, hi]| !(lo.is_finite() && hi.is_finite() && lo < hi)) {
            return Err(Error::Config(format!("degenerate bounds {:?}", self.bounds)));
        }
        if self.dims == 4 && self.time_resolution < 2 {
            return Err(Error::Config("time resolution must be at least 2".into()));
        }
        Ok(())
    }

    pub fn is_spacetime_axis(&self, axis: usize) -> bool {
        self.dims == 4 && axis == 3
    }

    fn axis_resolution(&self, axis: usize, spatial: usize) -> usize {
        if self.is_spacetime_axis(axis) {
            self.time_resolution
        } else {
            spatial
        }
    }
}

/// All planes at one resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldScale {
    pub resolution: usize,
    pub feature_dim: usize,
    pub planes: Vec<PlaneGrid>,
}

/// A k-planes factorized field over d dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct KPlaneField {
    spec: FieldSpec,
    scales: Vec<FieldScale>,
    feature_offsets: Vec<usize>,
    feature_len: usize,
}

impl KPlaneField {
    /// Field with every plane holding `value`.
    pub fn constant(spec: FieldSpec, value: f64) -> Result<Self> {
        spec.validate()?;
        let pairs = plane_pairs(spec.dims);
        let mut scales = Vec::with_capacity(spec.resolutions.len());
        for (&n, &m) in spec.resolutions.iter().zip(&spec.feature_dims) {
            let planes = pairs
                .iter()
                .map(|&(a, b)| {
                    let res = (spec.axis_resolution(a, n), spec.axis_resolution(b, n));
                    let st = spec.is_spacetime_axis(a) || spec.is_spacetime_axis(b);
                    PlaneGrid::filled((a, b), res, m, st, value)
                })
                .collect::<Result<Vec<_>>>()?;
            scales.push(FieldScale {
                resolution: n,
                feature_dim: m,
                planes,
            });
        }
        let mut feature_offsets = Vec::with_capacity(scales.len());
        let mut acc = 0;
        for s in &scales {
            feature_offsets.push(acc);
            acc += s.feature_dim;
        }
        Ok(Self {
            spec,
            scales,
            feature_offsets,
            feature_len: acc,
        })
    }

    /// Randomly initialized field.
    ///
    /// Space-only planes are uniform in `[-h, h]` with `h = 2 * 0.1^(1/k)` for
    /// `k` space-only planes, so the expected magnitude of their product is
    /// 0.1. Space-time planes start at exactly 1.
    pub fn random<R: Rng + ?Sized>(spec: FieldSpec, rng: &mut R) -> Result<Self> {
        let mut field = Self::constant(spec, 1.0)?;
        let space_planes = field.scales[0].planes.iter().filter(|p| !p.is_spacetime).count();
        let half_width = 2.0 * 0.1f64.powf(1.0 / space_planes as f64);
        for scale in &mut field.scales {
            for plane in &mut scale.planes {
                if !plane.is_spacetime {
                    for v in &mut plane.data {
                        *v = rng.gen_range(-half_width..half_width);
                    }
                }
            }
        }
        Ok(field)
    }

    pub fn spec(&self) -> &FieldSpec {
        &self.spec
    }

    pub fn dims(&self) -> usize {
        self.spec.dims
    }

    pub fn combine(&self) -> Combine {
        self.spec.combine
    }

    pub fn set_combine(&mut self, combine: Combine) {
        self.spec.combine = combine;
    }

    pub fn bounds(&self) -> &[[f64; 2]] {
        &self.spec.bounds
    }

    pub fn scales(&self) -> &[FieldScale] {
        &self.scales
    }

    pub fn scales_mut(&mut self) -> &mut [FieldScale] {
        &mut self.scales
    }

    /// Total feature length `F`, summed over scales.
    pub fn feature_len(&self) -> usize {
        self.feature_len
    }

    pub fn planes(&self) -> impl Iterator<Item = &PlaneGrid> {
        self.scales.iter().flat_map(|s| s.planes.iter())
    }

    pub fn planes_mut(&mut self) -> impl Iterator<Item = &mut PlaneGrid> {
        self.scales.iter_mut().flat_map(|s| s.planes.iter_mut())
    }

    pub fn planes_per_scale(&self) -> usize {
        self.scales[0].planes.len()
    }

    /// Index of a plane in [`Parameters`] order.
    pub fn plane_index(&self, scale: usize, plane: usize) -> usize {
        scale * self.planes_per_scale() + plane
    }

    fn axis_extent(&self, scale: usize, axis: usize) -> usize {
        self.spec.axis_resolution(axis, self.scales[scale].resolution)
    }

    /// Maps a world point into grid space `[0, N)` for `scale`.
    ///
    /// Points outside the bounds are clamped to them; the flag reports it.
    pub fn normalize_coord(&self, q: &[f64], scale: usize) -> (Vec<f64>, bool) {
        let mut out = vec![0.0; self.spec.dims];
        let clamped = self.normalize_into(q, scale, &mut out);
        (out, clamped)
    }

    #[inline]
    fn normalize_into(&self, q: &[f64], scale: usize, out: &mut [f64]) -> bool {
        let mut clamped = false;
        for (a, o) in out.iter_mut().enumerate().take(self.spec.dims) {
            let [lo, hi] = self.spec.bounds[a];
            let mut x = q[a];
            if x < lo || x > hi || x.is_nan() {
                clamped = true;
                x = if x.is_nan() { lo } else { x.clamp(lo, hi) };
            }
            *o = (x - lo) / (hi - lo) * self.axis_extent(scale, a) as f64;
        }
        clamped
    }

    #[inline]
    fn scale_taps(&self, q: &[f64], scale: usize) -> [AxisTap; MAX_DIMS] {
        let mut grid = [0.0; MAX_DIMS];
        self.normalize_into(q, scale, &mut grid[..self.spec.dims]);
        let mut t = [AxisTap::default(); MAX_DIMS];
        for a in 0..self.spec.dims {
            t[a] = AxisTap::new(grid[a], self.axis_extent(scale, a));
        }
        t
    }

    fn check_query(&self, q: &[f64]) {
        assert!(
            q.len() >= self.spec.dims,
            "query has {} coordinates, field needs {}",
            q.len(),
            self.spec.dims
        );
    }

    /// Feature vector at `q` into `out` (length [`Self::feature_len`]).
    pub fn eval_into(&self, q: &[f64], mode: FeatureMode, out: &mut [f64]) {
        self.check_query(q);
        let mut tmp = [0.0; 256];
        for (s, scale) in self.scales.iter().enumerate() {
            let t = self.scale_taps(q, s);
            let m = scale.feature_dim;
            let off = self.feature_offsets[s];
            let acc = &mut out[off..off + m];
            let identity = match self.spec.combine {
                Combine::Multiply => 1.0,
                Combine::Add => 0.0,
            };
            acc.fill(identity);
            for plane in &scale.planes {
                let (a, b) = plane.axes;
                if mode == FeatureMode::StaticOnly && plane.is_spacetime {
                    if self.spec.combine == Combine::Add {
                        acc.iter_mut().for_each(|x| *x += 1.0);
                    }
                    continue;
                }
                let buf = scratch_slice(&mut tmp, m);
                match buf {
                    Some(buf) => {
                        interp_taps(plane, t[a], t[b], buf);
                        combine_into(self.spec.combine, acc, buf);
                    }
                    None => {
                        let mut heap = vec![0.0; m];
                        interp_taps(plane, t[a], t[b], &mut heap);
                        combine_into(self.spec.combine, acc, &heap);
                    }
                }
            }
        }
    }

    /// Feature vector at world point `q`.
    pub fn eval_features(&self, q: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.feature_len];
        self.eval_into(q, FeatureMode::Full, &mut out);
        out
    }

    /// Feature vector with every space-time plane forced to ones.
    pub fn eval_features_static(&self, q: &[f64]) -> Result<Vec<f64>> {
        if self.spec.dims != 4 {
            return Err(Error::InvalidDimension(format!(
                "static-only evaluation needs a 4D field, this one has {} dimensions",
                self.spec.dims
            )));
        }
        let mut out = vec![0.0; self.feature_len];
        self.eval_into(q, FeatureMode::StaticOnly, &mut out);
        Ok(out)
    }

    /// Accumulates `dL/d(plane entries)` for `dL/df = upstream` into `grads`.
    pub fn backprop_features(&self, q: &[f64], upstream: &[f64], grads: &mut Grads) -> Result<()> {
        if upstream.len() != self.feature_len {
            return Err(Error::Shape(format!(
                "upstream gradient has {} entries, field features have {}",
                upstream.len(),
                self.feature_len
            )));
        }
        if upstream.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                iteration: 0,
                term: "feature gradient".into(),
            });
        }
        let mut scratch = Vec::new();
        self.backprop_with(q, upstream, FeatureMode::Full, grads, &mut scratch);
        Ok(())
    }

    /// Hot-path backward with caller-provided scratch; no validation.
    pub(crate) fn backprop_with(
        &self,
        q: &[f64],
        upstream: &[f64],
        mode: FeatureMode,
        grads: &mut Grads,
        scratch: &mut Vec<f64>,
    ) {
        self.check_query(q);
        let k = self.planes_per_scale();
        for (s, scale) in self.scales.iter().enumerate() {
            let off = self.feature_offsets[s];
            let up = &upstream[off..off + scale.feature_dim];
            if up.iter().all(|g| *g == 0.0) {
                continue;
            }
            let t = self.scale_taps(q, s);
            let m = scale.feature_dim;
            let active = |p: &PlaneGrid| !(mode == FeatureMode::StaticOnly && p.is_spacetime);
            match self.spec.combine {
                Combine::Add => {
                    for (p, plane) in scale.planes.iter().enumerate() {
                        if !active(plane) {
                            continue;
                        }
                        let g = &mut grads.tensors[s * k + p];
                        scatter(plane, t[plane.axes.0], t[plane.axes.1], up, g);
                    }
                }
                Combine::Multiply => {
                    // interp values, then prefix/suffix products of the others
                    scratch.clear();
                    scratch.resize(3 * k * m + m, 0.0);
                    let (interp, rest) = scratch.split_at_mut(k * m);
                    let (prefix, rest) = rest.split_at_mut(k * m);
                    let (suffix, gbuf) = rest.split_at_mut(k * m);
                    for (p, plane) in scale.planes.iter().enumerate() {
                        let dst = &mut interp[p * m..(p + 1) * m];
                        if active(plane) {
                            interp_taps(plane, t[plane.axes.0], t[plane.axes.1], dst);
                        } else {
                            dst.fill(1.0);
                        }
                    }
                    for c in 0..m {
                        let mut acc = 1.0;
                        for p in 0..k {
                            prefix[p * m + c] = acc;
                            acc *= interp[p * m + c];
                        }
                        let mut acc = 1.0;
                        for p in (0..k).rev() {
                            suffix[p * m + c] = acc;
                            acc *= interp[p * m + c];
                        }
                    }
                    for (p, plane) in scale.planes.iter().enumerate() {
                        if !active(plane) {
                            continue;
                        }
                        for c in 0..m {
                            gbuf[c] = up[c] * prefix[p * m + c] * suffix[p * m + c];
                        }
                        let g = &mut grads.tensors[s * k + p];
                        scatter(plane, t[plane.axes.0], t[plane.axes.1], gbuf, g);
                    }
                }
            }
        }
    }
}

#[inline]
fn scratch_slice(buf: &mut [f64; 256], m: usize) -> Option<&mut [f64]> {
    if m <= buf.len() {
        Some(&mut buf[..m])
    } else {
        None
    }
}

#[inline]
fn combine_into(combine: Combine, acc: &mut [f64], vals: &[f64]) {
    match combine {
        Combine::Multiply => acc.iter_mut().zip(vals).for_each(|(a, v)| *a *= v),
        Combine::Add => acc.iter_mut().zip(vals).for_each(|(a, v)| *a += v),
    }
}

#[inline]
fn scatter(plane: &PlaneGrid, u: AxisTap, v: AxisTap, g: &[f64], dst: &mut [f64]) {
    let m = plane.feature_dim;
    for (o, w) in taps(plane, u, v) {
        if w == 0.0 {
            continue;
        }
        for (d, gv) in dst[o..o + m].iter_mut().zip(g) {
            *d += w * gv;
        }
    }
}

impl Parameters for KPlaneField {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = Vec::new();
        for (s, scale) in self.scales.iter().enumerate() {
            for plane in &scale.planes {
                out.push(TensorView {
                    name: format!("s{s}.{}", plane.name()),
                    shape: vec![plane.resolution.1, plane.resolution.0, plane.feature_dim],
                    data: &plane.data,
                });
            }
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.planes_mut().map(|p| p.data.as_mut_slice()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_spec(dims: usize, n: usize, m: usize) -> FieldSpec {
        let mut bounds = vec![[0.0, 1.0]; dims];
        if dims == 4 {
            bounds[3] = [0.0, 1.0];
        }
        FieldSpec {
            dims,
            resolutions: vec![n],
            feature_dims: vec![m],
            time_resolution: n,
            bounds,
            combine: Combine::Multiply,
        }
    }

    #[test]
    fn pair_order_is_space_then_time() {
        let names: Vec<_> = plane_pairs(4).into_iter().map(pair_name).collect();
        assert_eq!(names, ["xy", "xz", "yz", "xt", "yt", "zt"]);
        assert_eq!(plane_pairs(3).len(), 3);
    }

    #[test]
    fn normalize_endpoints_and_midpoint() {
        let f = KPlaneField::constant(unit_spec(3, 128, 1), 1.0).unwrap();
        assert_eq!(f.normalize_coord(&[0.0, 0.0, 0.0], 0).0, vec![0.0; 3]);
        assert_eq!(f.normalize_coord(&[0.5, 0.5, 0.5], 0).0, vec![64.0; 3]);
        let f = KPlaneField::constant(unit_spec(3, 512, 1), 1.0).unwrap();
        let (g, clamped) = f.normalize_coord(&[0.3, 0.0, 0.0], 0);
        assert!((g[0] - 153.6).abs() < 1e-9);
        assert!(!clamped);
    }

    #[test]
    fn normalize_clamps_outside_box() {
        let f = KPlaneField::constant(unit_spec(3, 8, 1), 1.0).unwrap();
        let (g, clamped) = f.normalize_coord(&[-0.5, 2.0, 0.5], 0);
        assert!(clamped);
        assert_eq!(g, vec![0.0, 8.0, 4.0]);
    }

    #[test]
    fn projection_selects_pair() {
        assert_eq!(project(&[1.0, 2.0, 3.0, 4.0], (0, 2)), [1.0, 3.0]);
        assert_eq!(project(&[1.0, 2.0, 3.0, 4.0], (2, 3)), [3.0, 4.0]);
        assert_eq!(project(&[5.0, 5.0, 5.0], (0, 1)), [5.0, 5.0]);
    }

    #[test]
    fn bilinear_weights_hand_expanded() {
        let plane = PlaneGrid::from_data((0, 1), (2, 2), 1, false, vec![1.0, 10.0, 100.0, 1000.0])
            .unwrap();
        let v = interp_bilinear(&plane, [0.25, 0.75])[0];
        let expect = 0.1875 * 1.0 + 0.0625 * 10.0 + 0.5625 * 100.0 + 0.1875 * 1000.0;
        assert!((v - expect).abs() < 1e-12);
    }

    #[test]
    fn bilinear_reproduces_nodes_and_averages_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..5 * 4 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let plane = PlaneGrid::from_data((0, 1), (5, 4), 3, false, data).unwrap();
        for j in 0..4 {
            for i in 0..5 {
                assert_eq!(interp_bilinear(&plane, [i as f64, j as f64]), plane.feature(i, j));
            }
        }
        let p = PlaneGrid::from_data((0, 1), (2, 2), 1, false, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        assert!((interp_bilinear(&p, [0.5, 0.5])[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn final_half_cell_clamps_to_edge() {
        let p = PlaneGrid::from_data((0, 1), (2, 2), 1, false, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(interp_bilinear(&p, [1.7, 0.0])[0], 1.0);
    }

    #[test]
    fn product_of_three_node_values() {
        let mut f = KPlaneField::constant(unit_spec(3, 4, 1), 0.0).unwrap();
        // world (0.25, 0.5, 0.5) is grid node (1, 2, 2)
        for (plane, v) in f.planes_mut().zip([2.0, 3.0, 5.0]) {
            let (i, j) = match plane.axes() {
                (0, 1) | (0, 2) => (1, 2),
                _ => (2, 2),
            };
            plane.feature_mut(i, j)[0] = v;
        }
        assert!((f.eval_features(&[0.25, 0.5, 0.5])[0] - 30.0).abs() < 1e-12);
    }

    #[test]
    fn static_eval_rejects_3d() {
        let f = KPlaneField::constant(unit_spec(3, 4, 2), 1.0).unwrap();
        assert!(matches!(f.eval_features_static(&[0.1, 0.2, 0.3]), Err(Error::InvalidDimension(_))));
    }

    #[test]
    fn static_eval_ignores_zero_time_planes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut f = KPlaneField::random(unit_spec(4, 6, 3), &mut rng).unwrap();
        for p in f.planes_mut().filter(|p| p.is_spacetime()) {
            p.data_mut().fill(0.0);
        }
        let q = [0.3, 0.6, 0.2, 0.5];
        assert!(f.eval_features(&q).iter().all(|v| *v == 0.0));
        let mut space_only = f.clone();
        for p in space_only.planes_mut().filter(|p| p.is_spacetime()) {
            p.data_mut().fill(1.0);
        }
        assert_eq!(f.eval_features_static(&q).unwrap(), space_only.eval_features(&q));
    }

    #[test]
    fn zero_upstream_leaves_buffer() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = KPlaneField::random(unit_spec(4, 5, 2), &mut rng).unwrap();
        let mut g = f.zero_grads();
        f.backprop_features(&[0.2, 0.4, 0.6, 0.8], &[0.0, 0.0], &mut g).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn non_finite_upstream_rejected() {
        let f = KPlaneField::constant(unit_spec(3, 4, 1), 1.0).unwrap();
        let mut g = f.zero_grads();
        let err = f.backprop_features(&[0.5; 3], &[f64::NAN], &mut g).unwrap_err();
        assert!(err.is_numerical());
    }

    #[test]
    fn hand_product_rule_on_xy_node() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = KPlaneField::random(unit_spec(3, 4, 1), &mut rng).unwrap();
        let q = [0.3, 0.55, 0.8];
        let mut g = f.zero_grads();
        f.backprop_features(&q, &[2.0], &mut g).unwrap();
        let (grid, _) = f.normalize_coord(&q, 0);
        let planes: Vec<_> = f.planes().collect();
        let xz = interp_bilinear(planes[1], project(&grid, (0, 2)))[0];
        let yz = interp_bilinear(planes[2], project(&grid, (1, 2)))[0];
        let (u, v) = (grid[0], grid[1]);
        let (i0, j0) = (u.floor() as usize, v.floor() as usize);
        let w = (1.0 - (u - i0 as f64)) * (1.0 - (v - j0 as f64));
        let off = planes[0].offset(i0, j0);
        assert!((g.tensors[0][off] - 2.0 * xz * yz * w).abs() < 1e-12);
    }
}

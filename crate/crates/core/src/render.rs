//! Cameras, rays, coordinate warps, depth sampling and compositing.
//!
//! Everything here is independent of the learned model; the model-facing
//! pipeline lives in [`crate::model`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

#[inline]
pub fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm3(a: Vec3) -> f64 {
    dot3(a, a).sqrt()
}

#[inline]
pub fn normalize3(a: Vec3) -> Vec3 {
    let n = norm3(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

#[inline]
pub fn add_scaled(o: Vec3, d: Vec3, t: f64) -> Vec3 {
    [o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]]
}

/// Pinhole camera looking down its local -z axis with +y up.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Camera-to-world transform, rows of a 3x4 matrix.
    pub c2w: [[f64; 4]; 3],
    pub near: f64,
    pub far: f64,
}

impl Camera {
    /// Camera from horizontal field of view; principal point at the image center.
    pub fn from_fov(width: usize, height: usize, fov_x: f64, c2w: [[f64; 4]; 3]) -> Self {
        let focal = width as f64 / (2.0 * (fov_x / 2.0).tan());
        Self {
            width,
            height,
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            c2w,
            near: 0.1,
            far: 10.0,
        }
    }

    pub fn with_depth_range(mut self, near: f64, far: f64) -> Self {
        self.near = near;
        self.far = far;
        self
    }

    pub fn origin(&self) -> Vec3 {
        [self.c2w[0][3], self.c2w[1][3], self.c2w[2][3]]
    }

    pub fn rotate(&self, v: Vec3) -> Vec3 {
        let r = &self.c2w;
        [
            r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
            r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
            r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Config(format!("focal lengths must be positive ({}, {})", self.fx, self.fy)));
        }
        if !(self.near < self.far) {
            return Err(Error::Config(format!("near {} must be below far {}", self.near, self.far)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("camera image is empty".into()));
        }
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|k| self.c2w[k][i] * self.c2w[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (d - want).abs() > 1e-6 {
                    return Err(Error::Config("camera rotation is not orthonormal".into()));
                }
            }
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`.
    pub fn look_at(
        width: usize,
        height: usize,
        fov_x: f64,
        eye: Vec3,
        target: Vec3,
        up: Vec3,
    ) -> Self {
        let back = normalize3([eye[0] - target[0], eye[1] - target[1], eye[2] - target[2]]);
        let right = normalize3(cross(up, back));
        let up = cross(back, right);
        let c2w = [
            [right[0], up[0], back[0], eye[0]],
            [right[1], up[1], back[1], eye[1]],
            [right[2], up[2], back[2], eye[2]],
        ];
        Self::from_fov(width, height, fov_x, c2w)
    }
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub time: Option<f64>,
    pub appearance_id: Option<usize>,
    pub pixel: (usize, usize),
}

/// Back-projects pixel centers `(row, col)` through the pinhole model.
pub fn generate_rays(
    camera: &Camera,
    pixels: &[(usize, usize)],
    time: Option<f64>,
    appearance_id: Option<usize>,
) -> Vec<Ray> {
    pixels
        .iter()
        .map(|&pixel| pixel_ray(camera, pixel, time, appearance_id))
        .collect()
}

pub fn pixel_ray(
    camera: &Camera,
    (row, col): (usize, usize),
    time: Option<f64>,
    appearance_id: Option<usize>,
) -> Ray {
    let local = [
        (col as f64 + 0.5 - camera.cx) / camera.fx,
        -(row as f64 + 0.5 - camera.cy) / camera.fy,
        -1.0,
    ];
    Ray {
        origin: camera.origin(),
        direction: normalize3(camera.rotate(local)),
        time,
        appearance_id,
        pixel: (row, col),
    }
}

/// Ray restricted to `[near, far]` in its own parameterization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RaySegment {
    pub ray: Ray,
    pub near: f64,
    pub far: f64,
}

impl RaySegment {
    pub fn point(&self, t: f64) -> Vec3 {
        add_scaled(self.ray.origin, self.ray.direction, t)
    }
}

/// Forward-facing NDC warp.
///
/// The ray is first moved to the near plane; the result spans `t` in
/// `[0, far]` with unbounded world depth mapped to `z = 1`.
pub fn ndc_transform(ray: &Ray, camera: &Camera) -> Result<RaySegment> {
    let (o, d) = world_to_camera(ray, camera);
    if d[2].abs() < 1e-12 {
        return Err(Error::Config("ray parallel to the image plane cannot be warped to NDC".into()));
    }
    let n = camera.near;
    let t = -(n + o[2]) / d[2];
    let o = add_scaled(o, d, t);
    let ax = -camera.fx / camera.cx;
    let ay = -camera.fy / camera.cy;
    let o_ndc = [ax * o[0] / o[2], ay * o[1] / o[2], 1.0 + 2.0 * n / o[2]];
    let d_ndc = [
        ax * (d[0] / d[2] - o[0] / o[2]),
        ay * (d[1] / d[2] - o[1] / o[2]),
        -2.0 * n / o[2],
    ];
    let len = norm3(d_ndc);
    Ok(RaySegment {
        ray: Ray {
            origin: o_ndc,
            direction: [d_ndc[0] / len, d_ndc[1] / len, d_ndc[2] / len],
            ..*ray
        },
        near: 0.0,
        far: len,
    })
}

/// NDC coordinates of a camera-space point (camera looks down -z).
pub fn ndc_point(p_cam: Vec3, camera: &Camera) -> Vec3 {
    [
        -camera.fx / camera.cx * p_cam[0] / p_cam[2],
        -camera.fy / camera.cy * p_cam[1] / p_cam[2],
        1.0 + 2.0 * camera.near / p_cam[2],
    ]
}

fn world_to_camera(ray: &Ray, camera: &Camera) -> (Vec3, Vec3) {
    let r = &camera.c2w;
    let rel = [
        ray.origin[0] - r[0][3],
        ray.origin[1] - r[1][3],
        ray.origin[2] - r[2][3],
    ];
    let inv = |v: Vec3| -> Vec3 {
        [
            r[0][0] * v[0] + r[1][0] * v[1] + r[2][0] * v[2],
            r[0][1] * v[0] + r[1][1] * v[1] + r[2][1] * v[2],
            r[0][2] * v[0] + r[1][2] * v[1] + r[2][2] * v[2],
        ]
    };
    (inv(rel), inv(ray.direction))
}

/// Max-norm scene contraction into `[-2, 2]^3`.
pub fn contract_linf(x: Vec3) -> Vec3 {
    let n = x[0].abs().max(x[1].abs()).max(x[2].abs());
    if n <= 1.0 {
        return x;
    }
    let s = (2.0 - 1.0 / n) / n;
    [x[0] * s, x[1] * s, x[2] * s]
}

/// Entry and exit distances of a ray through an axis-aligned box.
pub fn intersect_aabb(ray: &Ray, lo: Vec3, hi: Vec3) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        let o = ray.origin[a];
        let d = ray.direction[a];
        if d.abs() < 1e-15 {
            if o < lo[a] || o > hi[a] {
                return None;
            }
            continue;
        }
        let (mut ta, mut tb) = ((lo[a] - o) / d, (hi[a] - o) / d);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    (t0 < t1).then_some((t0, t1))
}

/// `n` stratified depths in `[near, far]`; stratum midpoints without jitter.
pub fn sample_uniform<R: Rng + ?Sized>(
    near: f64,
    far: f64,
    n: usize,
    rng: Option<&mut R>,
) -> Vec<f64> {
    let step = (far - near) / n as f64;
    match rng {
        None => (0..n).map(|k| near + (k as f64 + 0.5) * step).collect(),
        Some(rng) => (0..n)
            .map(|k| near + (k as f64 + rng.gen_range(0.0..1.0)) * step)
            .collect(),
    }
}

/// Interval lengths `t[i+1] - t[i]`, the last one running to `far`.
pub fn intervals(depths: &[f64], far: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(depths.len());
    for (i, t) in depths.iter().enumerate() {
        let next = depths.get(i + 1).copied().unwrap_or(far);
        out.push((next - t).max(0.0));
    }
    out
}

/// Interval edges `[t_0, ..., t_{n-1}, far]` owned by the samples.
pub fn edges(depths: &[f64], far: f64) -> Vec<f64> {
    let mut e = depths.to_vec();
    e.push(far.max(depths.last().copied().unwrap_or(far)));
    e
}

/// Inverse-CDF sampling of a piecewise-constant density over `edges`.
///
/// `weights[i]` is the mass of `[edges[i], edges[i+1]]`. A small uniform
/// floor keeps the CDF strictly increasing; if the mass is (numerically)
/// zero the result is stratified uniform over the full span.
pub fn sample_pdf<R: Rng + ?Sized>(
    edges: &[f64],
    weights: &[f64],
    n: usize,
    rng: Option<&mut R>,
) -> Vec<f64> {
    debug_assert_eq!(edges.len(), weights.len() + 1);
    let (lo, hi) = (edges[0], edges[edges.len() - 1]);
    let total: f64 = weights.iter().sum();
    if !(total > 1e-10) || !total.is_finite() {
        return sample_uniform(lo, hi, n, rng);
    }
    let span = hi - lo;
    let pad = 1e-3 * total;
    let mut cdf = Vec::with_capacity(edges.len());
    cdf.push(0.0);
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        let width = edges[i + 1] - edges[i];
        acc += w.max(0.0) + pad * width / span;
        cdf.push(acc);
    }
    let us: Vec<f64> = match rng {
        None => (0..n).map(|k| (k as f64 + 0.5) / n as f64).collect(),
        Some(rng) => (0..n).map(|k| (k as f64 + rng.gen_range(0.0..1.0)) / n as f64).collect(),
    };
    let mut out = Vec::with_capacity(n);
    let mut bin = 0;
    for u in us {
        let target = u * acc;
        while bin + 1 < weights.len() && cdf[bin + 1] < target {
            bin += 1;
        }
        let (c0, c1) = (cdf[bin], cdf[bin + 1]);
        let frac = if c1 > c0 { ((target - c0) / (c1 - c0)).clamp(0.0, 1.0) } else { 0.5 };
        let mut t = edges[bin] + frac * (edges[bin + 1] - edges[bin]);
        if let Some(&prev) = out.last() {
            if t <= prev {
                t = next_up(prev);
            }
        }
        out.push(t);
    }
    out
}

fn next_up(x: f64) -> f64 {
    if x.is_nan() || x == f64::INFINITY {
        return x;
    }
    if x == 0.0 {
        return f64::from_bits(1);
    }
    let bits = x.to_bits();
    f64::from_bits(if x > 0.0 { bits + 1 } else { bits - 1 })
}

/// Depths chosen for one ray: proposal stages followed by the final set.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DepthPlan {
    pub stages: Vec<Vec<f64>>,
    pub final_depths: Vec<f64>,
}

/// Two-stage (or n-stage) proposal resampling.
///
/// `counts[k]` samples are evaluated by proposal `k` through `densities(k,
/// depths, far)`; stage 0 is stratified uniform and later stages are drawn
/// from the previous stage's weight histogram. The final `n_final` depths
/// come from the last stage's histogram.
pub fn proposal_refine<R, F>(
    near: f64,
    far: f64,
    counts: &[usize],
    n_final: usize,
    mut densities: F,
    mut rng: Option<&mut R>,
) -> DepthPlan
where
    R: Rng + ?Sized,
    F: FnMut(usize, &[f64]) -> Vec<f64>,
{
    let mut plan = DepthPlan::default();
    let mut current = sample_uniform(near, far, counts.first().copied().unwrap_or(n_final), rng.as_deref_mut());
    for k in 0..counts.len() {
        let sigma = densities(k, &current);
        let deltas = intervals(&current, far);
        let w = composite_weights(&sigma, &deltas);
        let e = edges(&current, far);
        let next_n = counts.get(k + 1).copied().unwrap_or(n_final);
        let next = if w.iter().sum::<f64>() > 1e-10 {
            sample_pdf(&e, &w, next_n, rng.as_deref_mut())
        } else {
            sample_uniform(near, far, next_n, rng.as_deref_mut())
        };
        plan.stages.push(std::mem::replace(&mut current, next));
    }
    plan.final_depths = current;
    plan
}

/// Bound-violation penalty between a proposal histogram and the final one.
///
/// For every final interval `j` the proposal mass overlapping it is summed
/// into `bound_j`; the loss is `sum_j max(0, w_j - bound_j)^2 / (w_j + eps)`.
/// Returns the loss and its gradient with respect to the proposal weights.
pub fn histogram_loss(
    prop_edges: &[f64],
    prop_weights: &[f64],
    final_edges: &[f64],
    final_weights: &[f64],
) -> (f64, Vec<f64>) {
    const EPS: f64 = 1e-7;
    let mut grad = vec![0.0; prop_weights.len()];
    let mut loss = 0.0;
    let mut start = 0;
    for j in 0..final_weights.len() {
        let (a, b) = (final_edges[j], final_edges[j + 1]);
        while start < prop_weights.len() && prop_edges[start + 1] <= a {
            start += 1;
        }
        let mut bound = 0.0;
        let mut i = start;
        while i < prop_weights.len() && prop_edges[i] < b {
            if prop_edges[i + 1] > a {
                bound += prop_weights[i];
            }
            i += 1;
        }
        let excess = (final_weights[j] - bound).max(0.0);
        if excess > 0.0 {
            let denom = final_weights[j] + EPS;
            loss += excess * excess / denom;
            let g = -2.0 * excess / denom;
            let mut i = start;
            while i < prop_weights.len() && prop_edges[i] < b {
                if prop_edges[i + 1] > a {
                    grad[i] += g;
                }
                i += 1;
            }
        }
    }
    (loss, grad)
}

/// Compositing weights `w_i = T_i (1 - exp(-sigma_i delta_i))`.
pub fn composite_weights(sigmas: &[f64], deltas: &[f64]) -> Vec<f64> {
    let mut w = Vec::with_capacity(sigmas.len());
    let mut log_t = 0.0_f64;
    for (s, d) in sigmas.iter().zip(deltas) {
        let tau = s * d;
        w.push((-log_t).exp() * -(-tau).exp_m1());
        log_t += tau;
    }
    w
}

/// Result of compositing one ray.
#[derive(Clone, Debug, PartialEq)]
pub struct Composite {
    pub weights: Vec<f64>,
    pub rgb: Vec3,
    pub opacity: f64,
}

/// Volume-rendering quadrature with a constant background.
pub fn volume_render(sigmas: &[f64], deltas: &[f64], colors: &[Vec3], background: Vec3) -> Composite {
    let weights = composite_weights(sigmas, deltas);
    let mut rgb = [0.0; 3];
    let mut opacity = 0.0;
    for (w, c) in weights.iter().zip(colors) {
        for k in 0..3 {
            rgb[k] += w * c[k];
        }
        opacity += w;
    }
    let residual = final_transmittance(sigmas, deltas);
    for k in 0..3 {
        rgb[k] += residual * background[k];
    }
    Composite { weights, rgb, opacity }
}

pub fn final_transmittance(sigmas: &[f64], deltas: &[f64]) -> f64 {
    let tau: f64 = sigmas.iter().zip(deltas).map(|(s, d)| s * d).sum();
    (-tau).exp()
}

/// Gradients of a composite with respect to densities and colors.
///
/// `d_rgb` is `dL/d rgb`; `d_weights`, if given, adds a direct `dL/d w_i`
/// (used by the histogram loss). Returns `(dL/d sigma, dL/d color)`.
pub fn volume_render_backward(
    sigmas: &[f64],
    deltas: &[f64],
    colors: &[Vec3],
    background: Vec3,
    d_rgb: Vec3,
    d_weights: Option<&[f64]>,
) -> (Vec<f64>, Vec<Vec3>) {
    let n = sigmas.len();
    let mut trans = Vec::with_capacity(n + 1); // T_0..T_n
    let mut weights = Vec::with_capacity(n);
    let mut log_t = 0.0_f64;
    trans.push(1.0);
    for i in 0..n {
        let tau = sigmas[i] * deltas[i];
        weights.push((-log_t).exp() * -(-tau).exp_m1());
        log_t += tau;
        trans.push((-log_t).exp());
    }
    let mut d_color = vec![[0.0; 3]; n];
    let mut gw = vec![0.0; n];
    for i in 0..n {
        for k in 0..3 {
            d_color[i][k] = weights[i] * d_rgb[k];
        }
        gw[i] = dot3(d_rgb, colors[i]) + d_weights.map_or(0.0, |d| d[i]);
    }
    let bg_term = trans[n] * dot3(d_rgb, background);
    let mut d_sigma = vec![0.0; n];
    let mut suffix = 0.0; // sum_{i>k} w_i G_i
    for k in (0..n).rev() {
        let d_tau = trans[k + 1] * gw[k] - suffix - bg_term;
        d_sigma[k] = d_tau * deltas[k];
        suffix += weights[k] * gw[k];
    }
    (d_sigma, d_color)
}

//! Photometric loss, plane regularizers and importance weights for rays.
//!
//! Every regularizer is normalized by the number of difference terms it
//! actually sums, so values stay comparable across plane shapes. Field-level
//! values average over planes within a scale, then over scales.

use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::params::Grads;
use crate::planes::{KPlaneField, PlaneGrid};
use crate::render::{Camera, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub tv_space: f64,
    pub smooth_time: f64,
    pub sparse_transients: f64,
    pub histogram: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::static_scene()
    }
}

impl LossWeights {
    pub fn static_scene() -> Self {
        Self {
            tv_space: 2e-4,
            smooth_time: 0.0,
            sparse_transients: 0.0,
            histogram: 1.0,
        }
    }

    pub fn dynamic_scene() -> Self {
        Self {
            tv_space: 1e-4,
            smooth_time: 1e-2,
            sparse_transients: 1e-4,
            histogram: 1.0,
        }
    }

    pub fn zero() -> Self {
        Self {
            tv_space: 0.0,
            smooth_time: 0.0,
            sparse_transients: 0.0,
            histogram: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.tv_space, self.smooth_time, self.sparse_transients, self.histogram];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }
}

/// Mean squared error over rays and channels.
pub fn photometric_loss(pred: &[Vec3], target: &[Vec3]) -> f64 {
    assert_eq!(pred.len(), target.len(), "batch sizes differ");
    if pred.is_empty() {
        return 0.0;
    }
    let sum: f64 = pred
        .iter()
        .zip(target)
        .flat_map(|(p, t)| (0..3).map(move |k| (p[k] - t[k]).powi(2)))
        .sum();
    sum / (3 * pred.len()) as f64
}

/// Squared-difference smoothness along the first axis (and the second, for
/// space-only planes). Gradients scaled by `scale` are added when given.
pub fn tv_loss(plane: &PlaneGrid) -> f64 {
    tv_accumulate(plane, 0.0, None)
}

/// Calls `f(a, b)` with the storage offsets of every differenced pair.
fn for_each_tv_pair(plane: &PlaneGrid, mut f: impl FnMut(usize, usize)) {
    let (nu, nv) = plane.resolution();
    for j in 0..nv {
        for i in 1..nu {
            f(plane.offset(i - 1, j), plane.offset(i, j));
        }
    }
    if !plane.is_spacetime() {
        for j in 1..nv {
            for i in 0..nu {
                f(plane.offset(i, j - 1), plane.offset(i, j));
            }
        }
    }
}

fn tv_accumulate(plane: &PlaneGrid, scale: f64, grad: Option<&mut [f64]>) -> f64 {
    let m = plane.feature_dim();
    let data = plane.data();
    let mut terms = 0usize;
    let mut sum = 0.0;
    for_each_tv_pair(plane, |a, b| {
        for k in 0..m {
            sum += (data[b + k] - data[a + k]).powi(2);
        }
        terms += 1;
    });
    if terms == 0 {
        return 0.0;
    }
    if let Some(g) = grad {
        let c = 2.0 * scale / terms as f64;
        for_each_tv_pair(plane, |a, b| {
            for k in 0..m {
                let d = c * (data[b + k] - data[a + k]);
                g[b + k] += d;
                g[a + k] -= d;
            }
        });
    }
    sum / terms as f64
}

/// Mean squared second difference along the time axis of a space-time plane.
pub fn smooth_time_loss(plane: &PlaneGrid) -> f64 {
    smooth_accumulate(plane, 0.0, None)
}

fn smooth_accumulate(plane: &PlaneGrid, scale: f64, mut grad: Option<&mut [f64]>) -> f64 {
    if !plane.is_spacetime() {
        return 0.0;
    }
    let (nu, nt) = plane.resolution();
    if nt < 3 {
        return 0.0;
    }
    let m = plane.feature_dim();
    let data = plane.data();
    let terms = (nu * (nt - 2)) as f64;
    let c = 2.0 * scale / terms;
    let mut sum = 0.0;
    for j in 1..nt - 1 {
        for i in 0..nu {
            let (a, b, d) = (plane.offset(i, j - 1), plane.offset(i, j), plane.offset(i, j + 1));
            for k in 0..m {
                let lap = data[a + k] - 2.0 * data[b + k] + data[d + k];
                sum += lap * lap;
                if let Some(g) = grad.as_deref_mut() {
                    g[a + k] += c * lap;
                    g[b + k] -= 2.0 * c * lap;
                    g[d + k] += c * lap;
                }
            }
        }
    }
    sum / terms
}

/// Sum of `|1 - p|` over every entry of the given space-time planes.
pub fn sparse_transients_loss<'a>(planes: impl IntoIterator<Item = &'a PlaneGrid>) -> f64 {
    planes
        .into_iter()
        .filter(|p| p.is_spacetime())
        .map(|p| sparse_accumulate(p, 0.0, None))
        .sum()
}

fn sparse_accumulate(plane: &PlaneGrid, scale: f64, mut grad: Option<&mut [f64]>) -> f64 {
    let mut sum = 0.0;
    for (i, v) in plane.data().iter().enumerate() {
        let d = v - 1.0;
        sum += d.abs();
        if let Some(g) = grad.as_deref_mut() {
            // subgradient 0 at the kink keeps identity entries in place
            if d != 0.0 {
                g[i] += scale * d.signum();
            }
        }
    }
    sum
}

/// Unweighted regularizer values of one field.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RegularizerTerms {
    pub tv_space: f64,
    pub smooth_time: f64,
    pub sparse_transients: f64,
}

impl RegularizerTerms {
    pub fn weighted(&self, w: &LossWeights) -> f64 {
        w.tv_space * self.tv_space + w.smooth_time * self.smooth_time + w.sparse_transients * self.sparse_transients
    }
}

/// Evaluates the field regularizers; with `grads`, adds their weighted
/// gradients. Terms with zero weight are skipped (reported as 0).
pub fn field_regularizers(field: &KPlaneField, weights: &LossWeights, mut grads: Option<&mut Grads>) -> RegularizerTerms {
    let scales = field.scales();
    let n_scales = scales.len() as f64;
    let mut out = RegularizerTerms::default();
    for (s, scale) in scales.iter().enumerate() {
        let planes = &scale.planes;
        let st_count = planes.iter().filter(|p| p.is_spacetime()).count() as f64;
        for (p, plane) in planes.iter().enumerate() {
            let idx = field.plane_index(s, p);
            let mut g = grads.as_deref_mut().map(|g| g.tensors[idx].as_mut_slice());
            if weights.tv_space > 0.0 {
                let c = 1.0 / (planes.len() as f64 * n_scales);
                out.tv_space += c * tv_accumulate(plane, weights.tv_space * c, g.as_deref_mut());
            }
            if plane.is_spacetime() {
                let c = 1.0 / (st_count * n_scales);
                if weights.smooth_time > 0.0 {
                    out.smooth_time += c * smooth_accumulate(plane, weights.smooth_time * c, g.as_deref_mut());
                }
                if weights.sparse_transients > 0.0 {
                    let c = 1.0 / n_scales;
                    out.sparse_transients +=
                        c * sparse_accumulate(plane, weights.sparse_transients * c, g.as_deref_mut());
                }
            }
        }
    }
    out
}

/// Unweighted regularizer values regardless of the configured weights.
pub fn field_regularizer_values(field: &KPlaneField) -> RegularizerTerms {
    let ones = LossWeights {
        tv_space: 1.0,
        smooth_time: 1.0,
        sparse_transients: 1.0,
        histogram: 0.0,
    };
    field_regularizers(field, &ones, None)
}

/// Frames of one fixed camera, in time order.
#[derive(Clone, Debug)]
pub struct CameraVideo<'a> {
    pub cameras: Vec<&'a Camera>,
    pub frames: Vec<&'a Image>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IstOptions {
    /// Frames before and after considered for the variation.
    pub window: usize,
    /// Side of the square max-pooling neighborhood.
    pub pool: usize,
    /// Minimum probability as a fraction of the uniform probability.
    pub floor: f64,
}

impl Default for IstOptions {
    fn default() -> Self {
        Self {
            window: 25,
            pool: 8,
            floor: 1e-2,
        }
    }
}

/// Ray-sampling distribution over every (video, frame, pixel).
#[derive(Clone, Debug)]
pub struct IstTable {
    /// Probabilities flattened as `[video][frame][pixel]`; sums to 1.
    pub weights: Vec<f64>,
    pub frames_per_video: Vec<usize>,
    pub pixels_per_frame: usize,
    pub window: usize,
    sampler: Option<WeightedIndex<f64>>,
}

impl IstTable {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Weight for a pixel of a given frame.
    pub fn weight(&self, video: usize, frame: usize, pixel: usize) -> f64 {
        let base: usize = self.frames_per_video[..video].iter().sum();
        self.weights[(base + frame) * self.pixels_per_frame + pixel]
    }

    /// Draws a flat index into [`IstTable::weights`].
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match &self.sampler {
            Some(s) => s.sample(rng),
            None => rng.gen_range(0..self.weights.len()),
        }
    }

    /// Splits a flat index into (video, frame, pixel).
    pub fn locate(&self, flat: usize) -> (usize, usize, usize) {
        let mut frame = flat / self.pixels_per_frame;
        let pixel = flat % self.pixels_per_frame;
        for (v, &n) in self.frames_per_video.iter().enumerate() {
            if frame < n {
                return (v, frame, pixel);
            }
            frame -= n;
        }
        panic!("flat index {flat} out of range");
    }
}

/// Importance weights from each pixel's largest color change within
/// `window` frames, max-pooled, floored and normalized.
pub fn ist_weights(videos: &[CameraVideo], opts: IstOptions) -> Result<IstTable> {
    let first = videos
        .iter()
        .flat_map(|v| v.frames.first())
        .next()
        .ok_or_else(|| Error::Config("importance sampling needs at least one frame".into()))?;
    let (w, h) = (first.width, first.height);
    for v in videos {
        if v.cameras.len() != v.frames.len() {
            return Err(Error::Shape("one camera per frame expected".into()));
        }
        if let Some(c0) = v.cameras.first() {
            let moving = v.cameras.iter().any(|c| {
                c.c2w
                    .iter()
                    .flatten()
                    .zip(c0.c2w.iter().flatten())
                    .any(|(a, b)| (a - b).abs() > 1e-9)
            });
            if moving {
                return Err(Error::Config(
                    "importance sampling cannot be used for monocular (moving-camera) videos".into(),
                ));
            }
        }
        if v.frames.iter().any(|f| f.width != w || f.height != h) {
            return Err(Error::Shape("all frames must share one resolution".into()));
        }
    }
    let pixels = w * h;
    let mut raw = Vec::new();
    for v in videos {
        let n = v.frames.len();
        for t in 0..n {
            let lo = t.saturating_sub(opts.window);
            let hi = (t + opts.window).min(n - 1);
            let mut var = vec![0.0f64; pixels];
            for s in lo..=hi {
                if s == t {
                    continue;
                }
                for (p, slot) in var.iter_mut().enumerate() {
                    for k in 0..3 {
                        let d = (v.frames[t].data[p * 3 + k] - v.frames[s].data[p * 3 + k]).abs();
                        *slot = slot.max(d);
                    }
                }
            }
            raw.extend(max_pool(&var, w, h, opts.pool));
        }
    }
    let total: f64 = raw.iter().sum();
    let n = raw.len() as f64;
    let floor = opts.floor / n;
    let mut weights: Vec<f64> = if total > 0.0 {
        raw.iter().map(|v| (v / total).max(floor)).collect()
    } else {
        vec![1.0 / n; raw.len()]
    };
    let z: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|v| *v /= z);
    let sampler = WeightedIndex::new(&weights).ok();
    Ok(IstTable {
        weights,
        frames_per_video: videos.iter().map(|v| v.frames.len()).collect(),
        pixels_per_frame: pixels,
        window: opts.window,
        sampler,
    })
}

/// Max over the `pool x pool` neighborhood centred (rounding down) on each pixel.
fn max_pool(values: &[f64], w: usize, h: usize, pool: usize) -> Vec<f64> {
    if pool <= 1 {
        return values.to_vec();
    }
    let before = (pool - 1) / 2;
    let after = pool / 2;
    let mut out = vec![0.0; values.len()];
    for r in 0..h {
        for c in 0..w {
            let mut m = 0.0f64;
            for rr in r.saturating_sub(before)..=(r + after).min(h - 1) {
                for cc in c.saturating_sub(before)..=(c + after).min(w - 1) {
                    m = m.max(values[rr * w + cc]);
                }
            }
            out[r * w + c] = m;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane(nu: usize, nv: usize, m: usize, spacetime: bool, data: Vec<f64>) -> PlaneGrid {
        let axes = if spacetime { (0, 3) } else { (0, 1) };
        PlaneGrid::from_data(axes, (nu, nv), m, spacetime, data).unwrap()
    }

    #[test]
    fn photometric_offset() {
        let p = vec![[0.6, 0.6, 0.6]; 4];
        let t = vec![[0.5, 0.5, 0.5]; 4];
        assert!((photometric_loss(&p, &t) - 0.01).abs() < 1e-15);
        assert_eq!(photometric_loss(&t, &t), 0.0);
    }

    #[test]
    fn tv_hand_grid() {
        // rows (0, 1): u-differences are 1, v-differences 0
        let p = plane(2, 2, 1, false, vec![0.0, 1.0, 0.0, 1.0]);
        assert_eq!(tv_loss(&p), 0.5);
        let p = plane(2, 1, 1, false, vec![0.0, 1.0]);
        assert_eq!(tv_loss(&p), 1.0);
        let p = plane(1, 1, 3, false, vec![4.0; 3]);
        assert_eq!(tv_loss(&p), 0.0);
    }

    #[test]
    fn tv_spacetime_ignores_time() {
        let p = plane(2, 2, 1, true, vec![0.0, 0.0, 5.0, 5.0]);
        assert_eq!(tv_loss(&p), 0.0);
    }

    #[test]
    fn smooth_hand_grid() {
        let p = plane(1, 3, 1, true, vec![0.0, 1.0, 0.0]);
        assert_eq!(smooth_time_loss(&p), 4.0);
        let p = plane(2, 3, 1, true, vec![0.0, 1.0, 1.0, 2.0, 2.0, 3.0]);
        assert_eq!(smooth_time_loss(&p), 0.0);
    }

    #[test]
    fn sparse_single_deviation() {
        let mut d = vec![1.0; 8];
        d[5] = 1.5;
        let p = plane(2, 4, 1, true, d);
        assert_eq!(sparse_transients_loss([&p]), 0.5);
    }

    #[test]
    fn ist_blinking_pixel() {
        let cam = Camera::from_fov(2, 2, 1.0, [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]]);
        let off = Image::new(2, 2);
        let mut on = Image::new(2, 2);
        on.set(0, 0, [1.0, 0.0, 0.0]);
        let video = CameraVideo {
            cameras: vec![&cam; 3],
            frames: vec![&off, &on, &off],
        };
        let opts = IstOptions { window: 1, pool: 1, floor: 1e-2 };
        let t = ist_weights(&[video], opts).unwrap();
        let sum: f64 = t.weights.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(t.weight(0, 1, 0) > t.weight(0, 1, 1));
        assert!(t.weight(0, 0, 0) > t.weight(0, 0, 3));
    }
}

//! Procedural scenes with analytically traced ground truth.
//!
//! Scenes are built from lambertian-plus-emissive spheres and boxes lit by
//! one directional light. Ground truth is supersampled in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::imaging::Image;
use crate::model::CoordMode;
use crate::render::{add_scaled, dot3, normalize3, Camera, Ray, Vec3};

use super::dataset::{DatasetKind, Frame, SceneDataset};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    Sphere { center: Vec3, radius: f64 },
    Cuboid { min: Vec3, max: Vec3 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub albedo: Vec3,
    pub emission: Vec3,
    /// World-space velocity per unit of normalized time.
    pub velocity: Vec3,
}

impl Primitive {
    fn at(&self, time: f64) -> Shape {
        let off = self.velocity.map(|v| v * time);
        match self.shape {
            Shape::Sphere { center, radius } => Shape::Sphere {
                center: add_scaled(center, off, 1.0),
                radius,
            },
            Shape::Cuboid { min, max } => Shape::Cuboid {
                min: add_scaled(min, off, 1.0),
                max: add_scaled(max, off, 1.0),
            },
        }
    }

    pub fn is_moving(&self) -> bool {
        self.velocity.iter().any(|v| *v != 0.0)
    }
}

/// Returns `(t, normal)` of the nearest hit in front of the ray origin.
fn intersect(shape: &Shape, o: Vec3, d: Vec3) -> Option<(f64, Vec3)> {
    match *shape {
        Shape::Sphere { center, radius } => {
            let oc = [o[0] - center[0], o[1] - center[1], o[2] - center[2]];
            let b = dot3(oc, d);
            let c = dot3(oc, oc) - radius * radius;
            let disc = b * b - c;
            if disc < 0.0 {
                return None;
            }
            let s = disc.sqrt();
            let t = if -b - s > 1e-9 { -b - s } else { -b + s };
            if t <= 1e-9 {
                return None;
            }
            let p = add_scaled(o, d, t);
            Some((t, normalize3([p[0] - center[0], p[1] - center[1], p[2] - center[2]])))
        }
        Shape::Cuboid { min, max } => {
            let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
            let mut axis0 = 0;
            let mut sign0 = 0.0;
            for a in 0..3 {
                if d[a].abs() < 1e-15 {
                    if o[a] < min[a] || o[a] > max[a] {
                        return None;
                    }
                    continue;
                }
                let inv = 1.0 / d[a];
                let (mut n, mut f) = ((min[a] - o[a]) * inv, (max[a] - o[a]) * inv);
                let mut s = -1.0;
                if n > f {
                    std::mem::swap(&mut n, &mut f);
                    s = 1.0;
                }
                if n > t0 {
                    t0 = n;
                    axis0 = a;
                    sign0 = s;
                }
                t1 = t1.min(f);
            }
            if t0 > t1 || t0 <= 1e-9 {
                return None;
            }
            let mut normal = [0.0; 3];
            normal[axis0] = sign0;
            Some((t0, normal))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub primitive: usize,
    pub t: f64,
    pub color: Vec3,
}

/// Analytic scene description plus its camera rig.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyScene {
    pub primitives: Vec<Primitive>,
    pub background: Vec3,
    pub light_dir: Vec3,
    pub ambient: f64,
    pub bounds: [[f64; 2]; 3],
}

/// Global color-temperature change: warm for positive, cool for negative.
pub fn temperature_gain(shift: f64) -> Vec3 {
    [1.0 + 0.25 * shift, 1.0, 1.0 - 0.25 * shift]
}

impl ToyScene {
    pub fn trace(&self, ray: &Ray, time: f64) -> Option<Hit> {
        let mut best: Option<(usize, f64, Vec3)> = None;
        for (i, p) in self.primitives.iter().enumerate() {
            if let Some((t, n)) = intersect(&p.at(time), ray.origin, ray.direction) {
                if best.map_or(true, |b| t < b.1) {
                    best = Some((i, t, n));
                }
            }
        }
        best.map(|(i, t, n)| {
            let p = &self.primitives[i];
            let diffuse = dot3(n, self.light_dir).max(0.0);
            let shade = self.ambient + (1.0 - self.ambient) * diffuse;
            let color = [0, 1, 2].map(|k| (p.emission[k] + p.albedo[k] * shade).clamp(0.0, 1.0));
            Hit { primitive: i, t, color }
        })
    }

    fn shade_ray(&self, ray: &Ray, time: f64, gain: Vec3) -> (Vec3, f64) {
        match self.trace(ray, time) {
            Some(h) => ([0, 1, 2].map(|k| (h.color[k] * gain[k]).clamp(0.0, 1.0)), 1.0),
            None => (self.background, 0.0),
        }
    }

    /// Supersampled render; `s x s` subpixel grid per pixel.
    pub fn render(&self, camera: &Camera, time: f64, shift: f64, supersample: usize) -> Image {
        self.render_with_alpha(camera, time, shift, supersample).0
    }

    /// Render plus per-pixel coverage by geometry.
    pub fn render_with_alpha(&self, camera: &Camera, time: f64, shift: f64, supersample: usize) -> (Image, Vec<f64>) {
        let s = supersample.max(1);
        let gain = temperature_gain(shift);
        let mut img = Image::new(camera.width, camera.height);
        let mut alpha = vec![0.0; camera.width * camera.height];
        for row in 0..camera.height {
            for col in 0..camera.width {
                let mut acc = [0.0; 3];
                let mut cover = 0.0;
                for sr in 0..s {
                    for sc in 0..s {
                        let fy = row as f64 + (sr as f64 + 0.5) / s as f64;
                        let fx = col as f64 + (sc as f64 + 0.5) / s as f64;
                        let ray = subpixel_ray(camera, fy, fx);
                        let (c, a) = self.shade_ray(&ray, time, gain);
                        cover += a;
                        for k in 0..3 {
                            acc[k] += c[k];
                        }
                    }
                }
                img.set(row, col, acc.map(|v| v / (s * s) as f64));
                alpha[row * camera.width + col] = cover / (s * s) as f64;
            }
        }
        (img, alpha)
    }

    /// Pixels whose center ray hits a moving primitive at any sampled time.
    pub fn motion_mask(&self, camera: &Camera, time_samples: usize) -> Vec<bool> {
        let mut mask = vec![false; camera.width * camera.height];
        let n = time_samples.max(2);
        for row in 0..camera.height {
            for col in 0..camera.width {
                let ray = subpixel_ray(camera, row as f64 + 0.5, col as f64 + 0.5);
                mask[row * camera.width + col] = (0..n).any(|k| {
                    let t = k as f64 / (n - 1) as f64;
                    self.trace(&ray, t).is_some_and(|h| self.primitives[h.primitive].is_moving())
                });
            }
        }
        mask
    }

    /// Per-axis world interval covered by moving primitives over `[0, 1]`.
    pub fn motion_footprint(&self) -> Option<[[f64; 2]; 3]> {
        let mut out: Option<[[f64; 2]; 3]> = None;
        for p in self.primitives.iter().filter(|p| p.is_moving()) {
            for t in [0.0, 1.0] {
                let (lo, hi) = match p.at(t) {
                    Shape::Sphere { center, radius } => (center.map(|c| c - radius), center.map(|c| c + radius)),
                    Shape::Cuboid { min, max } => (min, max),
                };
                let fp = out.get_or_insert([[f64::INFINITY, f64::NEG_INFINITY]; 3]);
                for a in 0..3 {
                    fp[a][0] = fp[a][0].min(lo[a]);
                    fp[a][1] = fp[a][1].max(hi[a]);
                }
            }
        }
        out
    }
}

fn subpixel_ray(camera: &Camera, fy: f64, fx: f64) -> Ray {
    let local = [(fx - camera.cx) / camera.fx, -(fy - camera.cy) / camera.fy, -1.0];
    Ray {
        origin: camera.origin(),
        direction: normalize3(camera.rotate(local)),
        time: None,
        appearance_id: None,
        pixel: (fy as usize, fx as usize),
    }
}

/// Color of a ray crossing an emissive slab of constant density.
pub fn emissive_slab_color(sigma: f64, length: f64, emission: Vec3, background: Vec3) -> Vec3 {
    let trans = (-sigma * length).exp();
    [0, 1, 2].map(|k| emission[k] * (1.0 - trans) + background[k] * trans)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToyKind {
    #[default]
    Static,
    Dynamic,
    Appearance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToySpec {
    pub kind: ToyKind,
    pub width: usize,
    pub height: usize,
    /// Training views (static/appearance) or cameras (dynamic).
    pub views: usize,
    pub val_views: usize,
    /// Frames per camera for dynamic scenes.
    pub frames: usize,
    pub fov_x: f64,
    pub radius: f64,
    pub supersample: usize,
}

impl ToySpec {
    pub fn static_scene() -> Self {
        Self {
            kind: ToyKind::Static,
            width: 64,
            height: 64,
            views: 8,
            val_views: 4,
            frames: 1,
            fov_x: 0.7,
            radius: 3.6,
            supersample: 3,
        }
    }

    pub fn single_view(size: usize) -> Self {
        Self {
            width: size,
            height: size,
            views: 1,
            val_views: 0,
            ..Self::static_scene()
        }
    }

    pub fn dynamic_scene() -> Self {
        Self {
            kind: ToyKind::Dynamic,
            width: 32,
            height: 32,
            views: 4,
            val_views: 1,
            frames: 16,
            ..Self::static_scene()
        }
    }

    pub fn appearance_scene() -> Self {
        Self {
            kind: ToyKind::Appearance,
            width: 32,
            height: 32,
            views: 8,
            val_views: 2,
            ..Self::static_scene()
        }
    }
}

fn static_primitives() -> Vec<Primitive> {
    let still = |shape, albedo, emission| Primitive {
        shape,
        albedo,
        emission,
        velocity: [0.0; 3],
    };
    vec![
        still(
            Shape::Sphere { center: [0.0, 0.0, 0.0], radius: 0.45 },
            [0.85, 0.2, 0.15],
            [0.0; 3],
        ),
        still(
            Shape::Cuboid { min: [-0.9, -0.9, -0.9], max: [0.9, -0.6, 0.9] },
            [0.3, 0.6, 0.3],
            [0.0; 3],
        ),
        still(
            Shape::Sphere { center: [0.55, -0.35, 0.5], radius: 0.22 },
            [0.15, 0.3, 0.9],
            [0.0; 3],
        ),
        still(
            Shape::Cuboid { min: [-0.75, -0.6, -0.7], max: [-0.35, 0.1, -0.3] },
            [0.2, 0.2, 0.2],
            [0.7, 0.6, 0.1],
        ),
    ]
}

fn dynamic_primitives() -> Vec<Primitive> {
    let mut p = static_primitives();
    // keep the floor and the emissive box; replace the spheres with one moving sphere
    p.retain(|q| matches!(q.shape, Shape::Cuboid { .. }));
    p.push(Primitive {
        shape: Shape::Sphere { center: [-0.45, 0.0, 0.3], radius: 0.28 },
        albedo: [0.9, 0.85, 0.2],
        emission: [0.0; 3],
        velocity: [0.9, 0.0, 0.0],
    });
    p
}

/// Orbit camera at azimuth `az` and elevation `el` looking at the origin.
pub fn orbit_camera(width: usize, height: usize, fov_x: f64, radius: f64, az: f64, el: f64) -> Camera {
    let eye = [radius * el.cos() * az.sin(), radius * el.sin(), radius * el.cos() * az.cos()];
    Camera::look_at(width, height, fov_x, eye, [0.0; 3], [0.0, 1.0, 0.0]).with_depth_range(0.1, 2.0 * radius)
}

/// Builds the dataset and the analytic scene it was rendered from.
pub fn make_toy_scene(spec: &ToySpec, seed: u64) -> (SceneDataset, ToyScene) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let az0: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let dynamic = spec.kind == ToyKind::Dynamic;
    let scene = ToyScene {
        primitives: if dynamic { dynamic_primitives() } else { static_primitives() },
        background: if dynamic { [0.0; 3] } else { [1.0; 3] },
        light_dir: normalize3([0.4, 0.8, 0.45]),
        ambient: 0.3,
        bounds: [[-1.0, 1.0]; 3],
    };
    let cam = |i: f64, n: usize, el: f64| {
        let az = az0 + std::f64::consts::TAU * i / n.max(1) as f64;
        orbit_camera(spec.width, spec.height, spec.fov_x, spec.radius, az, el)
    };
    let elevation = |i: usize| if i % 2 == 0 { 0.35 } else { 0.7 };
    let mut train = Vec::new();
    let mut val = Vec::new();
    let ss = spec.supersample;
    match spec.kind {
        ToyKind::Static | ToyKind::Appearance => {
            let shifts: Vec<f64> = (0..spec.views)
                .map(|i| {
                    if spec.kind == ToyKind::Appearance {
                        -1.0 + 2.0 * i as f64 / (spec.views.max(2) - 1) as f64
                    } else {
                        0.0
                    }
                })
                .collect();
            for i in 0..spec.views {
                let camera = cam(i as f64, spec.views, elevation(i));
                let (image, alpha) = scene.render_with_alpha(&camera, 0.0, shifts[i], ss);
                train.push(Frame {
                    image,
                    alpha: Some(alpha),
                    camera,
                    time: None,
                    appearance_id: (spec.kind == ToyKind::Appearance).then_some(i),
                    camera_id: i,
                    file_path: format!("train/{i}"),
                });
            }
            for i in 0..spec.val_views {
                let camera = cam(i as f64 + 0.5, spec.val_views, 0.5);
                let (image, alpha) = scene.render_with_alpha(&camera, 0.0, 0.0, ss);
                val.push(Frame {
                    image,
                    alpha: Some(alpha),
                    camera,
                    time: None,
                    appearance_id: None,
                    camera_id: spec.views + i,
                    file_path: format!("val/{i}"),
                });
            }
        }
        ToyKind::Dynamic => {
            let n = spec.frames.max(1);
            let time = |k: usize| if n == 1 { 0.0 } else { k as f64 / (n - 1) as f64 };
            // cameras spread over the front half so every one sees the motion
            let front = |i: f64, m: usize| {
                let az = -0.9 + 1.8 * i / (m.max(2) - 1) as f64;
                orbit_camera(spec.width, spec.height, spec.fov_x, spec.radius, az, 0.3 + 0.15 * (i % 2.0))
            };
            for c in 0..spec.views {
                let camera = front(c as f64, spec.views);
                for k in 0..n {
                    let (image, alpha) = scene.render_with_alpha(&camera, time(k), 0.0, ss);
                    train.push(Frame {
                        image,
                        alpha: Some(alpha),
                        camera: camera.clone(),
                        time: Some(time(k)),
                        appearance_id: None,
                        camera_id: c,
                        file_path: format!("train/c{c}_f{k}"),
                    });
                }
            }
            for v in 0..spec.val_views {
                let camera = orbit_camera(spec.width, spec.height, spec.fov_x, spec.radius, 0.15 + 0.3 * v as f64, 0.55);
                for k in (0..n).step_by(4) {
                    let (image, alpha) = scene.render_with_alpha(&camera, time(k), 0.0, ss);
                    val.push(Frame {
                        image,
                        alpha: Some(alpha),
                        camera: camera.clone(),
                        time: Some(time(k)),
                        appearance_id: None,
                        camera_id: spec.views + v,
                        file_path: format!("val/c{v}_f{k}"),
                    });
                }
            }
        }
    }
    let kind = match spec.kind {
        ToyKind::Static => DatasetKind::Static,
        ToyKind::Dynamic => DatasetKind::MultiviewVideo,
        ToyKind::Appearance => DatasetKind::VariableAppearance,
    };
    let ds = SceneDataset {
        kind,
        train,
        val,
        test: Vec::new(),
        bounds: scene.bounds,
        background: scene.background,
        coord_mode: CoordMode::Box,
    };
    (ds, scene)
}

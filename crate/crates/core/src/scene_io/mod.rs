//! Datasets, toy scenes, configuration, checkpoints and image metrics.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod metrics;
pub mod toy;

use std::path::Path;

use crate::error::Result;
use crate::imaging::Image;
use crate::planes::{pair_name, KPlaneField};

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::TrainConfig;
pub use dataset::{load_transforms_dataset, write_transforms_dataset, DatasetKind, Frame, SceneDataset, Split};
pub use metrics::{psnr, ssim};
pub use toy::{make_toy_scene, ToyKind, ToyScene, ToySpec};

/// Per-cell mean `|p - 1|` over features of one plane as a grayscale image,
/// scaled so the largest deviation is white (all black when none).
///
/// Rows follow the plane's second axis (time for space-time planes).
pub fn time_plane_image(field: &KPlaneField, scale: usize, axes: (usize, usize)) -> Result<Image> {
    let planes = &field.scales()[scale].planes;
    let plane = planes
        .iter()
        .find(|p| p.axes() == axes)
        .ok_or_else(|| crate::Error::Config(format!("field has no {} plane", pair_name(axes))))?;
    let (nu, nv) = plane.resolution();
    let m = plane.feature_dim() as f64;
    let mut dev = vec![0.0; nu * nv];
    for j in 0..nv {
        for i in 0..nu {
            dev[j * nu + i] = plane.feature(i, j).iter().map(|v| (v - 1.0).abs()).sum::<f64>() / m;
        }
    }
    let max = dev.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        dev.iter_mut().for_each(|v| *v /= max);
    }
    Ok(Image::from_gray(nu, nv, &dev))
}

pub fn export_time_plane_image(field: &KPlaneField, scale: usize, axes: (usize, usize), path: impl AsRef<Path>) -> Result<Image> {
    let img = time_plane_image(field, scale, axes)?;
    img.save_png(path)?;
    Ok(img)
}

/// Fraction of space-time plane entries with `|p - 1| <= tol` among those
/// whose spatial node lies outside `footprint` (world-space intervals).
///
/// Nodes within one cell of the footprint are excluded since bilinear
/// interpolation lets them shape points inside it. Returns 1 when no entry
/// qualifies.
pub fn quiet_fraction_outside(field: &KPlaneField, footprint: [[f64; 2]; 3], tol: f64) -> f64 {
    let bounds = field.bounds();
    let (mut quiet, mut total) = (0usize, 0usize);
    for scale in field.scales() {
        for plane in scale.planes.iter().filter(|p| p.is_spacetime()) {
            let (a, _) = plane.axes();
            let (nu, nv) = plane.resolution();
            let [lo, hi] = bounds[a];
            let cell = (hi - lo) / nu as f64;
            for i in 0..nu {
                let x = lo + i as f64 * cell;
                if x >= footprint[a][0] - cell && x <= footprint[a][1] + cell {
                    continue;
                }
                for j in 0..nv {
                    for v in plane.feature(i, j) {
                        total += 1;
                        quiet += usize::from((v - 1.0).abs() <= tol);
                    }
                }
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        quiet as f64 / total as f64
    }
}

/// Summed intensity of an image on `mask` pixels and over all pixels.
pub fn mass_split(img: &Image, mask: &[bool]) -> (f64, f64) {
    let mut inside = 0.0;
    let mut total = 0.0;
    for (p, m) in mask.iter().enumerate() {
        let v: f64 = img.data[p * 3..p * 3 + 3].iter().sum();
        total += v;
        if *m {
            inside += v;
        }
    }
    (inside, total)
}

/// Share of an image's summed intensity that falls on `mask` pixels.
pub fn mass_inside(img: &Image, mask: &[bool]) -> f64 {
    let (inside, total) = mass_split(img, mask);
    if total > 0.0 {
        inside / total
    } else {
        1.0
    }
}

//! Posed-image datasets and the transforms-JSON layout.
//!
//! A dataset directory holds `transforms_{train,val,test}.json`. On top of
//! the usual `camera_angle_x`, `frames[].file_path`,
//! `frames[].transform_matrix` and optional `frames[].time`, frames may carry
//! `camera_id` and `appearance_id`, and the file may set `kind`, `near`,
//! `far`, `bounds` and `background`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::losses::CameraVideo;
use crate::model::CoordMode;
use crate::render::Camera;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    #[default]
    Static,
    MonocularDynamic,
    MultiviewVideo,
    VariableAppearance,
}

impl DatasetKind {
    pub fn is_dynamic(self) -> bool {
        matches!(self, DatasetKind::MonocularDynamic | DatasetKind::MultiviewVideo)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub camera: Camera,
    pub image: Image,
    /// Normalized to `[0, 1]`.
    pub time: Option<f64>,
    pub appearance_id: Option<usize>,
    pub camera_id: usize,
    /// Per-pixel coverage, when known; `image` is already composited over
    /// the dataset background.
    pub alpha: Option<Vec<f64>>,
    /// Source file, for error messages and round trips.
    pub file_path: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneDataset {
    pub kind: DatasetKind,
    pub train: Vec<Frame>,
    pub val: Vec<Frame>,
    pub test: Vec<Frame>,
    pub bounds: [[f64; 2]; 3],
    pub background: [f64; 3],
    pub coord_mode: CoordMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?} (train, val, test)"))),
        }
    }
}

impl SceneDataset {
    pub fn split(&self, split: Split) -> &[Frame] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Number of appearance codes needed: one per distinct id.
    pub fn appearance_count(&self) -> usize {
        self.train
            .iter()
            .chain(&self.val)
            .chain(&self.test)
            .filter_map(|f| f.appearance_id)
            .max()
            .map_or(0, |m| m + 1)
    }

    /// Indices of training frames grouped per camera id, each sorted by time.
    pub fn camera_video_indices(&self) -> Vec<Vec<usize>> {
        let mut ids: Vec<usize> = self.train.iter().map(|f| f.camera_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.into_iter()
            .map(|id| {
                let mut idx: Vec<usize> = (0..self.train.len()).filter(|&i| self.train[i].camera_id == id).collect();
                idx.sort_by(|&a, &b| {
                    let t = |i: usize| self.train[i].time.unwrap_or(0.0);
                    t(a).total_cmp(&t(b))
                });
                idx
            })
            .collect()
    }

    /// Training frames grouped per camera, for ray importance sampling.
    pub fn camera_videos(&self) -> Vec<CameraVideo<'_>> {
        self.camera_video_indices()
            .into_iter()
            .map(|idx| CameraVideo {
                cameras: idx.iter().map(|&i| &self.train[i].camera).collect(),
                frames: idx.iter().map(|&i| &self.train[i].image).collect(),
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::Config("dataset has no training frames".into()));
        }
        for split in [&self.train, &self.val, &self.test] {
            if let Some(first) = split.first() {
                for f in split {
                    if !f.image.same_size(&first.image) {
                        return Err(Error::Shape(format!(
                            "{} is {}x{} but {} is {}x{}",
                            f.file_path, f.image.width, f.image.height, first.file_path, first.image.width, first.image.height
                        )));
                    }
                    if f.image.width != f.camera.width || f.image.height != f.camera.height {
                        return Err(Error::Shape(format!("{}: image and camera sizes differ", f.file_path)));
                    }
                    if let Some(t) = f.time {
                        if !(0.0..=1.0).contains(&t) {
                            return Err(Error::Config(format!("{}: time {t} outside [0, 1]", f.file_path)));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TransformsFile {
    camera_angle_x: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kind: Option<DatasetKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    near: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    far: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bounds: Option<[[f64; 2]; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    background: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coord_mode: Option<CoordMode>,
    frames: Vec<TransformsFrame>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TransformsFrame {
    file_path: String,
    transform_matrix: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    time: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    camera_id: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    appearance_id: Option<usize>,
}

/// Default scene box for loaded datasets without `bounds`.
pub const DEFAULT_BOUNDS: [[f64; 2]; 3] = [[-1.5, 1.5]; 3];

fn resolve_image(dir: &Path, file_path: &str) -> PathBuf {
    let p = dir.join(file_path);
    if p.extension().is_none() {
        p.with_extension("png")
    } else {
        p
    }
}

fn parse_pose(m: &[Vec<f64>], path: &Path, index: usize) -> Result<[[f64; 4]; 3]> {
    let bad = || Error::dataset(path, format!("frames[{index}].transform_matrix must be 4x4 (or 3x4)"));
    if m.len() < 3 || m.iter().take(3).any(|r| r.len() != 4) {
        return Err(bad());
    }
    let mut out = [[0.0; 4]; 3];
    for (r, row) in out.iter_mut().enumerate() {
        row.copy_from_slice(&m[r]);
    }
    Ok(out)
}

/// Loads `transforms_<split>.json` from `dir`; missing val/test files are treated as empty.
pub fn load_transforms_dataset(dir: impl AsRef<Path>, background: Option<[f64; 3]>) -> Result<SceneDataset> {
    let dir = dir.as_ref();
    let train_path = dir.join("transforms_train.json");
    if !train_path.exists() {
        return Err(Error::dataset(&train_path, "missing descriptor"));
    }
    let mut splits = Vec::new();
    let mut meta: Option<TransformsFile> = None;
    for split in [Split::Train, Split::Val, Split::Test] {
        let path = dir.join(format!("transforms_{}.json", split.name()));
        if !path.exists() {
            splits.push(Vec::new());
            continue;
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let file: TransformsFile =
            serde_json::from_str(&text).map_err(|e| Error::dataset(&path, format!("malformed descriptor: {e}")))?;
        let bg = background.or(file.background).unwrap_or([1.0; 3]);
        let mut frames = Vec::with_capacity(file.frames.len());
        for (i, fr) in file.frames.iter().enumerate() {
            let c2w = parse_pose(&fr.transform_matrix, &path, i)?;
            let img_path = resolve_image(dir, &fr.file_path);
            if !img_path.exists() {
                return Err(Error::dataset(&img_path, format!("image referenced by {} is missing", path.display())));
            }
            let (image, alpha) = Image::load_png_with_alpha(&img_path, bg)?;
            let mut camera = Camera::from_fov(image.width, image.height, file.camera_angle_x, c2w);
            if let (Some(n), Some(f)) = (file.near, file.far) {
                camera = camera.with_depth_range(n, f);
            }
            camera.validate().map_err(|e| Error::dataset(&path, format!("frames[{i}]: {e}")))?;
            frames.push(Frame {
                camera,
                image,
                time: fr.time,
                appearance_id: fr.appearance_id,
                camera_id: fr.camera_id.unwrap_or(0),
                alpha,
                file_path: fr.file_path.clone(),
            });
        }
        if let Some(first) = frames.first() {
            if let Some(f) = frames.iter().find(|f| !f.image.same_size(&first.image)) {
                return Err(Error::dataset(
                    resolve_image(dir, &f.file_path),
                    format!("resolution differs from {}", first.file_path),
                ));
            }
        }
        if meta.is_none() {
            meta = Some(file);
        }
        splits.push(frames);
    }
    let meta = meta.expect("train descriptor was read");
    let test = splits.pop().unwrap();
    let val = splits.pop().unwrap();
    let mut train = splits.pop().unwrap();
    let (mut val, mut test) = (val, test);
    normalize_times(&mut [&mut train, &mut val, &mut test]);
    let any_time = train.iter().any(|f| f.time.is_some());
    let many_cams = train.iter().any(|f| f.camera_id != 0);
    let kind = meta.kind.unwrap_or(if train.iter().any(|f| f.appearance_id.is_some()) {
        DatasetKind::VariableAppearance
    } else if any_time && many_cams {
        DatasetKind::MultiviewVideo
    } else if any_time {
        DatasetKind::MonocularDynamic
    } else {
        DatasetKind::Static
    });
    let ds = SceneDataset {
        kind,
        train,
        val,
        test,
        bounds: meta.bounds.unwrap_or(DEFAULT_BOUNDS),
        background: background.or(meta.background).unwrap_or([1.0; 3]),
        coord_mode: meta.coord_mode.unwrap_or_default(),
    };
    ds.validate().map_err(|e| Error::dataset(dir, e.to_string()))?;
    Ok(ds)
}

/// Maps times into `[0, 1]` by the global range when any fall outside it.
fn normalize_times(splits: &mut [&mut Vec<Frame>]) {
    let times: Vec<f64> = splits.iter().flat_map(|s| s.iter().filter_map(|f| f.time)).collect();
    if times.iter().all(|t| (0.0..=1.0).contains(t)) {
        return;
    }
    let lo = times.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    for s in splits.iter_mut() {
        for f in s.iter_mut() {
            if let Some(t) = f.time.as_mut() {
                *t = (*t - lo) / span;
            }
        }
    }
}

/// Writes a dataset in the transforms layout, images as 8-bit PNG.
///
/// All frames must share one horizontal field of view.
pub fn write_transforms_dataset(ds: &SceneDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    for split in [Split::Train, Split::Val, Split::Test] {
        let frames = ds.split(split);
        if frames.is_empty() {
            continue;
        }
        let sub = dir.join(split.name());
        std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        let cam0 = &frames[0].camera;
        let fov = 2.0 * (cam0.width as f64 / (2.0 * cam0.fx)).atan();
        let mut out = TransformsFile {
            camera_angle_x: fov,
            kind: Some(ds.kind),
            near: Some(cam0.near),
            far: Some(cam0.far),
            bounds: Some(ds.bounds),
            background: Some(ds.background),
            coord_mode: Some(ds.coord_mode),
            frames: Vec::new(),
        };
        for (i, f) in frames.iter().enumerate() {
            let rel = format!("./{}/r_{i:03}.png", split.name());
            match &f.alpha {
                Some(a) => f.image.save_png_with_alpha(dir.join(&rel), a, ds.background)?,
                None => f.image.save_png(dir.join(&rel))?,
            }
            let mut m: Vec<Vec<f64>> = f.camera.c2w.iter().map(|r| r.to_vec()).collect();
            m.push(vec![0.0, 0.0, 0.0, 1.0]);
            out.frames.push(TransformsFrame {
                file_path: rel,
                transform_matrix: m,
                time: f.time,
                camera_id: (ds.kind == DatasetKind::MultiviewVideo).then_some(f.camera_id),
                appearance_id: f.appearance_id,
            });
        }
        let path = dir.join(format!("transforms_{}.json", split.name()));
        let text = serde_json::to_string_pretty(&out).expect("descriptor serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

//! `KPLCKPT1` checkpoints.
//!
//! Layout (little-endian):
//!
//! | field | encoding |
//! |---|---|
//! | magic | `b"KPLCKPT1"` |
//! | version | `u32` |
//! | metadata | `u64` length + UTF-8 TOML (config, render settings, code count) |
//! | iteration, seed | `u64`, `u64` |
//! | tensor count | `u32` |
//! | per tensor | `u32` name length, name, `u32` rank, `u64` dims, `f64` data |
//!
//! Tensors are model parameters named `<group>/<tensor>`, followed by
//! `adam.m/<group>/<tensor>` and `adam.v/<group>/<tensor>`. The random
//! state is fully determined by seed and iteration.

use std::io::{Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{RenderSettings, SceneModel};
use crate::optim::{AdamMoments, TrainState};

use super::config::TrainConfig;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"KPLCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const CHECKPOINT_EXT: &str = "kplckpt";

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Meta {
    appearance_count: usize,
    render: RenderSettings,
    config: TrainConfig,
}

struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn collect_tensors(state: &TrainState) -> Vec<NamedTensor> {
    let mut out = Vec::new();
    let groups = state.model.groups();
    for g in &groups {
        for t in &g.tensors {
            out.push(NamedTensor {
                name: format!("{}/{}", g.name, t.name),
                shape: t.shape.clone(),
                data: t.data.to_vec(),
            });
        }
    }
    for (prefix, moments) in [("adam.m", &state.moments.m), ("adam.v", &state.moments.v)] {
        for (g, mg) in groups.iter().zip(moments) {
            for (t, m) in g.tensors.iter().zip(mg) {
                out.push(NamedTensor {
                    name: format!("{prefix}/{}/{}", g.name, t.name),
                    shape: t.shape.clone(),
                    data: m.clone(),
                });
            }
        }
    }
    out
}

pub fn write_checkpoint<W: Write>(state: &TrainState, mut w: W) -> std::io::Result<()> {
    let meta = Meta {
        appearance_count: state.model.appearance.as_ref().map_or(0, |a| a.len()),
        render: state.model.render.clone(),
        config: state.config.clone(),
    };
    let meta = toml::to_string(&meta).expect("metadata serializes");
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(meta.len() as u64).to_le_bytes())?;
    w.write_all(meta.as_bytes())?;
    w.write_all(&state.iteration.to_le_bytes())?;
    w.write_all(&state.config.seed.to_le_bytes())?;
    let tensors = collect_tensors(state);
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in &tensors {
        w.write_all(&(t.name.len() as u32).to_le_bytes())?;
        w.write_all(t.name.as_bytes())?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for d in &t.shape {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn checkpoint_bytes(state: &TrainState) -> Vec<u8> {
    let mut buf = Vec::new();
    write_checkpoint(state, &mut buf).expect("writing to memory cannot fail");
    buf
}

/// Writes atomically: to a sibling temp file, then renamed over `path`.
pub fn save_checkpoint(state: &TrainState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, checkpoint_bytes(state)).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::Checkpoint(format!("truncated file while reading {what}")))?;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8, what)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<TrainState> {
    let mut r = Reader { inner: r };
    let magic = r.bytes(8, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a KPLCKPT1 file (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let meta_len = r.u64("metadata length")? as usize;
    if meta_len > 1 << 24 {
        return Err(Error::Checkpoint("metadata length is implausible".into()));
    }
    let meta = String::from_utf8(r.bytes(meta_len, "metadata")?)
        .map_err(|_| Error::Checkpoint("metadata is not UTF-8".into()))?;
    let meta: Meta = toml::from_str(&meta).map_err(|e| Error::Checkpoint(format!("bad metadata: {e}")))?;
    let iteration = r.u64("iteration")?;
    let seed = r.u64("seed")?;
    if seed != meta.config.seed {
        return Err(Error::Checkpoint("seed disagrees with the stored configuration".into()));
    }
    let spec = meta.config.model_spec(meta.render.clone(), meta.appearance_count);
    // parameters are overwritten below; the init draw only fixes shapes
    let mut model = SceneModel::new(&spec, &mut ChaCha8Rng::seed_from_u64(0))?;
    let mut moments = AdamMoments::zeros(&model);
    let count = r.u32("tensor count")? as usize;
    let expected = collect_expected(&model);
    if count != expected.len() * 3 {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, file has {count}",
            expected.len() * 3
        )));
    }
    let mut slots: Vec<Vec<f64>> = Vec::with_capacity(count);
    for k in 0..count {
        let name_len = r.u32("tensor name")? as usize;
        if name_len > 4096 {
            return Err(Error::Checkpoint("tensor name length is implausible".into()));
        }
        let name = String::from_utf8(r.bytes(name_len, "tensor name")?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = r.u32("tensor rank")? as usize;
        if rank > 8 {
            return Err(Error::Checkpoint(format!("{name}: rank {rank} is implausible")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("tensor shape")? as usize);
        }
        let (want_name, want_shape) = &expected[k % expected.len()];
        let prefix = ["", "adam.m/", "adam.v/"][k / expected.len()];
        if name != format!("{prefix}{want_name}") || &shape != want_shape {
            return Err(Error::Checkpoint(format!(
                "tensor {k}: found {name} {shape:?}, expected {prefix}{want_name} {want_shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        let raw = r.bytes(n * 8, &name)?;
        slots.push(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect());
    }
    let mut it = slots.into_iter();
    for group in model.groups_mut() {
        for t in group {
            t.copy_from_slice(&it.next().unwrap());
        }
    }
    for moments in [&mut moments.m, &mut moments.v] {
        for g in moments.iter_mut() {
            for t in g.iter_mut() {
                *t = it.next().unwrap();
            }
        }
    }
    Ok(TrainState {
        config: meta.config,
        model,
        moments,
        iteration,
    })
}

fn collect_expected(model: &SceneModel) -> Vec<(String, Vec<usize>)> {
    model
        .groups()
        .iter()
        .flat_map(|g| g.tensors.iter().map(move |t| (format!("{}/{}", g.name, t.name), t.shape.clone())))
        .collect()
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainState> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(bytes.as_slice()).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

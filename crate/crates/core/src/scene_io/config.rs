//! Scene/training configuration, stored as TOML.
//!
//! Every key has a default, so an empty file is a valid configuration:
//!
//! ```toml
//! seed = 7
//!
//! [field]
//! dims = 4
//! resolutions = [32, 64]
//! feature_dims = [32, 32]
//! time_resolution = 16
//! combine = "multiply"
//!
//! [decoder]
//! kind = "hybrid"
//!
//! [sampler]
//! kind = "proposal"
//! stages = [64, 32]
//! samples = 32
//!
//! [loss]
//! tv_space = 1e-4
//! smooth_time = 1e-2
//!
//! [schedule]
//! iterations = 5000
//! batch_size = 256
//!
//! [scene]
//! coord_mode = "box"
//! background = [1.0, 1.0, 1.0]
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decoders::{DecoderKind, DecoderSpec};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::model::{CoordMode, ModelSpec, RenderSettings, Sampler};
use crate::planes::{Combine, FieldSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    pub dims: usize,
    pub resolutions: Vec<usize>,
    pub feature_dims: Vec<usize>,
    pub time_resolution: usize,
    pub combine: Combine,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            dims: 3,
            resolutions: vec![32, 64],
            feature_dims: vec![32, 32],
            time_resolution: 16,
            combine: Combine::Multiply,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub kind: DecoderKind,
    pub hidden_width: usize,
    pub dir_octaves: usize,
    pub basis_layers: usize,
    pub sigma_layers: usize,
    pub rgb_layers: usize,
    pub geo_features: usize,
    pub appearance_dim: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        let s = DecoderSpec::new(DecoderKind::Linear, 0);
        Self {
            kind: s.kind,
            hidden_width: s.hidden_width,
            dir_octaves: s.dir_octaves,
            basis_layers: s.basis_layers,
            sigma_layers: s.sigma_layers,
            rgb_layers: s.rgb_layers,
            geo_features: s.geo_features,
            appearance_dim: s.appearance_dim,
        }
    }
}

/// Shape shared by every proposal field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposalConfig {
    pub resolution: usize,
    pub feature_dim: usize,
    pub hidden_width: usize,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            feature_dim: 8,
            hidden_width: 64,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decay {
    #[default]
    Cosine,
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub iterations: u64,
    pub batch_size: usize,
    pub lr_planes: f64,
    pub lr_networks: f64,
    pub warmup: u64,
    pub decay: Decay,
    /// Importance sampling of rays on multiview video.
    pub ist: bool,
    /// Fraction of `iterations` after which importance sampling starts.
    pub ist_start: f64,
    /// Composite frames that carry alpha over a random per-ray background.
    pub random_background: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            iterations: 5000,
            batch_size: 256,
            lr_planes: 1e-2,
            lr_networks: 1e-3,
            warmup: 512,
            decay: Decay::Cosine,
            ist: true,
            ist_start: 0.6,
            random_background: true,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Schedule {
    /// Iteration from which rays are importance sampled.
    pub fn ist_iteration(&self) -> u64 {
        (self.ist_start * self.iterations as f64).round() as u64
    }

    /// Multiplier applied to the base learning rates at `iteration`.
    pub fn lr_factor(&self, iteration: u64) -> f64 {
        if iteration < self.warmup {
            return (iteration + 1) as f64 / self.warmup as f64;
        }
        match self.decay {
            Decay::Constant => 1.0,
            Decay::Cosine => {
                let span = self.iterations.saturating_sub(self.warmup).max(1) as f64;
                let p = ((iteration - self.warmup) as f64 / span).min(1.0);
                0.5 * (1.0 + (std::f64::consts::PI * p).cos())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.ist_start) {
            return Err(Error::Config("ist_start must lie in [0, 1]".into()));
        }
        for (name, v) in [("lr_planes", self.lr_planes), ("lr_networks", self.lr_networks), ("eps", self.eps)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Per-scene overrides; unset values come from the dataset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub coord_mode: Option<CoordMode>,
    pub background: Option<[f64; 3]>,
    pub bounds: Option<[[f64; 2]; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Metrics row cadence; the final iteration is always logged.
    pub log_every: u64,
    /// Validation cadence (0 = only at the end).
    pub val_every: u64,
    /// Validation views rendered (0 = all).
    pub val_views: usize,
    /// Checkpoint cadence (0 = only initial and final).
    pub checkpoint_every: u64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            log_every: 100,
            val_every: 0,
            val_views: 0,
            checkpoint_every: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub field: FieldConfig,
    pub decoder: DecoderConfig,
    pub sampler: Sampler,
    pub proposal: ProposalConfig,
    pub loss: LossWeights,
    pub schedule: Schedule,
    pub scene: SceneConfig,
    pub output: OutputConfig,
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Desk-scale preset for the small procedural static scenes: eight
    /// sparse views need a low-frequency view embedding and stronger TV.
    pub fn toy_static() -> Self {
        let mut c = Self::default();
        c.decoder.dir_octaves = 1;
        c.sampler = Sampler::Uniform { samples: 48 };
        c.loss.tv_space = 2e-3;
        c
    }

    /// Desk-scale preset for the procedural videos.
    pub fn toy_dynamic() -> Self {
        let mut c = Self::toy_static();
        c.field.dims = 4;
        c.loss = LossWeights {
            sparse_transients: 1e-6,
            ..LossWeights::dynamic_scene()
        };
        c.schedule.iterations = 3000;
        c
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.schedule.validate()?;
        if !(3..=4).contains(&self.field.dims) {
            return Err(Error::InvalidDimension(format!(
                "fields support 3 or 4 dimensions, got {}",
                self.field.dims
            )));
        }
        if self.field.resolutions.len() != self.field.feature_dims.len() {
            return Err(Error::Config("field.resolutions and field.feature_dims differ in length".into()));
        }
        match &self.sampler {
            Sampler::Uniform { samples } if *samples == 0 => {
                return Err(Error::Config("sampler needs at least one sample".into()))
            }
            Sampler::Proposal { stages, samples } if *samples == 0 || stages.iter().any(|s| *s == 0) => {
                return Err(Error::Config("sampler stages need at least one sample".into()))
            }
            _ => {}
        }
        Ok(())
    }

    /// Resolves the model architecture against a scene's defaults.
    pub fn model_spec(&self, render: RenderSettings, appearance_count: usize) -> ModelSpec {
        let bounds = render.coord_mode.field_bounds(render.scene_bounds);
        let mut all_bounds: Vec<[f64; 2]> = bounds.to_vec();
        if self.field.dims == 4 {
            all_bounds.push([0.0, 1.0]);
        }
        let field = FieldSpec {
            dims: self.field.dims,
            resolutions: self.field.resolutions.clone(),
            feature_dims: self.field.feature_dims.clone(),
            time_resolution: self.field.time_resolution,
            bounds: all_bounds.clone(),
            combine: self.field.combine,
        };
        let proposals = match &self.sampler {
            Sampler::Uniform { .. } => Vec::new(),
            Sampler::Proposal { stages, .. } => stages
                .iter()
                .map(|_| FieldSpec {
                    dims: self.field.dims,
                    resolutions: vec![self.proposal.resolution],
                    feature_dims: vec![self.proposal.feature_dim],
                    time_resolution: self.field.time_resolution,
                    bounds: all_bounds.clone(),
                    combine: Combine::Multiply,
                })
                .collect(),
        };
        let d = &self.decoder;
        let decoder = DecoderSpec {
            kind: d.kind,
            feature_len: field.feature_dims.iter().sum(),
            dir_octaves: d.dir_octaves,
            hidden_width: d.hidden_width,
            basis_layers: d.basis_layers,
            sigma_layers: d.sigma_layers,
            rgb_layers: d.rgb_layers,
            geo_features: d.geo_features,
            appearance_dim: d.appearance_dim,
        };
        ModelSpec {
            field,
            decoder,
            appearance_count,
            proposals,
            proposal_hidden: self.proposal.hidden_width,
            render,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(TrainConfig::from_toml("").unwrap(), TrainConfig::default());
    }

    #[test]
    fn roundtrip_through_toml() {
        let mut cfg = TrainConfig::default();
        cfg.sampler = Sampler::Proposal {
            stages: vec![32, 16],
            samples: 24,
        };
        cfg.scene.background = Some([0.0, 0.5, 1.0]);
        cfg.field.dims = 4;
        let back = TrainConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(TrainConfig::from_toml("[field]\nresolution = 3\n").is_err());
        assert!(TrainConfig::from_toml("[field]\ndims = 5\n").is_err());
    }

    #[test]
    fn lr_warmup_then_cosine() {
        let s = Schedule {
            iterations: 100,
            warmup: 10,
            ..Default::default()
        };
        assert!((s.lr_factor(0) - 0.1).abs() < 1e-15);
        assert_eq!(s.lr_factor(10), 1.0);
        assert!((s.lr_factor(55) - 0.5).abs() < 1e-12);
        assert!(s.lr_factor(100).abs() < 1e-12);
    }
}

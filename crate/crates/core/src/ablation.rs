//! Variant grids for the ablation studies and a runner that trains them.

use std::fmt;
use std::str::FromStr;

use crate::decoders::DecoderKind;
use crate::error::{Error, Result};
use crate::losses::field_regularizer_values;
use crate::optim::{evaluate_frames, train, TrainOutput, TrainState};
use crate::planes::Combine;
use crate::scene_io::config::TrainConfig;
use crate::scene_io::dataset::SceneDataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    /// Multiplication against addition, for both decoders.
    Hadamard,
    /// One scale against two.
    Scales,
    /// Feature length per plane.
    FeatLen,
    /// Temporal smoothness weight on a dynamic scene.
    Smoothness,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Hadamard, Suite::Scales, Suite::FeatLen, Suite::Smoothness];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Hadamard => "hadamard",
            Suite::Scales => "scales",
            Suite::FeatLen => "featlen",
            Suite::Smoothness => "smoothness",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation suite {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub name: String,
    pub config: TrainConfig,
}

fn decoder_name(kind: DecoderKind) -> &'static str {
    match kind {
        DecoderKind::Linear => "explicit",
        DecoderKind::Hybrid => "hybrid",
    }
}

/// The configurations a suite trains, derived from `base`.
pub fn variants(suite: Suite, base: &TrainConfig) -> Vec<Variant> {
    let with = |name: String, edit: &dyn Fn(&mut TrainConfig)| {
        let mut config = base.clone();
        edit(&mut config);
        Variant { name, config }
    };
    let m = base.field.feature_dims.first().copied().unwrap_or(32);
    match suite {
        Suite::Hadamard => [DecoderKind::Linear, DecoderKind::Hybrid]
            .into_iter()
            .flat_map(|kind| {
                [Combine::Multiply, Combine::Add].into_iter().map(move |combine| (kind, combine))
            })
            .map(|(kind, combine)| {
                let label = match combine {
                    Combine::Multiply => "multiply",
                    Combine::Add => "add",
                };
                with(format!("{}-{label}", decoder_name(kind)), &|c| {
                    c.decoder.kind = kind;
                    c.field.combine = combine;
                })
            })
            .collect(),
        Suite::Scales => [vec![64], vec![32, 64]]
            .into_iter()
            .map(|res| {
                let name = res.iter().map(|r| r.to_string()).collect::<Vec<_>>().join("+");
                with(name, &|c| {
                    c.field.feature_dims = vec![m; res.len()];
                    c.field.resolutions = res.clone();
                })
            })
            .collect(),
        Suite::FeatLen => [4, 16, 32]
            .into_iter()
            .map(|m| {
                with(format!("M={m}"), &|c| {
                    c.field.feature_dims = vec![m; c.field.resolutions.len()];
                })
            })
            .collect(),
        Suite::Smoothness => [0.0, 1e-2, 1.0]
            .into_iter()
            .map(|w| with(format!("lambda={w}"), &|c| c.loss.smooth_time = w))
            .collect(),
    }
}

/// One trained variant.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub decoder: &'static str,
    pub psnr: f64,
    pub ssim: f64,
    /// Field plus decoder parameters.
    pub params: usize,
    /// Unweighted temporal smoothness of the fitted field.
    pub smooth_time: f64,
}

pub const ABLATION_HEADER: &str = "variant,decoder,psnr,ssim,params,smooth_time";

impl AblationRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{:.4},{:.4},{},{:.6e}",
            self.variant, self.decoder, self.psnr, self.ssim, self.params, self.smooth_time
        )
    }
}

/// Trains `variant` from scratch and scores it on the validation split
/// (or the training split when there is none).
pub fn run_variant(variant: &Variant, dataset: &SceneDataset) -> Result<(AblationRow, TrainState)> {
    let mut state = TrainState::new(variant.config.clone(), dataset)?;
    train(&mut state, dataset, &TrainOutput::default())?;
    let frames = if dataset.val.is_empty() { &dataset.train } else { &dataset.val };
    let (psnr, ssim, _) = evaluate_frames(&state.model, frames)?;
    let row = AblationRow {
        variant: variant.name.clone(),
        decoder: decoder_name(variant.config.decoder.kind),
        psnr,
        ssim,
        params: state.model.main_param_count(),
        smooth_time: field_regularizer_values(&state.model.field).smooth_time,
    };
    Ok((row, state))
}

pub fn run_suite(suite: Suite, base: &TrainConfig, dataset: &SceneDataset) -> Result<Vec<AblationRow>> {
    variants(suite, base)
        .iter()
        .map(|v| {
            log::info!("ablation {suite}: training {}", v.name);
            run_variant(v, dataset).map(|(row, _)| row)
        })
        .collect()
}

pub fn rows_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from(ABLATION_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}

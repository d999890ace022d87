//! K-planes radiance fields with hand-written reverse-mode gradients.

pub mod ablation;
pub mod cli;
pub mod decoders;
pub mod error;
pub mod imaging;
pub mod losses;
pub mod model;
pub mod nn;
pub mod optim;
pub mod parallel;
pub mod params;
pub mod planes;
pub mod render;
pub mod scene_io;

pub use error::{Error, Result};

pub mod audio;
pub mod baseline;
pub mod curation;
pub mod error;
pub mod experiment;
pub mod features;
pub mod matrix;
pub mod metrics;
pub mod perceptual;
pub mod sdc;
pub mod synth;
pub mod tdnn;
pub mod ztw;

pub use error::{Error, Result};

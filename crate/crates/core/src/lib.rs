//! Calibration testing for probability forecasts of binary outcomes.
//!
//! The crate provides e-value versions of the Hosmer-Lemeshow goodness-of-fit
//! test built on isotonic regression, the classical chi-square HL test with
//! its common binning schemes, (bagged) isotonic recalibration and a
//! simulation harness for size and power studies.

pub mod data_model;
pub mod error;
pub mod evalue;
pub mod hl_classic;
pub mod isotonic;
pub mod numeric;
pub mod recalibrate;
pub mod serde_ext;
pub mod simulate;

pub use data_model::{load_samples, write_samples, LabeledSampleSet, Observation, SampleSet, Schema};
pub use error::{Error, Result};
pub use evalue::{EValueReport, TestOptions, Variant};
pub use hl_classic::{BinningMethod, DofMode, HLReport, HLSweep};
pub use numeric::{RngState, RNG_ALGORITHM};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

//! Experiment harness for the turnpike token-dynamics studies: configuration,
//! rate fitting, particle and grid experiments, manifests and SVG plots.

pub mod analysis;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod fit;
pub mod manifest;
pub mod runs;
pub mod svg;

pub use config::{Experiment, ExperimentConfig};
pub use error::{LabError, LabResult};
pub use fit::{fit_terminal_rate, FitResult};
pub use manifest::RunManifest;
pub use runs::{run, Check, Outcome};

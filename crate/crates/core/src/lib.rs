//! Noisy mean-field attention dynamics on the sphere.
//!
//! Particle simulation with trainable feed-forward controls, a discrete adjoint
//! for training, and a circle-grid mean-field analysis stack for the
//! stationary clustered state and its linearization.

pub mod attention;
pub mod error;
pub mod export;
pub mod features;
pub mod meanfield;
pub mod objectives;
pub mod particles;
pub mod sphere;
pub mod training;

pub use attention::{AttentionSpec, DiscreteMeasure, LandscapeConstants};
pub use error::{Error, Result};
pub use features::FeatureMap;
pub use particles::{ControlPath, SimConfig, UnitVectorEnsemble};
pub use sphere::{RngStream, UnitVector};

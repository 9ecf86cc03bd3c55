//! Cardiac fat segmentation on CT slices with a compact conditional
//! adversarial image-to-image network.
//!
//! The numeric core is generic over the scalar type; the aliases below fix
//! the common choices.

pub mod datasetprep;
pub mod error;
pub mod harness;
pub mod imaging;
pub mod metrics;
pub mod model;
pub mod morphology;
pub mod scalar;

pub use error::{Error, ErrorKind, Result};

/// Exact rational used for metric identities.
pub type Rational = num_rational::Ratio<i128>;

pub type Tensor32 = model::Tensor<f32>;
pub type Tensor64 = model::Tensor<f64>;
pub type Generator32 = model::Generator<f32>;
pub type Generator64 = model::Generator<f64>;
pub type Discriminator32 = model::Discriminator<f32>;
pub type Discriminator64 = model::Discriminator<f64>;
pub type ClassMetricsF64 = metrics::ClassMetrics<f64>;
pub type ExactClassMetrics = metrics::ClassMetrics<Rational>;

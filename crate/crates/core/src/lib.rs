//! Cross-domain anomaly detection for multivariate time series with a
//! mixture of interpretable experts.
//!
//! Each expert (PCA, kernel PCA, slow features, NMF, tensor CP, sparse
//! dictionary, MLP autoencoder) keeps a set of *meta-domains*: initial
//! parameter sets from which a time segment adapts with one gradient step.
//! Only the meta-domain with the lowest training loss on a segment is
//! adapted and updated, and a meta-domain whose learnable adaptation rate
//! climbs past a threshold is split. Expert features are fused by two levels
//! of multi-head attention whose expert-level scores weight the per-expert
//! anomaly scores.

pub mod datagen;
pub mod error;
pub mod experts;
pub mod fusion;
pub mod meta;
pub mod metrics;
pub mod numerics;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod series;

pub use error::{CicadaError, Result};
pub use experts::ExpertKind;
pub use numerics::Matrix;
pub use pipeline::{DetectionReport, Model, RunConfig};
pub use series::TimeSeries;

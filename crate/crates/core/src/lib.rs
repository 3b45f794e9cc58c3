//! Discovery of sparse spectral indices built from normalized differences of
//! reflectance bands.
//!
//! Reflectance vectors are expanded into all normalized differences and their
//! degree-2 products, a few features are selected (ANOVA-F ranking, recursive
//! elimination or L1 sparsity), and a linear max-margin classifier is trained
//! on them. The result is a model whose coefficients act on raw normalized
//! differences and whose decision values can be scaled into `[-1, 1]` by the
//! maximum of the polynomial over the ND hypercube.

pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod selection;
pub mod spectral;
pub mod svm;

pub use data::{generate_synthetic, read_samples, ParseReport, ReadOptions, SampleTable, Schema, SynthParams};
pub use error::{Error, Result};
pub use metrics::{confusion, ConfusionMatrix, DerivedMetrics};
pub use model::{BoundMethod, ClassEmbedding, Dialect, HypercubeBound, ModelSpec, TrainedModel};
pub use pipeline::{discover, Discovery, DiscoveryConfig, SplitSpec, SplitStrategy, SweepReport};
pub use selection::{Method, SelectionResult};
pub use spectral::{
    compute_nd, embedding_dimension, enumerate_features, evaluate_features, BandVector, FeatureDescriptor,
    FeatureSpace, NdPair, NegativePolicy,
};
pub use svm::{LinearModel, Regularization, Standardization, SvmParams};

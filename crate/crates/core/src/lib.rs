//! A declarative engine for parametric dimensionality reduction.
//!
//! Routines are specified as documents (YAML or JSON) listing *relations*
//! between data items, *losses* built from those relations, and *training
//! phases* that optimize a small neural model against the losses. Presets
//! reproduce parametric MDS, t-SNE, and UMAP, plus hybrid, triplet-supervised,
//! and attribute-guided variants.
//!
//! The crate is organized along the data flow of a routine:
//!
//! - [`spec`] parses and validates routine documents against a [`spec::Registry`].
//! - [`dataset`] holds keyed data fields and computes derived fields (PCA,
//!   spectral embedding).
//! - [`relations`] computes global relation matrices and differentiable
//!   batch relations.
//! - [`transforms`] implements the relation-transform vocabulary
//!   (perplexity/connectivity calibration, symmetrization, kernels).
//! - [`diff`] is a minimal reverse-mode differentiation core plus the model zoo.
//! - [`losses`], [`sampling`], [`training`] drive the optimization loop.
//! - [`metrics`] evaluates embeddings; [`plot`] renders SVG scatterplots.
//! - [`presets`] ships the built-in routines as spec documents.

pub mod dataset;
pub mod diff;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod relations;
pub mod routine;
pub mod sampling;
pub mod spec;
pub mod training;
pub mod transforms;
pub mod value;

pub use dataset::Dataset;
pub use diff::model::Model;
pub use diff::{Tape, Tensor};
pub use relations::RelationMatrix;
pub use routine::{compile_routine, Routine};
pub use spec::{parse_spec, Registry, RoutineSpec};
pub use training::TrainingLog;
pub use value::{Options, Value};

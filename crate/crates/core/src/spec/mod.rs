//! The declarative routine grammar: parsing, validation, and the registry
//! mapping document values to implementations.
//!
//! A routine document has four base-level entries: `relations`, `losses`,
//! `training phases`, and the optional `derived data`. Keys and identifier
//! values are matched after lowercasing and mapping spaces to underscores,
//! so the human-readable form (`training phases`, `kl div`) and the
//! snake_case form are interchangeable. Documents are accepted as YAML or
//! as JSON with identical structure.

mod doc;
mod parse;
mod registry;
mod serialize;

pub use parse::{parse_spec, parse_spec_with_format, DocFormat};
pub use registry::{
    BatchTransformFn, DataFuncImpl, DerivedArg, GlobalTransformFn, Implementation, LossFuncCaps,
    LossFuncImpl, OptimizerImpl, OptimizerState, Registry, RelationImpl, TransformImpl,
};

use crate::value::Options;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: unknown key '{key}'")]
    UnknownKey { path: String, key: String },
    #[error("{path}: unknown {kind} '{value}'")]
    UnknownValue {
        path: String,
        kind: &'static str,
        value: String,
    },
    #[error("{path}: missing required field '{field}'")]
    MissingField { path: String, field: &'static str },
    #[error("{path}: expected {expected}")]
    WrongType { path: String, expected: &'static str },
    #[error("{path}: {kind} '{name}' is not declared")]
    DanglingReference {
        path: String,
        kind: &'static str,
        name: String,
    },
    #[error("duplicate {kind} name '{name}'")]
    DuplicateName { kind: &'static str, name: String },
    #[error("{path}: {components} loss components but {weights} weights")]
    WeightArity {
        path: String,
        components: usize,
        weights: usize,
    },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("'{name}' is already registered as a {kind}")]
    DuplicateRegistration { kind: &'static str, name: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Global,
    Batch,
}

impl Level {
    pub fn as_str(&self) -> &'static str {
        match self {
            Level::Global => "global",
            Level::Batch => "batch",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossType {
    Relation,
    Classification,
    Reconstruction,
    Position,
    Triplet,
}

impl LossType {
    pub fn as_str(&self) -> &'static str {
        match self {
            LossType::Relation => "relation",
            LossType::Classification => "classification",
            LossType::Reconstruction => "reconstruction",
            LossType::Position => "position",
            LossType::Triplet => "triplet",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingType {
    Item,
    Edge,
}

impl SamplingType {
    pub fn as_str(&self) -> &'static str {
        match self {
            SamplingType::Item => "item",
            SamplingType::Edge => "edge",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivedSource {
    Data,
    Rels,
}

impl DerivedSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            DerivedSource::Data => "data",
            DerivedSource::Rels => "rels",
        }
    }
}

/// One ordered transform in a relation recipe.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformSpec {
    pub transform_type: String,
    pub options: Options,
}

/// Recipe for computing one named relation.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationRecipe {
    pub name: String,
    pub level: Level,
    pub rel_type: String,
    pub data_key: String,
    pub options: Options,
    pub transforms: Vec<TransformSpec>,
}

/// Keys a loss uses to reach data fields, relations, and model methods.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossKeys {
    pub data: Vec<String>,
    pub rels: Vec<String>,
    pub methods: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    pub name: String,
    pub loss_type: LossType,
    pub func: String,
    pub keys: LossKeys,
    pub options: Options,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingSpec {
    pub sampling_type: SamplingType,
    pub batch_size: usize,
    /// Global relation used for edge sampling.
    pub rels: Option<String>,
    /// Negatives per positive edge.
    pub rate: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompoundSpec {
    pub components: Vec<String>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSpec {
    pub opt_type: String,
    pub options: Options,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPhaseSpec {
    pub epochs: usize,
    pub sampling: SamplingSpec,
    pub loss: CompoundSpec,
    pub optimizer: OptimizerSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivedDataSpec {
    pub name: String,
    pub data_func: String,
    pub keys: Vec<(DerivedSource, String)>,
}

/// A parsed, validated routine specification.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoutineSpec {
    pub derived_data: Vec<DerivedDataSpec>,
    pub relations: Vec<RelationRecipe>,
    pub losses: Vec<LossSpec>,
    pub training_phases: Vec<TrainingPhaseSpec>,
}

impl RoutineSpec {
    pub fn relation(&self, name: &str) -> Option<&RelationRecipe> {
        self.relations.iter().find(|r| r.name == name)
    }

    pub fn loss(&self, name: &str) -> Option<&LossSpec> {
        self.losses.iter().find(|l| l.name == name)
    }

    /// Serialize to the human-readable YAML form.
    pub fn to_yaml(&self) -> String {
        serialize::to_yaml(self)
    }

    /// Serialize to JSON with identical structure.
    pub fn to_json(&self) -> String {
        serialize::to_json(self)
    }
}

/// Engine defaults applied while parsing.
pub mod defaults {
    pub const DATA_KEY: &str = "main";
    pub const BATCH_SIZE: usize = 100;
    pub const EPOCHS: usize = 10;
    pub const OPTIMIZER: &str = "adam";
    pub const LEARNING_RATE: f64 = 0.01;
    pub const EDGE_RATE: usize = 1;
    pub const METRIC: &str = "euclidean";
    pub const MARGIN: f64 = 1.0;
    pub const T_DIST_ALPHA: f64 = 1.0;
    pub const CAUCHY_SPREAD: f64 = 1.0;
    pub const CAUCHY_MIN_DIST: f64 = 0.1;
    pub const N_NEIGHBORS: usize = 15;
}

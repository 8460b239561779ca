//! Registry mapping document values (relation types, transforms, loss
//! functions, data functions, optimizers) to implementations.
//!
//! The registry is seeded with every built-in at engine start and may be
//! extended with custom implementations before parsing begins; mutation
//! afterwards is unsupported.

use crate::dataset::Field;
use crate::diff::Tensor;
use crate::losses;
use crate::relations::{self, BatchRel, Metric, RelationMatrix};
use crate::routine::RoutineError;
use crate::spec::{defaults, SpecError};
use crate::training::{AdamState, SgdState};
use crate::transforms::{self, SymmetrizeMode};
use crate::value::{Options, Value};
use ndarray::{Array2, ArrayD};
use std::collections::BTreeMap;
use std::sync::Arc;

// ---- implementation contracts ----

/// A relation type: computes global relations over a dataset field and/or
/// differentiable batch relations over model output.
pub trait RelationImpl: Send + Sync {
    fn global(&self, _data: &Field, _options: &Options) -> Result<RelationMatrix, RoutineError> {
        Err(RoutineError::NotApplicable {
            name: self.name().to_string(),
            context: "global relations",
        })
    }

    fn batch<'t>(
        &self,
        _output: Tensor<'t>,
        _options: &Options,
    ) -> Result<BatchRel<'t>, RoutineError> {
        Err(RoutineError::NotApplicable {
            name: self.name().to_string(),
            context: "batch relations",
        })
    }

    /// Differentiable relations along an explicit edge list (local row
    /// indices into `output`).
    fn batch_edges<'t>(
        &self,
        _output: Tensor<'t>,
        _heads: &[usize],
        _tails: &[usize],
        _options: &Options,
    ) -> Result<BatchRel<'t>, RoutineError> {
        Err(RoutineError::NotApplicable {
            name: self.name().to_string(),
            context: "edge-sampled batch relations",
        })
    }

    fn name(&self) -> &str;

    /// Value-level option validation at parse time.
    fn validate_options(&self, _options: &Options) -> Result<(), String> {
        Ok(())
    }
}

/// A compiled global transform step.
pub trait GlobalTransformFn: Send + Sync {
    fn apply(&self, rel: RelationMatrix) -> Result<RelationMatrix, RoutineError>;
}

/// A compiled differentiable transform step.
pub trait BatchTransformFn: Send + Sync {
    fn apply<'t>(&self, rel: BatchRel<'t>) -> Result<BatchRel<'t>, RoutineError>;
}

/// A transform type; compiled once per routine so expensive setup (e.g. the
/// Cauchy curve fit) happens outside the training loop.
pub trait TransformImpl: Send + Sync {
    fn compile_global(
        &self,
        _options: &Options,
    ) -> Result<Box<dyn GlobalTransformFn>, RoutineError> {
        Err(RoutineError::NotApplicable {
            name: self.name().to_string(),
            context: "global relations",
        })
    }

    fn compile_batch(&self, _options: &Options) -> Result<Box<dyn BatchTransformFn>, RoutineError> {
        Err(RoutineError::NotApplicable {
            name: self.name().to_string(),
            context: "batch relations",
        })
    }

    fn name(&self) -> &str;

    fn validate_options(&self, _options: &Options) -> Result<(), String> {
        Ok(())
    }
}

/// Which loss-type slots a loss function can fill.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossFuncCaps {
    pub relation_dense: bool,
    pub relation_edges: bool,
    pub pointwise: bool,
    pub classification: bool,
    pub triplet: bool,
}

/// A loss function referenced by `func:` in a loss entry.
pub trait LossFuncImpl: Send + Sync {
    fn caps(&self) -> LossFuncCaps;

    fn relation_dense<'t>(
        &self,
        _p: &Array2<f64>,
        _q: &BatchRel<'t>,
        _options: &Options,
    ) -> Result<Tensor<'t>, RoutineError> {
        Err(RoutineError::UnsupportedLossForm {
            func: self.name().to_string(),
            form: "dense relation comparison",
        })
    }

    fn relation_edges<'t>(
        &self,
        _p: &[f64],
        _q: &BatchRel<'t>,
        _options: &Options,
    ) -> Result<Tensor<'t>, RoutineError> {
        Err(RoutineError::UnsupportedLossForm {
            func: self.name().to_string(),
            form: "per-edge relation comparison",
        })
    }

    fn pointwise<'t>(
        &self,
        _target: &Array2<f64>,
        _out: Tensor<'t>,
        _options: &Options,
    ) -> Result<Tensor<'t>, RoutineError> {
        Err(RoutineError::UnsupportedLossForm {
            func: self.name().to_string(),
            form: "pointwise comparison",
        })
    }

    fn classification<'t>(
        &self,
        _logits: Tensor<'t>,
        _labels: &[usize],
    ) -> Result<Tensor<'t>, RoutineError> {
        Err(RoutineError::UnsupportedLossForm {
            func: self.name().to_string(),
            form: "classification",
        })
    }

    fn triplet<'t>(
        &self,
        _a: Tensor<'t>,
        _b: Tensor<'t>,
        _c: Tensor<'t>,
        _options: &Options,
    ) -> Result<Tensor<'t>, RoutineError> {
        Err(RoutineError::UnsupportedLossForm {
            func: self.name().to_string(),
            form: "triplet comparison",
        })
    }

    fn name(&self) -> &str;

    fn validate_options(&self, _options: &Options) -> Result<(), String> {
        Ok(())
    }
}

/// Argument to a derived-data function.
pub enum DerivedArg<'a> {
    Data(&'a Field),
    Rels(&'a RelationMatrix),
}

/// A derived-data function (`data_func:`). `out_dim` is the width of the
/// model's embedding head, so derived coordinates line up with position
/// losses against the embedding.
pub trait DataFuncImpl: Send + Sync {
    fn compute(&self, args: &[DerivedArg<'_>], out_dim: usize)
        -> Result<Array2<f64>, RoutineError>;

    fn name(&self) -> &str;
}

/// Per-parameter optimizer state; fresh at every phase start.
pub trait OptimizerState {
    fn step(
        &mut self,
        params: &mut [&mut crate::diff::model::Param],
        grads: &[ArrayD<f64>],
    ) -> Result<(), RoutineError>;
}

/// An optimizer type (`optimizer.type:`).
pub trait OptimizerImpl: Send + Sync {
    fn build(&self, options: &Options) -> Result<Box<dyn OptimizerState>, RoutineError>;

    fn name(&self) -> &str;

    fn validate_options(&self, _options: &Options) -> Result<(), String> {
        Ok(())
    }
}

// ---- registry ----

pub struct RelationEntry {
    pub allowed_options: Option<Vec<String>>,
    pub default_data_key: String,
    pub imp: Arc<dyn RelationImpl>,
}

pub struct TransformEntry {
    pub allowed_options: Option<Vec<String>>,
    pub imp: Arc<dyn TransformImpl>,
}

pub struct LossFuncEntry {
    pub allowed_options: Option<Vec<String>>,
    pub imp: Arc<dyn LossFuncImpl>,
}

pub struct DataFuncEntry {
    pub imp: Arc<dyn DataFuncImpl>,
}

pub struct OptimizerEntry {
    pub allowed_options: Option<Vec<String>>,
    pub imp: Arc<dyn OptimizerImpl>,
}

/// A custom implementation to register, tagged by kind.
pub enum Implementation {
    Relation(Arc<dyn RelationImpl>),
    Transform(Arc<dyn TransformImpl>),
    LossFunc(Arc<dyn LossFuncImpl>),
    DataFunc(Arc<dyn DataFuncImpl>),
    Optimizer(Arc<dyn OptimizerImpl>),
}

#[derive(Default)]
pub struct Registry {
    relations: BTreeMap<String, RelationEntry>,
    transforms: BTreeMap<String, TransformEntry>,
    loss_funcs: BTreeMap<String, LossFuncEntry>,
    data_funcs: BTreeMap<String, DataFuncEntry>,
    optimizers: BTreeMap<String, OptimizerEntry>,
}

impl Registry {
    /// Empty registry; most callers want [`Registry::with_builtins`].
    pub fn new() -> Registry {
        Registry::default()
    }

    /// Registry seeded with every built-in relation type, transform, loss
    /// function, data function, and optimizer.
    pub fn with_builtins() -> Registry {
        let mut reg = Registry::new();
        let opts = |keys: &[&str]| Some(keys.iter().map(|s| s.to_string()).collect());

        reg.relations.insert(
            "pairwise".into(),
            RelationEntry {
                allowed_options: opts(&["metric"]),
                default_data_key: defaults::DATA_KEY.into(),
                imp: Arc::new(PairwiseRelation),
            },
        );
        reg.relations.insert(
            "neighbor".into(),
            RelationEntry {
                allowed_options: opts(&["metric", "n_neighbors"]),
                default_data_key: defaults::DATA_KEY.into(),
                imp: Arc::new(NeighborRelation),
            },
        );
        reg.relations.insert(
            "pairwise_eq".into(),
            RelationEntry {
                allowed_options: opts(&[]),
                default_data_key: "labels".into(),
                imp: Arc::new(PairwiseEqRelation),
            },
        );

        reg.transforms.insert(
            "perplexity".into(),
            TransformEntry {
                allowed_options: opts(&["perplexity"]),
                imp: Arc::new(PerplexityTransform),
            },
        );
        reg.transforms.insert(
            "connect".into(),
            TransformEntry {
                allowed_options: opts(&["neighbors"]),
                imp: Arc::new(ConnectTransform),
            },
        );
        reg.transforms.insert(
            "symmetrize".into(),
            TransformEntry {
                allowed_options: opts(&["sub_prod"]),
                imp: Arc::new(SymmetrizeTransform),
            },
        );
        reg.transforms.insert(
            "normalize".into(),
            TransformEntry {
                allowed_options: opts(&[]),
                imp: Arc::new(NormalizeTransform),
            },
        );
        reg.transforms.insert(
            "t-dist".into(),
            TransformEntry {
                allowed_options: opts(&["alpha"]),
                imp: Arc::new(TDistTransform),
            },
        );
        reg.transforms.insert(
            "cauchy".into(),
            TransformEntry {
                allowed_options: opts(&["spread", "min_dist"]),
                imp: Arc::new(CauchyTransform),
            },
        );
        reg.transforms.insert(
            "multiply".into(),
            TransformEntry {
                allowed_options: opts(&["factor"]),
                imp: Arc::new(MultiplyTransform),
            },
        );

        reg.loss_funcs.insert(
            "mse".into(),
            LossFuncEntry {
                allowed_options: opts(&[]),
                imp: Arc::new(MseFunc),
            },
        );
        reg.loss_funcs.insert(
            "kl_div".into(),
            LossFuncEntry {
                allowed_options: opts(&[]),
                imp: Arc::new(KlDivFunc),
            },
        );
        reg.loss_funcs.insert(
            "cross_entropy".into(),
            LossFuncEntry {
                allowed_options: opts(&[]),
                imp: Arc::new(CrossEntropyFunc),
            },
        );
        reg.loss_funcs.insert(
            "margin".into(),
            LossFuncEntry {
                allowed_options: opts(&["margin", "m"]),
                imp: Arc::new(MarginFunc),
            },
        );
        reg.loss_funcs.insert(
            "corr".into(),
            LossFuncEntry {
                allowed_options: opts(&["i", "j"]),
                imp: Arc::new(CorrFunc),
            },
        );

        reg.data_funcs.insert(
            "pca".into(),
            DataFuncEntry {
                imp: Arc::new(PcaFunc),
            },
        );
        reg.data_funcs.insert(
            "spectral".into(),
            DataFuncEntry {
                imp: Arc::new(SpectralFunc),
            },
        );

        reg.optimizers.insert(
            "sgd".into(),
            OptimizerEntry {
                allowed_options: opts(&["lr", "momentum"]),
                imp: Arc::new(SgdFactory),
            },
        );
        reg.optimizers.insert(
            "adam".into(),
            OptimizerEntry {
                allowed_options: opts(&["lr", "betas", "eps"]),
                imp: Arc::new(AdamFactory),
            },
        );
        reg
    }

    /// Register a custom implementation; any option keys are accepted for
    /// it. Fails on duplicate names within a kind.
    pub fn register(&mut self, name: &str, implementation: Implementation) -> Result<(), SpecError> {
        self.register_with_options(name, implementation, None)
    }

    pub fn register_with_options(
        &mut self,
        name: &str,
        implementation: Implementation,
        allowed_options: Option<&[&str]>,
    ) -> Result<(), SpecError> {
        let name = crate::value::normalize_ident(name);
        let allowed = allowed_options.map(|keys| keys.iter().map(|s| s.to_string()).collect());
        macro_rules! insert {
            ($map:expr, $kind:expr, $entry:expr) => {{
                if $map.contains_key(&name) {
                    return Err(SpecError::DuplicateRegistration {
                        kind: $kind,
                        name,
                    });
                }
                $map.insert(name, $entry);
                Ok(())
            }};
        }
        match implementation {
            Implementation::Relation(imp) => insert!(
                self.relations,
                "relation",
                RelationEntry {
                    allowed_options: allowed,
                    default_data_key: defaults::DATA_KEY.into(),
                    imp,
                }
            ),
            Implementation::Transform(imp) => insert!(
                self.transforms,
                "transform",
                TransformEntry {
                    allowed_options: allowed,
                    imp,
                }
            ),
            Implementation::LossFunc(imp) => insert!(
                self.loss_funcs,
                "loss function",
                LossFuncEntry {
                    allowed_options: allowed,
                    imp,
                }
            ),
            Implementation::DataFunc(imp) => {
                insert!(self.data_funcs, "data function", DataFuncEntry { imp })
            }
            Implementation::Optimizer(imp) => insert!(
                self.optimizers,
                "optimizer",
                OptimizerEntry {
                    allowed_options: allowed,
                    imp,
                }
            ),
        }
    }

    pub fn relation(&self, name: &str) -> Option<&RelationEntry> {
        self.relations.get(name)
    }

    pub fn transform(&self, name: &str) -> Option<&TransformEntry> {
        self.transforms.get(name)
    }

    pub fn loss_func(&self, name: &str) -> Option<&LossFuncEntry> {
        self.loss_funcs.get(name)
    }

    pub fn data_func(&self, name: &str) -> Option<&DataFuncEntry> {
        self.data_funcs.get(name)
    }

    pub fn optimizer(&self, name: &str) -> Option<&OptimizerEntry> {
        self.optimizers.get(name)
    }
}

// ---- option readers ----

pub(crate) fn opt_f64(options: &Options, keys: &[&str], default: f64) -> f64 {
    for key in keys {
        if let Some(v) = options.get(*key).and_then(Value::as_f64) {
            return v;
        }
    }
    default
}

pub(crate) fn opt_count(options: &Options, keys: &[&str], default: usize) -> usize {
    for key in keys {
        if let Some(v) = options.get(*key).and_then(Value::as_count) {
            return v;
        }
    }
    default
}

pub(crate) fn opt_bool(options: &Options, key: &str, default: bool) -> bool {
    options.get(key).and_then(Value::as_bool).unwrap_or(default)
}

pub(crate) fn opt_metric(options: &Options) -> Result<Metric, RoutineError> {
    let name = options
        .get("metric")
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_else(|| defaults::METRIC.to_string());
    Ok(Metric::parse(&name)?)
}

fn validate_metric(options: &Options) -> Result<(), String> {
    if let Some(v) = options.get("metric") {
        let name = v.as_str().ok_or("metric must be a string")?;
        Metric::parse(name).map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn require_positive(options: &Options, key: &str) -> Result<(), String> {
    if let Some(v) = options.get(key) {
        let x = v.as_f64().ok_or_else(|| format!("{key} must be a number"))?;
        if x <= 0.0 {
            return Err(format!("{key} must be positive"));
        }
    }
    Ok(())
}

// ---- builtin relations ----

struct PairwiseRelation;

impl RelationImpl for PairwiseRelation {
    fn global(&self, data: &Field, options: &Options) -> Result<RelationMatrix, RoutineError> {
        let matrix = match data {
            Field::Matrix(m) => m,
            Field::Labels(_) => {
                return Err(RoutineError::WrongField {
                    expected: "a feature matrix",
                    context: "pairwise relations",
                })
            }
        };
        Ok(relations::pairwise_dist(matrix, opt_metric(options)?)?)
    }

    fn batch<'t>(
        &self,
        output: Tensor<'t>,
        options: &Options,
    ) -> Result<BatchRel<'t>, RoutineError> {
        Ok(relations::batch_pdist(output, opt_metric(options)?)?)
    }

    fn batch_edges<'t>(
        &self,
        output: Tensor<'t>,
        heads: &[usize],
        tails: &[usize],
        options: &Options,
    ) -> Result<BatchRel<'t>, RoutineError> {
        Ok(relations::edge_distances(
            output,
            heads,
            tails,
            opt_metric(options)?,
        )?)
    }

    fn name(&self) -> &str {
        "pairwise"
    }

    fn validate_options(&self, options: &Options) -> Result<(), String> {
        validate_metric(options)
    }
}

struct NeighborRelation;

impl RelationImpl for NeighborRelation {
    fn global(&self, data: &Field, options: &Options) -> Result<RelationMatrix, RoutineError> {
        let matrix = match data {
            Field::Matrix(m) => m,
            Field::Labels(_) => {
                return Err(RoutineError::WrongField {
                    expected: "a feature matrix",
                    context: "neighbor relations",
                })
            }
        };
        let k = opt_count(options, &["n_neighbors"], defaults::N_NEIGHBORS);
        Ok(relations::knn_relations(matrix, k, opt_metric(options)?)?)
    }

    fn name(&self) -> &str {
        "neighbor"
    }

    fn validate_options(&self, options: &Options) -> Result<(), String> {
        validate_metric(options)?;
        if let Some(v) = options.get("n_neighbors") {
            if v.as_count().map(|k| k == 0).unwrap_or(true) {
                return Err("n_neighbors must be a positive integer".into());
            }
        }
        Ok(())
    }
}

struct PairwiseEqRelation;

impl RelationImpl for PairwiseEqRelation {
    fn global(&self, data: &Field, _options: &Options) -> Result<RelationMatrix, RoutineError> {
        let labels = match data {
            Field::Labels(l) => l,
            Field::Matrix(_) => {
                return Err(RoutineError::WrongField {
                    expected: "a label vector",
                    context: "pairwise equality relations",
                })
            }
        };
        Ok(relations::pairwise_equality(labels))
    }

    fn name(&self) -> &str {
        "pairwise_eq"
    }
}

// ---- builtin transforms ----

struct PerplexityTransform;

struct PerplexityFn {
    perplexity: f64,
}

impl GlobalTransformFn for PerplexityFn {
    fn apply(&self, rel: RelationMatrix) -> Result<RelationMatrix, RoutineError> {
        Ok(transforms::perplexity_calibrate(&rel, self.perplexity)?.probabilities)
    }
}

impl TransformImpl for PerplexityTransform {
    fn compile_global(
        &self,
        options: &Options,
    ) -> Result<Box<dyn GlobalTransformFn>, RoutineError> {
        Ok(Box::new(PerplexityFn {
            perplexity: opt_f64(options, &["perplexity"], 30.0),
        }))
    }

    fn name(&self) -> &str {
        "perplexity"
    }

    fn validate_options(&self, options: &Options) -> Result<(), String> {
        require_positive(options, "perplexity")
    }
}

struct ConnectTransform;

struct ConnectFn {
    n_neighbors: usize,
}

impl GlobalTransformFn for ConnectFn {
    fn apply(&self, rel: RelationMatrix) -> Result<RelationMatrix, RoutineError> {
        Ok(transforms::connectivity_calibrate(&rel, self.n_neighbors)?.probabilities)
    }
}

impl TransformImpl for ConnectTransform {
    fn compile_global(
        &self,
        options: &Options,
    ) -> Result<Box<dyn GlobalTransformFn>, RoutineError> {
        Ok(Box::new(ConnectFn {
            n_neighbors: opt_count(options, &["neighbors"], defaults::N_NEIGHBORS),
        }))
    }

    fn name(&self) -> &str {
        "connect"
    }

    fn validate_options(&self, options: &Options) -> Result<(), String> {
        if let Some(v) = options.get("neighbors") {
            if v.as_count().map(|k| k == 0).unwrap_or(true) {
                return Err("neighbors must be a positive integer".into());
            }
        }
        Ok(())
    }
}

struct SymmetrizeTransform;

struct SymmetrizeFn {
    mode: SymmetrizeMode,
}

impl GlobalTransformFn for SymmetrizeFn {
    fn apply(&self, rel: RelationMatrix) -> Result<RelationMatrix, RoutineError> {
        Ok(transforms::symmetrize(&rel, self.mode))
    }
}

impl TransformImpl for SymmetrizeTransform {
    fn compile_global(
        &self,
        options: &Options,
    ) -> Result<Box<dyn GlobalTransformFn>, RoutineError> {
        let mode = if opt_bool(options, "sub_prod", false) {
            SymmetrizeMode::SubProd
        } else {
            SymmetrizeMode::Mean
        };
        Ok(Box::new(SymmetrizeFn { mode }))
    }

    fn name(&self) -> &str {
        "symmetrize"
    }
}

struct NormalizeTransform;

struct NormalizeGlobalFn;

impl GlobalTransformFn for NormalizeGlobalFn {
    fn apply(&self, rel: RelationMatrix) -> Result<RelationMatrix, RoutineError> {
        Ok(transforms::normalize(&rel)?)
    }
}

struct NormalizeBatchFn;

impl BatchTransformFn for NormalizeBatchFn {
    fn apply<'t>(&self, rel: BatchRel<'t>) -> Result<BatchRel<'t>, RoutineError> {
        use crate::relations::BatchForm;
        let values = match rel.form {
            BatchForm::Square => {
                let b = rel.values.shape()[0];
                let mask = rel.values.tape().constant(relations::off_diag_mask(b));
                let masked = rel.values.mul(mask);
                masked.div(masked.sum())
            }
            BatchForm::Edges => rel.values.div(rel.values.sum()),
        };
        Ok(BatchRel {
            values,
            form: rel.form,
        })
    }
}

impl TransformImpl for NormalizeTransform {
    fn compile_global(
        &self,
        _options: &Options,
    ) -> Result<Box<dyn GlobalTransformFn>, RoutineError> {
        Ok(Box::new(NormalizeGlobalFn))
    }

    fn compile_batch(
        &self,
        _options: &Options,
    ) -> Result<Box<dyn BatchTransformFn>, RoutineError> {
        Ok(Box::new(NormalizeBatchFn))
    }

    fn name(&self) -> &str {
        "normalize"
    }
}

struct TDistTransform;

struct TDistFn {
    alpha: f64,
}

impl BatchTransformFn for TDistFn {
    fn apply<'t>(&self, rel: BatchRel<'t>) -> Result<BatchRel<'t>, RoutineError> {
        Ok(transforms::student_t_kernel(rel, self.alpha))
    }
}

impl TransformImpl for TDistTransform {
    fn compile_batch(&self, options: &Options) -> Result<Box<dyn BatchTransformFn>, RoutineError> {
        Ok(Box::new(TDistFn {
            alpha: opt_f64(options, &["alpha"], defaults::T_DIST_ALPHA),
        }))
    }

    fn name(&self) -> &str {
        "t-dist"
    }

    fn validate_options(&self, options: &Options) -> Result<(), String> {
        require_positive(options, "alpha")
    }
}

struct CauchyTransform;

struct CauchyFn {
    a: f64,
    b: f64,
}

impl BatchTransformFn for CauchyFn {
    fn apply<'t>(&self, rel: BatchRel<'t>) -> Result<BatchRel<'t>, RoutineError> {
        Ok(transforms::cauchy_kernel(rel, self.a, self.b))
    }
}

impl TransformImpl for CauchyTransform {
    fn compile_batch(&self, options: &Options) -> Result<Box<dyn BatchTransformFn>, RoutineError> {
        let spread = opt_f64(options, &["spread"], defaults::CAUCHY_SPREAD);
        let min_dist = opt_f64(options, &["min_dist"], defaults::CAUCHY_MIN_DIST);
        // Fitted once per routine compilation.
        let (a, b) = transforms::fit_cauchy_params(spread, min_dist)?;
        Ok(Box::new(CauchyFn { a, b }))
    }

    fn name(&self) -> &str {
        "cauchy"
    }

    fn validate_options(&self, options: &Options) -> Result<(), String> {
        require_positive(options, "spread")?;
        if let Some(v) = options.get("min_dist") {
            let x = v.as_f64().ok_or("min_dist must be a number")?;
            if x < 0.0 {
                return Err("min_dist must be non-negative".into());
            }
        }
        Ok(())
    }
}

struct MultiplyTransform;

struct MultiplyGlobalFn {
    factor: f64,
}

impl GlobalTransformFn for MultiplyGlobalFn {
    fn apply(&self, rel: RelationMatrix) -> Result<RelationMatrix, RoutineError> {
        Ok(transforms::rescale(&rel, self.factor))
    }
}

struct MultiplyBatchFn {
    factor: f64,
}

impl BatchTransformFn for MultiplyBatchFn {
    fn apply<'t>(&self, rel: BatchRel<'t>) -> Result<BatchRel<'t>, RoutineError> {
        Ok(BatchRel {
            values: rel.values.mul_scalar(self.factor),
            form: rel.form,
        })
    }
}

impl TransformImpl for MultiplyTransform {
    fn compile_global(
        &self,
        options: &Options,
    ) -> Result<Box<dyn GlobalTransformFn>, RoutineError> {
        Ok(Box::new(MultiplyGlobalFn {
            factor: opt_f64(options, &["factor"], 1.0),
        }))
    }

    fn compile_batch(&self, options: &Options) -> Result<Box<dyn BatchTransformFn>, RoutineError> {
        Ok(Box::new(MultiplyBatchFn {
            factor: opt_f64(options, &["factor"], 1.0),
        }))
    }

    fn name(&self) -> &str {
        "multiply"
    }
}

// ---- builtin loss functions ----

struct MseFunc;

impl LossFuncImpl for MseFunc {
    fn caps(&self) -> LossFuncCaps {
        LossFuncCaps {
            relation_dense: true,
            pointwise: true,
            ..Default::default()
        }
    }

    fn relation_dense<'t>(
        &self,
        p: &Array2<f64>,
        q: &BatchRel<'t>,
        _options: &Options,
    ) -> Result<Tensor<'t>, RoutineError> {
        Ok(losses::relation_loss_mse(p, q)?)
    }

    fn pointwise<'t>(
        &self,
        target: &Array2<f64>,
        out: Tensor<'t>,
        _options: &Options,
    ) -> Result<Tensor<'t>, RoutineError> {
        Ok(losses::position_loss(out, target)?)
    }

    fn name(&self) -> &str {
        "mse"
    }
}

struct KlDivFunc;

impl LossFuncImpl for KlDivFunc {
    fn caps(&self) -> LossFuncCaps {
        LossFuncCaps {
            relation_dense: true,
            ..Default::default()
        }
    }

    fn relation_dense<'t>(
        &self,
        p: &Array2<f64>,
        q: &BatchRel<'t>,
        _options: &Options,
    ) -> Result<Tensor<'t>, RoutineError> {
        Ok(losses::kl_div_loss(p, q)?)
    }

    fn name(&self) -> &str {
        "kl_div"
    }
}

struct CrossEntropyFunc;

impl LossFuncImpl for CrossEntropyFunc {
    fn caps(&self) -> LossFuncCaps {
        LossFuncCaps {
            relation_edges: true,
            classification: true,
            ..Default::default()
        }
    }

    fn relation_edges<'t>(
        &self,
        p: &[f64],
        q: &BatchRel<'t>,
        _options: &Options,
    ) -> Result<Tensor<'t>, RoutineError> {
        Ok(losses::umap_cross_entropy_loss(p, q)?)
    }

    fn classification<'t>(
        &self,
        logits: Tensor<'t>,
        labels: &[usize],
    ) -> Result<Tensor<'t>, RoutineError> {
        Ok(losses::classification_loss(logits, labels)?)
    }

    fn name(&self) -> &str {
        "cross_entropy"
    }
}

struct MarginFunc;

impl LossFuncImpl for MarginFunc {
    fn caps(&self) -> LossFuncCaps {
        LossFuncCaps {
            triplet: true,
            ..Default::default()
        }
    }

    fn triplet<'t>(
        &self,
        a: Tensor<'t>,
        b: Tensor<'t>,
        c: Tensor<'t>,
        options: &Options,
    ) -> Result<Tensor<'t>, RoutineError> {
        let margin = opt_f64(options, &["margin", "m"], defaults::MARGIN);
        Ok(losses::triplet_margin_loss(a, b, c, margin)?)
    }

    fn name(&self) -> &str {
        "margin"
    }

    fn validate_options(&self, options: &Options) -> Result<(), String> {
        for key in ["margin", "m"] {
            if let Some(v) = options.get(key) {
                let x = v.as_f64().ok_or_else(|| format!("{key} must be a number"))?;
                if x < 0.0 {
                    return Err(format!("{key} must be non-negative"));
                }
            }
        }
        Ok(())
    }
}

struct CorrFunc;

impl LossFuncImpl for CorrFunc {
    fn caps(&self) -> LossFuncCaps {
        LossFuncCaps {
            pointwise: true,
            ..Default::default()
        }
    }

    fn pointwise<'t>(
        &self,
        target: &Array2<f64>,
        out: Tensor<'t>,
        options: &Options,
    ) -> Result<Tensor<'t>, RoutineError> {
        // Column indices are 1-based in documents.
        let i = opt_count(options, &["i"], 1);
        let j = opt_count(options, &["j"], 1);
        let (loss, _degenerate) = losses::correlation_loss(target, out, i - 1, j - 1)?;
        Ok(loss)
    }

    fn name(&self) -> &str {
        "corr"
    }

    fn validate_options(&self, options: &Options) -> Result<(), String> {
        for key in ["i", "j"] {
            if let Some(v) = options.get(key) {
                if v.as_count().map(|x| x == 0).unwrap_or(true) {
                    return Err(format!("{key} must be a positive (1-based) column index"));
                }
            }
        }
        Ok(())
    }
}

// ---- builtin data functions ----

struct PcaFunc;

impl DataFuncImpl for PcaFunc {
    fn compute(
        &self,
        args: &[DerivedArg<'_>],
        out_dim: usize,
    ) -> Result<Array2<f64>, RoutineError> {
        match args {
            [DerivedArg::Data(Field::Matrix(m))] => Ok(crate::dataset::pca(m, out_dim)?),
            _ => Err(RoutineError::BadDerivedArgs {
                func: "pca".into(),
                expected: "one [data, <matrix key>] argument",
            }),
        }
    }

    fn name(&self) -> &str {
        "pca"
    }
}

struct SpectralFunc;

impl DataFuncImpl for SpectralFunc {
    fn compute(
        &self,
        args: &[DerivedArg<'_>],
        out_dim: usize,
    ) -> Result<Array2<f64>, RoutineError> {
        match args {
            [DerivedArg::Rels(rel)] => Ok(crate::dataset::spectral_embedding(rel, out_dim)?),
            _ => Err(RoutineError::BadDerivedArgs {
                func: "spectral".into(),
                expected: "one [rels, <relation name>] argument",
            }),
        }
    }

    fn name(&self) -> &str {
        "spectral"
    }
}

// ---- builtin optimizers ----

struct SgdFactory;

impl OptimizerImpl for SgdFactory {
    fn build(&self, options: &Options) -> Result<Box<dyn OptimizerState>, RoutineError> {
        Ok(Box::new(SgdState::new(
            opt_f64(options, &["lr"], defaults::LEARNING_RATE),
            opt_f64(options, &["momentum"], 0.0),
        )))
    }

    fn name(&self) -> &str {
        "sgd"
    }

    fn validate_options(&self, options: &Options) -> Result<(), String> {
        require_positive(options, "lr")
    }
}

struct AdamFactory;

impl OptimizerImpl for AdamFactory {
    fn build(&self, options: &Options) -> Result<Box<dyn OptimizerState>, RoutineError> {
        let betas = options
            .get("betas")
            .and_then(Value::as_num_list)
            .unwrap_or_else(|| vec![0.9, 0.999]);
        if betas.len() != 2 {
            return Err(RoutineError::BadOption {
                key: "betas".into(),
                message: "expected two values".into(),
            });
        }
        Ok(Box::new(AdamState::new(
            opt_f64(options, &["lr"], defaults::LEARNING_RATE),
            betas[0],
            betas[1],
            opt_f64(options, &["eps"], 1e-8),
        )))
    }

    fn name(&self) -> &str {
        "adam"
    }

    fn validate_options(&self, options: &Options) -> Result<(), String> {
        require_positive(options, "lr")?;
        if let Some(v) = options.get("betas") {
            let betas = v.as_num_list().ok_or("betas must be a list of numbers")?;
            if betas.len() != 2 || betas.iter().any(|b| !(0.0..1.0).contains(b)) {
                return Err("betas must be two values in [0, 1)".into());
            }
        }
        Ok(())
    }
}

//! Compilation of a [`RoutineSpec`] against a model and dataset into an
//! executable routine, plus the per-batch loss evaluation used by training.

use crate::dataset::{DataError, Dataset, Field};
use crate::diff::model::{MethodInput, MethodSig, Model, ModelError, Staged};
use crate::diff::{Tape, Tensor};
use crate::losses::LossError;
use crate::relations::{subset_for_batch, RelationError, RelationMatrix};
use crate::sampling::{triplets_from_edges, Batch, SamplingError};
use crate::spec::{
    BatchTransformFn, DataFuncImpl, DerivedArg, DerivedSource, GlobalTransformFn, Level,
    LossFuncImpl, LossSpec, LossType, OptimizerImpl, Registry, RelationImpl, RoutineSpec,
    SpecError, TrainingPhaseSpec,
};
use crate::transforms::TransformError;
use ndarray::Array2;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RoutineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Relation(#[from] RelationError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("'{name}' is not applicable to {context}")]
    NotApplicable { name: String, context: &'static str },
    #[error("loss function '{func}' does not support {form}")]
    UnsupportedLossForm { func: String, form: &'static str },
    #[error("{context} need {expected}")]
    WrongField {
        expected: &'static str,
        context: &'static str,
    },
    #[error("data function '{func}' expects {expected}")]
    BadDerivedArgs { func: String, expected: &'static str },
    #[error("option '{key}': {message}")]
    BadOption { key: String, message: String },
    #[error("dataset is missing data key '{0}'")]
    MissingDataKey(String),
    #[error("model has no method '{0}' required by the routine")]
    MissingModelMethod(String),
    #[error("{context}: width {got} does not match expected {expected}")]
    WidthMismatch {
        context: String,
        expected: usize,
        got: usize,
    },
    #[error("no registered {kind} named '{name}'")]
    UnknownName { kind: &'static str, name: String },
    #[error("loss '{loss}': function '{func}' cannot serve a {loss_type} loss")]
    IncompatibleLossFunc {
        loss: String,
        func: String,
        loss_type: &'static str,
    },
    #[error("loss '{loss}' requires edge sampling in its training phase")]
    NeedsEdgeSampling { loss: String },
    #[error("non-finite loss at phase {phase}, epoch {epoch}")]
    NonFiniteLoss { phase: usize, epoch: usize },
    #[error("non-finite gradient in parameter '{param}' at phase {phase}, epoch {epoch}")]
    NonFiniteGradient {
        param: String,
        phase: usize,
        epoch: usize,
    },
    #[error("global relations not computed; call prepare() before evaluation")]
    NotPrepared,
}

pub(crate) struct CompiledRelation {
    pub imp: Arc<dyn RelationImpl>,
    pub global_chain: Vec<Box<dyn GlobalTransformFn>>,
    pub batch_chain: Vec<Box<dyn BatchTransformFn>>,
}

/// An executable routine: spec, model, dataset, and resolved
/// implementations. Global relations and derived data are computed by
/// [`Routine::prepare`] right before training; compilation itself performs
/// no training, so a freshly compiled routine still embeds randomly.
pub struct Routine {
    pub spec: RoutineSpec,
    pub model: Model,
    pub dataset: Dataset,
    pub seed: u64,
    pub(crate) relations: Vec<CompiledRelation>,
    pub(crate) loss_imps: Vec<Arc<dyn LossFuncImpl>>,
    pub(crate) optimizer_imps: Vec<Arc<dyn OptimizerImpl>>,
    pub(crate) data_func_imps: Vec<Arc<dyn DataFuncImpl>>,
    pub(crate) global_rels: BTreeMap<String, RelationMatrix>,
    prepared: bool,
}

/// Width of the model's embedding head; every routine has one.
fn embed_width(model: &Model) -> Result<usize, RoutineError> {
    match model.method_sig("embed") {
        Some(MethodSig::FromFeatures { out_dim, .. })
        | Some(MethodSig::FromIndices { out_dim }) => Ok(out_dim),
        None => Err(RoutineError::MissingModelMethod("embed".into())),
    }
}

/// Bind a validated spec to a model and dataset, resolving every referenced
/// implementation and checking data keys, model methods, and widths.
pub fn compile_routine(
    spec: RoutineSpec,
    model: Model,
    dataset: Dataset,
    registry: &Registry,
    seed: u64,
) -> Result<Routine, RoutineError> {
    let derived_names: BTreeSet<&str> = spec.derived_data.iter().map(|d| d.name.as_str()).collect();
    let available = |key: &str| dataset.contains(key) || derived_names.contains(key);
    let embed_out = embed_width(&model)?;

    // Data width of a key; derived fields always have the embedding width.
    let width_of = |key: &str| -> Result<Option<usize>, RoutineError> {
        if dataset.contains(key) {
            match dataset.field(key)? {
                Field::Matrix(m) => Ok(Some(m.ncols())),
                Field::Labels(_) => Ok(None),
            }
        } else {
            Ok(Some(embed_out))
        }
    };

    let check_method_input = |method: &str, key: &str, context: &str| -> Result<(), RoutineError> {
        match model.method_sig(method) {
            None => Err(RoutineError::MissingModelMethod(method.to_string())),
            Some(MethodSig::FromIndices { .. }) => Ok(()),
            Some(MethodSig::FromFeatures { in_dim, .. }) => match width_of(key)? {
                Some(width) if width != in_dim => Err(RoutineError::WidthMismatch {
                    context: format!("{context}: model input vs data key '{key}'"),
                    expected: in_dim,
                    got: width,
                }),
                Some(_) => Ok(()),
                None => Err(RoutineError::WrongField {
                    expected: "a feature matrix",
                    context: "model inputs",
                }),
            },
        }
    };

    // Relations: data keys and compiled transform chains.
    let mut relations = Vec::with_capacity(spec.relations.len());
    for recipe in &spec.relations {
        let entry = registry
            .relation(&recipe.rel_type)
            .ok_or_else(|| RoutineError::UnknownName {
                kind: "relation type",
                name: recipe.rel_type.clone(),
            })?;
        match recipe.level {
            Level::Global => {
                if !dataset.contains(&recipe.data_key) {
                    return Err(RoutineError::MissingDataKey(recipe.data_key.clone()));
                }
            }
            Level::Batch => {
                if !available(&recipe.data_key) {
                    return Err(RoutineError::MissingDataKey(recipe.data_key.clone()));
                }
            }
        }
        let mut global_chain = Vec::new();
        let mut batch_chain = Vec::new();
        for transform in &recipe.transforms {
            let tentry =
                registry
                    .transform(&transform.transform_type)
                    .ok_or_else(|| RoutineError::UnknownName {
                        kind: "transform type",
                        name: transform.transform_type.clone(),
                    })?;
            match recipe.level {
                Level::Global => {
                    global_chain.push(tentry.imp.compile_global(&transform.options)?)
                }
                Level::Batch => batch_chain.push(tentry.imp.compile_batch(&transform.options)?),
            }
        }
        relations.push(CompiledRelation {
            imp: Arc::clone(&entry.imp),
            global_chain,
            batch_chain,
        });
    }

    // Losses: data keys, methods, widths, and function capabilities.
    let mut loss_imps = Vec::with_capacity(spec.losses.len());
    for loss in &spec.losses {
        let entry = registry
            .loss_func(&loss.func)
            .ok_or_else(|| RoutineError::UnknownName {
                kind: "loss function",
                name: loss.func.clone(),
            })?;
        let caps = entry.imp.caps();
        let supported = match loss.loss_type {
            LossType::Relation => caps.relation_dense || caps.relation_edges,
            LossType::Classification => caps.classification,
            LossType::Position | LossType::Reconstruction => caps.pointwise,
            LossType::Triplet => caps.triplet,
        };
        if !supported {
            return Err(RoutineError::IncompatibleLossFunc {
                loss: loss.name.clone(),
                func: loss.func.clone(),
                loss_type: loss.loss_type.as_str(),
            });
        }
        for key in &loss.keys.data {
            if !available(key) {
                return Err(RoutineError::MissingDataKey(key.clone()));
            }
        }
        match loss.loss_type {
            LossType::Relation => {
                let batch_rel = loss
                    .keys
                    .rels
                    .iter()
                    .find(|r| spec.relation(r).map(|x| x.level) == Some(Level::Batch))
                    .expect("validated relation keys");
                let recipe = spec.relation(batch_rel).expect("validated");
                let method = &loss.keys.methods[0];
                check_method_input(method, &recipe.data_key, &format!("loss '{}'", loss.name))?;
            }
            LossType::Classification => {
                let method = &loss.keys.methods[0];
                check_method_input(method, &loss.keys.data[0], &format!("loss '{}'", loss.name))?;
                let labels = dataset.labels(&loss.keys.data[1])?;
                if let Some(MethodSig::FromFeatures { out_dim, .. }) = model.method_sig(method) {
                    let max_label = labels.iter().copied().max().unwrap_or(0);
                    if max_label >= out_dim {
                        return Err(RoutineError::WidthMismatch {
                            context: format!(
                                "loss '{}': classes in '{}' vs '{}' logits",
                                loss.name, loss.keys.data[1], method
                            ),
                            expected: max_label + 1,
                            got: out_dim,
                        });
                    }
                }
            }
            LossType::Position => {
                let method = &loss.keys.methods[0];
                check_method_input(method, &loss.keys.data[0], &format!("loss '{}'", loss.name))?;
                if let (Some(MethodSig::FromFeatures { out_dim, .. }), Some(width)) =
                    (model.method_sig(method), width_of(&loss.keys.data[1])?)
                {
                    if width != out_dim {
                        return Err(RoutineError::WidthMismatch {
                            context: format!(
                                "loss '{}': target '{}' vs '{}' output",
                                loss.name, loss.keys.data[1], method
                            ),
                            expected: out_dim,
                            got: width,
                        });
                    }
                }
            }
            LossType::Reconstruction => {
                let mut prev = width_of(&loss.keys.data[0])?;
                for method in &loss.keys.methods {
                    match model.method_sig(method) {
                        None => {
                            return Err(RoutineError::MissingModelMethod(method.clone()));
                        }
                        Some(MethodSig::FromFeatures { in_dim, out_dim }) => {
                            if let Some(width) = prev {
                                if width != in_dim {
                                    return Err(RoutineError::WidthMismatch {
                                        context: format!(
                                            "loss '{}': chained method '{}'",
                                            loss.name, method
                                        ),
                                        expected: in_dim,
                                        got: width,
                                    });
                                }
                            }
                            prev = Some(out_dim);
                        }
                        Some(MethodSig::FromIndices { out_dim }) => prev = Some(out_dim),
                    }
                }
                if let (Some(final_width), Some(input_width)) =
                    (prev, width_of(&loss.keys.data[0])?)
                {
                    if final_width != input_width {
                        return Err(RoutineError::WidthMismatch {
                            context: format!(
                                "loss '{}': decoded width vs input '{}'",
                                loss.name, loss.keys.data[0]
                            ),
                            expected: input_width,
                            got: final_width,
                        });
                    }
                }
            }
            LossType::Triplet => {
                let method = &loss.keys.methods[0];
                check_method_input(method, &loss.keys.data[0], &format!("loss '{}'", loss.name))?;
            }
        }
        loss_imps.push(Arc::clone(&entry.imp));
    }

    // Derived data functions and their arguments.
    let mut data_func_imps = Vec::with_capacity(spec.derived_data.len());
    for derived in &spec.derived_data {
        let entry =
            registry
                .data_func(&derived.data_func)
                .ok_or_else(|| RoutineError::UnknownName {
                    kind: "data function",
                    name: derived.data_func.clone(),
                })?;
        for (source, key) in &derived.keys {
            if *source == DerivedSource::Data && !dataset.contains(key) {
                return Err(RoutineError::MissingDataKey(key.clone()));
            }
        }
        data_func_imps.push(Arc::clone(&entry.imp));
    }

    // Optimizers.
    let mut optimizer_imps = Vec::with_capacity(spec.training_phases.len());
    for phase in &spec.training_phases {
        let entry = registry
            .optimizer(&phase.optimizer.opt_type)
            .ok_or_else(|| RoutineError::UnknownName {
                kind: "optimizer",
                name: phase.optimizer.opt_type.clone(),
            })?;
        optimizer_imps.push(Arc::clone(&entry.imp));
    }

    Ok(Routine {
        spec,
        model,
        dataset,
        seed,
        relations,
        loss_imps,
        optimizer_imps,
        data_func_imps,
        global_rels: BTreeMap::new(),
        prepared: false,
    })
}

impl Routine {
    pub fn is_prepared(&self) -> bool {
        self.prepared
    }

    pub fn global_relation(&self, name: &str) -> Option<&RelationMatrix> {
        self.global_rels.get(name)
    }

    /// Compute all global relations (through their transform chains) and
    /// populate derived data fields. Runs once, right before training.
    pub fn prepare(&mut self) -> Result<(), RoutineError> {
        if self.prepared {
            return Ok(());
        }
        for (recipe, compiled) in self.spec.relations.iter().zip(&self.relations) {
            if recipe.level != Level::Global {
                continue;
            }
            let field = self.dataset.field(&recipe.data_key)?;
            let mut rel = compiled.imp.global(field, &recipe.options)?;
            for step in &compiled.global_chain {
                rel = step.apply(rel)?;
            }
            self.global_rels.insert(recipe.name.clone(), rel);
        }
        let out_dim = embed_width(&self.model)?;
        for (derived, imp) in self.spec.derived_data.iter().zip(&self.data_func_imps) {
            let mut args = Vec::with_capacity(derived.keys.len());
            for (source, key) in &derived.keys {
                match source {
                    DerivedSource::Data => args.push(DerivedArg::Data(self.dataset.field(key)?)),
                    DerivedSource::Rels => args.push(DerivedArg::Rels(
                        self.global_rels
                            .get(key)
                            .ok_or_else(|| RoutineError::UnknownName {
                                kind: "global relation",
                                name: key.clone(),
                            })?,
                    )),
                }
            }
            let values = imp.compute(&args, out_dim)?;
            self.dataset.insert(&derived.name, Field::Matrix(values))?;
        }
        self.prepared = true;
        Ok(())
    }

    /// Data keys a phase's loss components touch (for batch slicing).
    pub(crate) fn phase_data_keys(&self, phase: &TrainingPhaseSpec) -> Vec<String> {
        let mut keys = BTreeSet::new();
        for name in &phase.loss.components {
            let loss = self.spec.loss(name).expect("validated component");
            for key in &loss.keys.data {
                keys.insert(key.clone());
            }
            if loss.loss_type == LossType::Relation {
                for rel in &loss.keys.rels {
                    if let Some(recipe) = self.spec.relation(rel) {
                        if recipe.level == Level::Batch {
                            keys.insert(recipe.data_key.clone());
                        }
                    }
                }
            }
        }
        keys.into_iter().collect()
    }

    /// Evaluate one named loss component on a batch.
    pub(crate) fn evaluate_component<'t>(
        &self,
        staged: &Staged<'_, 't>,
        tape: &'t Tape,
        features: &mut BTreeMap<String, Tensor<'t>>,
        batch: &Batch,
        loss: &LossSpec,
        imp: &Arc<dyn LossFuncImpl>,
    ) -> Result<Tensor<'t>, RoutineError> {
        if !self.prepared {
            return Err(RoutineError::NotPrepared);
        }
        match loss.loss_type {
            LossType::Relation => self.relation_component(staged, tape, features, batch, loss, imp),
            LossType::Classification => {
                let out = self.run_method(staged, tape, features, batch, &loss.keys.methods[0], &loss.keys.data[0])?;
                let labels = batch_labels(batch, &loss.keys.data[1])?;
                imp.classification(out, labels)
            }
            LossType::Position => {
                let out = self.run_method(staged, tape, features, batch, &loss.keys.methods[0], &loss.keys.data[0])?;
                let target = batch_matrix(batch, &loss.keys.data[1])?;
                imp.pointwise(target, out, &loss.options)
            }
            LossType::Reconstruction => {
                let input_key = &loss.keys.data[0];
                let mut out = self.run_method(staged, tape, features, batch, &loss.keys.methods[0], input_key)?;
                for method in &loss.keys.methods[1..] {
                    out = staged.run(method, MethodInput::Features(out))?;
                }
                let input = batch_matrix(batch, input_key)?;
                imp.pointwise(input, out, &loss.options)
            }
            LossType::Triplet => {
                let triplets = triplets_from_edges(batch)?;
                if triplets.is_empty() {
                    return Ok(tape.scalar(0.0));
                }
                let emb = self.run_method(staged, tape, features, batch, &loss.keys.methods[0], &loss.keys.data[0])?;
                let local = local_index(batch);
                let a: Vec<usize> = triplets.iter().map(|t| local[&t.0]).collect();
                let b: Vec<usize> = triplets.iter().map(|t| local[&t.1]).collect();
                let c: Vec<usize> = triplets.iter().map(|t| local[&t.2]).collect();
                imp.triplet(
                    emb.gather_rows(&a),
                    emb.gather_rows(&b),
                    emb.gather_rows(&c),
                    &loss.options,
                )
            }
        }
    }

    fn relation_component<'t>(
        &self,
        staged: &Staged<'_, 't>,
        tape: &'t Tape,
        features: &mut BTreeMap<String, Tensor<'t>>,
        batch: &Batch,
        loss: &LossSpec,
        imp: &Arc<dyn LossFuncImpl>,
    ) -> Result<Tensor<'t>, RoutineError> {
        let (global_name, batch_name) = {
            let a = &loss.keys.rels[0];
            let b = &loss.keys.rels[1];
            if self.spec.relation(a).map(|r| r.level) == Some(Level::Global) {
                (a, b)
            } else {
                (b, a)
            }
        };
        let global_rel = self
            .global_rels
            .get(global_name)
            .ok_or(RoutineError::NotPrepared)?;
        let recipe_idx = self
            .spec
            .relations
            .iter()
            .position(|r| &r.name == batch_name)
            .expect("validated batch relation");
        let recipe = &self.spec.relations[recipe_idx];
        let compiled = &self.relations[recipe_idx];
        let method = &loss.keys.methods[0];
        let out = self.run_method(staged, tape, features, batch, method, &recipe.data_key)?;

        let caps = imp.caps();
        let use_edges = caps.relation_edges && batch.edges.is_some();
        if use_edges {
            let edges = batch.edges.as_ref().expect("checked");
            let local = local_index(batch);
            let heads: Vec<usize> = edges.iter().map(|e| local[&e.i]).collect();
            let tails: Vec<usize> = edges.iter().map(|e| local[&e.j]).collect();
            // p carries the global relation value on positive edges, zero on
            // negatives.
            let p: Vec<f64> = edges
                .iter()
                .map(|e| {
                    if e.is_negative {
                        0.0
                    } else {
                        global_rel.get(e.i, e.j)
                    }
                })
                .collect();
            let mut q = compiled
                .imp
                .batch_edges(out, &heads, &tails, &recipe.options)?;
            for step in &compiled.batch_chain {
                q = step.apply(q)?;
            }
            imp.relation_edges(&p, &q, &loss.options)
        } else {
            if !caps.relation_dense {
                return Err(RoutineError::NeedsEdgeSampling {
                    loss: loss.name.clone(),
                });
            }
            let subset = subset_for_batch(global_rel, &batch.indices)?;
            let mut q = compiled.imp.batch(out, &recipe.options)?;
            for step in &compiled.batch_chain {
                q = step.apply(q)?;
            }
            imp.relation_dense(&subset.values, &q, &loss.options)
        }
    }

    /// Run a model method on the batch: direct embeddings consume indices,
    /// parametric models consume the sliced feature tensor (created once per
    /// batch per data key).
    fn run_method<'t>(
        &self,
        staged: &Staged<'_, 't>,
        tape: &'t Tape,
        features: &mut BTreeMap<String, Tensor<'t>>,
        batch: &Batch,
        method: &str,
        data_key: &str,
    ) -> Result<Tensor<'t>, RoutineError> {
        if matches!(self.model, Model::Direct(_)) {
            return Ok(staged.run(method, MethodInput::Indices(&batch.indices))?);
        }
        let tensor = match features.get(data_key) {
            Some(t) => *t,
            None => {
                let matrix = batch_matrix(batch, data_key)?;
                let t = tape.constant(matrix.clone().into_dyn());
                features.insert(data_key.to_string(), t);
                t
            }
        };
        Ok(staged.run(method, MethodInput::Features(tensor))?)
    }
}

fn batch_matrix<'b>(batch: &'b Batch, key: &str) -> Result<&'b Array2<f64>, RoutineError> {
    match batch.data.get(key) {
        Some(Field::Matrix(m)) => Ok(m),
        Some(Field::Labels(_)) => Err(RoutineError::WrongField {
            expected: "a feature matrix",
            context: "batch slices",
        }),
        None => Err(RoutineError::MissingDataKey(key.to_string())),
    }
}

fn batch_labels<'b>(batch: &'b Batch, key: &str) -> Result<&'b [usize], RoutineError> {
    match batch.data.get(key) {
        Some(Field::Labels(l)) => Ok(l),
        Some(Field::Matrix(_)) => Err(RoutineError::WrongField {
            expected: "a label vector",
            context: "batch slices",
        }),
        None => Err(RoutineError::MissingDataKey(key.to_string())),
    }
}

fn local_index(batch: &Batch) -> BTreeMap<usize, usize> {
    batch
        .indices
        .iter()
        .enumerate()
        .map(|(local, &global)| (global, local))
        .collect()
}

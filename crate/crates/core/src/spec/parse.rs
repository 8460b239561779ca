//! Document parsing and validation against a registry.

use super::doc::{
    as_map, as_seq, check_keys, expect_count, expect_ident, get, ident_list, num_list, to_value,
    Doc,
};
use super::registry::Registry;
use super::{
    defaults, CompoundSpec, DerivedDataSpec, DerivedSource, Level, LossKeys, LossSpec, LossType,
    OptimizerSpec, RelationRecipe, RoutineSpec, SamplingSpec, SamplingType, SpecError,
    TrainingPhaseSpec, TransformSpec,
};
use crate::value::{Options, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocFormat {
    Yaml,
    Json,
}

/// Parse a routine document, auto-detecting JSON (leading `{`) vs YAML.
pub fn parse_spec(document: &str, registry: &Registry) -> Result<RoutineSpec, SpecError> {
    let format = if document.trim_start().starts_with('{') {
        DocFormat::Json
    } else {
        DocFormat::Yaml
    };
    parse_spec_with_format(document, format, registry)
}

pub fn parse_spec_with_format(
    document: &str,
    format: DocFormat,
    registry: &Registry,
) -> Result<RoutineSpec, SpecError> {
    let doc = match format {
        DocFormat::Yaml => {
            let value: serde_yaml::Value =
                serde_yaml::from_str(document).map_err(|e| SpecError::Syntax {
                    line: e.location().map(|l| l.line()).unwrap_or(0),
                    column: e.location().map(|l| l.column()).unwrap_or(0),
                    message: e.to_string(),
                })?;
            Doc::from_yaml(value)?
        }
        DocFormat::Json => {
            let value: serde_json::Value =
                serde_json::from_str(document).map_err(|e| SpecError::Syntax {
                    line: e.line(),
                    column: e.column(),
                    message: e.to_string(),
                })?;
            Doc::from_json(value)
        }
    };
    build_spec(&doc, registry)
}

fn build_spec(doc: &Doc, registry: &Registry) -> Result<RoutineSpec, SpecError> {
    let root = as_map(doc, "<document>")?;
    check_keys(
        root,
        &["derived_data", "relations", "losses", "training_phases"],
        "<document>",
    )?;
    let require = |field: &'static str| -> Result<&Doc, SpecError> {
        get(root, field).ok_or(SpecError::MissingField {
            path: "<document>".into(),
            field,
        })
    };

    let relations = parse_relations(require("relations")?, registry)?;
    let losses = parse_losses(require("losses")?, registry)?;
    let derived_data = match get(root, "derived_data") {
        Some(doc) => parse_derived(doc, registry)?,
        None => Vec::new(),
    };
    let training_phases =
        parse_phases(require("training_phases")?, registry, &relations, &losses)?;

    let spec = RoutineSpec {
        derived_data,
        relations,
        losses,
        training_phases,
    };
    cross_validate(&spec)?;
    Ok(spec)
}

fn parse_options(
    doc: Option<&Doc>,
    allowed: Option<&[String]>,
    path: &str,
) -> Result<Options, SpecError> {
    let mut options = Options::new();
    let Some(doc) = doc else {
        return Ok(options);
    };
    let map = as_map(doc, path)?;
    for (key, value) in map {
        if let Some(allowed) = allowed {
            if !allowed.iter().any(|a| a == key) {
                return Err(SpecError::UnknownKey {
                    path: path.to_string(),
                    key: key.clone(),
                });
            }
        }
        options.insert(key.clone(), to_value(value, &format!("{path}.{key}"))?);
    }
    Ok(options)
}

fn parse_relations(doc: &Doc, registry: &Registry) -> Result<Vec<RelationRecipe>, SpecError> {
    let items = as_seq(doc, "relations")?;
    let mut recipes = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let path = format!("relations[{i}]");
        let map = as_map(item, &path)?;
        check_keys(
            map,
            &["name", "level", "type", "data", "options", "transforms"],
            &path,
        )?;
        let name = expect_ident(
            get(map, "name").ok_or(SpecError::MissingField {
                path: path.clone(),
                field: "name",
            })?,
            &format!("{path}.name"),
        )?;
        let level_str = expect_ident(
            get(map, "level").ok_or(SpecError::MissingField {
                path: path.clone(),
                field: "level",
            })?,
            &format!("{path}.level"),
        )?;
        let level = match level_str.as_str() {
            "global" => Level::Global,
            "batch" => Level::Batch,
            other => {
                return Err(SpecError::UnknownValue {
                    path: format!("{path}.level"),
                    kind: "relation level",
                    value: other.to_string(),
                })
            }
        };
        let rel_type = expect_ident(
            get(map, "type").ok_or(SpecError::MissingField {
                path: path.clone(),
                field: "type",
            })?,
            &format!("{path}.type"),
        )?;
        let entry = registry.relation(&rel_type).ok_or(SpecError::UnknownValue {
            path: format!("{path}.type"),
            kind: "relation type",
            value: rel_type.clone(),
        })?;
        let mut options = parse_options(
            get(map, "options"),
            entry.allowed_options.as_deref(),
            &format!("{path}.options"),
        )?;
        entry
            .imp
            .validate_options(&options)
            .map_err(|message| SpecError::Invalid {
                path: format!("{path}.options"),
                message,
            })?;
        let accepts_metric = entry
            .allowed_options
            .as_ref()
            .map(|a| a.iter().any(|k| k == "metric"))
            .unwrap_or(false);
        if accepts_metric && !options.contains_key("metric") {
            options.insert("metric".into(), Value::Str(defaults::METRIC.into()));
        }
        let data_key = match get(map, "data") {
            Some(doc) => expect_ident(doc, &format!("{path}.data"))?,
            None => entry.default_data_key.clone(),
        };
        let transforms = match get(map, "transforms") {
            Some(doc) => parse_transforms(doc, registry, &format!("{path}.transforms"))?,
            None => Vec::new(),
        };
        recipes.push(RelationRecipe {
            name,
            level,
            rel_type,
            data_key,
            options,
            transforms,
        });
    }
    Ok(recipes)
}

fn parse_transforms(
    doc: &Doc,
    registry: &Registry,
    path: &str,
) -> Result<Vec<TransformSpec>, SpecError> {
    let items = as_seq(doc, path)?;
    let mut transforms = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let tpath = format!("{path}[{i}]");
        let map = as_map(item, &tpath)?;
        check_keys(map, &["type", "options"], &tpath)?;
        let transform_type = expect_ident(
            get(map, "type").ok_or(SpecError::MissingField {
                path: tpath.clone(),
                field: "type",
            })?,
            &format!("{tpath}.type"),
        )?;
        let entry = registry
            .transform(&transform_type)
            .ok_or(SpecError::UnknownValue {
                path: format!("{tpath}.type"),
                kind: "transform type",
                value: transform_type.clone(),
            })?;
        let options = parse_options(
            get(map, "options"),
            entry.allowed_options.as_deref(),
            &format!("{tpath}.options"),
        )?;
        entry
            .imp
            .validate_options(&options)
            .map_err(|message| SpecError::Invalid {
                path: format!("{tpath}.options"),
                message,
            })?;
        transforms.push(TransformSpec {
            transform_type,
            options,
        });
    }
    Ok(transforms)
}

fn parse_losses(doc: &Doc, registry: &Registry) -> Result<Vec<LossSpec>, SpecError> {
    let items = as_seq(doc, "losses")?;
    let mut losses = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let path = format!("losses[{i}]");
        let map = as_map(item, &path)?;
        check_keys(map, &["name", "type", "func", "keys", "options"], &path)?;
        let name = expect_ident(
            get(map, "name").ok_or(SpecError::MissingField {
                path: path.clone(),
                field: "name",
            })?,
            &format!("{path}.name"),
        )?;
        let type_str = expect_ident(
            get(map, "type").ok_or(SpecError::MissingField {
                path: path.clone(),
                field: "type",
            })?,
            &format!("{path}.type"),
        )?;
        let loss_type = match type_str.as_str() {
            "relation" => LossType::Relation,
            "classification" => LossType::Classification,
            "reconstruction" => LossType::Reconstruction,
            "position" => LossType::Position,
            "triplet" => LossType::Triplet,
            other => {
                return Err(SpecError::UnknownValue {
                    path: format!("{path}.type"),
                    kind: "loss type",
                    value: other.to_string(),
                })
            }
        };
        let func = expect_ident(
            get(map, "func").ok_or(SpecError::MissingField {
                path: path.clone(),
                field: "func",
            })?,
            &format!("{path}.func"),
        )?;
        let entry = registry.loss_func(&func).ok_or(SpecError::UnknownValue {
            path: format!("{path}.func"),
            kind: "loss function",
            value: func.clone(),
        })?;
        let options = parse_options(
            get(map, "options"),
            entry.allowed_options.as_deref(),
            &format!("{path}.options"),
        )?;
        entry
            .imp
            .validate_options(&options)
            .map_err(|message| SpecError::Invalid {
                path: format!("{path}.options"),
                message,
            })?;
        let keys = parse_loss_keys(get(map, "keys"), loss_type, &format!("{path}.keys"))?;
        losses.push(LossSpec {
            name,
            loss_type,
            func,
            keys,
            options,
        });
    }
    Ok(losses)
}

fn parse_loss_keys(
    doc: Option<&Doc>,
    loss_type: LossType,
    path: &str,
) -> Result<LossKeys, SpecError> {
    let mut keys = LossKeys::default();
    if let Some(doc) = doc {
        let map = as_map(doc, path)?;
        check_keys(map, &["data", "rels", "methods"], path)?;
        if let Some(d) = get(map, "data") {
            keys.data = ident_list(d, &format!("{path}.data"))?;
        }
        if let Some(d) = get(map, "rels") {
            keys.rels = ident_list(d, &format!("{path}.rels"))?;
        }
        if let Some(d) = get(map, "methods") {
            keys.methods = ident_list(d, &format!("{path}.methods"))?;
        }
    }
    // Per-type defaults and arity requirements.
    match loss_type {
        LossType::Relation => {
            if keys.methods.is_empty() {
                keys.methods = vec!["embed".into()];
            }
            if keys.rels.len() != 2 {
                return Err(SpecError::Invalid {
                    path: path.to_string(),
                    message: format!(
                        "relation losses name exactly one global and one batch relation \
                         (got {} rels)",
                        keys.rels.len()
                    ),
                });
            }
        }
        LossType::Classification => {
            if keys.data.is_empty() {
                keys.data = vec!["main".into(), "labels".into()];
            }
            if keys.methods.is_empty() {
                keys.methods = vec!["classify".into()];
            }
            if keys.data.len() != 2 {
                return Err(SpecError::Invalid {
                    path: path.to_string(),
                    message: format!(
                        "classification losses name two data keys (got {})",
                        keys.data.len()
                    ),
                });
            }
        }
        LossType::Position => {
            if keys.methods.is_empty() {
                keys.methods = vec!["embed".into()];
            }
            if keys.data.len() != 2 {
                return Err(SpecError::Invalid {
                    path: path.to_string(),
                    message: format!(
                        "position losses name two data keys: input and target coordinates \
                         (got {})",
                        keys.data.len()
                    ),
                });
            }
        }
        LossType::Reconstruction => {
            if keys.data.is_empty() {
                keys.data = vec!["main".into()];
            }
            if keys.methods.is_empty() {
                keys.methods = vec!["encode".into(), "decode".into()];
            }
        }
        LossType::Triplet => {
            if keys.data.is_empty() {
                keys.data = vec!["main".into()];
            }
            if keys.methods.is_empty() {
                keys.methods = vec!["embed".into()];
            }
        }
    }
    Ok(keys)
}

fn parse_derived(doc: &Doc, registry: &Registry) -> Result<Vec<DerivedDataSpec>, SpecError> {
    let items = as_seq(doc, "derived_data")?;
    let mut derived = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let path = format!("derived_data[{i}]");
        let map = as_map(item, &path)?;
        check_keys(map, &["name", "data_func", "keys"], &path)?;
        let name = expect_ident(
            get(map, "name").ok_or(SpecError::MissingField {
                path: path.clone(),
                field: "name",
            })?,
            &format!("{path}.name"),
        )?;
        let data_func = expect_ident(
            get(map, "data_func").ok_or(SpecError::MissingField {
                path: path.clone(),
                field: "data_func",
            })?,
            &format!("{path}.data_func"),
        )?;
        if registry.data_func(&data_func).is_none() {
            return Err(SpecError::UnknownValue {
                path: format!("{path}.data_func"),
                kind: "data function",
                value: data_func,
            });
        }
        let keys_doc = get(map, "keys").ok_or(SpecError::MissingField {
            path: path.clone(),
            field: "keys",
        })?;
        let pairs = as_seq(keys_doc, &format!("{path}.keys"))?;
        let mut keys = Vec::with_capacity(pairs.len());
        for (j, pair) in pairs.iter().enumerate() {
            let ppath = format!("{path}.keys[{j}]");
            let entry = as_seq(pair, &ppath)?;
            if entry.len() != 2 {
                return Err(SpecError::Invalid {
                    path: ppath,
                    message: "derived keys are [source, key] pairs".into(),
                });
            }
            let source = match expect_ident(&entry[0], &format!("{ppath}[0]"))?.as_str() {
                "data" => DerivedSource::Data,
                "rels" => DerivedSource::Rels,
                other => {
                    return Err(SpecError::UnknownValue {
                        path: format!("{ppath}[0]"),
                        kind: "derived data source",
                        value: other.to_string(),
                    })
                }
            };
            let key = expect_ident(&entry[1], &format!("{ppath}[1]"))?;
            keys.push((source, key));
        }
        derived.push(DerivedDataSpec {
            name,
            data_func,
            keys,
        });
    }
    Ok(derived)
}

fn parse_phases(
    doc: &Doc,
    registry: &Registry,
    relations: &[RelationRecipe],
    losses: &[LossSpec],
) -> Result<Vec<TrainingPhaseSpec>, SpecError> {
    let items = as_seq(doc, "training_phases")?;
    let mut phases = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let path = format!("training_phases[{i}]");
        let map = as_map(item, &path)?;
        check_keys(map, &["epochs", "sampling", "loss", "optimizer"], &path)?;
        let epochs = match get(map, "epochs") {
            Some(doc) => expect_count(doc, &format!("{path}.epochs"))?,
            None => defaults::EPOCHS,
        };

        let loss_doc = get(map, "loss").ok_or(SpecError::MissingField {
            path: path.clone(),
            field: "loss",
        })?;
        let loss_map = as_map(loss_doc, &format!("{path}.loss"))?;
        check_keys(loss_map, &["components", "weights"], &format!("{path}.loss"))?;
        let components = ident_list(
            get(loss_map, "components").ok_or(SpecError::MissingField {
                path: format!("{path}.loss"),
                field: "components",
            })?,
            &format!("{path}.loss.components"),
        )?;
        if components.is_empty() {
            return Err(SpecError::Invalid {
                path: format!("{path}.loss.components"),
                message: "at least one loss component is required".into(),
            });
        }
        let weights = match get(loss_map, "weights") {
            Some(doc) => {
                let w = num_list(doc, &format!("{path}.loss.weights"))?;
                if w.len() != components.len() {
                    return Err(SpecError::WeightArity {
                        path: format!("{path}.loss.weights"),
                        components: components.len(),
                        weights: w.len(),
                    });
                }
                for (k, &weight) in w.iter().enumerate() {
                    if weight < 0.0 {
                        return Err(SpecError::Invalid {
                            path: format!("{path}.loss.weights[{k}]"),
                            message: "weights must be non-negative".into(),
                        });
                    }
                }
                w
            }
            None => vec![1.0; components.len()],
        };

        let sampling = parse_sampling(
            get(map, "sampling"),
            &format!("{path}.sampling"),
            relations,
            losses,
            &components,
        )?;

        let optimizer = match get(map, "optimizer") {
            Some(doc) => {
                let opath = format!("{path}.optimizer");
                let omap = as_map(doc, &opath)?;
                check_keys(omap, &["type", "options"], &opath)?;
                let opt_type = expect_ident(
                    get(omap, "type").ok_or(SpecError::MissingField {
                        path: opath.clone(),
                        field: "type",
                    })?,
                    &format!("{opath}.type"),
                )?;
                let entry = registry.optimizer(&opt_type).ok_or(SpecError::UnknownValue {
                    path: format!("{opath}.type"),
                    kind: "optimizer type",
                    value: opt_type.clone(),
                })?;
                let options = parse_options(
                    get(omap, "options"),
                    entry.allowed_options.as_deref(),
                    &format!("{opath}.options"),
                )?;
                entry
                    .imp
                    .validate_options(&options)
                    .map_err(|message| SpecError::Invalid {
                        path: format!("{opath}.options"),
                        message,
                    })?;
                OptimizerSpec { opt_type, options }
            }
            None => {
                let mut options = Options::new();
                options.insert("lr".into(), Value::Num(defaults::LEARNING_RATE));
                OptimizerSpec {
                    opt_type: defaults::OPTIMIZER.into(),
                    options,
                }
            }
        };

        phases.push(TrainingPhaseSpec {
            epochs,
            sampling,
            loss: CompoundSpec {
                components,
                weights,
            },
            optimizer,
        });
    }
    Ok(phases)
}

fn parse_sampling(
    doc: Option<&Doc>,
    path: &str,
    relations: &[RelationRecipe],
    losses: &[LossSpec],
    components: &[String],
) -> Result<SamplingSpec, SpecError> {
    let (sampling_type, mut batch_size, mut rels, mut rate) =
        (SamplingType::Item, defaults::BATCH_SIZE, None, defaults::EDGE_RATE);
    let mut sampling_type = match doc {
        None => sampling_type,
        Some(doc) => {
            let map = as_map(doc, path)?;
            check_keys(map, &["type", "options"], path)?;
            let type_str = expect_ident(
                get(map, "type").ok_or(SpecError::MissingField {
                    path: path.to_string(),
                    field: "type",
                })?,
                &format!("{path}.type"),
            )?;
            let sampling_type = match type_str.as_str() {
                "item" => SamplingType::Item,
                "edge" => SamplingType::Edge,
                other => {
                    return Err(SpecError::UnknownValue {
                        path: format!("{path}.type"),
                        kind: "sampling type",
                        value: other.to_string(),
                    })
                }
            };
            let allowed: &[&str] = match sampling_type {
                SamplingType::Item => &["batch_size"],
                SamplingType::Edge => &["batch_size", "rels", "rate"],
            };
            if let Some(options_doc) = get(map, "options") {
                let omap = as_map(options_doc, &format!("{path}.options"))?;
                check_keys(omap, allowed, &format!("{path}.options"))?;
                if let Some(d) = get(omap, "batch_size") {
                    batch_size = expect_count(d, &format!("{path}.options.batch_size"))?;
                    if batch_size == 0 {
                        return Err(SpecError::Invalid {
                            path: format!("{path}.options.batch_size"),
                            message: "batch size must be at least 1".into(),
                        });
                    }
                }
                if let Some(d) = get(omap, "rels") {
                    rels = Some(expect_ident(d, &format!("{path}.options.rels"))?);
                }
                if let Some(d) = get(omap, "rate") {
                    rate = expect_count(d, &format!("{path}.options.rate"))?;
                }
            }
            sampling_type
        }
    };
    if doc.is_none() {
        sampling_type = SamplingType::Item;
    }

    if sampling_type == SamplingType::Edge && rels.is_none() {
        rels = infer_edge_relation(relations, losses, components);
        if rels.is_none() {
            return Err(SpecError::Invalid {
                path: path.to_string(),
                message: "edge sampling names a global relation in options.rels \
                          (no unique global relation to infer)"
                    .into(),
            });
        }
    }
    if let Some(name) = &rels {
        match relations.iter().find(|r| &r.name == name) {
            None => {
                return Err(SpecError::DanglingReference {
                    path: format!("{path}.options.rels"),
                    kind: "relation",
                    name: name.clone(),
                })
            }
            Some(recipe) if recipe.level != Level::Global => {
                return Err(SpecError::Invalid {
                    path: format!("{path}.options.rels"),
                    message: format!("edge sampling requires a global relation, '{name}' is batch-level"),
                })
            }
            Some(_) => {}
        }
    }
    Ok(SamplingSpec {
        sampling_type,
        batch_size,
        rels,
        rate,
    })
}

/// Default relation for edge sampling: the unique global relation of the
/// spec, or the unique global relation among the phase's relation losses.
fn infer_edge_relation(
    relations: &[RelationRecipe],
    losses: &[LossSpec],
    components: &[String],
) -> Option<String> {
    let globals: Vec<&RelationRecipe> = relations
        .iter()
        .filter(|r| r.level == Level::Global)
        .collect();
    if globals.len() == 1 {
        return Some(globals[0].name.clone());
    }
    let mut candidates: Vec<String> = Vec::new();
    for name in components {
        if let Some(loss) = losses.iter().find(|l| &l.name == name) {
            if loss.loss_type == LossType::Relation {
                for rel in &loss.keys.rels {
                    if globals.iter().any(|g| &g.name == rel) && !candidates.contains(rel) {
                        candidates.push(rel.clone());
                    }
                }
            }
        }
    }
    (candidates.len() == 1).then(|| candidates[0].clone())
}

fn cross_validate(spec: &RoutineSpec) -> Result<(), SpecError> {
    // Unique names.
    for (kind, names) in [
        (
            "relation",
            spec.relations.iter().map(|r| &r.name).collect::<Vec<_>>(),
        ),
        ("loss", spec.losses.iter().map(|l| &l.name).collect()),
        (
            "derived data",
            spec.derived_data.iter().map(|d| &d.name).collect(),
        ),
    ] {
        let mut seen = std::collections::BTreeSet::new();
        for name in names {
            if !seen.insert(name.clone()) {
                return Err(SpecError::DuplicateName {
                    kind,
                    name: name.clone(),
                });
            }
        }
    }

    // Loss -> relation references, with level checks for relation losses.
    for (i, loss) in spec.losses.iter().enumerate() {
        let path = format!("losses[{i}].keys.rels");
        for rel in &loss.keys.rels {
            if spec.relation(rel).is_none() {
                return Err(SpecError::DanglingReference {
                    path: path.clone(),
                    kind: "relation",
                    name: rel.clone(),
                });
            }
        }
        if loss.loss_type == LossType::Relation {
            let levels: Vec<Level> = loss
                .keys
                .rels
                .iter()
                .map(|r| spec.relation(r).expect("checked above").level)
                .collect();
            let globals = levels.iter().filter(|l| **l == Level::Global).count();
            let batches = levels.iter().filter(|l| **l == Level::Batch).count();
            if globals != 1 || batches != 1 {
                return Err(SpecError::Invalid {
                    path,
                    message: format!(
                        "relation losses name exactly one global and one batch relation \
                         (got {globals} global, {batches} batch)"
                    ),
                });
            }
        }
    }

    // Derived data referencing relations.
    for (i, derived) in spec.derived_data.iter().enumerate() {
        for (j, (source, key)) in derived.keys.iter().enumerate() {
            if *source == DerivedSource::Rels {
                match spec.relation(key) {
                    None => {
                        return Err(SpecError::DanglingReference {
                            path: format!("derived_data[{i}].keys[{j}]"),
                            kind: "relation",
                            name: key.clone(),
                        })
                    }
                    Some(recipe) if recipe.level != Level::Global => {
                        return Err(SpecError::Invalid {
                            path: format!("derived_data[{i}].keys[{j}]"),
                            message: format!(
                                "derived data can only use global relations, '{key}' is batch-level"
                            ),
                        })
                    }
                    Some(_) => {}
                }
            }
        }
    }

    // Phase -> loss references and sampler compatibility.
    for (i, phase) in spec.training_phases.iter().enumerate() {
        for name in &phase.loss.components {
            let Some(loss) = spec.loss(name) else {
                return Err(SpecError::DanglingReference {
                    path: format!("training_phases[{i}].loss.components"),
                    kind: "loss",
                    name: name.clone(),
                });
            };
            let path = format!("training_phases[{i}]");
            match loss.loss_type {
                LossType::Triplet => {
                    if phase.sampling.sampling_type != SamplingType::Edge
                        || phase.sampling.rate < 1
                    {
                        return Err(SpecError::Invalid {
                            path,
                            message: format!(
                                "loss '{name}' needs edge sampling with rate >= 1"
                            ),
                        });
                    }
                }
                LossType::Relation if loss.func == "cross_entropy" => {
                    if phase.sampling.sampling_type != SamplingType::Edge {
                        return Err(SpecError::Invalid {
                            path,
                            message: format!(
                                "relation loss '{name}' with cross entropy needs edge sampling"
                            ),
                        });
                    }
                }
                _ => {}
            }
        }
    }
    Ok(())
}

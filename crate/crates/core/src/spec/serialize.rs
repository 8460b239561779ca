//! Emit a resolved routine spec as YAML or JSON. Re-parsing the output
//! yields an equal spec (defaults are already filled in).

use super::{RoutineSpec, SamplingType};
use crate::value::Value;
use serde_json::{json, Map as JsonMap, Value as Json};
use std::fmt::Write;

fn yaml_scalar(value: &Value) -> String {
    match value {
        Value::Bool(b) => b.to_string(),
        Value::Num(x) => x.to_string(),
        Value::Str(s) => yaml_str(s),
        Value::List(items) => {
            let inner: Vec<String> = items.iter().map(yaml_scalar).collect();
            format!("[{}]", inner.join(", "))
        }
    }
}

fn yaml_str(s: &str) -> String {
    let bare = !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
        && !s.chars().next().unwrap().is_ascii_digit();
    if bare {
        s.to_string()
    } else {
        format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
    }
}

fn yaml_options(options: &crate::value::Options) -> String {
    let inner: Vec<String> = options
        .iter()
        .map(|(k, v)| format!("{k}: {}", yaml_scalar(v)))
        .collect();
    format!("{{{}}}", inner.join(", "))
}

fn yaml_ident_list(items: &[String]) -> String {
    let inner: Vec<String> = items.iter().map(|s| yaml_str(s)).collect();
    format!("[{}]", inner.join(", "))
}

fn yaml_num_list(items: &[f64]) -> String {
    let inner: Vec<String> = items.iter().map(|x| x.to_string()).collect();
    format!("[{}]", inner.join(", "))
}

/// Human-readable YAML form of a resolved spec.
pub fn to_yaml(spec: &RoutineSpec) -> String {
    let mut out = String::new();
    if !spec.derived_data.is_empty() {
        out.push_str("derived_data:\n");
        for d in &spec.derived_data {
            let _ = writeln!(out, "  - name: {}", yaml_str(&d.name));
            let _ = writeln!(out, "    data_func: {}", yaml_str(&d.data_func));
            let pairs: Vec<String> = d
                .keys
                .iter()
                .map(|(source, key)| format!("[{}, {}]", source.as_str(), yaml_str(key)))
                .collect();
            let _ = writeln!(out, "    keys: [{}]", pairs.join(", "));
        }
    }
    out.push_str("relations:");
    if spec.relations.is_empty() {
        out.push_str(" []");
    }
    out.push('\n');
    for r in &spec.relations {
        let _ = writeln!(out, "  - name: {}", yaml_str(&r.name));
        let _ = writeln!(out, "    level: {}", r.level.as_str());
        let _ = writeln!(out, "    type: {}", yaml_str(&r.rel_type));
        let _ = writeln!(out, "    data: {}", yaml_str(&r.data_key));
        if !r.options.is_empty() {
            let _ = writeln!(out, "    options: {}", yaml_options(&r.options));
        }
        if !r.transforms.is_empty() {
            out.push_str("    transforms:\n");
            for t in &r.transforms {
                let _ = writeln!(out, "      - type: {}", yaml_str(&t.transform_type));
                if !t.options.is_empty() {
                    let _ = writeln!(out, "        options: {}", yaml_options(&t.options));
                }
            }
        }
    }
    out.push_str("losses:");
    if spec.losses.is_empty() {
        out.push_str(" []");
    }
    out.push('\n');
    for l in &spec.losses {
        let _ = writeln!(out, "  - name: {}", yaml_str(&l.name));
        let _ = writeln!(out, "    type: {}", l.loss_type.as_str());
        let _ = writeln!(out, "    func: {}", yaml_str(&l.func));
        out.push_str("    keys:\n");
        if !l.keys.data.is_empty() {
            let _ = writeln!(out, "      data: {}", yaml_ident_list(&l.keys.data));
        }
        if !l.keys.rels.is_empty() {
            let _ = writeln!(out, "      rels: {}", yaml_ident_list(&l.keys.rels));
        }
        if !l.keys.methods.is_empty() {
            let _ = writeln!(out, "      methods: {}", yaml_ident_list(&l.keys.methods));
        }
        if !l.options.is_empty() {
            let _ = writeln!(out, "    options: {}", yaml_options(&l.options));
        }
    }
    out.push_str("training_phases:");
    if spec.training_phases.is_empty() {
        out.push_str(" []");
    }
    out.push('\n');
    for p in &spec.training_phases {
        let _ = writeln!(out, "  - epochs: {}", p.epochs);
        let _ = writeln!(out, "    sampling:");
        let _ = writeln!(out, "      type: {}", p.sampling.sampling_type.as_str());
        let mut opts = format!("batch_size: {}", p.sampling.batch_size);
        if p.sampling.sampling_type == SamplingType::Edge {
            if let Some(rels) = &p.sampling.rels {
                let _ = write!(opts, ", rels: {}", yaml_str(rels));
            }
            let _ = write!(opts, ", rate: {}", p.sampling.rate);
        }
        let _ = writeln!(out, "      options: {{{opts}}}");
        let _ = writeln!(out, "    loss:");
        let _ = writeln!(out, "      components: {}", yaml_ident_list(&p.loss.components));
        let _ = writeln!(out, "      weights: {}", yaml_num_list(&p.loss.weights));
        let _ = writeln!(out, "    optimizer:");
        let _ = writeln!(out, "      type: {}", yaml_str(&p.optimizer.opt_type));
        if !p.optimizer.options.is_empty() {
            let _ = writeln!(out, "      options: {}", yaml_options(&p.optimizer.options));
        }
    }
    out
}

fn json_value(value: &Value) -> Json {
    match value {
        Value::Bool(b) => Json::Bool(*b),
        Value::Num(x) => json!(x),
        Value::Str(s) => Json::String(s.clone()),
        Value::List(items) => Json::Array(items.iter().map(json_value).collect()),
    }
}

fn json_options(options: &crate::value::Options) -> Json {
    let mut map = JsonMap::new();
    for (k, v) in options {
        map.insert(k.clone(), json_value(v));
    }
    Json::Object(map)
}

/// JSON encoding with the same structure as the YAML form.
pub fn to_json(spec: &RoutineSpec) -> String {
    let derived: Vec<Json> = spec
        .derived_data
        .iter()
        .map(|d| {
            json!({
                "name": d.name,
                "data_func": d.data_func,
                "keys": d.keys.iter()
                    .map(|(s, k)| json!([s.as_str(), k]))
                    .collect::<Vec<_>>(),
            })
        })
        .collect();
    let relations: Vec<Json> = spec
        .relations
        .iter()
        .map(|r| {
            let mut obj = JsonMap::new();
            obj.insert("name".into(), json!(r.name));
            obj.insert("level".into(), json!(r.level.as_str()));
            obj.insert("type".into(), json!(r.rel_type));
            obj.insert("data".into(), json!(r.data_key));
            if !r.options.is_empty() {
                obj.insert("options".into(), json_options(&r.options));
            }
            if !r.transforms.is_empty() {
                obj.insert(
                    "transforms".into(),
                    Json::Array(
                        r.transforms
                            .iter()
                            .map(|t| {
                                let mut tobj = JsonMap::new();
                                tobj.insert("type".into(), json!(t.transform_type));
                                if !t.options.is_empty() {
                                    tobj.insert("options".into(), json_options(&t.options));
                                }
                                Json::Object(tobj)
                            })
                            .collect(),
                    ),
                );
            }
            Json::Object(obj)
        })
        .collect();
    let losses: Vec<Json> = spec
        .losses
        .iter()
        .map(|l| {
            let mut keys = JsonMap::new();
            if !l.keys.data.is_empty() {
                keys.insert("data".into(), json!(l.keys.data));
            }
            if !l.keys.rels.is_empty() {
                keys.insert("rels".into(), json!(l.keys.rels));
            }
            if !l.keys.methods.is_empty() {
                keys.insert("methods".into(), json!(l.keys.methods));
            }
            let mut obj = JsonMap::new();
            obj.insert("name".into(), json!(l.name));
            obj.insert("type".into(), json!(l.loss_type.as_str()));
            obj.insert("func".into(), json!(l.func));
            obj.insert("keys".into(), Json::Object(keys));
            if !l.options.is_empty() {
                obj.insert("options".into(), json_options(&l.options));
            }
            Json::Object(obj)
        })
        .collect();
    let phases: Vec<Json> = spec
        .training_phases
        .iter()
        .map(|p| {
            let mut sampling_opts = JsonMap::new();
            sampling_opts.insert("batch_size".into(), json!(p.sampling.batch_size));
            if p.sampling.sampling_type == SamplingType::Edge {
                if let Some(rels) = &p.sampling.rels {
                    sampling_opts.insert("rels".into(), json!(rels));
                }
                sampling_opts.insert("rate".into(), json!(p.sampling.rate));
            }
            json!({
                "epochs": p.epochs,
                "sampling": {
                    "type": p.sampling.sampling_type.as_str(),
                    "options": Json::Object(sampling_opts),
                },
                "loss": {
                    "components": p.loss.components,
                    "weights": p.loss.weights,
                },
                "optimizer": {
                    "type": p.optimizer.opt_type,
                    "options": json_options(&p.optimizer.options),
                },
            })
        })
        .collect();

    let mut root = JsonMap::new();
    if !derived.is_empty() {
        root.insert("derived_data".into(), Json::Array(derived));
    }
    root.insert("relations".into(), Json::Array(relations));
    root.insert("losses".into(), Json::Array(losses));
    root.insert("training_phases".into(), Json::Array(phases));
    serde_json::to_string_pretty(&Json::Object(root)).expect("spec serialization")
}

//! Format-independent document tree shared by the YAML and JSON front ends.

use super::SpecError;
use crate::value::{normalize_ident, Value};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Doc {
    Null,
    Bool(bool),
    Num(f64),
    Str(String),
    Seq(Vec<Doc>),
    /// Mapping with keys already normalized (lowercase, underscores).
    Map(Vec<(String, Doc)>),
}

impl Doc {
    pub fn from_yaml(value: serde_yaml::Value) -> Result<Doc, SpecError> {
        Ok(match value {
            serde_yaml::Value::Null => Doc::Null,
            serde_yaml::Value::Bool(b) => Doc::Bool(b),
            serde_yaml::Value::Number(n) => Doc::Num(n.as_f64().unwrap_or(f64::NAN)),
            serde_yaml::Value::String(s) => Doc::Str(s),
            serde_yaml::Value::Sequence(seq) => Doc::Seq(
                seq.into_iter()
                    .map(Doc::from_yaml)
                    .collect::<Result<_, _>>()?,
            ),
            serde_yaml::Value::Mapping(map) => {
                let mut entries = Vec::with_capacity(map.len());
                for (k, v) in map {
                    let key = match k {
                        serde_yaml::Value::String(s) => normalize_ident(&s),
                        serde_yaml::Value::Number(n) => n.to_string(),
                        serde_yaml::Value::Bool(b) => b.to_string(),
                        other => {
                            return Err(SpecError::WrongType {
                                path: "<document>".into(),
                                expected: leak(format!(
                                    "string mapping keys, found {other:?}"
                                )),
                            })
                        }
                    };
                    entries.push((key, Doc::from_yaml(v)?));
                }
                Doc::Map(entries)
            }
            serde_yaml::Value::Tagged(tagged) => Doc::from_yaml(tagged.value)?,
        })
    }

    pub fn from_json(value: serde_json::Value) -> Doc {
        match value {
            serde_json::Value::Null => Doc::Null,
            serde_json::Value::Bool(b) => Doc::Bool(b),
            serde_json::Value::Number(n) => Doc::Num(n.as_f64().unwrap_or(f64::NAN)),
            serde_json::Value::String(s) => Doc::Str(s),
            serde_json::Value::Array(seq) => {
                Doc::Seq(seq.into_iter().map(Doc::from_json).collect())
            }
            serde_json::Value::Object(map) => Doc::Map(
                map.into_iter()
                    .map(|(k, v)| (normalize_ident(&k), Doc::from_json(v)))
                    .collect(),
            ),
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Doc::Null => "null",
            Doc::Bool(_) => "a boolean",
            Doc::Num(_) => "a number",
            Doc::Str(_) => "a string",
            Doc::Seq(_) => "a list",
            Doc::Map(_) => "a mapping",
        }
    }
}

// Error messages occasionally need owned text in a &'static str slot; specs
// are parsed a handful of times per process, so the leak is bounded.
fn leak(s: String) -> &'static str {
    Box::leak(s.into_boxed_str())
}

pub(crate) fn as_map<'d>(doc: &'d Doc, path: &str) -> Result<&'d [(String, Doc)], SpecError> {
    match doc {
        Doc::Map(entries) => Ok(entries),
        other => Err(SpecError::WrongType {
            path: path.to_string(),
            expected: leak(format!("a mapping, found {}", other.type_name())),
        }),
    }
}

pub(crate) fn as_seq<'d>(doc: &'d Doc, path: &str) -> Result<&'d [Doc], SpecError> {
    match doc {
        Doc::Seq(items) => Ok(items),
        other => Err(SpecError::WrongType {
            path: path.to_string(),
            expected: leak(format!("a list, found {}", other.type_name())),
        }),
    }
}

pub(crate) fn get<'d>(map: &'d [(String, Doc)], key: &str) -> Option<&'d Doc> {
    map.iter().find(|(k, _)| k == key).map(|(_, v)| v)
}

/// Reject unknown keys, naming the offending path.
pub(crate) fn check_keys(
    map: &[(String, Doc)],
    allowed: &[&str],
    path: &str,
) -> Result<(), SpecError> {
    for (key, _) in map {
        if !allowed.contains(&key.as_str()) {
            return Err(SpecError::UnknownKey {
                path: path.to_string(),
                key: key.clone(),
            });
        }
    }
    Ok(())
}

/// A normalized identifier value.
pub(crate) fn expect_ident(doc: &Doc, path: &str) -> Result<String, SpecError> {
    match doc {
        Doc::Str(s) if !s.trim().is_empty() => Ok(normalize_ident(s)),
        other => Err(SpecError::WrongType {
            path: path.to_string(),
            expected: leak(format!("an identifier string, found {}", other.type_name())),
        }),
    }
}

pub(crate) fn expect_num(doc: &Doc, path: &str) -> Result<f64, SpecError> {
    match doc {
        Doc::Num(x) if x.is_finite() => Ok(*x),
        other => Err(SpecError::WrongType {
            path: path.to_string(),
            expected: leak(format!("a number, found {}", other.type_name())),
        }),
    }
}

pub(crate) fn expect_count(doc: &Doc, path: &str) -> Result<usize, SpecError> {
    let x = expect_num(doc, path)?;
    if x.fract() == 0.0 && x >= 0.0 && x <= u32::MAX as f64 {
        Ok(x as usize)
    } else {
        Err(SpecError::WrongType {
            path: path.to_string(),
            expected: "a non-negative integer",
        })
    }
}

/// Scalar-or-list of identifiers ("components: mds" or "components: [a, b]").
pub(crate) fn ident_list(doc: &Doc, path: &str) -> Result<Vec<String>, SpecError> {
    match doc {
        Doc::Str(_) => Ok(vec![expect_ident(doc, path)?]),
        Doc::Seq(items) => items
            .iter()
            .enumerate()
            .map(|(i, item)| expect_ident(item, &format!("{path}[{i}]")))
            .collect(),
        other => Err(SpecError::WrongType {
            path: path.to_string(),
            expected: leak(format!(
                "an identifier or list of identifiers, found {}",
                other.type_name()
            )),
        }),
    }
}

pub(crate) fn num_list(doc: &Doc, path: &str) -> Result<Vec<f64>, SpecError> {
    match doc {
        Doc::Num(_) => Ok(vec![expect_num(doc, path)?]),
        Doc::Seq(items) => items
            .iter()
            .enumerate()
            .map(|(i, item)| expect_num(item, &format!("{path}[{i}]")))
            .collect(),
        other => Err(SpecError::WrongType {
            path: path.to_string(),
            expected: leak(format!(
                "a number or list of numbers, found {}",
                other.type_name()
            )),
        }),
    }
}

/// Convert an options mapping into [`Value`]s, normalizing string values as
/// identifiers.
pub(crate) fn to_value(doc: &Doc, path: &str) -> Result<Value, SpecError> {
    Ok(match doc {
        Doc::Bool(b) => Value::Bool(*b),
        Doc::Num(x) => Value::Num(*x),
        Doc::Str(s) => Value::Str(normalize_ident(s)),
        Doc::Seq(items) => Value::List(
            items
                .iter()
                .enumerate()
                .map(|(i, item)| to_value(item, &format!("{path}[{i}]")))
                .collect::<Result<_, _>>()?,
        ),
        other => {
            return Err(SpecError::WrongType {
                path: path.to_string(),
                expected: leak(format!(
                    "a scalar or list option value, found {}",
                    other.type_name()
                )),
            })
        }
    })
}

//! Model zoo: multi-head fully connected models and the lookup-table
//! direct embedding.
//!
//! A model exposes named methods ("embed", "classify", "encode", "decode").
//! For fully connected models every method shares a trunk of hidden layers;
//! each method is an affine head. A "decode" head feeds on the output of the
//! "encode" (or "embed") head when one exists, so reconstruction chains
//! encode -> decode with a real bottleneck.

use super::{Tape, Tensor};
use ndarray::{Array2, ArrayD, IxDyn};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use std::collections::HashMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model has no method '{0}'")]
    MissingMethod(String),
    #[error("method '{method}' expects input width {expected}, got {got}")]
    WidthMismatch {
        method: String,
        expected: usize,
        got: usize,
    },
    #[error("direct embeddings hold coordinates per training item and cannot map unseen data")]
    NoParametricMap,
    #[error("method '{0}' requires item indices, not features")]
    NeedsIndices(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Softplus,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadInput {
    /// Affine map from the last hidden layer (or the raw input when the
    /// trunk is empty).
    Trunk,
    /// Affine map from another head's output.
    Head(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeadArch {
    pub name: String,
    pub width: usize,
    pub input: HeadInput,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpArch {
    pub in_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub bias: bool,
    pub heads: Vec<HeadArch>,
}

/// A named trainable parameter.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: ArrayD<f64>,
}

#[derive(Debug, Clone)]
pub struct MlpModel {
    pub arch: MlpArch,
    pub params: Vec<Param>,
}

/// Lookup table of free embedding coordinates, one row per training item.
#[derive(Debug, Clone)]
pub struct DirectEmbedding {
    pub n_items: usize,
    pub out_dim: usize,
    pub coords: Param,
}

#[derive(Debug, Clone)]
pub enum Model {
    Mlp(MlpModel),
    Direct(DirectEmbedding),
}

/// Input to a model method: a feature batch or the batch's item indices
/// (direct embeddings only use the indices).
pub enum MethodInput<'a, 't> {
    Features(Tensor<'t>),
    Indices(&'a [usize]),
}

/// Shape of a model method, used by routine compilation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MethodSig {
    FromFeatures { in_dim: usize, out_dim: usize },
    FromIndices { out_dim: usize },
}

fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> ArrayD<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    ArrayD::from_shape_fn(IxDyn(&[rows, cols]), |_| rng.gen_range(-limit..limit))
}

/// Fully connected model with a shared trunk and one affine head per
/// requested method. Weights are Glorot-uniform, biases zero, seeded.
pub fn build_default_model(
    in_dim: usize,
    hidden: &[usize],
    heads: &[(String, usize)],
    activation: Activation,
    bias: bool,
    seed: u64,
) -> MlpModel {
    assert!(in_dim > 0, "input width must be positive");
    assert!(hidden.iter().all(|&w| w > 0), "hidden widths must be positive");
    assert!(heads.iter().all(|(_, w)| *w > 0), "head widths must be positive");
    let has_encode = heads.iter().any(|(n, _)| n == "encode");
    let has_embed = heads.iter().any(|(n, _)| n == "embed");
    let head_archs: Vec<HeadArch> = heads
        .iter()
        .map(|(name, width)| {
            let input = if name == "decode" && has_encode {
                HeadInput::Head("encode".into())
            } else if name == "decode" && has_embed {
                HeadInput::Head("embed".into())
            } else {
                HeadInput::Trunk
            };
            HeadArch {
                name: name.clone(),
                width: *width,
                input,
            }
        })
        .collect();
    let arch = MlpArch {
        in_dim,
        hidden: hidden.to_vec(),
        activation,
        bias,
        heads: head_archs,
    };
    MlpModel {
        params: init_params(&arch, seed),
        arch,
    }
}

fn init_params(arch: &MlpArch, seed: u64) -> Vec<Param> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::new();
    let mut prev = arch.in_dim;
    for (i, &w) in arch.hidden.iter().enumerate() {
        params.push(Param {
            name: format!("trunk.{i}.weight"),
            value: glorot(prev, w, &mut rng),
        });
        if arch.bias {
            params.push(Param {
                name: format!("trunk.{i}.bias"),
                value: ArrayD::zeros(IxDyn(&[w])),
            });
        }
        prev = w;
    }
    for head in &arch.heads {
        let fan_in = head_in_width(arch, head);
        params.push(Param {
            name: format!("{}.weight", head.name),
            value: glorot(fan_in, head.width, &mut rng),
        });
        if arch.bias {
            params.push(Param {
                name: format!("{}.bias", head.name),
                value: ArrayD::zeros(IxDyn(&[head.width])),
            });
        }
    }
    params
}

fn head_in_width(arch: &MlpArch, head: &HeadArch) -> usize {
    match &head.input {
        HeadInput::Trunk => arch.hidden.last().copied().unwrap_or(arch.in_dim),
        HeadInput::Head(other) => arch
            .heads
            .iter()
            .find(|h| &h.name == other)
            .map(|h| h.width)
            .expect("head input refers to a declared head"),
    }
}

impl DirectEmbedding {
    /// Coordinates initialized from a small seeded Gaussian.
    pub fn new(n_items: usize, out_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coords = ArrayD::from_shape_fn(IxDyn(&[n_items, out_dim]), |_| {
            rng.gen_range(-0.01..0.01)
        });
        DirectEmbedding {
            n_items,
            out_dim,
            coords: Param {
                name: "coords".into(),
                value: coords,
            },
        }
    }

    pub fn coordinates(&self) -> Array2<f64> {
        self.coords
            .value
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap()
            .to_owned()
    }
}

impl Model {
    pub fn params(&self) -> Vec<&Param> {
        match self {
            Model::Mlp(m) => m.params.iter().collect(),
            Model::Direct(d) => vec![&d.coords],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Model::Mlp(m) => m.params.iter_mut().collect(),
            Model::Direct(d) => vec![&mut d.coords],
        }
    }

    pub fn methods(&self) -> Vec<String> {
        match self {
            Model::Mlp(m) => m.arch.heads.iter().map(|h| h.name.clone()).collect(),
            Model::Direct(_) => vec!["embed".into()],
        }
    }

    pub fn method_sig(&self, method: &str) -> Option<MethodSig> {
        match self {
            Model::Mlp(m) => m.arch.heads.iter().find(|h| h.name == method).map(|h| {
                let in_dim = match &h.input {
                    HeadInput::Trunk => m.arch.in_dim,
                    HeadInput::Head(_) => head_in_width(&m.arch, h),
                };
                MethodSig::FromFeatures {
                    in_dim,
                    out_dim: h.width,
                }
            }),
            Model::Direct(d) => (method == "embed").then_some(MethodSig::FromIndices {
                out_dim: d.out_dim,
            }),
        }
    }

    /// Forward pass without a recorded trace; used for inference.
    pub fn apply(&self, data: &Array2<f64>, method: &str) -> Result<Array2<f64>, ModelError> {
        match self {
            Model::Direct(_) => Err(ModelError::NoParametricMap),
            Model::Mlp(_) => {
                let tape = Tape::new();
                let staged = Staged::new(self, &tape);
                let x = tape.constant(data.clone().into_dyn());
                let out = staged.run(method, MethodInput::Features(x))?;
                Ok(out
                    .value()
                    .view()
                    .into_dimensionality::<ndarray::Ix2>()
                    .unwrap()
                    .to_owned())
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let doc = CheckpointDoc::from(self);
        let json = serde_json::to_string_pretty(&doc)
            .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| ModelError::Checkpoint(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Model, ModelError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let doc: CheckpointDoc =
            serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        doc.into_model()
    }
}

/// A model staged onto a tape for one batch: parameter leaves plus a trunk
/// cache so that methods sharing the trunk reuse the same forward nodes.
pub struct Staged<'m, 't> {
    model: &'m Model,
    tape: &'t Tape,
    pub param_tensors: Vec<Tensor<'t>>,
    trunk_cache: RefCell<HashMap<usize, Tensor<'t>>>,
    head_cache: RefCell<HashMap<(String, usize), Tensor<'t>>>,
}

impl<'m, 't> Staged<'m, 't> {
    pub fn new(model: &'m Model, tape: &'t Tape) -> Self {
        let param_tensors = model
            .params()
            .iter()
            .map(|p| tape.leaf(p.value.clone()))
            .collect();
        Staged {
            model,
            tape,
            param_tensors,
            trunk_cache: RefCell::new(HashMap::new()),
            head_cache: RefCell::new(HashMap::new()),
        }
    }

    /// Gradients of all parameters, in [`Model::params`] order.
    pub fn grads(&self) -> Vec<ArrayD<f64>> {
        self.param_tensors.iter().map(Tensor::grad).collect()
    }

    pub fn run(&self, method: &str, input: MethodInput<'_, 't>) -> Result<Tensor<'t>, ModelError> {
        match self.model {
            Model::Direct(_) => {
                if method != "embed" {
                    return Err(ModelError::MissingMethod(method.to_string()));
                }
                match input {
                    MethodInput::Indices(idx) => Ok(self.param_tensors[0].gather_rows(idx)),
                    MethodInput::Features(_) => {
                        Err(ModelError::NeedsIndices(method.to_string()))
                    }
                }
            }
            Model::Mlp(m) => {
                let x = match input {
                    MethodInput::Features(x) => x,
                    MethodInput::Indices(_) => {
                        return Err(ModelError::WidthMismatch {
                            method: method.to_string(),
                            expected: m.arch.in_dim,
                            got: 0,
                        })
                    }
                };
                self.run_mlp(m, method, x)
            }
        }
    }

    fn run_mlp(
        &self,
        m: &MlpModel,
        method: &str,
        x: Tensor<'t>,
    ) -> Result<Tensor<'t>, ModelError> {
        let head = m
            .arch
            .heads
            .iter()
            .find(|h| h.name == method)
            .ok_or_else(|| ModelError::MissingMethod(method.to_string()))?;
        if let Some(cached) = self.head_cache.borrow().get(&(method.to_string(), x.index())) {
            return Ok(*cached);
        }
        let expected = match &head.input {
            HeadInput::Trunk => m.arch.in_dim,
            HeadInput::Head(_) => head_in_width(&m.arch, head),
        };
        let got = *x.shape().last().unwrap_or(&0);
        if got != expected {
            return Err(ModelError::WidthMismatch {
                method: method.to_string(),
                expected,
                got,
            });
        }
        let features = match &head.input {
            HeadInput::Trunk => self.trunk(m, x),
            HeadInput::Head(_) => x,
        };
        let out = self.affine(m, &format!("{}.weight", head.name), features);
        self.head_cache
            .borrow_mut()
            .insert((method.to_string(), x.index()), out);
        Ok(out)
    }

    fn trunk(&self, m: &MlpModel, x: Tensor<'t>) -> Tensor<'t> {
        if let Some(cached) = self.trunk_cache.borrow().get(&x.index()) {
            return *cached;
        }
        let mut h = x;
        for i in 0..m.arch.hidden.len() {
            h = self.affine(m, &format!("trunk.{i}.weight"), h);
            h = match m.arch.activation {
                Activation::Softplus => h.softplus(),
                Activation::Relu => h.relu(),
            };
        }
        self.trunk_cache.borrow_mut().insert(x.index(), h);
        h
    }

    fn affine(&self, m: &MlpModel, weight_name: &str, x: Tensor<'t>) -> Tensor<'t> {
        let wi = m
            .params
            .iter()
            .position(|p| p.name == weight_name)
            .expect("staged weight exists");
        let out = x.matmul(self.param_tensors[wi]);
        if m.arch.bias {
            out.add_rowvec(self.param_tensors[wi + 1])
        } else {
            out
        }
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }
}

impl<'t> Tensor<'t> {
    pub(crate) fn index(&self) -> usize {
        self.index
    }
}

// ---- checkpoint container ----

#[derive(Serialize, Deserialize)]
struct ParamDoc {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ModelDoc {
    Mlp { arch: MlpArch, params: Vec<ParamDoc> },
    Direct {
        n_items: usize,
        out_dim: usize,
        params: Vec<ParamDoc>,
    },
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    version: u32,
    model: ModelDoc,
}

fn to_param_docs(params: &[&Param]) -> Vec<ParamDoc> {
    params
        .iter()
        .map(|p| ParamDoc {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            data: p.value.iter().copied().collect(),
        })
        .collect()
}

fn from_param_doc(doc: &ParamDoc) -> Result<Param, ModelError> {
    let value = ArrayD::from_shape_vec(IxDyn(&doc.shape), doc.data.clone())
        .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    Ok(Param {
        name: doc.name.clone(),
        value,
    })
}

impl From<&Model> for CheckpointDoc {
    fn from(model: &Model) -> Self {
        let model_doc = match model {
            Model::Mlp(m) => ModelDoc::Mlp {
                arch: m.arch.clone(),
                params: to_param_docs(&model.params()),
            },
            Model::Direct(d) => ModelDoc::Direct {
                n_items: d.n_items,
                out_dim: d.out_dim,
                params: to_param_docs(&model.params()),
            },
        };
        CheckpointDoc {
            version: 1,
            model: model_doc,
        }
    }
}

impl CheckpointDoc {
    fn into_model(self) -> Result<Model, ModelError> {
        if self.version != 1 {
            return Err(ModelError::Checkpoint(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        match self.model {
            ModelDoc::Mlp { arch, params } => {
                let params = params
                    .iter()
                    .map(from_param_doc)
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Model::Mlp(MlpModel { arch, params }))
            }
            ModelDoc::Direct {
                n_items,
                out_dim,
                params,
            } => {
                let coords = params
                    .first()
                    .ok_or_else(|| ModelError::Checkpoint("missing coords".into()))?;
                Ok(Model::Direct(DirectEmbedding {
                    n_items,
                    out_dim,
                    coords: from_param_doc(coords)?,
                }))
            }
        }
    }
}

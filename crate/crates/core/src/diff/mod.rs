//! Minimal reverse-mode differentiation core.
//!
//! Operations are recorded on a [`Tape`]; [`Tensor`] is a cheap handle
//! (tape reference + node index) to a recorded value. Calling
//! [`Tensor::backward`] on a scalar propagates gradients to every leaf
//! created with `requires_grad`. Graphs are rebuilt per batch
//! (define-by-run); there is no graph caching.
//!
//! Shape-incompatible operations and `ln` of non-positive values panic:
//! they are contract violations, caught upstream by routine compilation.
//! Losses use the guarded [`Tensor::ln_clamped`] instead.

pub mod model;

use ndarray::{ArrayD, Axis, Ix1, Ix2, IxDyn};
use std::cell::RefCell;
use std::rc::Rc;

type GradFn = Box<dyn Fn(&ArrayD<f64>) -> ArrayD<f64>>;

struct Node {
    value: Rc<ArrayD<f64>>,
    parents: Vec<(usize, GradFn)>,
    requires_grad: bool,
    grad: Option<ArrayD<f64>>,
}

/// Records the operation trace of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Tensor<'t> {
    tape: &'t Tape,
    index: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, value: ArrayD<f64>, parents: Vec<(usize, GradFn)>, requires_grad: bool) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            parents,
            requires_grad,
            grad: None,
        });
        nodes.len() - 1
    }

    /// A trainable leaf; gradients accumulate into its buffer across
    /// `backward` calls until [`Tape::zero_grad`].
    pub fn leaf(&self, value: ArrayD<f64>) -> Tensor<'_> {
        Tensor {
            tape: self,
            index: self.push(value, Vec::new(), true),
        }
    }

    /// A constant input; no gradient is kept for it.
    pub fn constant(&self, value: ArrayD<f64>) -> Tensor<'_> {
        Tensor {
            tape: self,
            index: self.push(value, Vec::new(), false),
        }
    }

    pub fn scalar(&self, x: f64) -> Tensor<'_> {
        self.constant(ArrayD::from_elem(IxDyn(&[]), x))
    }

    /// Clear all accumulated leaf gradients.
    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<'t> Tensor<'t> {
    /// The tape this tensor is recorded on.
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<ArrayD<f64>> {
        Rc::clone(&self.tape.nodes.borrow()[self.index].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.index].value.shape().to_vec()
    }

    pub fn scalar_value(&self) -> f64 {
        let v = self.value();
        assert_eq!(v.len(), 1, "scalar_value on tensor of shape {:?}", v.shape());
        *v.iter().next().unwrap()
    }

    /// Accumulated gradient of a leaf (zeros if backward never reached it).
    pub fn grad(&self) -> ArrayD<f64> {
        let nodes = self.tape.nodes.borrow();
        let node = &nodes[self.index];
        node.grad
            .clone()
            .unwrap_or_else(|| ArrayD::zeros(node.value.raw_dim()))
    }

    /// Reverse pass from a scalar. Each trace node is visited exactly once,
    /// in reverse creation order; leaf gradients accumulate additively.
    pub fn backward(&self) {
        {
            let nodes = self.tape.nodes.borrow();
            assert_eq!(
                nodes[self.index].value.len(),
                1,
                "backward requires a scalar loss, got shape {:?}",
                nodes[self.index].value.shape()
            );
        }
        let mut nodes = self.tape.nodes.borrow_mut();
        let mut flows: Vec<Option<ArrayD<f64>>> = Vec::with_capacity(self.index + 1);
        flows.resize_with(self.index + 1, || None);
        flows[self.index] = Some(ArrayD::ones(nodes[self.index].value.raw_dim()));
        for i in (0..=self.index).rev() {
            let Some(g) = flows[i].take() else { continue };
            {
                let node = &nodes[i];
                for (p, f) in &node.parents {
                    let contrib = f(&g);
                    match flows[*p].as_mut() {
                        Some(acc) => *acc += &contrib,
                        None => flows[*p] = Some(contrib),
                    }
                }
            }
            let node = &mut nodes[i];
            if node.requires_grad {
                match node.grad.as_mut() {
                    Some(acc) => *acc += &g,
                    None => node.grad = Some(g),
                }
            }
        }
    }

    fn make(&self, value: ArrayD<f64>, parents: Vec<(usize, GradFn)>) -> Tensor<'t> {
        Tensor {
            tape: self.tape,
            index: self.tape.push(value, parents, false),
        }
    }

    // ---- elementwise arithmetic ----

    pub fn add(&self, rhs: Tensor<'t>) -> Tensor<'t> {
        let a = self.value();
        let b = rhs.value();
        assert_eq!(a.shape(), b.shape(), "add: shape mismatch");
        let val = &*a + &*b;
        self.make(
            val,
            vec![
                (self.index, Box::new(|g: &ArrayD<f64>| g.clone())),
                (rhs.index, Box::new(|g: &ArrayD<f64>| g.clone())),
            ],
        )
    }

    pub fn sub(&self, rhs: Tensor<'t>) -> Tensor<'t> {
        let a = self.value();
        let b = rhs.value();
        assert_eq!(a.shape(), b.shape(), "sub: shape mismatch");
        let val = &*a - &*b;
        self.make(
            val,
            vec![
                (self.index, Box::new(|g: &ArrayD<f64>| g.clone())),
                (rhs.index, Box::new(|g: &ArrayD<f64>| -g)),
            ],
        )
    }

    pub fn mul(&self, rhs: Tensor<'t>) -> Tensor<'t> {
        let a = self.value();
        let b = rhs.value();
        assert_eq!(a.shape(), b.shape(), "mul: shape mismatch");
        let val = &*a * &*b;
        let (ac, bc) = (Rc::clone(&a), Rc::clone(&b));
        self.make(
            val,
            vec![
                (self.index, Box::new(move |g: &ArrayD<f64>| g * &*bc)),
                (rhs.index, Box::new(move |g: &ArrayD<f64>| g * &*ac)),
            ],
        )
    }

    /// Elementwise division. The divisor may be a same-shape tensor or a
    /// 0-dimensional scalar tensor.
    pub fn div(&self, rhs: Tensor<'t>) -> Tensor<'t> {
        let a = self.value();
        let b = rhs.value();
        if b.len() == 1 && b.ndim() == 0 {
            let s = *b.iter().next().unwrap();
            let val = &*a / s;
            let ac = Rc::clone(&a);
            return self.make(
                val,
                vec![
                    (self.index, Box::new(move |g: &ArrayD<f64>| g / s)),
                    (
                        rhs.index,
                        Box::new(move |g: &ArrayD<f64>| {
                            let total = (g * &*ac).sum() * (-1.0 / (s * s));
                            ArrayD::from_elem(IxDyn(&[]), total)
                        }),
                    ),
                ],
            );
        }
        assert_eq!(a.shape(), b.shape(), "div: shape mismatch");
        let val = &*a / &*b;
        let (ac, bc) = (Rc::clone(&a), Rc::clone(&b));
        let bc2 = Rc::clone(&b);
        self.make(
            val,
            vec![
                (self.index, Box::new(move |g: &ArrayD<f64>| g / &*bc)),
                (
                    rhs.index,
                    Box::new(move |g: &ArrayD<f64>| -(g * &*ac) / (&*bc2 * &*bc2)),
                ),
            ],
        )
    }

    /// Subtract a 0-dimensional scalar tensor from every entry.
    pub fn sub_scalar_t(&self, rhs: Tensor<'t>) -> Tensor<'t> {
        let a = self.value();
        let b = rhs.value();
        assert_eq!(b.ndim(), 0, "sub_scalar_t: rhs must be a scalar tensor");
        let s = *b.iter().next().unwrap();
        let val = &*a - s;
        self.make(
            val,
            vec![
                (self.index, Box::new(|g: &ArrayD<f64>| g.clone())),
                (
                    rhs.index,
                    Box::new(|g: &ArrayD<f64>| ArrayD::from_elem(IxDyn(&[]), -g.sum())),
                ),
            ],
        )
    }

    pub fn neg(&self) -> Tensor<'t> {
        let val = -&*self.value();
        self.make(val, vec![(self.index, Box::new(|g: &ArrayD<f64>| -g))])
    }

    pub fn add_scalar(&self, c: f64) -> Tensor<'t> {
        let val = &*self.value() + c;
        self.make(val, vec![(self.index, Box::new(|g: &ArrayD<f64>| g.clone()))])
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor<'t> {
        let val = &*self.value() * c;
        self.make(val, vec![(self.index, Box::new(move |g: &ArrayD<f64>| g * c))])
    }

    /// Add a length-`c` row vector to every row of an `r x c` matrix.
    pub fn add_rowvec(&self, v: Tensor<'t>) -> Tensor<'t> {
        let a = self.value();
        let b = v.value();
        assert_eq!(a.ndim(), 2, "add_rowvec: lhs must be rank 2");
        assert_eq!(b.ndim(), 1, "add_rowvec: rhs must be rank 1");
        assert_eq!(a.shape()[1], b.shape()[0], "add_rowvec: width mismatch");
        let val = &*a + &*b;
        self.make(
            val,
            vec![
                (self.index, Box::new(|g: &ArrayD<f64>| g.clone())),
                (
                    v.index,
                    Box::new(|g: &ArrayD<f64>| g.sum_axis(Axis(0))),
                ),
            ],
        )
    }

    /// Add a length-`r` column vector to every column of an `r x c` matrix.
    pub fn add_colvec(&self, v: Tensor<'t>) -> Tensor<'t> {
        let a = self.value();
        let b = v.value();
        assert_eq!(a.ndim(), 2, "add_colvec: lhs must be rank 2");
        assert_eq!(b.ndim(), 1, "add_colvec: rhs must be rank 1");
        assert_eq!(a.shape()[0], b.shape()[0], "add_colvec: height mismatch");
        let col = b.view().insert_axis(Axis(1));
        let val = &*a + &col;
        self.make(
            val,
            vec![
                (self.index, Box::new(|g: &ArrayD<f64>| g.clone())),
                (
                    v.index,
                    Box::new(|g: &ArrayD<f64>| g.sum_axis(Axis(1))),
                ),
            ],
        )
    }

    // ---- linear algebra ----

    pub fn matmul(&self, rhs: Tensor<'t>) -> Tensor<'t> {
        let a = self.value();
        let b = rhs.value();
        let a2 = a
            .view()
            .into_dimensionality::<Ix2>()
            .expect("matmul: lhs must be rank 2");
        let b2 = b
            .view()
            .into_dimensionality::<Ix2>()
            .expect("matmul: rhs must be rank 2");
        assert_eq!(a2.ncols(), b2.nrows(), "matmul: inner dimension mismatch");
        let val = a2.dot(&b2).into_dyn();
        let (ac, bc) = (Rc::clone(&a), Rc::clone(&b));
        self.make(
            val,
            vec![
                (
                    self.index,
                    Box::new(move |g: &ArrayD<f64>| {
                        let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                        let b2 = bc.view().into_dimensionality::<Ix2>().unwrap();
                        g2.dot(&b2.t()).into_dyn()
                    }),
                ),
                (
                    rhs.index,
                    Box::new(move |g: &ArrayD<f64>| {
                        let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                        let a2 = ac.view().into_dimensionality::<Ix2>().unwrap();
                        a2.t().dot(&g2).into_dyn()
                    }),
                ),
            ],
        )
    }

    pub fn transpose(&self) -> Tensor<'t> {
        let a = self.value();
        assert_eq!(a.ndim(), 2, "transpose: rank 2 only");
        let val = a.view().reversed_axes().to_owned();
        self.make(
            val,
            vec![(
                self.index,
                Box::new(|g: &ArrayD<f64>| g.view().reversed_axes().to_owned()),
            )],
        )
    }

    // ---- reductions ----

    pub fn sum(&self) -> Tensor<'t> {
        let a = self.value();
        let shape = a.raw_dim();
        let val = ArrayD::from_elem(IxDyn(&[]), a.sum());
        self.make(
            val,
            vec![(
                self.index,
                Box::new(move |g: &ArrayD<f64>| {
                    ArrayD::from_elem(shape.clone(), *g.iter().next().unwrap())
                }),
            )],
        )
    }

    pub fn mean(&self) -> Tensor<'t> {
        let n = self.value().len() as f64;
        self.sum().mul_scalar(1.0 / n)
    }

    /// Sum a rank-2 tensor along `axis` (0 or 1), yielding a vector.
    pub fn sum_axis(&self, axis: usize) -> Tensor<'t> {
        let a = self.value();
        assert_eq!(a.ndim(), 2, "sum_axis: rank 2 only");
        assert!(axis < 2, "sum_axis: axis out of range");
        let (r, c) = (a.shape()[0], a.shape()[1]);
        let val = a.sum_axis(Axis(axis));
        self.make(
            val.into_dyn(),
            vec![(
                self.index,
                Box::new(move |g: &ArrayD<f64>| {
                    let g1 = g.view().into_dimensionality::<Ix1>().unwrap();
                    let mut out = ArrayD::zeros(IxDyn(&[r, c]));
                    if axis == 0 {
                        for i in 0..r {
                            for j in 0..c {
                                out[[i, j]] = g1[j];
                            }
                        }
                    } else {
                        for i in 0..r {
                            for j in 0..c {
                                out[[i, j]] = g1[i];
                            }
                        }
                    }
                    out
                }),
            )],
        )
    }

    /// Maximum over all entries; the gradient routes to the first argmax.
    pub fn max(&self) -> Tensor<'t> {
        let a = self.value();
        assert!(!a.is_empty(), "max of empty tensor");
        let mut best = 0;
        let mut best_val = f64::NEG_INFINITY;
        for (i, &x) in a.iter().enumerate() {
            if x > best_val {
                best_val = x;
                best = i;
            }
        }
        let shape = a.raw_dim();
        let val = ArrayD::from_elem(IxDyn(&[]), best_val);
        self.make(
            val,
            vec![(
                self.index,
                Box::new(move |g: &ArrayD<f64>| {
                    let mut out = ArrayD::zeros(shape.clone());
                    *out.iter_mut().nth(best).unwrap() = *g.iter().next().unwrap();
                    out
                }),
            )],
        )
    }

    // ---- elementwise transcendentals ----

    pub fn exp(&self) -> Tensor<'t> {
        let val = self.value().mapv(f64::exp);
        let out = Rc::new(val);
        let out_c = Rc::clone(&out);
        self.make(
            out.as_ref().clone(),
            vec![(self.index, Box::new(move |g: &ArrayD<f64>| g * &*out_c))],
        )
    }

    /// Natural log; panics on non-positive entries. Losses use
    /// [`Tensor::ln_clamped`].
    pub fn ln(&self) -> Tensor<'t> {
        let a = self.value();
        assert!(
            a.iter().all(|&x| x > 0.0),
            "ln of non-positive value; use ln_clamped inside losses"
        );
        let val = a.mapv(f64::ln);
        let ac = Rc::clone(&a);
        self.make(
            val,
            vec![(self.index, Box::new(move |g: &ArrayD<f64>| g / &*ac))],
        )
    }

    /// `ln(max(x, eps))`; the gradient is zero on the clamped region.
    pub fn ln_clamped(&self, eps: f64) -> Tensor<'t> {
        let a = self.value();
        let val = a.mapv(|x| x.max(eps).ln());
        let ac = Rc::clone(&a);
        self.make(
            val,
            vec![(
                self.index,
                Box::new(move |g: &ArrayD<f64>| {
                    let mut out = g.clone();
                    out.zip_mut_with(&ac, |gi, &x| {
                        *gi = if x > eps { *gi / x } else { 0.0 };
                    });
                    out
                }),
            )],
        )
    }

    /// Elementwise power with a constant exponent.
    pub fn pow(&self, e: f64) -> Tensor<'t> {
        let a = self.value();
        let val = a.mapv(|x| x.powf(e));
        let ac = Rc::clone(&a);
        self.make(
            val,
            vec![(
                self.index,
                Box::new(move |g: &ArrayD<f64>| {
                    let mut out = g.clone();
                    out.zip_mut_with(&ac, |gi, &x| *gi *= e * x.powf(e - 1.0));
                    out
                }),
            )],
        )
    }

    /// `sqrt(x + eps)`; eps keeps the gradient finite at zero.
    pub fn sqrt_eps(&self, eps: f64) -> Tensor<'t> {
        let a = self.value();
        let val = a.mapv(|x| (x + eps).sqrt());
        let out = Rc::new(val);
        let out_c = Rc::clone(&out);
        self.make(
            out.as_ref().clone(),
            vec![(
                self.index,
                Box::new(move |g: &ArrayD<f64>| {
                    let mut res = g.clone();
                    res.zip_mut_with(&out_c, |gi, &s| *gi *= 0.5 / s);
                    res
                }),
            )],
        )
    }

    pub fn abs(&self) -> Tensor<'t> {
        let a = self.value();
        let val = a.mapv(f64::abs);
        let ac = Rc::clone(&a);
        self.make(
            val,
            vec![(
                self.index,
                Box::new(move |g: &ArrayD<f64>| {
                    let mut out = g.clone();
                    out.zip_mut_with(&ac, |gi, &x| *gi *= x.signum() * f64::from(x != 0.0));
                    out
                }),
            )],
        )
    }

    pub fn relu(&self) -> Tensor<'t> {
        let a = self.value();
        let val = a.mapv(|x| x.max(0.0));
        let ac = Rc::clone(&a);
        self.make(
            val,
            vec![(
                self.index,
                Box::new(move |g: &ArrayD<f64>| {
                    let mut out = g.clone();
                    out.zip_mut_with(&ac, |gi, &x| {
                        if x <= 0.0 {
                            *gi = 0.0;
                        }
                    });
                    out
                }),
            )],
        )
    }

    /// Clamp into `[lo, hi]`; the gradient is zero outside the open interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor<'t> {
        let a = self.value();
        let val = a.mapv(|x| x.clamp(lo, hi));
        let ac = Rc::clone(&a);
        self.make(
            val,
            vec![(
                self.index,
                Box::new(move |g: &ArrayD<f64>| {
                    let mut out = g.clone();
                    out.zip_mut_with(&ac, |gi, &x| {
                        if x <= lo || x >= hi {
                            *gi = 0.0;
                        }
                    });
                    out
                }),
            )],
        )
    }

    /// `log(1 + exp(x))` with the overflow-safe branch `x + log(1 + exp(-x))`
    /// for `x > 30`.
    pub fn softplus(&self) -> Tensor<'t> {
        let a = self.value();
        let val = a.mapv(|x| {
            if x > 30.0 {
                x + (-x).exp().ln_1p()
            } else {
                x.exp().ln_1p()
            }
        });
        let ac = Rc::clone(&a);
        self.make(
            val,
            vec![(
                self.index,
                Box::new(move |g: &ArrayD<f64>| {
                    let mut out = g.clone();
                    out.zip_mut_with(&ac, |gi, &x| *gi *= sigmoid(x));
                    out
                }),
            )],
        )
    }

    // ---- structural ops ----

    pub fn concat_rows(&self, rhs: Tensor<'t>) -> Tensor<'t> {
        let a = self.value();
        let b = rhs.value();
        assert_eq!(a.ndim(), 2, "concat_rows: rank 2 only");
        assert_eq!(b.ndim(), 2, "concat_rows: rank 2 only");
        assert_eq!(a.shape()[1], b.shape()[1], "concat_rows: width mismatch");
        let r1 = a.shape()[0];
        let a2 = a.view().into_dimensionality::<Ix2>().unwrap();
        let b2 = b.view().into_dimensionality::<Ix2>().unwrap();
        let val = ndarray::concatenate(Axis(0), &[a2, b2]).unwrap().into_dyn();
        self.make(
            val,
            vec![
                (
                    self.index,
                    Box::new(move |g: &ArrayD<f64>| {
                        g.slice_axis(Axis(0), ndarray::Slice::from(0..r1)).to_owned()
                    }),
                ),
                (
                    rhs.index,
                    Box::new(move |g: &ArrayD<f64>| {
                        g.slice_axis(Axis(0), ndarray::Slice::from(r1..)).to_owned()
                    }),
                ),
            ],
        )
    }

    /// Contiguous row range of a rank-2 tensor.
    pub fn slice_rows(&self, lo: usize, hi: usize) -> Tensor<'t> {
        let a = self.value();
        assert_eq!(a.ndim(), 2, "slice_rows: rank 2 only");
        let (r, c) = (a.shape()[0], a.shape()[1]);
        assert!(lo <= hi && hi <= r, "slice_rows: range out of bounds");
        let val = a
            .slice_axis(Axis(0), ndarray::Slice::from(lo..hi))
            .to_owned();
        self.make(
            val,
            vec![(
                self.index,
                Box::new(move |g: &ArrayD<f64>| {
                    let mut out = ArrayD::zeros(IxDyn(&[r, c]));
                    out.slice_axis_mut(Axis(0), ndarray::Slice::from(lo..hi))
                        .assign(g);
                    out
                }),
            )],
        )
    }

    /// Select rows by index (duplicates allowed). Gradients scatter-add back
    /// into the source rows, so untouched rows receive zero gradient.
    pub fn gather_rows(&self, indices: &[usize]) -> Tensor<'t> {
        let a = self.value();
        assert_eq!(a.ndim(), 2, "gather_rows: rank 2 only");
        let (r, c) = (a.shape()[0], a.shape()[1]);
        for &i in indices {
            assert!(i < r, "gather_rows: index {i} out of range {r}");
        }
        let idx = indices.to_vec();
        let mut val = ArrayD::zeros(IxDyn(&[idx.len(), c]));
        for (row, &src) in idx.iter().enumerate() {
            for j in 0..c {
                val[[row, j]] = a[[src, j]];
            }
        }
        self.make(
            val,
            vec![(
                self.index,
                Box::new(move |g: &ArrayD<f64>| {
                    let mut out = ArrayD::zeros(IxDyn(&[r, c]));
                    for (row, &src) in idx.iter().enumerate() {
                        for j in 0..c {
                            out[[src, j]] += g[[row, j]];
                        }
                    }
                    out
                }),
            )],
        )
    }

    /// Column `j` of a rank-2 tensor as a vector.
    pub fn select_column(&self, j: usize) -> Tensor<'t> {
        let a = self.value();
        assert_eq!(a.ndim(), 2, "select_column: rank 2 only");
        let (r, c) = (a.shape()[0], a.shape()[1]);
        assert!(j < c, "select_column: column out of range");
        let val = a.index_axis(Axis(1), j).to_owned();
        self.make(
            val.into_dyn(),
            vec![(
                self.index,
                Box::new(move |g: &ArrayD<f64>| {
                    let g1 = g.view().into_dimensionality::<Ix1>().unwrap();
                    let mut out = ArrayD::zeros(IxDyn(&[r, c]));
                    for i in 0..r {
                        out[[i, j]] = g1[i];
                    }
                    out
                }),
            )],
        )
    }

    /// Pairwise differences of a vector: `out[i, j] = v[i] - v[j]`.
    pub fn outer_diff(&self) -> Tensor<'t> {
        let a = self.value();
        assert_eq!(a.ndim(), 1, "outer_diff: rank 1 only");
        let n = a.shape()[0];
        let a1 = a.view().into_dimensionality::<Ix1>().unwrap();
        let mut val = ArrayD::zeros(IxDyn(&[n, n]));
        for i in 0..n {
            for j in 0..n {
                val[[i, j]] = a1[i] - a1[j];
            }
        }
        self.make(
            val,
            vec![(
                self.index,
                Box::new(move |g: &ArrayD<f64>| {
                    let mut out = ArrayD::zeros(IxDyn(&[n]));
                    for i in 0..n {
                        for j in 0..n {
                            out[i] += g[[i, j]];
                            out[j] -= g[[i, j]];
                        }
                    }
                    out
                }),
            )],
        )
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Central finite-difference gradients of `f` with respect to each input,
/// for gradient-checking composed models and losses.
pub fn finite_difference<F>(f: F, inputs: &[ArrayD<f64>], h: f64) -> Vec<ArrayD<f64>>
where
    F: Fn(&[ArrayD<f64>]) -> f64,
{
    let mut grads = Vec::with_capacity(inputs.len());
    for (k, input) in inputs.iter().enumerate() {
        let mut grad = ArrayD::zeros(input.raw_dim());
        for flat in 0..input.len() {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            *plus[k].iter_mut().nth(flat).unwrap() += h;
            *minus[k].iter_mut().nth(flat).unwrap() -= h;
            let d = (f(&plus) - f(&minus)) / (2.0 * h);
            *grad.iter_mut().nth(flat).unwrap() = d;
        }
        grads.push(grad);
    }
    grads
}

/// Relative error used by the gradient checks: `|a-b| / max(1, |a|, |b|)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / f64::max(1.0, f64::max(a.abs(), b.abs()))
}

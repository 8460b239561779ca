//! Loss functions: relation comparison (mse, kl_div, cross entropy),
//! classification, reconstruction, position, triplet margin, correlation,
//! and weighted compounds.
//!
//! Relation losses renormalize their inputs internally rather than trusting
//! flags. Reduction is mean everywhere so learning rates transfer across
//! batch sizes.

use crate::diff::{Tape, Tensor};
use crate::relations::{off_diag_mask, BatchForm, BatchRel};
use ndarray::{Array2, ArrayD, IxDyn};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("relation loss on an all-zero {0} matrix")]
    AllZero(&'static str),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("edge loss needs per-edge relation values")]
    NeedsEdges,
    #[error("relation loss needs a square batch relation")]
    NeedsSquare,
    #[error("batch produced no triplets")]
    NoTriplets,
    #[error("correlation loss needs a batch of at least 3 items, got {0}")]
    BatchTooSmall(usize),
    #[error("column index {index} out of range for width {width}")]
    ColumnOutOfRange { index: usize, width: usize },
}

const LOG_FLOOR: f64 = 1e-12;

fn shape_err(expected: &[usize], got: &[usize]) -> LossError {
    LossError::ShapeMismatch {
        expected: format!("{expected:?}"),
        got: format!("{got:?}"),
    }
}

/// Mean over off-diagonal entries of `(p - q)^2`.
pub fn relation_loss_mse<'t>(
    p: &Array2<f64>,
    q: &BatchRel<'t>,
) -> Result<Tensor<'t>, LossError> {
    if q.form != BatchForm::Square {
        return Err(LossError::NeedsSquare);
    }
    let shape = q.values.shape();
    if p.shape() != shape.as_slice() {
        return Err(shape_err(p.shape(), &shape));
    }
    let b = shape[0];
    let tape = q.values.tape();
    let mask = tape.constant(off_diag_mask(b));
    let p_const = tape.constant(p.clone().into_dyn());
    let diff = p_const.sub(q.values).mul(mask);
    let count = (b * (b - 1)) as f64;
    Ok(diff.mul(diff).sum().mul_scalar(1.0 / count))
}

/// `sum p log(p/q)` over off-diagonal entries, with both sides renormalized
/// to sum one, `0 log 0 = 0`, and `q` floored at 1e-12.
pub fn kl_div_loss<'t>(p: &Array2<f64>, q: &BatchRel<'t>) -> Result<Tensor<'t>, LossError> {
    if q.form != BatchForm::Square {
        return Err(LossError::NeedsSquare);
    }
    let shape = q.values.shape();
    if p.shape() != shape.as_slice() {
        return Err(shape_err(p.shape(), &shape));
    }
    let b = shape[0];
    let mut p_hat = p.clone();
    for i in 0..b {
        p_hat[[i, i]] = 0.0;
    }
    let p_sum = p_hat.sum();
    if p_sum <= 0.0 {
        return Err(LossError::AllZero("p"));
    }
    p_hat.mapv_inplace(|v| v / p_sum);

    let tape = q.values.tape();
    let mask = tape.constant(off_diag_mask(b));
    let q_masked = q.values.mul(mask);
    let q_sum = q_masked.sum();
    if q_sum.scalar_value() <= 0.0 {
        return Err(LossError::AllZero("q"));
    }
    let q_hat = q_masked.div(q_sum);

    // Constant entropy side: sum of p log p over positive entries.
    let p_log_p: f64 = p_hat
        .iter()
        .filter(|v| **v > 0.0)
        .map(|v| v * v.ln())
        .sum();
    let cross = tape
        .constant(p_hat.into_dyn())
        .mul(q_hat.ln_clamped(LOG_FLOOR))
        .sum();
    Ok(cross.neg().add_scalar(p_log_p))
}

/// Binary cross entropy over sampled edges: mean of
/// `-(p log q + (1-p) log(1-q))` with `q` clamped into
/// `[1e-12, 1 - 1e-12]`. `p` carries the global relation value on positive
/// edges and zero on negatives.
pub fn umap_cross_entropy_loss<'t>(
    p_edges: &[f64],
    q_edges: &BatchRel<'t>,
) -> Result<Tensor<'t>, LossError> {
    if q_edges.form != BatchForm::Edges {
        return Err(LossError::NeedsEdges);
    }
    let shape = q_edges.values.shape();
    if shape != [p_edges.len()] {
        return Err(shape_err(&[p_edges.len()], &shape));
    }
    let e = p_edges.len();
    let tape = q_edges.values.tape();
    let q = q_edges.values.clamp(LOG_FLOOR, 1.0 - LOG_FLOOR);
    let p = tape.constant(
        ArrayD::from_shape_vec(IxDyn(&[e]), p_edges.to_vec()).expect("edge vector"),
    );
    let one_minus_p = tape.constant(
        ArrayD::from_shape_vec(IxDyn(&[e]), p_edges.iter().map(|v| 1.0 - v).collect())
            .expect("edge vector"),
    );
    let attract = p.mul(q.ln());
    let repel = one_minus_p.mul(q.neg().add_scalar(1.0).ln());
    Ok(attract.add(repel).mean().neg())
}

/// Mean softmax cross entropy with integer labels.
pub fn classification_loss<'t>(
    logits: Tensor<'t>,
    labels: &[usize],
) -> Result<Tensor<'t>, LossError> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(shape_err(&[labels.len(), shape.last().copied().unwrap_or(0)], &shape));
    }
    let (b, c) = (shape[0], shape[1]);
    for &label in labels {
        if label >= c {
            return Err(LossError::LabelOutOfRange { label, classes: c });
        }
    }
    let tape = logits.tape();
    let values = logits.value();
    // Detached per-row max keeps exp in range without changing the result.
    let mut row_max = vec![f64::NEG_INFINITY; b];
    for i in 0..b {
        for j in 0..c {
            row_max[i] = row_max[i].max(values[[i, j]]);
        }
    }
    let max_t = tape.constant(ArrayD::from_shape_vec(IxDyn(&[b]), row_max.clone()).unwrap());
    let shifted = logits.add_colvec(max_t.neg());
    let lse = shifted.exp().sum_axis(1).ln().add(max_t);
    let mut onehot = ArrayD::zeros(IxDyn(&[b, c]));
    for (i, &label) in labels.iter().enumerate() {
        onehot[[i, label]] = 1.0;
    }
    let correct = logits.mul(tape.constant(onehot)).sum();
    Ok(lse.sum().sub(correct).mul_scalar(1.0 / b as f64))
}

/// Mean squared error between the original input batch and its decoded
/// version.
pub fn reconstruction_loss<'t>(
    input: &Array2<f64>,
    decoded: Tensor<'t>,
) -> Result<Tensor<'t>, LossError> {
    mse_against(decoded, input)
}

/// Mean squared error between the model output and target coordinates.
pub fn position_loss<'t>(
    output: Tensor<'t>,
    target: &Array2<f64>,
) -> Result<Tensor<'t>, LossError> {
    mse_against(output, target)
}

fn mse_against<'t>(out: Tensor<'t>, target: &Array2<f64>) -> Result<Tensor<'t>, LossError> {
    let shape = out.shape();
    if target.shape() != shape.as_slice() {
        return Err(shape_err(target.shape(), &shape));
    }
    let tape = out.tape();
    let diff = out.sub(tape.constant(target.clone().into_dyn()));
    Ok(diff.mul(diff).mean())
}

/// Mean over triplets of `max(d(a,b) - d(a,c) + margin, 0)` with euclidean
/// distances.
pub fn triplet_margin_loss<'t>(
    emb_a: Tensor<'t>,
    emb_b: Tensor<'t>,
    emb_c: Tensor<'t>,
    margin: f64,
) -> Result<Tensor<'t>, LossError> {
    let shape = emb_a.shape();
    if shape != emb_b.shape() || shape != emb_c.shape() {
        return Err(shape_err(&shape, &emb_b.shape()));
    }
    if shape[0] == 0 {
        return Err(LossError::NoTriplets);
    }
    let dist = |x: Tensor<'t>, y: Tensor<'t>| {
        let d = x.sub(y);
        d.mul(d).sum_axis(1).sqrt_eps(1e-12)
    };
    let d_ab = dist(emb_a, emb_b);
    let d_ac = dist(emb_a, emb_c);
    Ok(d_ab.sub(d_ac).add_scalar(margin).relu().mean())
}

/// One minus the squared Pearson correlation between column `i` of the
/// constant batch `a` and column `j` of the differentiable batch `b`
/// (0-based columns). Returns the loss plus a degeneracy flag raised when
/// column `a_i` is constant.
pub fn correlation_loss<'t>(
    a: &Array2<f64>,
    b: Tensor<'t>,
    i: usize,
    j: usize,
) -> Result<(Tensor<'t>, bool), LossError> {
    let shape = b.shape();
    let rows = a.nrows();
    if shape.len() != 2 || shape[0] != rows {
        return Err(shape_err(&[rows, shape.last().copied().unwrap_or(0)], &shape));
    }
    if rows < 3 {
        return Err(LossError::BatchTooSmall(rows));
    }
    if i >= a.ncols() {
        return Err(LossError::ColumnOutOfRange {
            index: i,
            width: a.ncols(),
        });
    }
    if j >= shape[1] {
        return Err(LossError::ColumnOutOfRange {
            index: j,
            width: shape[1],
        });
    }
    let tape = b.tape();
    let col_a: Vec<f64> = a.column(i).to_vec();
    let mean_a = col_a.iter().sum::<f64>() / rows as f64;
    let centered_a: Vec<f64> = col_a.iter().map(|v| v - mean_a).collect();
    let sigma_a = (centered_a.iter().map(|v| v * v).sum::<f64>() / rows as f64).sqrt();
    if sigma_a < LOG_FLOOR {
        log::warn!("correlation loss: column {i} of the data batch is constant");
        return Ok((tape.scalar(1.0), true));
    }
    let ac = tape.constant(ArrayD::from_shape_vec(IxDyn(&[rows]), centered_a).unwrap());
    let v = b.select_column(j);
    let centered_v = v.sub_scalar_t(v.mean());
    let cov = ac.mul(centered_v).mean();
    let sigma_b = centered_v
        .mul(centered_v)
        .mean()
        .sqrt_eps(0.0)
        .clamp(LOG_FLOOR, f64::INFINITY);
    let rho = cov.div(sigma_b.mul_scalar(sigma_a));
    Ok((rho.mul(rho).neg().add_scalar(1.0), false))
}

/// Weighted sum of scalar loss components; per-component values are
/// recorded for logging.
pub fn compound<'t>(
    tape: &'t Tape,
    components: &[Tensor<'t>],
    weights: &[f64],
) -> Result<(Tensor<'t>, Vec<f64>), LossError> {
    if components.len() != weights.len() {
        return Err(LossError::ShapeMismatch {
            expected: format!("{} weights", components.len()),
            got: format!("{}", weights.len()),
        });
    }
    let values: Vec<f64> = components.iter().map(Tensor::scalar_value).collect();
    let mut total = tape.scalar(0.0);
    for (component, &w) in components.iter().zip(weights) {
        total = total.add(component.mul_scalar(w));
    }
    Ok((total, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{finite_difference, rel_err};
    use crate::relations::{batch_pdist, edge_distances, Metric};
    use crate::transforms::student_t_kernel;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn square_rel<'t>(tape: &'t Tape, m: ArrayD<f64>) -> BatchRel<'t> {
        BatchRel {
            values: tape.leaf(m),
            form: BatchForm::Square,
        }
    }

    #[test]
    fn mse_identity_and_arithmetic() {
        let tape = Tape::new();
        let p = array![[0.0, 1.0], [1.0, 0.0]];
        let q_same = square_rel(&tape, p.clone().into_dyn());
        assert_eq!(relation_loss_mse(&p, &q_same).unwrap().scalar_value(), 0.0);

        let q_zero = square_rel(&tape, ArrayD::zeros(IxDyn(&[2, 2])));
        assert_eq!(relation_loss_mse(&p, &q_zero).unwrap().scalar_value(), 1.0);
    }

    #[test]
    fn mse_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = Array2::from_shape_fn((4, 4), |(i, j)| {
            if i == j {
                0.0
            } else {
                rng.gen_range(0.0..1.0)
            }
        });
        let qm = Array2::from_shape_fn((4, 4), |(i, j)| {
            if i == j {
                0.0
            } else {
                rng.gen_range(0.0..1.0)
            }
        });
        let tape = Tape::new();
        let q = square_rel(&tape, qm.clone().into_dyn());
        let got = relation_loss_mse(&p, &q).unwrap().scalar_value();
        let mut want = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    want += (p[[i, j]] - qm[[i, j]]).powi(2);
                }
            }
        }
        want /= 12.0;
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn kl_identity_vectorized_and_oracle() {
        let tape = Tape::new();
        let p = array![[0.0, 0.3], [0.7, 0.0]];
        let q = square_rel(&tape, p.clone().into_dyn());
        assert!(kl_div_loss(&p, &q).unwrap().scalar_value().abs() < 1e-9);

        // p = [1, 0] vs q = [0.5, 0.5] as off-diagonal entries -> ln 2.
        let p2 = array![[0.0, 1.0], [0.0, 0.0]];
        let q2 = square_rel(&tape, array![[0.0, 0.5], [0.5, 0.0]].into_dyn());
        let got = kl_div_loss(&p2, &q2).unwrap().scalar_value();
        assert!((got - std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn kl_nonnegative_and_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let mut p = Array2::from_shape_fn((4, 4), |(i, j)| {
                if i == j {
                    0.0
                } else {
                    rng.gen_range(0.01..1.0)
                }
            });
            let mut qm = Array2::from_shape_fn((4, 4), |(i, j)| {
                if i == j {
                    0.0
                } else {
                    rng.gen_range(0.01..1.0)
                }
            });
            let psum = p.sum();
            p.mapv_inplace(|v| v / psum);
            let qsum = qm.sum();
            qm.mapv_inplace(|v| v / qsum);
            let tape = Tape::new();
            let q = square_rel(&tape, qm.clone().into_dyn());
            let got = kl_div_loss(&p, &q).unwrap().scalar_value();
            let mut want = 0.0;
            for i in 0..4 {
                for j in 0..4 {
                    if i != j && p[[i, j]] > 0.0 {
                        want += p[[i, j]] * (p[[i, j]] / qm[[i, j]]).ln();
                    }
                }
            }
            assert!(got >= -1e-12, "KL must be non-negative, got {got}");
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn kl_rejects_all_zero() {
        let tape = Tape::new();
        let p = Array2::zeros((3, 3));
        let q = square_rel(&tape, ArrayD::from_elem(IxDyn(&[3, 3]), 0.1));
        assert!(matches!(
            kl_div_loss(&p, &q),
            Err(LossError::AllZero("p"))
        ));
    }

    #[test]
    fn umap_ce_analytic_values() {
        let tape = Tape::new();
        let make_q = |vals: Vec<f64>| BatchRel {
            values: tape.constant(ArrayD::from_shape_vec(IxDyn(&[vals.len()]), vals).unwrap()),
            form: BatchForm::Edges,
        };
        // Perfect match: p = 1, q ~ 1.
        let q = make_q(vec![1.0 - 1e-12]);
        let loss = umap_cross_entropy_loss(&[1.0], &q).unwrap().scalar_value();
        assert!(loss.abs() < 1e-9);
        // p = 1, q = 0.5 -> ln 2 (attractive); p = 0, q = 0.5 -> ln 2 (repulsive).
        for p in [1.0, 0.0] {
            let q = make_q(vec![0.5]);
            let loss = umap_cross_entropy_loss(&[p], &q).unwrap().scalar_value();
            assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        }
    }

    #[test]
    fn umap_ce_minimized_at_q_equals_p() {
        // Grid scan: for p fixed, the loss over {p, 1-p} is minimal at q = p.
        for p in [0.2, 0.5, 0.9] {
            let mut best_q = f64::NAN;
            let mut best = f64::INFINITY;
            for step in 1..200 {
                let qv = step as f64 / 200.0;
                let tape = Tape::new();
                let q = BatchRel {
                    values: tape.constant(ArrayD::from_elem(IxDyn(&[1]), qv)),
                    form: BatchForm::Edges,
                };
                let loss = umap_cross_entropy_loss(&[p], &q).unwrap().scalar_value();
                if loss < best {
                    best = loss;
                    best_q = qv;
                }
            }
            assert!((best_q - p).abs() <= 0.005, "p = {p}, argmin = {best_q}");
        }
    }

    #[test]
    fn classification_uniform_and_saturated() {
        let tape = Tape::new();
        let logits = tape.constant(ArrayD::zeros(IxDyn(&[3, 2])));
        let loss = classification_loss(logits, &[0, 1, 0]).unwrap().scalar_value();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);

        let mut big = ArrayD::zeros(IxDyn(&[2, 3]));
        big[[0, 1]] = 200.0;
        big[[1, 2]] = 200.0;
        let logits = tape.constant(big);
        let loss = classification_loss(logits, &[1, 2]).unwrap().scalar_value();
        assert!(loss.abs() < 1e-9);
    }

    #[test]
    fn classification_matches_log_sum_exp_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let logits = Array2::from_shape_fn((3, 4), |_| rng.gen_range(-2.0..2.0));
        let labels = [2usize, 0, 3];
        let tape = Tape::new();
        let t = tape.leaf(logits.clone().into_dyn());
        let got = classification_loss(t, &labels).unwrap();
        let mut want = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let lse = logits
                .row(i)
                .iter()
                .map(|v| v.exp())
                .sum::<f64>()
                .ln();
            want += lse - logits[[i, y]];
        }
        want /= 3.0;
        assert!((got.scalar_value() - want).abs() < 1e-9);

        // Gradient check.
        let f = |inputs: &[ArrayD<f64>]| {
            let tape = Tape::new();
            let t = tape.leaf(inputs[0].clone());
            classification_loss(t, &labels).unwrap().scalar_value()
        };
        let fd = finite_difference(f, &[logits.into_dyn()], 1e-6);
        got.backward();
        for (a, b) in t.grad().iter().zip(fd[0].iter()) {
            assert!(rel_err(*a, *b) < 1e-5);
        }
    }

    #[test]
    fn classification_rejects_out_of_range_label() {
        let tape = Tape::new();
        let logits = tape.constant(ArrayD::zeros(IxDyn(&[1, 2])));
        assert!(matches!(
            classification_loss(logits, &[5]),
            Err(LossError::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn position_and_reconstruction_identities() {
        let tape = Tape::new();
        let target = array![[1.0, 2.0], [3.0, 4.0]];
        let out = tape.constant(target.clone().into_dyn());
        assert_eq!(position_loss(out, &target).unwrap().scalar_value(), 0.0);
        assert_eq!(
            reconstruction_loss(&target, out).unwrap().scalar_value(),
            0.0
        );
        // Constant offset delta -> delta^2.
        let shifted = tape.constant((&target + 0.5).into_dyn());
        let loss = position_loss(shifted, &target).unwrap().scalar_value();
        assert!((loss - 0.25).abs() < 1e-12);
    }

    #[test]
    fn triplet_margin_examples() {
        let tape = Tape::new();
        // d(a,b) = 1, d(a,c) = 3, margin 1 -> 0.
        let a = tape.constant(array![[0.0, 0.0]].into_dyn());
        let b = tape.constant(array![[1.0, 0.0]].into_dyn());
        let c = tape.constant(array![[3.0, 0.0]].into_dyn());
        let loss = triplet_margin_loss(a, b, c, 1.0).unwrap().scalar_value();
        assert!(loss.abs() < 1e-9);

        // d(a,b) = 2, d(a,c) = 1, margin 0.5 -> 1.5.
        let b2 = tape.constant(array![[2.0, 0.0]].into_dyn());
        let c2 = tape.constant(array![[1.0, 0.0]].into_dyn());
        let loss = triplet_margin_loss(a, b2, c2, 0.5).unwrap().scalar_value();
        assert!((loss - 1.5).abs() < 1e-8);
    }

    #[test]
    fn triplet_inactive_has_zero_gradient() {
        let tape = Tape::new();
        let a = tape.leaf(array![[0.0, 0.0]].into_dyn());
        let b = tape.constant(array![[1.0, 0.0]].into_dyn());
        let c = tape.constant(array![[5.0, 0.0]].into_dyn());
        let loss = triplet_margin_loss(a, b, c, 1.0).unwrap();
        loss.backward();
        assert!(a.grad().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn correlation_perfect_linear_dependence() {
        let tape = Tape::new();
        let a = array![[1.0], [2.0], [3.0], [4.0]];
        // b_j = 2 a_i + 3.
        let b_vals = array![[5.0], [7.0], [9.0], [11.0]];
        let b = tape.constant(b_vals.into_dyn());
        let (loss, degenerate) = correlation_loss(&a, b, 0, 0).unwrap();
        assert!(!degenerate);
        assert!(loss.scalar_value().abs() < 1e-9);
    }

    #[test]
    fn correlation_orthogonal_columns() {
        let tape = Tape::new();
        let a = array![[1.0], [-1.0], [1.0], [-1.0]];
        let b = tape.constant(array![[1.0], [1.0], [-1.0], [-1.0]].into_dyn());
        let (loss, _) = correlation_loss(&a, b, 0, 0).unwrap();
        assert!((loss.scalar_value() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn correlation_constant_column_degenerate() {
        let tape = Tape::new();
        let a = array![[2.0], [2.0], [2.0]];
        let b = tape.constant(array![[1.0], [2.0], [3.0]].into_dyn());
        let (loss, degenerate) = correlation_loss(&a, b, 0, 0).unwrap();
        assert!(degenerate);
        assert_eq!(loss.scalar_value(), 1.0);
    }

    #[test]
    fn correlation_matches_pearson_and_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let a = Array2::from_shape_fn((6, 3), |_| rng.gen_range(-1.0..1.0));
        let b0 = Array2::from_shape_fn((6, 2), |_| rng.gen_range(-1.0..1.0));
        let tape = Tape::new();
        let b = tape.leaf(b0.clone().into_dyn());
        let (loss, _) = correlation_loss(&a, b, 1, 0).unwrap();

        // Textbook Pearson.
        let xs: Vec<f64> = a.column(1).to_vec();
        let ys: Vec<f64> = b0.column(0).to_vec();
        let mx = xs.iter().sum::<f64>() / 6.0;
        let my = ys.iter().sum::<f64>() / 6.0;
        let cov: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x - mx) * (y - my))
            .sum::<f64>()
            / 6.0;
        let sx = (xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / 6.0).sqrt();
        let sy = (ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / 6.0).sqrt();
        let want = 1.0 - (cov / (sx * sy)).powi(2);
        assert!((loss.scalar_value() - want).abs() < 1e-9);

        let f = |inputs: &[ArrayD<f64>]| {
            let tape = Tape::new();
            let b = tape.leaf(inputs[0].clone());
            correlation_loss(&a, b, 1, 0).unwrap().0.scalar_value()
        };
        let fd = finite_difference(f, &[b0.into_dyn()], 1e-6);
        loss.backward();
        for (x, y) in b.grad().iter().zip(fd[0].iter()) {
            assert!(rel_err(*x, *y) < 1e-5, "{x} vs {y}");
        }
    }

    #[test]
    fn compound_zero_weight_matches_omission() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = Array2::from_shape_fn((4, 2), |_| rng.gen_range(-2.0..2.0));
        let p = array![
            [0.0, 1.0, 2.0, 1.0],
            [1.0, 0.0, 1.0, 2.0],
            [2.0, 1.0, 0.0, 1.0],
            [1.0, 2.0, 1.0, 0.0]
        ];
        let grads_with = {
            let tape = Tape::new();
            let out = tape.leaf(data.clone().into_dyn());
            let q = batch_pdist(out, Metric::Euclidean).unwrap();
            let l1 = relation_loss_mse(&p, &q).unwrap();
            let kernel = student_t_kernel(q, 1.0);
            let l2 = kl_div_loss(&p, &kernel).unwrap();
            let (total, _) = compound(&tape, &[l1, l2], &[1.0, 0.0]).unwrap();
            total.backward();
            out.grad()
        };
        let grads_without = {
            let tape = Tape::new();
            let out = tape.leaf(data.clone().into_dyn());
            let q = batch_pdist(out, Metric::Euclidean).unwrap();
            let l1 = relation_loss_mse(&p, &q).unwrap();
            let (total, _) = compound(&tape, &[l1], &[1.0]).unwrap();
            total.backward();
            out.grad()
        };
        for (a, b) in grads_with.iter().zip(grads_without.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn compound_weight_scaling_preserves_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let data = Array2::from_shape_fn((4, 2), |_| rng.gen_range(-2.0..2.0));
        let p = Array2::from_shape_fn((4, 4), |(i, j)| if i == j { 0.0 } else { 1.0 });
        let grad_for = |scale: f64| {
            let tape = Tape::new();
            let out = tape.leaf(data.clone().into_dyn());
            let q = batch_pdist(out, Metric::Euclidean).unwrap();
            let l1 = relation_loss_mse(&p, &q).unwrap();
            let l2 = q.values.mean();
            let (total, _) =
                compound(&tape, &[l1, l2], &[0.3 * scale, 0.7 * scale]).unwrap();
            total.backward();
            out.grad()
        };
        let g1 = grad_for(1.0);
        let g5 = grad_for(5.0);
        let dot: f64 = g1.iter().zip(g5.iter()).map(|(a, b)| a * b).sum();
        let n1: f64 = g1.iter().map(|v| v * v).sum::<f64>().sqrt();
        let n5: f64 = g5.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((dot / (n1 * n5) - 1.0).abs() < 1e-9, "cosine similarity 1");
        assert!((n5 / n1 - 5.0).abs() < 1e-9, "magnitude scales by 5");
    }

    #[test]
    fn compound_per_component_values_recorded() {
        let tape = Tape::new();
        let a = tape.scalar(2.0);
        let b = tape.scalar(3.0);
        let (total, values) = compound(&tape, &[a, b], &[0.5, 2.0]).unwrap();
        assert_eq!(values, vec![2.0, 3.0]);
        assert!((total.scalar_value() - 7.0).abs() < 1e-12);
        assert!(compound(&tape, &[a], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn all_losses_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let out0 = Array2::from_shape_fn((5, 2), |_| rng.gen_range(-2.0..2.0));
        let p = {
            let mut m = Array2::from_shape_fn((5, 5), |(i, j)| {
                if i == j {
                    0.0
                } else {
                    rng.gen_range(0.01..1.0)
                }
            });
            let s = m.sum();
            m.mapv_inplace(|v| v / s);
            m
        };
        let target = Array2::from_shape_fn((5, 2), |_| rng.gen_range(-1.0..1.0));
        let p_edges = [0.8, 0.0, 0.5, 0.0];
        let heads = [0usize, 0, 2, 2];
        let tails = [1usize, 3, 4, 1];

        type LossBuilder<'a> = Box<dyn for<'t> Fn(Tensor<'t>) -> Tensor<'t> + 'a>;
        let cases: Vec<(&str, LossBuilder)> = vec![
            (
                "mse",
                Box::new(|out| {
                    let q = batch_pdist(out, Metric::Euclidean).unwrap();
                    relation_loss_mse(&p, &q).unwrap()
                }),
            ),
            (
                "kl",
                Box::new(|out| {
                    let q = batch_pdist(out, Metric::Euclidean).unwrap();
                    kl_div_loss(&p, &student_t_kernel(q, 1.0)).unwrap()
                }),
            ),
            (
                "umap_ce",
                Box::new(|out| {
                    let q = edge_distances(out, &heads, &tails, Metric::Euclidean).unwrap();
                    umap_cross_entropy_loss(&p_edges, &student_t_kernel(q, 1.0)).unwrap()
                }),
            ),
            (
                "position",
                Box::new(|out| position_loss(out, &target).unwrap()),
            ),
            (
                "triplet",
                Box::new(|out| {
                    let a = out.gather_rows(&[0, 1]);
                    let b = out.gather_rows(&[2, 3]);
                    let c = out.gather_rows(&[4, 0]);
                    triplet_margin_loss(a, b, c, 0.7).unwrap()
                }),
            ),
        ];
        for (name, build) in &cases {
            let f = |inputs: &[ArrayD<f64>]| {
                let tape = Tape::new();
                let out = tape.leaf(inputs[0].clone());
                build(out).scalar_value()
            };
            let fd = finite_difference(f, &[out0.clone().into_dyn()], 1e-6);
            let tape = Tape::new();
            let out = tape.leaf(out0.clone().into_dyn());
            build(out).backward();
            for (x, y) in out.grad().iter().zip(fd[0].iter()) {
                assert!(rel_err(*x, *y) < 1e-5, "{name}: {x} vs {y}");
            }
        }
    }
}

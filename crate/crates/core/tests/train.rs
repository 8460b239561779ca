//! Routine compilation and training-loop behavior on small synthetic data.

use ndarray::Array2;
use paradime::dataset::{Dataset, Field};
use paradime::diff::model::{build_default_model, Activation, Model};
use paradime::routine::{compile_routine, RoutineError};
use paradime::spec::{parse_spec, Registry};
use paradime::training::{self, TrainingLog};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

const MDS_DOC: &str = "\
relations:
  - name: dists_hd
    level: global
    type: pairwise
  - name: dists_ld
    level: batch
    type: pairwise
losses:
  - name: mds
    type: relation
    func: mse
    keys:
      rels: [dists_hd, dists_ld]
training_phases:
  - epochs: 25
    sampling:
      type: item
      options: {batch_size: 40}
    loss:
      components: [mds]
    optimizer:
      type: adam
      options: {lr: 0.05}
";

fn small_dataset(n: usize, dim: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = Array2::from_shape_fn((n, dim), |_| rng.gen_range(-1.0..1.0));
    let mut ds = Dataset::new();
    ds.insert("main", Field::Matrix(data)).unwrap();
    ds
}

fn labeled_blobs(n_per_class: usize, classes: usize, dim: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Array2::zeros((n_per_class * classes, dim));
    let mut labels = Vec::new();
    for c in 0..classes {
        for i in 0..n_per_class {
            let row = c * n_per_class + i;
            for d in 0..dim {
                let center = if d % classes == c { 4.0 } else { 0.0 };
                data[[row, d]] = center + rng.gen_range(-0.5..0.5);
            }
            labels.push(c);
        }
    }
    let mut ds = Dataset::new();
    ds.insert("main", Field::Matrix(data)).unwrap();
    ds.insert("labels", Field::Labels(labels)).unwrap();
    ds
}

fn mlp(in_dim: usize, hidden: &[usize], heads: &[(&str, usize)], seed: u64) -> Model {
    let heads: Vec<(String, usize)> = heads.iter().map(|(n, w)| (n.to_string(), *w)).collect();
    Model::Mlp(build_default_model(
        in_dim,
        hidden,
        &heads,
        Activation::Softplus,
        true,
        seed,
    ))
}

#[test]
fn mds_training_reduces_loss() {
    let reg = Registry::with_builtins();
    let spec = parse_spec(MDS_DOC, &reg).unwrap();
    let dataset = small_dataset(40, 6, 1);
    let model = mlp(6, &[5], &[("embed", 2)], 7);
    let mut routine = compile_routine(spec, model, dataset, &reg, 42).unwrap();
    let mut log = TrainingLog::default();
    training::train(&mut routine, &mut log).unwrap();
    let first = log.epoch_total(0, 0).unwrap();
    let last = log.epoch_total(0, 24).unwrap();
    assert!(last < first, "loss should decrease: {first} -> {last}");
}

#[test]
fn compile_rejects_missing_data_key() {
    let reg = Registry::with_builtins();
    let doc = MDS_DOC.replace("type: pairwise\n  - name: dists_ld", "type: pairwise\n    data: labels\n  - name: dists_ld");
    let spec = parse_spec(&doc, &reg).unwrap();
    let dataset = small_dataset(10, 4, 2);
    let model = mlp(4, &[], &[("embed", 2)], 0);
    match compile_routine(spec, model, dataset, &reg, 0) {
        Err(RoutineError::MissingDataKey(key)) => assert_eq!(key, "labels"),
        Err(other) => panic!("expected missing key, got {other:?}"),
        Ok(_) => panic!("expected missing key, compilation succeeded"),
    }
}

#[test]
fn compile_rejects_missing_method() {
    let reg = Registry::with_builtins();
    let spec = parse_spec(MDS_DOC, &reg).unwrap();
    let dataset = small_dataset(10, 4, 3);
    // Model with a classify head but no embed head.
    let model = mlp(4, &[], &[("classify", 3)], 0);
    assert!(matches!(
        compile_routine(spec, model, dataset, &reg, 0),
        Err(RoutineError::MissingModelMethod(m)) if m == "embed"
    ));
}

#[test]
fn compile_rejects_width_mismatch() {
    let reg = Registry::with_builtins();
    let spec = parse_spec(MDS_DOC, &reg).unwrap();
    let dataset = small_dataset(10, 10, 4);
    let model = mlp(8, &[], &[("embed", 2)], 0);
    match compile_routine(spec, model, dataset, &reg, 0) {
        Err(RoutineError::WidthMismatch { expected, got, .. }) => {
            assert_eq!(expected, 8);
            assert_eq!(got, 10);
        }
        Err(other) => panic!("expected width mismatch, got {other:?}"),
        Ok(_) => panic!("expected width mismatch, compilation succeeded"),
    }
}

#[test]
fn zero_epochs_change_nothing() {
    let reg = Registry::with_builtins();
    let doc = MDS_DOC.replace("epochs: 25", "epochs: 0");
    let spec = parse_spec(&doc, &reg).unwrap();
    let dataset = small_dataset(12, 4, 5);
    let model = mlp(4, &[3], &[("embed", 2)], 9);
    let before: Vec<f64> = model
        .params()
        .iter()
        .flat_map(|p| p.value.iter().copied().collect::<Vec<_>>())
        .collect();
    let mut routine = compile_routine(spec, model, dataset, &reg, 0).unwrap();
    let mut log = TrainingLog::default();
    training::train(&mut routine, &mut log).unwrap();
    let after: Vec<f64> = routine
        .model
        .params()
        .iter()
        .flat_map(|p| p.value.iter().copied().collect::<Vec<_>>())
        .collect();
    assert_eq!(before, after);
    assert!(log.rows.is_empty());
}

#[test]
fn same_seed_training_is_bit_identical() {
    let run = || {
        let reg = Registry::with_builtins();
        let spec = parse_spec(MDS_DOC, &reg).unwrap();
        let dataset = small_dataset(30, 5, 6);
        let model = mlp(5, &[4], &[("embed", 2)], 11);
        let mut routine = compile_routine(spec, model, dataset, &reg, 123).unwrap();
        let mut log = TrainingLog::default();
        training::train(&mut routine, &mut log).unwrap();
        let params: Vec<u64> = routine
            .model
            .params()
            .iter()
            .flat_map(|p| p.value.iter().map(|v| v.to_bits()).collect::<Vec<_>>())
            .collect();
        (params, log.rows.last().unwrap().total.to_bits())
    };
    let (p1, l1) = run();
    let (p2, l2) = run();
    assert_eq!(p1, p2);
    assert_eq!(l1, l2);
}

#[test]
fn apply_matches_training_time_forward() {
    let reg = Registry::with_builtins();
    let spec = parse_spec(MDS_DOC, &reg).unwrap();
    let dataset = small_dataset(20, 5, 7);
    let model = mlp(5, &[4], &[("embed", 2)], 13);
    let mut routine = compile_routine(spec, model, dataset, &reg, 5).unwrap();
    let mut log = TrainingLog::default();
    training::train(&mut routine, &mut log).unwrap();
    let a = training::training_embedding(&routine).unwrap();
    let b = training::apply(&routine.model, routine.dataset.matrix("main").unwrap(), "embed")
        .unwrap();
    for (x, y) in a.iter().zip(b.iter()) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
}

#[test]
fn pca_init_phase_matches_pca_scores() {
    let reg = Registry::with_builtins();
    let doc = "\
derived_data:
  - name: pca
    data_func: pca
    keys: [[data, main]]
relations:
  - name: p
    level: global
    type: pairwise
  - name: q
    level: batch
    type: pairwise
losses:
  - name: init
    type: position
    func: mse
    keys:
      data: [main, pca]
training_phases:
  - epochs: 400
    sampling:
      type: item
      options: {batch_size: 60}
    loss:
      components: [init]
    optimizer:
      type: adam
      options: {lr: 0.02}
";
    let spec = parse_spec(doc, &reg).unwrap();
    let dataset = small_dataset(60, 6, 8);
    let model = mlp(6, &[32], &[("embed", 2)], 3);
    let mut routine = compile_routine(spec, model, dataset, &reg, 17).unwrap();
    let mut log = TrainingLog::default();
    training::train(&mut routine, &mut log).unwrap();

    let emb = training::training_embedding(&routine).unwrap();
    let pca = routine.dataset.matrix("pca").unwrap();
    let mse: f64 = emb
        .iter()
        .zip(pca.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / emb.len() as f64;
    let var: f64 = {
        let mean = pca.sum() / pca.len() as f64;
        pca.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / pca.len() as f64
    };
    assert!(
        mse < 1e-2 * var,
        "init loss should drive embedding to PCA scores: mse {mse} vs var {var}"
    );
}

#[test]
fn optimizer_state_is_fresh_per_phase() {
    let reg = Registry::with_builtins();
    let phase = "\
  - epochs: 1
    sampling:
      type: item
      options: {batch_size: 100}
    loss:
      components: [mds]
    optimizer:
      type: sgd
      options: {lr: 0.1, momentum: 0.9}
";
    let base = "\
relations:
  - name: dists_hd
    level: global
    type: pairwise
  - name: dists_ld
    level: batch
    type: pairwise
losses:
  - name: mds
    type: relation
    func: mse
    keys:
      rels: [dists_hd, dists_ld]
training_phases:
";
    let two_phases = format!("{base}{phase}{phase}");
    let one_phase_two_epochs = format!("{base}{}", phase.replace("epochs: 1", "epochs: 2"));

    let run = |doc: &str| {
        let spec = parse_spec(doc, &reg).unwrap();
        let dataset = small_dataset(10, 4, 9);
        let model = mlp(4, &[], &[("embed", 2)], 21);
        let mut routine = compile_routine(spec, model, dataset, &reg, 3).unwrap();
        let mut log = TrainingLog::default();
        training::train(&mut routine, &mut log).unwrap();
        routine
            .model
            .params()
            .iter()
            .flat_map(|p| p.value.iter().copied().collect::<Vec<_>>())
            .collect::<Vec<f64>>()
    };
    // With full batches the per-step gradients are permutation invariant, so
    // the only difference is the momentum buffer: two phases reset it, one
    // two-epoch phase carries it over.
    let reset = run(&two_phases);
    let carried = run(&one_phase_two_epochs);
    assert_ne!(reset, carried, "momentum buffer must reset between phases");
}

#[test]
fn direct_embedding_trains_and_refuses_apply() {
    let reg = Registry::with_builtins();
    let spec = parse_spec(MDS_DOC, &reg).unwrap();
    let dataset = small_dataset(25, 5, 10);
    let model = Model::Direct(paradime::diff::model::DirectEmbedding::new(25, 2, 1));
    let mut routine = compile_routine(spec, model, dataset, &reg, 2).unwrap();
    let mut log = TrainingLog::default();
    training::train(&mut routine, &mut log).unwrap();
    let first = log.epoch_total(0, 0).unwrap();
    let last = log.rows.last().unwrap().total;
    assert!(last < first);
    let unseen = Array2::zeros((3, 5));
    assert!(training::apply(&routine.model, &unseen, "embed").is_err());
}

#[test]
fn classifier_routine_learns_blobs() {
    let reg = Registry::with_builtins();
    let doc = "\
relations: []
losses:
  - name: class
    type: classification
    func: cross_entropy
training_phases:
  - epochs: 40
    sampling:
      type: item
      options: {batch_size: 30}
    loss:
      components: [class]
    optimizer:
      type: adam
      options: {lr: 0.05}
";
    let spec = parse_spec(doc, &reg).unwrap();
    let dataset = labeled_blobs(20, 3, 6, 11);
    let model = mlp(6, &[16], &[("embed", 2), ("classify", 3)], 5);
    let mut routine = compile_routine(spec, model, dataset, &reg, 8).unwrap();
    let mut log = TrainingLog::default();
    training::train(&mut routine, &mut log).unwrap();
    let logits = training::apply(
        &routine.model,
        routine.dataset.matrix("main").unwrap(),
        "classify",
    )
    .unwrap();
    let labels = routine.dataset.labels("labels").unwrap();
    let acc = paradime::metrics::accuracy(&logits, labels).unwrap();
    assert!(acc > 0.95, "classifier should fit blobs, got {acc}");
}

#[test]
fn autoencoder_routine_reduces_reconstruction_error() {
    let reg = Registry::with_builtins();
    let doc = "\
relations: []
losses:
  - name: recon
    type: reconstruction
    func: mse
    keys:
      data: [main]
      methods: [embed, decode]
training_phases:
  - epochs: 150
    sampling:
      type: item
      options: {batch_size: 40}
    loss:
      components: [recon]
    optimizer:
      type: adam
      options: {lr: 0.02}
";
    let spec = parse_spec(doc, &reg).unwrap();
    // Data on a 2-D linear manifold in 5-D is reconstructible through a 2-D
    // bottleneck.
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let basis = Array2::from_shape_fn((2, 5), |_| rng.gen_range(-1.0..1.0));
    let coords = Array2::from_shape_fn((40, 2), |_| rng.gen_range(-1.0..1.0));
    let data = coords.dot(&basis);
    let mut dataset = Dataset::new();
    dataset.insert("main", Field::Matrix(data)).unwrap();
    let model = mlp(5, &[16], &[("embed", 2), ("decode", 5)], 6);
    let mut routine = compile_routine(spec, model, dataset, &reg, 20).unwrap();
    let mut log = TrainingLog::default();
    training::train(&mut routine, &mut log).unwrap();
    let first = log.epoch_total(0, 0).unwrap();
    let last = log.rows.last().unwrap().total;
    assert!(last < 0.2 * first, "reconstruction should improve: {first} -> {last}");
}

#[test]
fn triplet_routine_with_pairwise_eq_default_key() {
    let reg = Registry::with_builtins();
    // pairwise_eq defaults its data key to "labels".
    let doc = "\
relations:
  - name: r
    level: global
    type: pairwise_eq
losses:
  - name: trip
    type: triplet
    func: margin
    options: {margin: 0.5}
training_phases:
  - epochs: 10
    sampling:
      type: edge
      options: {batch_size: 50, rels: r, rate: 1}
    loss:
      components: [trip]
    optimizer:
      type: adam
      options: {lr: 0.05}
";
    let spec = parse_spec(doc, &reg).unwrap();
    let dataset = labeled_blobs(15, 3, 6, 12);
    let model = mlp(6, &[16], &[("embed", 2)], 4);
    let mut routine = compile_routine(spec, model, dataset, &reg, 31).unwrap();
    let mut log = TrainingLog::default();
    training::train(&mut routine, &mut log).unwrap();
    let first = log.epoch_total(0, 0).unwrap();
    let last = log.rows.last().unwrap().total;
    assert!(last < first, "triplet loss should decrease: {first} -> {last}");
}

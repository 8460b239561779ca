//! Phase execution: epoch/batch loops, optimizers, the training log, and
//! inference.

use crate::diff::model::{Model, Param, Staged};
use crate::diff::{Tape, Tensor};
use crate::losses::compound;
use crate::routine::{Routine, RoutineError};
use crate::sampling::{item_batches, negative_edge_batches, Batch};
use crate::spec::{OptimizerState, SamplingType};
use ndarray::{Array2, ArrayD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

/// Plain SGD with optional momentum buffers.
pub struct SgdState {
    lr: f64,
    momentum: f64,
    buffers: Vec<ArrayD<f64>>,
}

impl SgdState {
    pub fn new(lr: f64, momentum: f64) -> SgdState {
        SgdState {
            lr,
            momentum,
            buffers: Vec::new(),
        }
    }
}

impl OptimizerState for SgdState {
    fn step(
        &mut self,
        params: &mut [&mut Param],
        grads: &[ArrayD<f64>],
    ) -> Result<(), RoutineError> {
        if self.buffers.is_empty() {
            self.buffers = grads.iter().map(|g| ArrayD::zeros(g.raw_dim())).collect();
        }
        for ((param, grad), buffer) in params.iter_mut().zip(grads).zip(&mut self.buffers) {
            if self.momentum > 0.0 {
                *buffer = &*buffer * self.momentum + grad;
                param.value.scaled_add(-self.lr, buffer);
            } else {
                param.value.scaled_add(-self.lr, grad);
            }
        }
        Ok(())
    }
}

/// Adam with bias-corrected first and second moments.
pub struct AdamState {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
}

impl AdamState {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> AdamState {
        AdamState {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

impl OptimizerState for AdamState {
    fn step(
        &mut self,
        params: &mut [&mut Param],
        grads: &[ArrayD<f64>],
    ) -> Result<(), RoutineError> {
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| ArrayD::zeros(g.raw_dim())).collect();
            self.v = grads.iter().map(|g| ArrayD::zeros(g.raw_dim())).collect();
        }
        self.step += 1;
        let bias1 = 1.0 - self.beta1.powi(self.step as i32);
        let bias2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((param, grad), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            m.zip_mut_with(grad, |mi, &gi| *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi);
            v.zip_mut_with(grad, |vi, &gi| {
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi
            });
            let lr = self.lr;
            let eps = self.eps;
            ndarray::Zip::from(&mut param.value)
                .and(&*m)
                .and(&*v)
                .for_each(|p, &mi, &vi| {
                    let m_hat = mi / bias1;
                    let v_hat = vi / bias2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
        Ok(())
    }
}

/// One logged epoch.
#[derive(Debug, Clone)]
pub struct LogRow {
    pub phase: usize,
    pub epoch: usize,
    pub total: f64,
    pub components: Vec<(String, f64)>,
    pub wall_ms: f64,
}

/// Per-epoch loss values across all phases.
#[derive(Debug, Clone, Default)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
}

impl TrainingLog {
    /// Epoch rows as CSV. Component columns are the union of loss names,
    /// sorted; phases that do not use a component leave it empty.
    pub fn write_csv(&self, path: &Path) -> Result<(), std::io::Error> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(self.to_csv_string().as_bytes())
    }

    pub fn to_csv_string(&self) -> String {
        let mut names: Vec<String> = Vec::new();
        for row in &self.rows {
            for (name, _) in &row.components {
                if !names.contains(name) {
                    names.push(name.clone());
                }
            }
        }
        names.sort();
        let mut out = String::from("phase,epoch,total,wall_ms");
        for name in &names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}",
                row.phase, row.epoch, row.total, row.wall_ms
            ));
            for name in &names {
                out.push(',');
                if let Some((_, v)) = row.components.iter().find(|(n, _)| n == name) {
                    out.push_str(&v.to_string());
                }
            }
            out.push('\n');
        }
        out
    }

    /// Mean total loss of one phase's epoch, if logged.
    pub fn epoch_total(&self, phase: usize, epoch: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.phase == phase && r.epoch == epoch)
            .map(|r| r.total)
    }

    /// Final logged value of one component within a phase.
    pub fn final_component(&self, phase: usize, component: &str) -> Option<f64> {
        self.rows
            .iter()
            .rev()
            .filter(|r| r.phase == phase)
            .find_map(|r| {
                r.components
                    .iter()
                    .find(|(n, _)| n == component)
                    .map(|(_, v)| *v)
            })
    }
}

/// Called after every epoch; used for checkpointing.
pub type EpochHook<'a> = dyn FnMut(&Model, usize, usize) -> Result<(), RoutineError> + 'a;

/// Execute all training phases in order, appending per-epoch rows to `log`.
/// On error the partially filled log is retained by the caller.
pub fn train(routine: &mut Routine, log: &mut TrainingLog) -> Result<(), RoutineError> {
    train_with_hook(routine, log, &mut None)
}

pub fn train_with_hook(
    routine: &mut Routine,
    log: &mut TrainingLog,
    hook: &mut Option<&mut EpochHook<'_>>,
) -> Result<(), RoutineError> {
    routine.prepare()?;
    for phase_idx in 0..routine.spec.training_phases.len() {
        run_phase(routine, phase_idx, log, hook)?;
    }
    Ok(())
}

/// Execute one training phase with fresh optimizer state: for each epoch
/// and batch, run the model methods, compute batch relations, evaluate the
/// weighted compound loss, backpropagate, and step the optimizer.
pub fn run_phase(
    routine: &mut Routine,
    phase_idx: usize,
    log: &mut TrainingLog,
    hook: &mut Option<&mut EpochHook<'_>>,
) -> Result<(), RoutineError> {
    routine.prepare()?;
    let phase = routine.spec.training_phases[phase_idx].clone();
    let data_keys = routine.phase_data_keys(&phase);
    let components: Vec<usize> = phase
        .loss
        .components
        .iter()
        .map(|name| {
            routine
                .spec
                .losses
                .iter()
                .position(|l| &l.name == name)
                .expect("validated component")
        })
        .collect();

    let mut optimizer = routine.optimizer_imps[phase_idx].build(&phase.optimizer.options)?;
    // Distinct, deterministic stream per phase.
    let mut rng = ChaCha8Rng::seed_from_u64(
        routine
            .seed
            .wrapping_add((phase_idx as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
    );

    let n = routine.dataset.n_items();
    for epoch in 0..phase.epochs {
        let started = Instant::now();
        let mut batches = match phase.sampling.sampling_type {
            SamplingType::Item => item_batches(n, phase.sampling.batch_size, &mut rng)?,
            SamplingType::Edge => {
                let rel_name = phase.sampling.rels.as_ref().expect("validated edge rels");
                let rel = routine
                    .global_relation(rel_name)
                    .ok_or(RoutineError::NotPrepared)?;
                negative_edge_batches(rel, phase.sampling.batch_size, phase.sampling.rate, &mut rng)?
            }
        };
        let mut epoch_total = 0.0;
        let mut epoch_components = vec![0.0; components.len()];
        let batch_count = batches.len();
        for batch in &mut batches {
            batch.slice_data(&routine.dataset, &data_keys)?;
            step_batch(
                routine,
                &phase,
                &components,
                batch,
                optimizer.as_mut(),
                phase_idx,
                epoch,
                &mut epoch_total,
                &mut epoch_components,
            )?;
        }
        let scale = 1.0 / batch_count.max(1) as f64;
        let names = &phase.loss.components;
        log.rows.push(LogRow {
            phase: phase_idx,
            epoch,
            total: epoch_total * scale,
            components: names
                .iter()
                .cloned()
                .zip(epoch_components.iter().map(|v| v * scale))
                .collect(),
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
        if let Some(hook) = hook.as_mut() {
            hook(&routine.model, phase_idx, epoch)?;
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn step_batch(
    routine: &mut Routine,
    phase: &crate::spec::TrainingPhaseSpec,
    components: &[usize],
    batch: &Batch,
    optimizer: &mut dyn OptimizerState,
    phase_idx: usize,
    epoch: usize,
    epoch_total: &mut f64,
    epoch_components: &mut [f64],
) -> Result<(), RoutineError> {
    let tape = Tape::new();
    let staged = Staged::new(&routine.model, &tape);
    let mut features: BTreeMap<String, Tensor<'_>> = BTreeMap::new();
    let mut terms = Vec::with_capacity(components.len());
    for &loss_idx in components {
        let loss = &routine.spec.losses[loss_idx];
        let imp = &routine.loss_imps[loss_idx];
        terms.push(routine.evaluate_component(&staged, &tape, &mut features, batch, loss, imp)?);
    }
    let (total, values) = compound(&tape, &terms, &phase.loss.weights)?;
    let total_value = total.scalar_value();
    if !total_value.is_finite() {
        return Err(RoutineError::NonFiniteLoss {
            phase: phase_idx,
            epoch,
        });
    }
    total.backward();
    let grads = staged.grads();
    {
        let mut params = routine.model.params_mut();
        for (param, grad) in params.iter().zip(&grads) {
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(RoutineError::NonFiniteGradient {
                    param: param.name.clone(),
                    phase: phase_idx,
                    epoch,
                });
            }
        }
        optimizer.step(&mut params, &grads)?;
    }
    *epoch_total += total_value;
    for (acc, v) in epoch_components.iter_mut().zip(&values) {
        *acc += v;
    }
    Ok(())
}

/// Deterministic forward pass of a trained model on a data matrix; no
/// parameters change. Direct embeddings have no parametric map and refuse.
pub fn apply(model: &Model, data: &Array2<f64>, method: &str) -> Result<Array2<f64>, RoutineError> {
    Ok(model.apply(data, method)?)
}

/// Embedding of every training item: the parametric map applied to the
/// batch-relation data key, or the coordinate table of a direct embedding.
pub fn training_embedding(routine: &Routine) -> Result<Array2<f64>, RoutineError> {
    match &routine.model {
        Model::Direct(d) => Ok(d.coordinates()),
        Model::Mlp(_) => {
            let key = routine
                .spec
                .relations
                .iter()
                .find(|r| r.level == crate::spec::Level::Batch)
                .map(|r| r.data_key.as_str())
                .unwrap_or("main");
            let data = routine.dataset.matrix(key)?;
            apply(&routine.model, data, "embed")
        }
    }
}

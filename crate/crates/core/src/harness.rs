//! Class-incremental training harness.
//!
//! A run walks stages `1..=K`. Each stage is initialized from the previous
//! one ([`init_stage`]), trained on the current classes plus the exemplar
//! memory with the bounding and intra-merge hooks firing at epoch ends
//! ([`run_stage`]), then finalized: the merged weights replace the live
//! ones, batch-norm statistics are re-estimated, exemplars are chosen and
//! the next base model is folded ([`finalize_stage`]).

use rand::seq::{index, SliceRandom};
use rayon::prelude::*;

use crate::data::{class_order, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{MetricsLog, StageEval};
use crate::nn::{sgd_step, Model, Mode, MomentumState};
use crate::rng::{Seed, INIT, SHUFFLE};
use crate::tensor::{ParameterSet, Tensor};
use crate::weightspace::{
    bound_model, intra_merge_step, model_displacement_norm, next_base, BaseModelState, IntraMergeAccumulator,
};

const EXEMPLAR_STREAM: &str = "exemplar";
const BN_STREAM: &str = "bn";

/// Disjoint class partition `C_1..C_K`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSequence {
    pub class_order: Vec<u32>,
    pub initial_count: usize,
    pub stage_classes: Vec<Vec<u32>>,
}

impl TaskSequence {
    pub fn num_stages(&self) -> usize {
        self.stage_classes.len()
    }

    /// Classes of stage `k` (1-based).
    pub fn classes(&self, k: usize) -> &[u32] {
        &self.stage_classes[k - 1]
    }

    /// `C_1 ∪ .. ∪ C_k`, in order of introduction.
    pub fn seen_up_to(&self, k: usize) -> Vec<u32> {
        self.stage_classes[..k].iter().flatten().copied().collect()
    }

    /// Indices of `ds` belonging to stage `k`.
    pub fn stage_indices(&self, ds: &Dataset, k: usize) -> Vec<usize> {
        ds.indices_in(self.classes(k))
    }
}

/// Splits `num_classes` into `stages` disjoint tasks: the first gets
/// `floor(num_classes * initial_fraction)` classes and the rest are spread
/// evenly over the remaining stages, leftovers going one each to the
/// earliest incremental stages. A single stage takes every class.
pub fn build_task_sequence(num_classes: usize, stages: usize, seed: Seed, initial_fraction: f64) -> Result<TaskSequence> {
    if stages == 0 {
        return Err(Error::invalid("need at least one stage"));
    }
    if stages > num_classes {
        return Err(Error::invalid(format!("{stages} stages for only {num_classes} classes")));
    }
    let order = class_order(num_classes, seed);
    if stages == 1 {
        return Ok(TaskSequence {
            initial_count: num_classes,
            stage_classes: vec![order.clone()],
            class_order: order,
        });
    }
    if !(initial_fraction > 0.0 && initial_fraction < 1.0) {
        return Err(Error::invalid(format!("initial fraction must lie in (0, 1), got {initial_fraction}")));
    }
    let initial = ((num_classes as f64 * initial_fraction).floor() as usize).max(1);
    let rest = num_classes - initial;
    let incremental = stages - 1;
    if rest < incremental {
        return Err(Error::invalid(format!(
            "{rest} classes left after the first stage cannot fill {incremental} stages"
        )));
    }
    let (base, extra) = (rest / incremental, rest % incremental);
    let mut stage_classes = vec![order[..initial].to_vec()];
    let mut at = initial;
    for s in 0..incremental {
        let size = base + usize::from(s < extra);
        stage_classes.push(order[at..at + size].to_vec());
        at += size;
    }
    Ok(TaskSequence {
        class_order: order,
        initial_count: initial,
        stage_classes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExemplarMethod {
    Herding,
    Random,
}

/// Greedy herding: repeatedly pick the unselected sample that brings the
/// mean of the selection closest to the mean of all `features`. Ties go to
/// the lowest index. Returns row indices in selection order.
#[allow(clippy::needless_range_loop)]
pub fn herding_select(features: &Tensor, m: usize) -> Vec<usize> {
    let (n, f) = (features.rows(), features.cols());
    let m = m.min(n);
    let mut mu = vec![0.0; f];
    for r in 0..n {
        for (mj, x) in mu.iter_mut().zip(features.row(r)) {
            *mj += x;
        }
    }
    mu.iter_mut().for_each(|v| *v /= n as f64);

    let mut chosen = Vec::with_capacity(m);
    let mut taken = vec![false; n];
    let mut sum = vec![0.0; f];
    for t in 1..=m {
        let mut best: Option<(usize, f64)> = None;
        for r in 0..n {
            if taken[r] {
                continue;
            }
            let dist: f64 = features
                .row(r)
                .iter()
                .zip(&sum)
                .zip(&mu)
                .map(|((x, s), u)| {
                    let d = u - (s + x) / t as f64;
                    d * d
                })
                .sum();
            if best.map_or(true, |(_, bd)| dist < bd) {
                best = Some((r, dist));
            }
        }
        let (r, _) = best.expect("m <= n leaves a candidate");
        taken[r] = true;
        for (s, x) in sum.iter_mut().zip(features.row(r)) {
            *s += x;
        }
        chosen.push(r);
    }
    chosen
}

/// Picks up to `m` rows of `samples`. Herding works on eval-mode features of
/// `model`; random selection is a seeded draw without replacement.
pub fn select_exemplars(model: &Model, samples: &Tensor, m: usize, method: ExemplarMethod, seed: Seed, path: &[u64]) -> Result<Vec<usize>> {
    let n = samples.rows();
    if n == 0 || m == 0 {
        return Ok(Vec::new());
    }
    match method {
        ExemplarMethod::Herding => Ok(herding_select(&model.features(samples)?, m)),
        ExemplarMethod::Random => {
            let mut rng = seed.stream_at(EXEMPLAR_STREAM, path);
            Ok(index::sample(&mut rng, n, m.min(n)).into_vec())
        }
    }
}

/// Per-class exemplar lists (indices into the training set), kept in order
/// of class introduction.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExemplarMemory {
    pub per_class: usize,
    pub classes: Vec<(u32, Vec<usize>)>,
}

impl ExemplarMemory {
    pub fn new(per_class: usize) -> Self {
        ExemplarMemory {
            per_class,
            classes: Vec::new(),
        }
    }

    pub fn class_ids(&self) -> Vec<u32> {
        self.classes.iter().map(|(c, _)| *c).collect()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.classes.iter().flat_map(|(_, v)| v.iter().copied()).collect()
    }

    fn insert(&mut self, class: u32, mut idx: Vec<usize>) {
        idx.truncate(self.per_class);
        self.classes.push((class, idx));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnStrategy {
    /// Forward one epoch on top of the inherited running statistics.
    Ours,
    /// Reset running statistics to (0, 1), then forward one epoch.
    Reset,
    /// Leave the running statistics as they are.
    NoChange,
}

/// Per-stage training configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Intra-merge period in epochs.
    pub e_a: usize,
    /// Bounding period in epochs.
    pub e_b: usize,
    /// Radius of the bounding ball.
    pub bound: f64,
    pub bn_strategy: BnStrategy,
    pub enable_inter: bool,
    pub enable_intra: bool,
    pub enable_bound: bool,
    /// Exponential inter-merge factor; uniform merging when `None`.
    pub ema_alpha: Option<f64>,
    /// Exemplars kept per class.
    pub memory_per_class: usize,
    pub exemplar_method: ExemplarMethod,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            epochs: 30,
            batch_size: 32,
            lr: 0.05,
            momentum: 0.9,
            e_a: 1,
            e_b: 15,
            bound: 10.0,
            bn_strategy: BnStrategy::Ours,
            enable_inter: true,
            enable_intra: true,
            enable_bound: true,
            ema_alpha: None,
            memory_per_class: 20,
            exemplar_method: ExemplarMethod::Herding,
        }
    }
}

impl StageConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::config(field, msg));
        if self.batch_size == 0 {
            return bad("batch_size", "must be >= 1");
        }
        if !(self.lr > 0.0) {
            return bad("lr", "must be > 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", "must lie in [0, 1)");
        }
        if self.e_a == 0 {
            return bad("e_a", "must be >= 1");
        }
        if self.e_b == 0 {
            return bad("e_b", "must be >= 1");
        }
        if !(self.bound > 0.0) {
            return bad("B", "must be > 0");
        }
        if let Some(a) = self.ema_alpha {
            if !(a > 0.0 && a < 1.0) {
                return bad("ema_alpha", "must lie in (0, 1)");
            }
        }
        Ok(())
    }
}

/// Everything live during one stage.
#[derive(Debug, Clone)]
pub struct StageState {
    pub stage: usize,
    pub model: Model,
    /// Anchor for bounding; present from stage 2 on.
    pub base: Option<BaseModelState>,
    pub acc: IntraMergeAccumulator,
    pub momentum: MomentumState,
    pub memory: ExemplarMemory,
    /// Extractor at the start of the stage.
    pub start_extractor: ParameterSet,
    /// Base model for the next stage, set by [`finalize_stage`] when
    /// inter-task merging is on.
    pub next_base: Option<BaseModelState>,
}

/// Displacement norms around one bounding hook.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub epoch: usize,
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StageReport {
    pub stage: usize,
    pub epoch_losses: Vec<f64>,
    pub bound_checks: Vec<BoundCheck>,
    pub merges: usize,
}

/// Architecture and seed shared by every stage of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSetup {
    pub hidden: Vec<usize>,
    pub seed: Seed,
}

/// Sets up stage `k`.
///
/// Stage 1 gets a freshly initialized model. Later stages start from the
/// base model (inter-task merging on) or from the previous final model (off),
/// with classifier rows appended for the new classes. Running BN statistics
/// always carry over from the previous final model.
pub fn init_stage(k: usize, prev: Option<&StageState>, task: &TaskSequence, cfg: &StageConfig, input_dim: usize, setup: &RunSetup) -> Result<StageState> {
    if k == 0 || k > task.num_stages() {
        return Err(Error::invalid(format!("stage {k} outside 1..={}", task.num_stages())));
    }
    let mut init_rng = setup.seed.stream_at(INIT, &[k as u64]);
    let (model, base, memory) = if k == 1 {
        let model = Model::mlp(input_dim, &setup.hidden, task.classes(1), &mut init_rng)?;
        (model, None, ExemplarMemory::new(cfg.memory_per_class))
    } else {
        let prev = prev.ok_or_else(|| Error::invalid(format!("stage {k} needs the finalized stage {}", k - 1)))?;
        if prev.stage != k - 1 {
            return Err(Error::invalid(format!("stage {k} initialized from stage {}", prev.stage)));
        }
        let base = if cfg.enable_inter {
            prev.next_base
                .clone()
                .ok_or_else(|| Error::invalid("previous stage did not produce a base model"))?
        } else {
            BaseModelState {
                theta_base: prev.model.params.clone(),
                phi_base: prev.model.classifier.clone(),
                stage: k,
            }
        };
        let mut start = prev.model.clone();
        start.params = base.theta_base.clone();
        start.classifier = base.phi_base.clone();
        let model = start.expand_classifier(task.classes(k), &mut init_rng)?;
        (model, Some(base), prev.memory.clone())
    };
    Ok(StageState {
        stage: k,
        momentum: MomentumState::zeros_like(&model.full_params()),
        start_extractor: model.params.clone(),
        model,
        base,
        acc: IntraMergeAccumulator::new(),
        memory,
        next_base: None,
    })
}

/// Shuffled minibatches of `indices` for one epoch. A trailing batch of a
/// single sample is dropped (batch statistics need two rows).
pub fn epoch_batches(indices: &[usize], batch_size: usize, seed: Seed, stream: &str, path: &[u64]) -> Vec<Vec<usize>> {
    let mut order = indices.to_vec();
    order.shuffle(&mut seed.stream_at(stream, path));
    order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2 || indices.len() == 1)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Training indices for stage `k`: its own samples, then the exemplars.
pub fn stage_training_indices(task: &TaskSequence, train: &Dataset, state: &StageState) -> Vec<usize> {
    let mut idx = task.stage_indices(train, state.stage);
    idx.extend(state.memory.indices());
    idx
}

/// One plain SGD epoch over `batches`; returns the mean batch loss.
pub fn train_epoch(model: &mut Model, momentum: &mut MomentumState, train: &Dataset, batches: &[Vec<usize>], lr: f64, mom: f64) -> Result<f64> {
    let mut total = 0.0;
    for b in batches {
        let (x, y) = train.gather(b);
        let (grads, loss) = model.backward(&x, &y)?;
        let mut params = model.full_params();
        sgd_step(&mut params, &grads, momentum, lr, mom)?;
        model.load_full_params(&params)?;
        total += loss;
    }
    Ok(if batches.is_empty() { 0.0 } else { total / batches.len() as f64 })
}

/// Trains stage `state.stage` on `data` (indices into `train`, normally the
/// stage's samples plus exemplars), then finalizes it.
///
/// At the end of epoch `e` (counted from 1) the bounding hook fires when
/// `e % e_b == 0` and the intra-merge hook when `e % e_a == 0`, bounding
/// first.
pub fn run_stage(mut state: StageState, cfg: &StageConfig, task: &TaskSequence, train: &Dataset, data: &[usize], setup: &RunSetup) -> Result<(StageState, StageReport)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid(format!("stage {} has no training data", state.stage)));
    }
    let k = state.stage;
    let mut report = StageReport {
        stage: k,
        ..Default::default()
    };
    for epoch in 1..=cfg.epochs {
        let batches = epoch_batches(data, cfg.batch_size, setup.seed, SHUFFLE, &[k as u64, epoch as u64]);
        let loss = train_epoch(&mut state.model, &mut state.momentum, train, &batches, cfg.lr, cfg.momentum)?;
        report.epoch_losses.push(loss);

        if cfg.enable_bound && epoch % cfg.e_b == 0 {
            if let Some(base) = &state.base {
                let before = model_displacement_norm(&state.model, base)?;
                state.model = bound_model(&state.model, base, cfg.bound)?;
                let after = model_displacement_norm(&state.model, base)?;
                report.bound_checks.push(BoundCheck { epoch, before, after });
            }
        }
        if cfg.enable_intra && epoch % cfg.e_a == 0 {
            state.acc = intra_merge_step(&state.acc, &state.model.full_params())?;
            report.merges += 1;
        }
    }
    let state = finalize_stage(state, cfg, task, train, data, setup)?;
    Ok((state, report))
}

/// Closes a stage: swap in the intra-merged weights and re-estimate BN
/// statistics, store exemplars for the stage's classes, and fold the next
/// base model.
pub fn finalize_stage(mut state: StageState, cfg: &StageConfig, task: &TaskSequence, train: &Dataset, data: &[usize], setup: &RunSetup) -> Result<StageState> {
    let k = state.stage;
    if cfg.enable_intra {
        if let Some(avg) = state.acc.average() {
            state.model.load_full_params(avg)?;
            recompute_bn_stats(&mut state.model, train, data, cfg.bn_strategy, cfg.batch_size, setup.seed, k)?;
        }
    }

    let classes = task.classes(k);
    for (ci, &c) in classes.iter().enumerate() {
        let idx = train.indices_of(c);
        let (x, _) = train.gather(&idx);
        let picked = select_exemplars(
            &state.model,
            &x,
            cfg.memory_per_class,
            cfg.exemplar_method,
            setup.seed,
            &[k as u64, ci as u64],
        )?;
        state.memory.insert(c, picked.into_iter().map(|p| idx[p]).collect());
    }

    if cfg.enable_inter {
        let prev = if k == 1 { None } else { state.base.as_ref() };
        state.next_base = Some(next_base(prev, &state.model, k, classes, cfg.ema_alpha)?);
    }
    Ok(state)
}

/// Re-estimates running BN statistics after the weights changed.
///
/// `Ours` keeps the current statistics and runs one shuffled train-mode pass
/// over `data` without touching weights; `Reset` does the same from (0, 1);
/// `NoChange` leaves the model alone. Models without BN are never modified.
pub fn recompute_bn_stats(model: &mut Model, train: &Dataset, data: &[usize], strategy: BnStrategy, batch_size: usize, seed: Seed, stage: usize) -> Result<()> {
    if strategy == BnStrategy::NoChange || !model.has_batch_norm() {
        return Ok(());
    }
    if data.is_empty() {
        return Err(Error::invalid("batch-norm re-estimation needs data"));
    }
    if strategy == BnStrategy::Reset {
        model.reset_bn_stats();
    }
    for b in epoch_batches(data, batch_size, seed, BN_STREAM, &[stage as u64]) {
        let (x, _) = train.gather(&b);
        model.forward(&x, Mode::Train)?;
    }
    Ok(())
}

/// Eval-mode test predictions on every seen class after stage `k`.
pub fn evaluate_stage(model: &Model, test: &Dataset, task: &TaskSequence, k: usize) -> Result<StageEval> {
    let seen = task.seen_up_to(k);
    let idx = test.indices_in(&seen);
    let chunks: Vec<&[usize]> = idx.chunks(256).collect();
    let preds: Vec<Vec<u32>> = chunks
        .par_iter()
        .map(|c| model.predict(&test.features.select_rows(c)))
        .collect::<Result<_>>()?;
    let predictions = idx
        .iter()
        .map(|&i| test.labels[i])
        .zip(preds.into_iter().flatten())
        .collect();
    Ok(StageEval {
        stage: k,
        new_classes: task.classes(k).to_vec(),
        seen_classes: seen,
        predictions,
    })
}

/// Artifacts of a complete incremental run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub task: TaskSequence,
    pub log: MetricsLog,
    /// Finalized model of each stage.
    pub stage_models: Vec<Model>,
    /// Base models produced by each stage (`base_{k+1}`), when inter-task
    /// merging is on.
    pub next_bases: Vec<Option<BaseModelState>>,
    pub reports: Vec<StageReport>,
}

/// Runs every stage of `task` and evaluates after each.
pub fn run_incremental(train: &Dataset, test: &Dataset, task: &TaskSequence, cfg: &StageConfig, setup: &RunSetup) -> Result<RunOutcome> {
    cfg.validate()?;
    let k_total = task.num_stages();
    let mut log = MetricsLog::new(k_total);
    let mut stage_models = Vec::with_capacity(k_total);
    let mut next_bases = Vec::with_capacity(k_total);
    let mut reports = Vec::with_capacity(k_total);
    let mut prev: Option<StageState> = None;
    for k in 1..=k_total {
        let state = init_stage(k, prev.as_ref(), task, cfg, train.dim(), setup)?;
        let data = stage_training_indices(task, train, &state);
        let (state, report) = run_stage(state, cfg, task, train, &data, setup)?;
        let update: Vec<f64> = state
            .model
            .params
            .to_flat()
            .iter()
            .zip(state.start_extractor.to_flat())
            .map(|(a, b)| a - b)
            .collect();
        log.update_vectors.push(update);
        log.stages.push(evaluate_stage(&state.model, test, task, k)?);
        stage_models.push(state.model.clone());
        next_bases.push(state.next_base.clone());
        reports.push(report);
        prev = Some(state);
    }
    Ok(RunOutcome {
        task: task.clone(),
        log,
        stage_models,
        next_bases,
        reports,
    })
}

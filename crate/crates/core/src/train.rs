//! Adam training loop with a relative-plateau stopping rule.
//!
//! One *iteration* is one pass over the training split (an epoch): cases are
//! reshuffled, cut into minibatches (the final short batch is kept), each
//! case contributes the gradient of `cross-entropy + sum-of-squares` on its
//! own tape, and the summed batch gradient feeds one Adam step. After the
//! last step the split is re-scored once in inference mode, and that summed
//! loss — the loss of the weights the epoch actually produced — goes into
//! the history; training stops once every loss in the trailing window sits
//! within a relative band of the newest one, or when the iteration cap is
//! reached.
//!
//! Reproducibility contract: everything random is drawn from child streams
//! of one master stream — `"init"` for weights, `"shuffle"` → per-epoch
//! children for batch order, `"dropout"` → per-epoch → per-case children for
//! masks. Epoch `e` of case `c` sees the same mask no matter when or where
//! it runs, so a run resumed from a checkpoint replays the exact arithmetic
//! of an uninterrupted one.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::model::{
    build_model, forward, forward_trace, ArchConfig, ModelError, NormStat, TrainedModel,
};
use crate::numerics::{fmath, NumericsError, Rng, Tensor};

use core::fmt;

/// Optimizer and stopping-rule settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    /// Hard cap on epochs.
    pub max_iterations: usize,
    /// Trailing epochs examined by the stopping rule (newest included).
    pub window: usize,
    /// Relative loss band: stop when every windowed loss is within this
    /// fraction of the newest loss.
    pub tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-8,
            batch_size: 16,
            max_iterations: 2000,
            window: 10,
            tolerance: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |detail: String| Err(TrainError::Config { detail });
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail(format!("learning_rate {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail(format!("betas ({}, {})", self.beta1, self.beta2));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return fail(format!("epsilon {}", self.epsilon));
        }
        if self.batch_size == 0 {
            return fail("batch_size 0".to_string());
        }
        if self.max_iterations == 0 {
            return fail("max_iterations 0".to_string());
        }
        if self.window == 0 {
            return fail("window 0".to_string());
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return fail(format!("tolerance {}", self.tolerance));
        }
        Ok(())
    }
}

/// Training failures.
#[derive(Debug)]
pub enum TrainError {
    Model(ModelError),
    Numerics(NumericsError),
    Config { detail: String },
    EmptyTrainingSet,
    /// A case labels a class outside the configured order.
    BadLabel {
        case_id: usize,
        class_index: usize,
        num_classes: usize,
    },
    /// The loss left the finite range. Carries the state at the last
    /// completed epoch so the caller can persist something usable, plus the
    /// 1-based epoch that failed.
    NonFiniteLoss {
        iteration: usize,
        snapshot: Box<LastGood>,
    },
}

/// Last finite training state, attached to [`TrainError::NonFiniteLoss`].
#[derive(Debug)]
pub struct LastGood {
    pub model: TrainedModel,
    pub log: TrainLog,
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::Model(e) => write!(f, "model: {e}"),
            TrainError::Numerics(e) => write!(f, "numerics: {e}"),
            TrainError::Config { detail } => write!(f, "invalid training config: {detail}"),
            TrainError::EmptyTrainingSet => write!(f, "no training cases"),
            TrainError::BadLabel {
                case_id,
                class_index,
                num_classes,
            } => write!(
                f,
                "case {case_id} labels class {class_index}, model has {num_classes}"
            ),
            TrainError::NonFiniteLoss { iteration, .. } => {
                write!(f, "loss became non-finite during epoch {iteration}")
            }
        }
    }
}

impl core::error::Error for TrainError {}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        TrainError::Model(e)
    }
}

impl From<NumericsError> for TrainError {
    fn from(e: NumericsError) -> Self {
        TrainError::Numerics(e)
    }
}

/// One training example: the full channel matrix (rows follow the dataset's
/// channel list), the class index, and the regression target.
#[derive(Debug, Clone, Copy)]
pub struct TrainCase<'a> {
    pub case_id: usize,
    pub matrix: &'a Tensor,
    pub class_index: usize,
    pub size: f64,
}

/// First and second moment accumulators plus the shared step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl AdamState {
    /// Zeroed state matching a weight table.
    pub fn new(weights: &BTreeMap<String, Tensor>) -> Self {
        let zeroed = |w: &BTreeMap<String, Tensor>| -> BTreeMap<String, Tensor> {
            w.iter()
                .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape())))
                .collect()
        };
        AdamState {
            step: 0,
            m: zeroed(weights),
            v: zeroed(weights),
        }
    }
}

/// One Adam update over every named weight, in place. `grads` must cover the
/// same names with the same shapes (unused parameters carry zero gradients,
/// which leave their weights untouched).
pub fn adam_step(
    weights: &mut BTreeMap<String, Tensor>,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<(), TrainError> {
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - fmath::pow(config.beta1, t);
    let bc2 = 1.0 - fmath::pow(config.beta2, t);
    for (name, w) in weights.iter_mut() {
        let g = grads.get(name).ok_or_else(|| TrainError::Config {
            detail: format!("gradient table misses '{name}'"),
        })?;
        if g.shape() != w.shape() {
            return Err(TrainError::Config {
                detail: format!(
                    "gradient '{name}' shaped {:?} against weight {:?}",
                    g.shape(),
                    w.shape()
                ),
            });
        }
        let m = state.m.get_mut(name).expect("moment table tracks weights");
        let v = state.v.get_mut(name).expect("moment table tracks weights");
        let (wd, md, vd, gd) = (w.data_mut(), m.data_mut(), v.data_mut(), g.data());
        for i in 0..wd.len() {
            md[i] = config.beta1 * md[i] + (1.0 - config.beta1) * gd[i];
            vd[i] = config.beta2 * vd[i] + (1.0 - config.beta2) * gd[i] * gd[i];
            let m_hat = md[i] / bc1;
            let v_hat = vd[i] / bc2;
            wd[i] -= config.learning_rate * m_hat / (fmath::sqrt(v_hat) + config.epsilon);
        }
    }
    Ok(())
}

/// Relative-plateau stopping rule: with at least `window` epochs recorded,
/// stop when `|l_j - l_last| / l_last < tolerance` for every loss `l_j` in
/// the trailing window (the newest included). A last loss of exactly zero
/// counts as converged.
pub fn should_terminate(history: &[f64], window: usize, tolerance: f64) -> bool {
    if history.len() < window || window == 0 {
        return false;
    }
    let last = history[history.len() - 1];
    if last == 0.0 {
        return true;
    }
    history[history.len() - window..]
        .iter()
        .all(|l| ((l - last) / last).abs() < tolerance)
}

/// Loss sums over the training split under an epoch's finished weights
/// (inference mode — dropout off).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// 1-based epoch number.
    pub iteration: usize,
    pub loss_total: f64,
    pub loss_class: f64,
    pub loss_reg: f64,
}

/// Complete record of a training run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
    /// Whether the stopping rule fired (false means the cap was hit).
    pub converged: bool,
    /// Completed epochs.
    pub iterations: usize,
    /// Wall-clock seconds spent inside `run_epoch` (zero without `std`).
    pub wall_time_s: f64,
}

impl TrainLog {
    /// Epoch-loss history, newest last.
    pub fn history(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss_total).collect()
    }
}

/// Stepwise training driver. [`train`] wraps it; checkpointing callers can
/// run it epoch by epoch and persist `model` + `adam` + `log` between steps —
/// those three plus the master seed fully determine the continuation.
pub struct Trainer {
    pub model: TrainedModel,
    pub config: TrainConfig,
    pub adam: AdamState,
    pub log: TrainLog,
    shuffle_root: Rng,
    dropout_root: Rng,
}

impl Trainer {
    /// Initializes a fresh model for `arch`: weights from the master's
    /// `"init"` stream, normalization statistics frozen from `cases`.
    pub fn new(
        arch: &ArchConfig,
        model_channels: &[String],
        class_order: &[String],
        data_channels: &[String],
        cases: &[TrainCase],
        config: &TrainConfig,
        master: &Rng,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        if cases.is_empty() {
            return Err(TrainError::EmptyTrainingSet);
        }
        for case in cases {
            if case.class_index >= arch.num_classes {
                return Err(TrainError::BadLabel {
                    case_id: case.case_id,
                    class_index: case.class_index,
                    num_classes: arch.num_classes,
                });
            }
        }
        let base = build_model(arch, &master.named_child("init"))?;
        let norm_stats = compute_norm_stats(data_channels, cases, model_channels)?;
        let mut meta = base.meta;
        meta.train_seed = master.seed();
        let model = TrainedModel::assemble(
            arch.clone(),
            model_channels.to_vec(),
            class_order.to_vec(),
            norm_stats,
            base.weights,
            meta,
        )?;
        let adam = AdamState::new(&model.weights);
        Ok(Trainer {
            model,
            config: config.clone(),
            adam,
            log: TrainLog::default(),
            shuffle_root: master.named_child("shuffle"),
            dropout_root: master.named_child("dropout"),
        })
    }

    /// Rebuilds a trainer mid-run from persisted state. The same master
    /// stream and the same cases must be supplied for the continuation to
    /// replay exactly.
    pub fn resume(
        model: TrainedModel,
        config: TrainConfig,
        adam: AdamState,
        log: TrainLog,
        master: &Rng,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        Ok(Trainer {
            model,
            config,
            adam,
            log,
            shuffle_root: master.named_child("shuffle"),
            dropout_root: master.named_child("dropout"),
        })
    }

    /// Completed epochs so far.
    pub fn epochs_done(&self) -> usize {
        self.log.epochs.len()
    }

    /// True once the stopping rule fires or the epoch cap is reached.
    pub fn finished(&self) -> bool {
        let done = self.epochs_done();
        if done >= self.config.max_iterations {
            return true;
        }
        should_terminate(&self.log.history(), self.config.window, self.config.tolerance)
    }

    /// Runs one epoch: shuffle, minibatch gradients, Adam steps, then one
    /// dropout-free pass over the split to measure the losses the epoch
    /// actually achieved.
    ///
    /// The recorded loss is the loss of the *finished* epoch's weights, not a
    /// running sum gathered while the weights were still moving: the running
    /// sum carries minibatch-order and dropout-mask noise whose relative
    /// swing never falls inside the stopping rule's band, so the rule could
    /// never fire on it. Measuring the settled weights gives the history the
    /// rule was written for.
    ///
    /// On a non-finite epoch the weights are rolled back to the epoch's
    /// start and the error carries that state as the last good snapshot.
    pub fn run_epoch(
        &mut self,
        data_channels: &[String],
        cases: &[TrainCase],
    ) -> Result<EpochStats, TrainError> {
        if cases.is_empty() {
            return Err(TrainError::EmptyTrainingSet);
        }
        #[cfg(feature = "std")]
        let started = std::time::Instant::now();

        let epoch = self.epochs_done();
        let backup_weights = self.model.weights.clone();
        let backup_adam = self.adam.clone();

        let mut order: Vec<usize> = (0..cases.len()).collect();
        self.shuffle_root.child(epoch as u64).shuffle(&mut order);
        let dropout_epoch = self.dropout_root.child(epoch as u64);

        let num_classes = self.model.arch.num_classes;

        let mut failed = false;
        'batches: for batch in order.chunks(self.config.batch_size) {
            let mut batch_grads: BTreeMap<String, Tensor> = BTreeMap::new();
            let mut batch_total = 0.0;
            for &slot in batch {
                let case = &cases[slot];
                let mut dropout_rng = dropout_epoch.child(case.case_id as u64);
                let trace = forward_trace(
                    &self.model,
                    data_channels,
                    case.matrix,
                    true,
                    Some(&mut dropout_rng),
                )?;
                let mut graph = trace.graph;
                let mut onehot = vec![0.0; num_classes];
                onehot[case.class_index] = 1.0;
                let ce = graph.cross_entropy_logits(trace.logits, &onehot)?;
                let se = graph.sum_sq_diff(trace.size, &[case.size])?;
                let total = graph.add(ce, se)?;

                let ce_val = graph.value(ce)?.data()[0];
                let se_val = graph.value(se)?.data()[0];
                batch_total += ce_val + se_val;

                let grads = graph.backward(total)?.into_param_map();
                if batch_grads.is_empty() {
                    batch_grads = grads;
                } else {
                    for (name, g) in grads {
                        batch_grads
                            .get_mut(&name)
                            .expect("same model, same parameter names")
                            .add_assign(&g)
                            .expect("same model, same parameter shapes");
                    }
                }
            }
            if !batch_total.is_finite() {
                failed = true;
                break 'batches;
            }
            adam_step(&mut self.model.weights, &batch_grads, &mut self.adam, &self.config)?;
        }

        // Measure what the finished epoch is worth: one inference-mode pass
        // over the split under the settled weights.
        let mut sum_class = 0.0;
        let mut sum_reg = 0.0;
        if !failed {
            for case in cases {
                let pred = forward(&self.model, data_channels, case.matrix)?;
                sum_class += -fmath::ln(pred.class_probs[case.class_index]);
                let d = pred.size - case.size;
                sum_reg += d * d;
            }
        }
        let sum_total = sum_class + sum_reg;

        if failed || !sum_total.is_finite() {
            self.model.weights = backup_weights;
            self.adam = backup_adam;
            let snapshot = LastGood {
                model: self.model.clone(),
                log: self.log.clone(),
            };
            return Err(TrainError::NonFiniteLoss {
                iteration: epoch + 1,
                snapshot: Box::new(snapshot),
            });
        }

        let stats = EpochStats {
            iteration: epoch + 1,
            loss_total: sum_total,
            loss_class: sum_class,
            loss_reg: sum_reg,
        };
        self.log.epochs.push(stats);
        self.log.iterations = self.log.epochs.len();
        self.model.meta.iterations = self.log.iterations;
        #[cfg(feature = "std")]
        {
            self.log.wall_time_s += started.elapsed().as_secs_f64();
        }
        Ok(stats)
    }

    /// Finalizes: marks convergence and hands back model and log. A run that
    /// merely hit the epoch cap without satisfying the stopping rule is
    /// recorded as not converged.
    pub fn into_outcome(mut self) -> (TrainedModel, TrainLog) {
        self.log.converged = should_terminate(
            &self.log.history(),
            self.config.window,
            self.config.tolerance,
        );
        (self.model, self.log)
    }
}

/// Per-channel mean and (population) standard deviation over every sample of
/// every training case, computed for `model_channels` rows selected from
/// `data_channels`; the deviation is floored so constant channels stay
/// usable.
pub fn compute_norm_stats(
    data_channels: &[String],
    cases: &[TrainCase],
    model_channels: &[String],
) -> Result<Vec<NormStat>, TrainError> {
    if cases.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let mut rows = Vec::with_capacity(model_channels.len());
    let mut missing = Vec::new();
    for name in model_channels {
        match data_channels.iter().position(|c| c == name) {
            Some(idx) => rows.push(idx),
            None => missing.push(name.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(TrainError::Model(ModelError::ChannelMismatch {
            missing,
            available: data_channels.len(),
        }));
    }
    for case in cases {
        if case.matrix.rank() != 2 || case.matrix.dim(0) != data_channels.len() {
            return Err(TrainError::Model(ModelError::MatrixShape {
                detail: format!(
                    "case {} matrix {:?} vs {} channels",
                    case.case_id,
                    case.matrix.shape(),
                    data_channels.len()
                ),
            }));
        }
    }
    let mut stats = Vec::with_capacity(rows.len());
    for &row in &rows {
        let mut sum = 0.0;
        let mut count = 0usize;
        for case in cases {
            let t_len = case.matrix.dim(1);
            sum += case.matrix.data()[row * t_len..(row + 1) * t_len]
                .iter()
                .sum::<f64>();
            count += t_len;
        }
        let mean = sum / count as f64;
        let mut sq = 0.0;
        for case in cases {
            let t_len = case.matrix.dim(1);
            for x in &case.matrix.data()[row * t_len..(row + 1) * t_len] {
                sq += (x - mean) * (x - mean);
            }
        }
        let std = fmath::sqrt(sq / count as f64);
        stats.push(NormStat::new(mean, std));
    }
    Ok(stats)
}

/// End-to-end training: fresh init, epochs until the stopping rule or cap,
/// final model plus log.
pub fn train(
    arch: &ArchConfig,
    model_channels: &[String],
    class_order: &[String],
    data_channels: &[String],
    cases: &[TrainCase],
    config: &TrainConfig,
    master: &Rng,
) -> Result<(TrainedModel, TrainLog), TrainError> {
    let mut trainer = Trainer::new(
        arch,
        model_channels,
        class_order,
        data_channels,
        cases,
        config,
        master,
    )?;
    while !trainer.finished() {
        trainer.run_epoch(data_channels, cases)?;
    }
    Ok(trainer.into_outcome())
}

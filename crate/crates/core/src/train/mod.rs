//! Optimization: Adam, the training loop with its stopping rules,
//! evaluation, metrics, and checkpoints.

mod adam;
mod checkpoint;

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, check_finite, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, Counters, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::error::{Error, Result};
use crate::model::{forget_bias_for, CellState, Model, TlstmConfig};
use crate::sequence::{forward_sequence, loss_and_gradients, masked_accuracy, nll_loss, SequenceBatch};
use crate::tasks::Task;

/// Evaluation interval used unless overridden.
pub const DEFAULT_EVAL_EVERY: u64 = 1000;

/// When to stop. Every rule that is set applies; the first one met wins.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopRules {
    #[serde(default)]
    pub max_samples: Option<u64>,
    #[serde(default)]
    pub max_iterations: Option<u64>,
    #[serde(default)]
    pub max_epochs: Option<u64>,
    /// Stop once validation accuracy reaches this value.
    #[serde(default)]
    pub target_accuracy: Option<f64>,
    /// Stop after this many evaluations without a new best validation
    /// accuracy.
    #[serde(default)]
    pub patience: Option<u64>,
}

impl StopRules {
    pub fn is_bounded(&self) -> bool {
        self.max_samples.is_some() || self.max_iterations.is_some() || self.max_epochs.is_some()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub adam: AdamConfig,
    pub eval_every: u64,
    pub stop: StopRules,
    /// Seed for parameter initialization.
    pub seed: u64,
    /// Where `metrics.jsonl` and `checkpoint.bin` go; nothing is written
    /// when unset.
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            eval_every: DEFAULT_EVAL_EVERY,
            stop: StopRules::default(),
            seed: 0,
            out_dir: None,
        }
    }
}

/// One evaluation line of `metrics.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricRecord {
    pub iteration: u64,
    pub samples_seen: u64,
    /// Mean validation NLL in nats.
    pub loss: f64,
    pub accuracy: f64,
    /// Mean wall-clock time of the training steps since the previous
    /// evaluation. The only field that varies between identical runs.
    pub wall_ms_per_step: f64,
}

impl MetricRecord {
    /// Equality on every field except the timing.
    pub fn same_outcome(&self, other: &MetricRecord) -> bool {
        self.iteration == other.iteration
            && self.samples_seen == other.samples_seen
            && self.loss.to_bits() == other.loss.to_bits()
            && self.accuracy.to_bits() == other.accuracy.to_bits()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    TargetAccuracy,
    MaxSamples,
    MaxIterations,
    MaxEpochs,
    EarlyStopping,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub records: Vec<MetricRecord>,
    /// Training loss of every iteration.
    pub train_losses: Vec<f64>,
    pub samples_seen: u64,
    pub iterations: u64,
    pub wall_ms: f64,
    pub stop: StopReason,
}

/// Mean NLL and accuracy over a set of batches. For stateful tasks the
/// recurrent state flows from each batch into the next.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

pub fn evaluate(model: &Model, batches: &[SequenceBatch], carry_state: bool) -> Result<Evaluation> {
    let (mut loss, mut weight) = (0.0, 0usize);
    let (mut hits, mut total) = (0usize, 0usize);
    let mut carry: Option<CellState> = None;
    for b in batches {
        let out = forward_sequence(b, &model.params, &model.config, carry.as_ref())?;
        let n = b.mask().iter().filter(|&&m| m).count();
        if n > 0 {
            loss += nll_loss(&out.probs, b.targets(), b.mask())? * n as f64;
            weight += n;
        }
        let (h, t) = masked_accuracy(&out.probs, b.targets(), b.score_mask());
        hits += h;
        total += t;
        if carry_state {
            carry = Some(out.carry_out);
        }
    }
    if weight == 0 {
        return Err(Error::Contract("evaluation set has no scored positions".into()));
    }
    Ok(Evaluation {
        loss: loss / weight as f64,
        accuracy: if total == 0 { 0.0 } else { hits as f64 / total as f64 },
    })
}

/// Drives training of one model on one task.
pub struct Trainer {
    pub model: Model,
    pub adam: AdamState,
    pub options: TrainOptions,
    task: Box<dyn Task>,
    counters: Counters,
    carry: Option<CellState>,
    validation: Vec<SequenceBatch>,
    records: Vec<MetricRecord>,
    train_losses: Vec<f64>,
    metrics: Option<BufWriter<File>>,
    step_ms: f64,
    steps_since_eval: u64,
    meta: serde_json::Value,
}

impl Trainer {
    /// Fresh model initialized from `options.seed` with the task's
    /// forget-gate bias.
    pub fn new(config: TlstmConfig, task: Box<dyn Task>, options: TrainOptions) -> Result<Self> {
        let model = Model::init(config, options.seed, forget_bias_for(task.image_task()))?;
        let adam = AdamState::new(options.adam, &model.params);
        Self::assemble(model, adam, Counters::default(), None, task, options)
    }

    /// Continues from a checkpoint. The task is moved to the checkpointed
    /// stream position.
    pub fn resume(ckpt: Checkpoint, mut task: Box<dyn Task>, options: TrainOptions) -> Result<Self> {
        task.restore(&ckpt.task)?;
        let model = Model {
            config: ckpt.config,
            params: ckpt.params,
        };
        let mut t = Self::assemble(model, ckpt.adam, ckpt.counters, ckpt.carry, task, options)?;
        t.meta = ckpt.meta;
        Ok(t)
    }

    fn assemble(
        model: Model,
        adam: AdamState,
        counters: Counters,
        carry: Option<CellState>,
        task: Box<dyn Task>,
        options: TrainOptions,
    ) -> Result<Self> {
        let c = &model.config;
        if c.input_size != task.input_size() || c.output_size != task.output_size() {
            return Err(Error::Config(format!(
                "model expects R={}, S={} but task `{}` has R={}, S={}",
                c.input_size,
                c.output_size,
                task.name(),
                task.input_size(),
                task.output_size()
            )));
        }
        if options.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        options.adam.validate()?;
        let metrics = match &options.out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(dir.join("metrics.jsonl"))?;
                Some(BufWriter::new(f))
            }
            None => None,
        };
        let validation = task.validation()?;
        Ok(Self {
            model,
            adam,
            options,
            task,
            counters,
            carry,
            validation,
            records: Vec::new(),
            train_losses: Vec::new(),
            metrics,
            step_ms: 0.0,
            steps_since_eval: 0,
            meta: serde_json::Value::Null,
        })
    }

    /// Metadata stored alongside checkpoints.
    pub fn set_meta(&mut self, meta: serde_json::Value) {
        self.meta = meta;
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn records(&self) -> &[MetricRecord] {
        &self.records
    }

    pub fn task(&self) -> &dyn Task {
        self.task.as_ref()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.model.config.clone(),
            params: self.model.params.clone(),
            adam: self.adam.clone(),
            counters: self.counters,
            task: self.task.state(),
            carry: self.carry.clone(),
            meta: self.meta.clone(),
        }
    }

    /// One optimization step on the next training batch; returns its loss.
    pub fn step(&mut self) -> Result<f64> {
        let start = Instant::now();
        let next = self.task.next_batch()?;
        let carry_in = if self.task.carries_state() && !next.reset_carry {
            self.carry.as_ref()
        } else {
            None
        };
        let out = loss_and_gradients(&next.batch, &self.model.params, &self.model.config, carry_in)?;
        let iteration = self.counters.iteration + 1;
        if !out.loss.is_finite() {
            return Err(Error::Divergence {
                iteration,
                loss: out.loss,
            });
        }
        adam_step(&mut self.model.params, &out.gradients, &mut self.adam)?;
        if self.task.carries_state() {
            self.carry = Some(out.output.carry_out);
        }
        self.counters.iteration = iteration;
        self.counters.samples_seen += next.batch.batch_size() as u64;
        self.train_losses.push(out.loss);
        self.step_ms += start.elapsed().as_secs_f64() * 1e3;
        self.steps_since_eval += 1;
        Ok(out.loss)
    }

    /// Evaluates on the validation batches, records and writes the metrics
    /// line, and saves a checkpoint when an output directory is set.
    pub fn evaluate_now(&mut self) -> Result<MetricRecord> {
        let eval = evaluate(&self.model, &self.validation, self.task.carries_state())?;
        let record = MetricRecord {
            iteration: self.counters.iteration,
            samples_seen: self.counters.samples_seen,
            loss: eval.loss,
            accuracy: eval.accuracy,
            wall_ms_per_step: if self.steps_since_eval == 0 {
                0.0
            } else {
                self.step_ms / self.steps_since_eval as f64
            },
        };
        self.step_ms = 0.0;
        self.steps_since_eval = 0;
        self.counters.evaluations += 1;
        if eval.accuracy > self.counters.best_accuracy {
            self.counters.best_accuracy = eval.accuracy;
            self.counters.stale_evaluations = 0;
        } else {
            self.counters.stale_evaluations += 1;
        }
        if let Some(w) = &mut self.metrics {
            serde_json::to_writer(&mut *w, &record)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        if let Some(dir) = &self.options.out_dir {
            self.checkpoint().save(&dir.join("checkpoint.bin"))?;
        }
        self.records.push(record.clone());
        Ok(record)
    }

    fn budget_reason(&self) -> Option<StopReason> {
        let s = &self.options.stop;
        let c = &self.counters;
        if s.max_iterations.is_some_and(|m| c.iteration >= m) {
            return Some(StopReason::MaxIterations);
        }
        if s.max_samples.is_some_and(|m| c.samples_seen >= m) {
            return Some(StopReason::MaxSamples);
        }
        if let (Some(m), Some(per)) = (s.max_epochs, self.task.samples_per_epoch()) {
            if c.samples_seen >= m * per {
                return Some(StopReason::MaxEpochs);
            }
        }
        None
    }

    fn quality_reason(&self) -> Option<StopReason> {
        let s = &self.options.stop;
        let last = self.records.last()?;
        if s.target_accuracy.is_some_and(|t| last.accuracy >= t) {
            return Some(StopReason::TargetAccuracy);
        }
        if s.patience.is_some_and(|p| self.counters.stale_evaluations >= p) {
            return Some(StopReason::EarlyStopping);
        }
        None
    }

    /// Trains until a stopping rule fires. An evaluation always follows the
    /// final step.
    pub fn run(&mut self) -> Result<TrainReport> {
        let s = &self.options.stop;
        if !s.is_bounded() && s.target_accuracy.is_none() && s.patience.is_none() {
            return Err(Error::Config("no stopping rule configured".into()));
        }
        let start = Instant::now();
        let stop = loop {
            if let Some(r) = self.budget_reason() {
                if self.steps_since_eval > 0 || self.records.is_empty() {
                    self.evaluate_now()?;
                }
                break self.quality_reason().unwrap_or(r);
            }
            self.step()?;
            if self.counters.iteration % self.options.eval_every == 0 {
                self.evaluate_now()?;
                if let Some(r) = self.quality_reason() {
                    break r;
                }
            }
        };
        Ok(TrainReport {
            records: self.records.clone(),
            train_losses: self.train_losses.clone(),
            samples_seen: self.counters.samples_seen,
            iterations: self.counters.iteration,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            stop,
        })
    }
}

/// Initializes a model for `task` and trains it.
pub fn train(config: TlstmConfig, task: Box<dyn Task>, options: TrainOptions) -> Result<(Model, TrainReport)> {
    let mut t = Trainer::new(config, task, options)?;
    let report = t.run()?;
    Ok((t.model, report))
}

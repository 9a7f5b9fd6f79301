//! Run configuration documents and named presets.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tlstm::model::{Norm, TlstmConfig, Variant};
use tlstm::tasks::{Task, TaskSpec};
use tlstm::train::{AdamConfig, StopRules, TrainOptions, DEFAULT_EVAL_EVERY};

use crate::CliError;

fn default_dims() -> usize {
    2
}

fn default_kernel() -> usize {
    3
}

/// Architecture without the input/output sizes, which come from the task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default = "default_dims")]
    pub dims: usize,
    /// `P`; for the stacked baseline, the number of layers.
    pub tensor_size: usize,
    /// `M`.
    pub channels: usize,
    /// `K`.
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    pub variant: Variant,
    #[serde(default)]
    pub norm: Norm,
    /// Optional `L`, checked against the value implied by `P` and `K`.
    #[serde(default)]
    pub depth: Option<usize>,
}

impl ModelSpec {
    pub fn resolve(&self, input_size: usize, output_size: usize) -> Result<TlstmConfig, CliError> {
        let config = TlstmConfig {
            dims: self.dims,
            tensor_size: self.tensor_size,
            channels: self.channels,
            kernel: self.kernel,
            variant: self.variant,
            norm: self.norm,
            input_size,
            output_size,
        };
        config.validate().map_err(CliError::config)?;
        let depth = config.depth().map_err(CliError::config)?;
        if let Some(l) = self.depth {
            if l != depth {
                return Err(CliError::Config(format!(
                    "model.depth: L = {l} is inconsistent with P = {} and K = {}, which give L = {depth}",
                    self.tensor_size, self.kernel
                )));
            }
        }
        Ok(config)
    }
}

fn default_eval_every() -> u64 {
    DEFAULT_EVAL_EVERY
}

/// A complete run description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub task: TaskSpec,
    #[serde(default)]
    pub optimizer: AdamConfig,
    /// Defaults to the task's standard mini-batch size.
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    pub stop: StopRules,
    #[serde(default)]
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn batch_size(&self) -> usize {
        self.batch_size.unwrap_or_else(|| self.task.default_batch_size())
    }

    pub fn build_task(&self) -> Result<Box<dyn Task>, CliError> {
        self.task
            .build(self.seed, self.batch_size())
            .map_err(CliError::config)
    }

    pub fn options(&self) -> TrainOptions {
        TrainOptions {
            adam: self.optimizer,
            eval_every: self.eval_every,
            stop: self.stop.clone(),
            seed: self.seed,
            out_dir: Some(self.out_dir.clone()),
        }
    }

    /// Parses a document, expanding `"preset"` first. Keys next to the
    /// preset override it (objects are merged key by key).
    pub fn from_value(mut doc: Value) -> Result<Self, CliError> {
        if let Some(obj) = doc.as_object_mut() {
            if let Some(p) = obj.remove("preset") {
                let name = p
                    .as_str()
                    .ok_or_else(|| CliError::Config("preset: expected a string".into()))?;
                let mut base = preset(name).ok_or_else(|| unknown_preset(name))?;
                merge(&mut base, doc);
                doc = base;
            }
        }
        let config: RunConfig = serde_json::from_value(doc).map_err(CliError::config)?;
        config.check()?;
        Ok(config)
    }

    fn check(&self) -> Result<(), CliError> {
        if self.eval_every == 0 {
            return Err(CliError::Config("eval_every: must be positive".into()));
        }
        if self.batch_size == Some(0) {
            return Err(CliError::Config("batch_size: must be positive".into()));
        }
        self.optimizer.validate().map_err(CliError::config)?;
        let s = &self.stop;
        if !s.is_bounded() && s.target_accuracy.is_none() && s.patience.is_none() {
            return Err(CliError::Config("stop: at least one stopping rule is required".into()));
        }
        // Geometry errors surface before any data is touched.
        self.model.resolve(1, 1).map(|_| ())
    }
}

fn unknown_preset(name: &str) -> CliError {
    CliError::Config(format!(
        "unknown preset `{name}` (available: {})",
        PRESETS.join(", ")
    ))
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

pub const PRESETS: [&str; 10] = [
    "addition-desk",
    "memorization-desk",
    "charlm-desk",
    "mnist-desk",
    "pmnist-desk",
    "addition-full",
    "memorization-full",
    "charlm-full",
    "mnist-full",
    "pmnist-full",
];

/// Named run templates. Desk presets finish in minutes on one CPU core;
/// full presets use large-scale settings.
pub fn preset(name: &str) -> Option<Value> {
    let tlstm3 = |p: usize, m: usize| {
        json!({"dims": 3, "tensor_size": p, "channels": m, "kernel": 3,
               "variant": "tlstm", "norm": "cn"})
    };
    let v = match name {
        "addition-desk" => json!({
            "model": tlstm3(3, 32),
            "task": {"kind": "addition", "digits": 4},
            "eval_every": 100,
            "stop": {"max_samples": 200_000, "target_accuracy": 0.99},
            "out_dir": "runs/addition-desk",
        }),
        "memorization-desk" => json!({
            "model": tlstm3(3, 32),
            "task": {"kind": "memorization", "symbols": 6, "vocab_size": 16},
            "eval_every": 100,
            "stop": {"max_samples": 100_000, "target_accuracy": 1.0},
            "out_dir": "runs/memorization-desk",
        }),
        "charlm-desk" => json!({
            "model": {"dims": 2, "tensor_size": 2, "channels": 64, "kernel": 3,
                      "variant": "tlstm", "norm": "cn"},
            "task": {"kind": "char-lm", "path": "moby_dick.txt", "subseq_len": 50},
            "eval_every": 40,
            "stop": {"max_epochs": 1},
            "out_dir": "runs/charlm-desk",
        }),
        "mnist-desk" | "pmnist-desk" => json!({
            "model": tlstm3(3, 32),
            "task": {"kind": "mnist", "permuted": name == "pmnist-desk", "downsample": true},
            "eval_every": 1000,
            "stop": {"max_epochs": 5, "patience": 10},
            "out_dir": format!("runs/{name}"),
        }),
        "addition-full" => json!({
            "model": tlstm3(7, 400),
            "task": {"kind": "addition", "digits": 15},
            "stop": {"max_samples": 5_000_000, "target_accuracy": 1.0},
            "out_dir": "runs/addition-full",
        }),
        "memorization-full" => json!({
            "model": tlstm3(10, 100),
            "task": {"kind": "memorization", "symbols": 20, "vocab_size": 65},
            "stop": {"max_samples": 5_000_000, "target_accuracy": 1.0},
            "out_dir": "runs/memorization-full",
        }),
        "charlm-full" => json!({
            "model": tlstm3(6, 1200),
            "task": {"kind": "char-lm", "path": "enwik8", "subseq_len": 50},
            "stop": {"max_epochs": 50},
            "out_dir": "runs/charlm-full",
        }),
        "mnist-full" | "pmnist-full" => json!({
            "model": tlstm3(5, 100),
            "task": {"kind": "mnist", "permuted": name == "pmnist-full"},
            "stop": {"max_epochs": 100, "patience": 10},
            "out_dir": format!("runs/{name}"),
        }),
        _ => return None,
    };
    Some(v)
}

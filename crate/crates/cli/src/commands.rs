use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};
use tlstm::autodiff::grad_check;
use tlstm::model::{depth_from, Model, TlstmConfig, Variant};
use tlstm::sequence::{forward_sequence, loss_and_gradients};
use tlstm::tasks::{bpc, Task, TaskSpec};
use tlstm::train::{evaluate, Checkpoint, Trainer};

use crate::config::{preset as preset_doc, RunConfig, PRESETS};
use crate::{
    BenchArgs, CliError, ConfigSource, EvalArgs, GradcheckArgs, PresetArgs, Split, TraceArgs,
    TrainArgs,
};

/// Largest gradient-check error that counts as a pass.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

const METRICS_FILE: &str = "metrics.jsonl";
const CHECKPOINT_FILE: &str = "checkpoint.bin";
const CONFIG_FILE: &str = "config.json";
const SUMMARY_FILE: &str = "summary.json";
const TRACE_FILE: &str = "trace.csv";

impl ConfigSource {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut doc = match (&self.config, &self.preset) {
            (Some(path), preset) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                let mut doc: Value = serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                if let (Some(p), Some(obj)) = (preset, doc.as_object_mut()) {
                    obj.entry("preset").or_insert_with(|| json!(p));
                }
                doc
            }
            (None, Some(p)) => json!({ "preset": p }),
            (None, None) => {
                return Err(CliError::Config("give a config file or --preset".into()));
            }
        };
        if let (Some(dir), Some(obj)) = (&self.out_dir, doc.as_object_mut()) {
            obj.insert("out_dir".into(), json!(dir));
        }
        RunConfig::from_value(doc)
    }
}

fn checkpoint_path(run: &RunConfig, explicit: &Option<PathBuf>) -> PathBuf {
    explicit.clone().unwrap_or_else(|| run.out_dir.join(CHECKPOINT_FILE))
}

fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(CliError::config)?;
    std::fs::write(path, text + "\n")
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Loads a checkpoint and checks that it fits the task.
fn load_model(path: &Path, task: &dyn Task) -> Result<Model, CliError> {
    let ckpt = Checkpoint::load(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let c = &ckpt.config;
    if c.input_size != task.input_size() || c.output_size != task.output_size() {
        return Err(CliError::Config(format!(
            "{}: checkpoint has R={}, S={} but task `{}` needs R={}, S={}",
            path.display(),
            c.input_size,
            c.output_size,
            task.name(),
            task.input_size(),
            task.output_size()
        )));
    }
    Ok(Model {
        config: ckpt.config,
        params: ckpt.params,
    })
}

fn evaluation_json(task: &TaskSpec, split: &str, loss: f64, accuracy: f64) -> Value {
    let mut v = json!({ "split": split, "loss": loss, "accuracy": accuracy });
    if matches!(task, TaskSpec::CharLm { .. }) {
        v["bpc"] = json!(bpc(loss));
    }
    v
}

pub fn train(args: &TrainArgs) -> Result<(), CliError> {
    let run = args.source.load()?;
    let task = run.build_task()?;
    let config = run.model.resolve(task.input_size(), task.output_size())?;
    let dir = &run.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?;
    let ckpt_path = dir.join(CHECKPOINT_FILE);
    let mut trainer = if args.resume {
        let ckpt = Checkpoint::load(&ckpt_path)
            .map_err(|e| CliError::Config(format!("{}: {e}", ckpt_path.display())))?;
        if ckpt.config != config {
            return Err(CliError::Config(format!(
                "{}: checkpoint model differs from the configured model",
                ckpt_path.display()
            )));
        }
        Trainer::resume(ckpt, task, run.options())?
    } else {
        let metrics = dir.join(METRICS_FILE);
        if metrics.exists() {
            std::fs::remove_file(&metrics)
                .map_err(|e| CliError::Config(format!("{}: {e}", metrics.display())))?;
        }
        Trainer::new(config, task, run.options())?
    };
    let resolved = serde_json::to_value(&run).map_err(CliError::config)?;
    write_json(&dir.join(CONFIG_FILE), &resolved)?;
    trainer.set_meta(resolved);

    let report = trainer.run()?;
    let test = trainer.task().test()?;
    let carries = trainer.task().carries_state();
    let eval = evaluate(&trainer.model, &test, carries)?;
    let last = report.records.last().expect("run ends with an evaluation");
    let summary = json!({
        "stop": report.stop,
        "iterations": report.iterations,
        "samples_seen": report.samples_seen,
        "parameters": trainer.model.parameter_count(),
        "validation": evaluation_json(&run.task, "validation", last.loss, last.accuracy),
        "test": evaluation_json(&run.task, "test", eval.loss, eval.accuracy),
    });
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    println!("{}", serde_json::to_string(&summary).map_err(CliError::config)?);
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let run = args.source.load()?;
    let task = run.build_task()?;
    let model = load_model(&checkpoint_path(&run, &args.checkpoint), task.as_ref())?;
    let (name, batches) = match args.split {
        Split::Validation => ("validation", task.validation()?),
        Split::Test => ("test", task.test()?),
    };
    let e = evaluate(&model, &batches, task.carries_state())?;
    let out = evaluation_json(&run.task, name, e.loss, e.accuracy);
    println!("{}", serde_json::to_string(&out).map_err(CliError::config)?);
    Ok(())
}

pub fn gradcheck(args: &GradcheckArgs) -> Result<(), CliError> {
    let config = TlstmConfig {
        dims: args.dims,
        tensor_size: args.tensor_size,
        channels: args.channels,
        kernel: args.kernel,
        variant: args.variant,
        norm: args.norm,
        input_size: args.input_size,
        output_size: args.output_size,
    };
    config.validate()?;
    let depth = config.depth()?;
    if let Some(l) = args.depth {
        if l != depth {
            return Err(CliError::Config(format!(
                "--depth {l} is inconsistent with --tensor-size {} and --kernel {}, which give L = {depth}",
                args.tensor_size, args.kernel
            )));
        }
    }
    let steps = args.steps.unwrap_or(depth + 1);
    let report = grad_check(&config, steps, args.seed)?;
    let verdict = if report.max_relative_error < GRADCHECK_TOLERANCE { "PASS" } else { "FAIL" };
    let line = format!(
        "{verdict}, max_rel_err={:.3e} (worst `{}`, max entry error {:.3e}, L={depth}, T={steps})",
        report.max_relative_error, report.worst, report.max_entry_error
    );
    if verdict == "PASS" {
        println!("{line}");
        Ok(())
    } else {
        println!("{line}");
        Err(CliError::CheckFailed(format!(
            "gradient check error {:.3e} is not below {GRADCHECK_TOLERANCE:e}",
            report.max_relative_error
        )))
    }
}

/// Smallest tensor size that yields depth `l` under kernel `k`.
pub fn tensor_size_for_depth(l: usize, k: usize) -> Result<usize, CliError> {
    if l == 0 {
        return Err(CliError::Config("depths must be positive".into()));
    }
    // L grows monotonically with P and P = L always reaches at least L.
    for p in 1..=l.max(1) * k {
        if depth_from(p, k)? == l {
            return Ok(p);
        }
    }
    Err(CliError::Config(format!("no tensor size gives L = {l} with K = {k}")))
}

pub fn bench(args: &BenchArgs) -> Result<(), CliError> {
    let base = preset_doc(&args.task).ok_or_else(|| {
        CliError::Config(format!("unknown task preset `{}` (available: {})", args.task, PRESETS.join(", ")))
    })?;
    let spec: TaskSpec = serde_json::from_value(base["task"].clone()).map_err(CliError::config)?;
    let mut task = spec.build(args.seed, args.batch_size)?;
    let batch = task.next_batch()?.batch;
    if args.repeats == 0 {
        return Err(CliError::Config("--repeats must be positive".into()));
    }
    if !args.json {
        println!(
            "{:>3} {:>3} {:>6} {:>14} {:>13} {:>12} {:>10}",
            "L", "P", "T", "steps/seq", "layer-updates", "ms/step", "params"
        );
    }
    for &l in &args.depths {
        let p = if args.variant.is_tensorized() {
            tensor_size_for_depth(l, args.kernel)?
        } else {
            l
        };
        let config = TlstmConfig {
            dims: args.dims,
            tensor_size: p,
            channels: args.channels,
            kernel: args.kernel,
            variant: args.variant,
            norm: args.norm,
            input_size: task.input_size(),
            output_size: task.output_size(),
        };
        let model = Model::init(config.clone(), args.seed, 1.0)?;
        let mut counters = None;
        let start = Instant::now();
        for _ in 0..args.repeats {
            let out = loss_and_gradients(&batch, &model.params, &config, None)?;
            counters = Some(out.output.counters);
        }
        let ms = start.elapsed().as_secs_f64() * 1e3 / args.repeats as f64;
        let c = counters.expect("repeats > 0");
        let params = model.parameter_count();
        if args.json {
            let row = json!({
                "L": l, "P": p, "T": batch.len(), "steps_per_sequence": c.cell_steps,
                "layer_updates": c.layer_updates, "wall_ms_per_step": ms, "params": params,
            });
            println!("{row}");
        } else {
            println!(
                "{l:>3} {p:>3} {:>6} {:>14} {:>13} {ms:>12.2} {params:>10}",
                batch.len(),
                c.cell_steps,
                c.layer_updates
            );
        }
    }
    if args.variant == Variant::Slstm || args.norm == tlstm::model::Norm::None {
        return Ok(());
    }
    eprintln!("note: normalization gains are per location, so the parameter count varies with P");
    Ok(())
}

pub fn trace(args: &TraceArgs) -> Result<(), CliError> {
    let run = args.source.load()?;
    let mut task = run.task.build(args.example_seed, 1)?;
    let model = load_model(&checkpoint_path(&run, &args.checkpoint), task.as_ref())?;
    let batch = task.next_batch()?.batch;
    let out = forward_sequence(&batch, &model.params, &model.config, None)?;
    let csv = out.trace.to_csv();
    if args.stdout {
        print!("{csv}");
    } else {
        std::fs::create_dir_all(&run.out_dir)
            .map_err(|e| CliError::Config(format!("{}: {e}", run.out_dir.display())))?;
        let path = run.out_dir.join(TRACE_FILE);
        std::fs::write(&path, csv).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        println!(
            "wrote {} ({} rows x {} columns)",
            path.display(),
            out.trace.rows(),
            out.trace.columns()
        );
    }
    Ok(())
}

pub fn preset(args: &PresetArgs) -> Result<(), CliError> {
    match &args.name {
        None => {
            for name in PRESETS {
                println!("{name}");
            }
            Ok(())
        }
        Some(name) => {
            let run = RunConfig::from_value(json!({ "preset": name }))?;
            let text = serde_json::to_string_pretty(&run).map_err(CliError::config)?;
            println!("{text}");
            Ok(())
        }
    }
}

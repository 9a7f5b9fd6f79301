//! Browser bindings: a depth and receptive-field explorer, a memory-cell
//! convolution playground, and a memory-cell trace of a briefly trained
//! model. Every function returns a JSON string.

use serde_json::json;
use tlstm::model::{Model, Norm, TlstmConfig, Variant};
use tlstm::sequence::{forward_sequence, Sample, SequenceBatch};
use tlstm::tasks::{AlgorithmicTask, Task};
use tlstm::tensor::{kernel_offsets, memory_cell_conv, DynamicKernelBank, Tensor};
use tlstm::train::{AdamConfig, StopRules, TrainOptions, Trainer};
use wasm_bindgen::prelude::*;

/// Upper bound on in-browser training iterations.
pub const MAX_DEMO_ITERATIONS: usize = 2000;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Tracks how a unit change of the first input spreads through a random
/// 2D tensorized RNN with tensor size `p` and kernel size `k`.
///
/// `reached[row][step]` is true when the channel mean of hidden location
/// `row` at `step` differs from an unperturbed run; `first_reach[row]` is
/// the first such step. The output location `p - 1` is first reached at
/// step `L - 1`.
#[wasm_bindgen]
pub fn receptive_field(p: usize, k: usize, seed: u64) -> Result<String, String> {
    let config = TlstmConfig {
        dims: 2,
        tensor_size: p,
        channels: 4,
        kernel: k,
        variant: Variant::Trnn,
        norm: Norm::None,
        input_size: 1,
        output_size: 2,
    };
    let depth = config.depth().map_err(err)?;
    let model = Model::init(config.clone(), seed, 1.0).map_err(err)?;
    let t_len = depth + 1;
    let base = Tensor::full([1, t_len, 1], 0.25);
    let mut bumped = base.clone();
    bumped.set(&[0, 0, 0], 1.25);
    let run = |inputs: Tensor| {
        let batch = SequenceBatch::new(inputs, vec![0; t_len], vec![true; t_len]).map_err(err)?;
        forward_sequence(&batch, &model.params, &config, None)
            .map(|o| o.trace)
            .map_err(err)
    };
    let (a, b) = (run(base)?, run(bumped)?);
    let reached: Vec<Vec<bool>> = (0..a.rows())
        .map(|r| (0..a.columns()).map(|s| (a.get(r, s) - b.get(r, s)).abs() > 1e-12).collect())
        .collect();
    let first_reach: Vec<Option<usize>> = reached.iter().map(|row| row.iter().position(|&x| x)).collect();
    Ok(json!({
        "depth": depth,
        "delay": depth - 1,
        "parameters": config.parameter_count(),
        "steps": a.columns(),
        "reached": reached,
        "first_reach": first_reach,
    })
    .to_string())
}

/// Convolves a 1D single-channel cell with softmax-normalized kernels.
///
/// `logits` holds either one kernel of length `k`, shared by every
/// location, or one kernel per location (`cell.len() * k` values). Returns
/// the normalized kernels, the output, and the min/max of every padded
/// input window.
#[wasm_bindgen]
pub fn memory_conv(cell: Vec<f64>, logits: Vec<f64>, k: usize) -> Result<String, String> {
    let p = cell.len();
    if p == 0 || k == 0 {
        return Err("cell and kernel must be non-empty".into());
    }
    let logits = if logits.len() == k {
        logits.repeat(p)
    } else if logits.len() == p * k {
        logits
    } else {
        return Err(format!("expected {k} or {} logits, got {}", p * k, logits.len()));
    };
    let bank = DynamicKernelBank::from_logits(&Tensor::new([p, k], logits).map_err(err)?, &[k]).map_err(err)?;
    let c = Tensor::new([p, 1], cell.clone()).map_err(err)?;
    let out = memory_cell_conv(&c, &bank).map_err(err)?;
    let window = |loc: usize| {
        kernel_offsets(k).map(move |o| (loc as isize + o).clamp(0, p as isize - 1) as usize)
    };
    let lo: Vec<f64> = (0..p).map(|i| window(i).map(|j| cell[j]).fold(f64::INFINITY, f64::min)).collect();
    let hi: Vec<f64> = (0..p).map(|i| window(i).map(|j| cell[j]).fold(f64::NEG_INFINITY, f64::max)).collect();
    let kernels: Vec<&[f64]> = bank.values().data().chunks(k).collect();
    Ok(json!({
        "kernels": kernels,
        "output": out.data(),
        "window_min": lo,
        "window_max": hi,
    })
    .to_string())
}

fn decode(task: &AlgorithmicTask, ids: impl Iterator<Item = usize>) -> String {
    ids.map(|i| task.vocab().decode(i)).collect()
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

/// Trains a 2D tLSTM (P = 3, M = 16, K = 3, channel norm) on memorization
/// for `iterations` steps and returns the normalized memory-cell trace of
/// one held-out example, with its input, target and prediction.
#[wasm_bindgen]
pub fn memorization_trace(symbols: usize, iterations: usize, seed: u64) -> Result<String, String> {
    if iterations > MAX_DEMO_ITERATIONS {
        return Err(format!("at most {MAX_DEMO_ITERATIONS} iterations"));
    }
    let vocab = 16;
    let task = AlgorithmicTask::memorization(symbols, vocab, seed, 15).map_err(err)?;
    let config = TlstmConfig {
        dims: 2,
        tensor_size: 3,
        channels: 16,
        kernel: 3,
        variant: Variant::Tlstm,
        norm: Norm::Channel,
        input_size: task.input_size(),
        output_size: task.output_size(),
    };
    let sample: Sample = task.test_samples()[0].clone();
    let options = TrainOptions {
        adam: AdamConfig::default(),
        eval_every: iterations.max(1) as u64,
        stop: StopRules {
            max_iterations: Some(iterations as u64),
            ..StopRules::default()
        },
        seed,
        out_dir: None,
    };
    let shown = task.clone();
    let mut trainer = Trainer::new(config, Box::new(task), options).map_err(err)?;
    let mut loss = f64::NAN;
    for _ in 0..iterations {
        loss = trainer.step().map_err(err)?;
    }
    let batch = SequenceBatch::from_samples(std::slice::from_ref(&sample)).map_err(err)?;
    let out = forward_sequence(&batch, &trainer.model.params, &trainer.model.config, None).map_err(err)?;
    let r = shown.input_size();
    let s = shown.output_size();
    let input = decode(&shown, sample.inputs.data().chunks(r).map(argmax));
    let target = decode(&shown, sample.targets.iter().copied());
    let predicted = decode(&shown, out.probs.data().chunks(s).map(argmax));
    Ok(json!({
        "rows": out.trace.normalized(),
        "input": input,
        "target": target,
        "predicted": predicted,
        "train_loss": loss,
    })
    .to_string())
}

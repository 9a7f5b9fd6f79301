//! Unrolling a cell over a sequence with the output delay, the NLL
//! objective, state carry-over, and memory-cell traces.

use std::fmt::Write as _;
use std::path::Path;

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::model::{output_logits, register, tape_step, CellState, ParamNodes, TapeState, TlstmConfig};
use crate::params::{Gradients, ParameterSet};
use crate::tensor::{softmax_last_axis, Tensor};

/// One example: inputs `[T, R]`, a class target per position, a loss mask,
/// and the positions that count towards accuracy.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub inputs: Tensor,
    pub targets: Vec<usize>,
    pub mask: Vec<bool>,
    pub score: Vec<bool>,
}

/// A batch of equal-length sequences; inputs are `[N, T, R]` and targets /
/// mask are flattened row-major over `(n, t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch {
    inputs: Tensor,
    targets: Vec<usize>,
    mask: Vec<bool>,
    score: Vec<bool>,
}

impl SequenceBatch {
    pub fn new(inputs: Tensor, targets: Vec<usize>, mask: Vec<bool>) -> Result<Self> {
        let s = inputs.shape();
        if s.len() != 3 || s[1] == 0 || s[0] == 0 {
            return Err(Error::dim("SequenceBatch", s, &[0, 0, 0]));
        }
        let rows = s[0] * s[1];
        if targets.len() != rows || mask.len() != rows {
            return Err(Error::dim("SequenceBatch(targets)", s, &[targets.len(), mask.len()]));
        }
        Ok(Self {
            inputs,
            targets,
            score: mask.clone(),
            mask,
        })
    }

    /// Replaces the accuracy mask (which defaults to the loss mask).
    pub fn with_score_mask(mut self, score: Vec<bool>) -> Result<Self> {
        if score.len() != self.mask.len() {
            return Err(Error::dim("with_score_mask", &[self.mask.len()], &[score.len()]));
        }
        self.score = score;
        Ok(self)
    }

    pub fn from_samples(samples: &[Sample]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Contract("empty batch".into()))?;
        let shape = first.inputs.shape().to_vec();
        let mut data = Vec::with_capacity(samples.len() * first.inputs.len());
        let mut targets = Vec::new();
        let mut mask = Vec::new();
        let mut score = Vec::new();
        for s in samples {
            if s.inputs.shape() != shape {
                return Err(Error::dim("from_samples", &shape, s.inputs.shape()));
            }
            data.extend_from_slice(s.inputs.data());
            targets.extend_from_slice(&s.targets);
            mask.extend_from_slice(&s.mask);
            score.extend_from_slice(&s.score);
        }
        let inputs = Tensor::new([samples.len(), shape[0], shape[1]], data)?;
        Self::new(inputs, targets, mask)?.with_score_mask(score)
    }

    pub fn batch_size(&self) -> usize {
        self.inputs.shape()[0]
    }

    /// Sequence length `T`.
    pub fn len(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_size(&self) -> usize {
        self.inputs.shape()[2]
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn score_mask(&self) -> &[bool] {
        &self.score
    }

    /// Inputs at timestep `t` (0-based) for every example, `[N, R]`.
    pub fn step_input(&self, t: usize) -> Tensor {
        let (n, len, r) = (self.batch_size(), self.len(), self.input_size());
        let mut data = Vec::with_capacity(n * r);
        for b in 0..n {
            data.extend_from_slice(&self.inputs.data()[(b * len + t) * r..][..r]);
        }
        Tensor::new([n, r], data).expect("consistent shape")
    }

    /// Copy with the input at `(example, t, feature)` changed.
    pub fn with_input(&self, example: usize, t: usize, feature: usize, value: f64) -> Self {
        let mut out = self.clone();
        out.inputs.set(&[example, t, feature], value);
        out
    }
}

/// Work counters for one unrolled sequence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepCounters {
    /// Recurrent timesteps executed.
    pub cell_steps: usize,
    /// Layer-level state updates (equal to `cell_steps` for tensorized
    /// cells, `cell_steps × L` for the stacked baseline).
    pub layer_updates: usize,
}

/// Channel means of the memory cell along the grid diagonal, one column
/// per executed timestep, for the first example of a batch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    rows: usize,
    columns: Vec<Vec<f64>>,
}

impl Trace {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn columns(&self) -> usize {
        self.columns.len()
    }

    pub fn get(&self, row: usize, column: usize) -> f64 {
        self.columns[column][row]
    }

    /// Row-major matrix min-max scaled to `[0, 1]` (all zeros when constant).
    pub fn normalized(&self) -> Vec<Vec<f64>> {
        let all = self.columns.iter().flatten();
        let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
        let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        (0..self.rows)
            .map(|r| {
                self.columns
                    .iter()
                    .map(|col| if span > 0.0 { (col[r] - lo) / span } else { 0.0 })
                    .collect()
            })
            .collect()
    }

    /// `rows` lines of comma-separated normalized values.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.normalized() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    fn record(&mut self, tape: &Tape, config: &TlstmConfig, state: &TapeState) {
        let p = config.tensor_size;
        let column = match state {
            TapeState::Grid { h, c } => {
                let t = tape.value(c.unwrap_or(*h));
                let m = t.channels();
                let r = config.dims - 1;
                let stride: usize = (0..r).map(|d| p.pow(d as u32)).sum();
                (0..p)
                    .map(|i| {
                        let loc = i * stride;
                        t.data()[loc * m..(loc + 1) * m].iter().sum::<f64>() / m as f64
                    })
                    .collect()
            }
            TapeState::Layers(layers) => layers
                .iter()
                .map(|(_, c)| {
                    let t = tape.value(*c);
                    let m = t.channels();
                    t.data()[..m].iter().sum::<f64>() / m as f64
                })
                .collect(),
        };
        self.rows = p;
        self.columns.push(column);
    }
}

pub(crate) struct Unrolled {
    pub logits: Vec<NodeId>,
    pub carry: CellState,
    pub trace: Trace,
    pub counters: StepCounters,
}

struct Plan {
    delay: usize,
    layers: usize,
    init: CellState,
}

fn plan(config: &TlstmConfig, batch: &SequenceBatch, carry_in: Option<&CellState>) -> Result<Plan> {
    config.validate()?;
    if batch.input_size() != config.input_size {
        return Err(Error::dim(
            "forward_sequence(input)",
            batch.inputs.shape(),
            &[config.input_size],
        ));
    }
    let n = batch.batch_size();
    let init = match carry_in {
        Some(c) => {
            let want = CellState::zeros(config, n);
            let same = |a: &Tensor, b: &Tensor| a.shape() == b.shape();
            let ok = same(&c.h, &want.h)
                && match (&c.c, &want.c) {
                    (Some(a), Some(b)) => same(a, b),
                    (None, None) => true,
                    _ => false,
                };
            if !ok {
                return Err(Error::dim("carry", c.h.shape(), want.h.shape()));
            }
            c.clone()
        }
        None => CellState::zeros(config, n),
    };
    Ok(Plan {
        delay: config.output_delay()?,
        layers: if config.variant.is_tensorized() { 1 } else { config.depth()? },
        init,
    })
}

/// Runs `T + L - 1` steps; steps past `T` consume zero inputs. `y_t` is read
/// from the state after step `t + L - 1`. The carried state is the one
/// after step `T`, the last step that consumed real input.
pub(crate) fn unroll(
    tape: &mut Tape,
    config: &TlstmConfig,
    p: &ParamNodes,
    batch: &SequenceBatch,
    carry_in: Option<&CellState>,
) -> Result<Unrolled> {
    let plan = plan(config, batch, carry_in)?;
    let t_len = batch.len();
    let mut state = TapeState::from_values(tape, config, &plan.init)?;
    let zero_input = tape.constant(Tensor::zeros([batch.batch_size(), config.input_size]));

    let mut logits = Vec::with_capacity(t_len);
    let mut trace = Trace::default();
    let mut carry = None;
    let mut counters = StepCounters::default();
    for s in 0..t_len + plan.delay {
        let x = if s < t_len {
            tape.constant(batch.step_input(s))
        } else {
            zero_input
        };
        state = tape_step(tape, config, p, x, &state)?;
        counters.cell_steps += 1;
        counters.layer_updates += plan.layers;
        trace.record(tape, config, &state);
        if s + 1 == t_len {
            carry = Some(state.values(tape)?);
        }
        if s >= plan.delay {
            logits.push(output_logits(tape, config, p, &state)?);
        }
    }
    Ok(Unrolled {
        logits,
        carry: carry.expect("T >= 1"),
        trace,
        counters,
    })
}

/// Mean NLL over masked positions as a tape scalar.
pub(crate) fn loss_node(tape: &mut Tape, logits: &[NodeId], batch: &SequenceBatch) -> Result<NodeId> {
    let (n, t_len) = (batch.batch_size(), batch.len());
    let count = batch.mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::Contract("loss mask selects no positions".into()));
    }
    let scale = 1.0 / count as f64;
    let mut terms = Vec::new();
    for (t, &lg) in logits.iter().enumerate().take(t_len) {
        let rows: Vec<usize> = (0..n).map(|b| b * t_len + t).collect();
        if rows.iter().all(|&i| !batch.mask[i]) {
            continue;
        }
        let targets: Vec<usize> = rows.iter().map(|&i| batch.targets[i]).collect();
        let weights: Vec<f64> = rows
            .iter()
            .map(|&i| if batch.mask[i] { scale } else { 0.0 })
            .collect();
        terms.push(tape.cross_entropy(lg, &targets, &weights)?);
    }
    tape.add_n(&terms)
}

/// Outputs of [`forward_sequence`].
#[derive(Clone, Debug)]
pub struct SequenceOutput {
    /// `[N, T, S]` class probabilities.
    pub probs: Tensor,
    pub carry_out: CellState,
    pub trace: Trace,
    pub counters: StepCounters,
}

fn stack_probs(tape: &Tape, logits: &[NodeId]) -> Result<Tensor> {
    let first = tape.value(logits[0]);
    let (n, s) = (first.shape()[0], first.shape()[1]);
    let t_len = logits.len();
    let mut data = vec![0.0; n * t_len * s];
    for (t, &id) in logits.iter().enumerate() {
        let p = softmax_last_axis(tape.value(id));
        for b in 0..n {
            data[(b * t_len + t) * s..][..s].copy_from_slice(&p.data()[b * s..(b + 1) * s]);
        }
    }
    Tensor::new([n, t_len, s], data)
}

/// Runs the model over a batch and returns per-position class probabilities.
///
/// Each step is recorded on its own short-lived tape, so memory does not
/// grow with the sequence length. Values are identical to the ones computed
/// during training.
pub fn forward_sequence(
    batch: &SequenceBatch,
    params: &ParameterSet,
    config: &TlstmConfig,
    carry_in: Option<&CellState>,
) -> Result<SequenceOutput> {
    let plan = plan(config, batch, carry_in)?;
    let (n, t_len, s_out) = (batch.batch_size(), batch.len(), config.output_size);
    let mut probs = vec![0.0; n * t_len * s_out];
    let mut trace = Trace::default();
    let mut counters = StepCounters::default();
    let mut carry = None;
    let mut state = plan.init;
    let zeros = Tensor::zeros([n, config.input_size]);
    for s in 0..t_len + plan.delay {
        let mut tape = Tape::new();
        let p = register(&mut tape, params);
        let prev = TapeState::from_values(&mut tape, config, &state)?;
        let x = tape.constant(if s < t_len { batch.step_input(s) } else { zeros.clone() });
        let next = tape_step(&mut tape, config, &p, x, &prev)?;
        counters.cell_steps += 1;
        counters.layer_updates += plan.layers;
        trace.record(&tape, config, &next);
        if s >= plan.delay {
            let t = s - plan.delay;
            let lg = output_logits(&mut tape, config, &p, &next)?;
            let pr = softmax_last_axis(tape.value(lg));
            for b in 0..n {
                probs[(b * t_len + t) * s_out..][..s_out]
                    .copy_from_slice(&pr.data()[b * s_out..(b + 1) * s_out]);
            }
        }
        state = next.values(&tape)?;
        if s + 1 == t_len {
            carry = Some(state.clone());
        }
    }
    Ok(SequenceOutput {
        probs: Tensor::new([n, t_len, s_out], probs)?,
        carry_out: carry.expect("T >= 1"),
        trace,
        counters,
    })
}

/// Loss, gradients, and the forward outputs for one batch.
#[derive(Clone, Debug)]
pub struct LossAndGradients {
    pub loss: f64,
    pub gradients: Gradients,
    pub output: SequenceOutput,
}

pub fn loss_and_gradients(
    batch: &SequenceBatch,
    params: &ParameterSet,
    config: &TlstmConfig,
    carry_in: Option<&CellState>,
) -> Result<LossAndGradients> {
    let mut tape = Tape::new();
    let p = register(&mut tape, params);
    let u = unroll(&mut tape, config, &p, batch, carry_in)?;
    let loss = loss_node(&mut tape, &u.logits, batch)?;
    let gradients = tape.backward(loss)?;
    Ok(LossAndGradients {
        loss: tape.value(loss).data()[0],
        gradients,
        output: SequenceOutput {
            probs: stack_probs(&tape, &u.logits)?,
            carry_out: u.carry,
            trace: u.trace,
            counters: u.counters,
        },
    })
}

/// Mean loss only (no gradients retained).
pub fn sequence_loss(
    batch: &SequenceBatch,
    params: &ParameterSet,
    config: &TlstmConfig,
    carry_in: Option<&CellState>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let p = register(&mut tape, params);
    let u = unroll(&mut tape, config, &p, batch, carry_in)?;
    let loss = loss_node(&mut tape, &u.logits, batch)?;
    Ok(tape.value(loss).data()[0])
}

/// Mean of `-ln p(target)` over masked positions of `[N, T, S]` outputs.
pub fn nll_loss(probs: &Tensor, targets: &[usize], mask: &[bool]) -> Result<f64> {
    let s = probs.channels();
    let rows = probs.len() / s.max(1);
    if targets.len() != rows || mask.len() != rows {
        return Err(Error::dim("nll_loss", probs.shape(), &[targets.len()]));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, row) in probs.data().chunks_exact(s).enumerate() {
        if mask[i] {
            total -= row[targets[i]].ln();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Contract("loss mask selects no positions".into()));
    }
    Ok(total / count as f64)
}

/// Argmax hits and total over masked positions.
pub fn masked_accuracy(probs: &Tensor, targets: &[usize], mask: &[bool]) -> (usize, usize) {
    let s = probs.channels();
    let mut hits = 0;
    let mut total = 0;
    for (i, row) in probs.data().chunks_exact(s).enumerate() {
        if !mask[i] {
            continue;
        }
        let best = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc })
            .0;
        hits += usize::from(best == targets[i]);
        total += 1;
    }
    (hits, total)
}

/// Detaches a state for reuse as the next subsequence's initial state. The
/// values are copied bit for bit; no tape references survive.
pub fn carry_state(prev: &CellState) -> CellState {
    prev.clone()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nll_examples() {
        let uniform = Tensor::full([1, 2, 4], 0.25);
        let l = nll_loss(&uniform, &[0, 3], &[true, true]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-15);
        let perfect = Tensor::new([1, 1, 2], vec![0.0, 1.0]).unwrap();
        assert_eq!(nll_loss(&perfect, &[1], &[true]).unwrap(), 0.0);
        assert!(nll_loss(&uniform, &[0, 0], &[false, false]).is_err());
    }

    #[test]
    fn nll_matches_direct_sum() {
        let probs = Tensor::new([1, 3, 2], vec![0.2, 0.8, 0.6, 0.4, 0.9, 0.1]).unwrap();
        let l = nll_loss(&probs, &[1, 1, 0], &[true, false, true]).unwrap();
        let want = -(0.8f64.ln() + 0.9f64.ln()) / 2.0;
        assert!((l - want).abs() < 1e-15);
    }

    #[test]
    fn trace_normalization() {
        let t = Trace {
            rows: 2,
            columns: vec![vec![1.0, 3.0], vec![2.0, 5.0]],
        };
        assert_eq!(t.normalized(), vec![vec![0.0, 0.25], vec![0.5, 1.0]]);
        assert_eq!(t.to_csv().lines().count(), 2);
    }

    #[test]
    fn accuracy_counts_masked_positions_only() {
        let probs = Tensor::new([1, 2, 2], vec![0.7, 0.3, 0.1, 0.9]).unwrap();
        assert_eq!(masked_accuracy(&probs, &[0, 0], &[true, true]), (1, 2));
        assert_eq!(masked_accuracy(&probs, &[0, 0], &[true, false]), (1, 1));
    }
}

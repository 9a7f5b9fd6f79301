use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Model, Norm, TlstmConfig};
use crate::params::{Gradients, ParameterSet};
use crate::sequence::{loss_and_gradients, sequence_loss, SequenceBatch};
use crate::tensor::Tensor;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Central-difference gradient of `f` with respect to every entry of
/// `params`.
pub fn finite_diff<F>(mut f: F, params: &ParameterSet, step: f64) -> Result<Gradients>
where
    F: FnMut(&ParameterSet) -> Result<f64>,
{
    let mut work = params.clone();
    let mut out = params.zeros_like();
    let names: Vec<String> = params.names().map(str::to_owned).collect();
    for name in &names {
        let len = params.require(name)?.len();
        for i in 0..len {
            let orig = work.require(name)?.data()[i];
            work.get_mut(name).expect("present").data_mut()[i] = orig + step;
            let up = f(&work)?;
            work.get_mut(name).expect("present").data_mut()[i] = orig - step;
            let down = f(&work)?;
            work.get_mut(name).expect("present").data_mut()[i] = orig;
            out.get_mut(name).expect("present").data_mut()[i] = (up - down) / (2.0 * step);
        }
    }
    Ok(out)
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Outcome of [`grad_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative error over parameter tensors, comparing Euclidean
    /// norms of the difference and of the gradients.
    pub max_relative_error: f64,
    /// Largest per-entry relative error.
    pub max_entry_error: f64,
    /// Name of the tensor with the largest relative error.
    pub worst: String,
}

/// Random inputs, targets and (perturbed) parameters for a gradient check.
pub fn grad_check_problem(
    config: &TlstmConfig,
    seq_len: usize,
    seed: u64,
) -> Result<(ParameterSet, SequenceBatch)> {
    let mut model = Model::init(config.clone(), seed, 1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    for (name, t) in model.params.iter_mut() {
        let centre = if name == crate::model::names::NORM_GAIN { 1.0 } else { 0.0 };
        for v in t.data_mut() {
            *v = centre + rng.gen_range(-0.5..0.5);
        }
    }
    let n = 2;
    let inputs = Tensor::uniform([n, seq_len, config.input_size], -1.0, 1.0, &mut rng);
    let targets = (0..n * seq_len)
        .map(|_| rng.gen_range(0..config.output_size))
        .collect();
    let batch = SequenceBatch::new(inputs, targets, vec![true; n * seq_len])?;
    Ok((model.params, batch))
}

/// Compares reverse-mode gradients of the mean NLL with central differences
/// on a random model and sequence of length `seq_len`, which must be at
/// least the model depth.
pub fn grad_check(config: &TlstmConfig, seq_len: usize, seed: u64) -> Result<GradCheckReport> {
    config.validate()?;
    let depth = config.depth()?;
    if seq_len < depth {
        return Err(Error::Contract(format!(
            "gradient check needs T >= L, got T = {seq_len} and L = {depth}"
        )));
    }
    let (params, batch) = grad_check_problem(config, seq_len, seed)?;
    let analytic = loss_and_gradients(&batch, &params, config, None)?.gradients;
    let numeric = finite_diff(|p| sequence_loss(&batch, p, config, None), &params, FD_STEP)?;
    Ok(compare(&analytic, &numeric))
}

pub(crate) fn compare(analytic: &Gradients, numeric: &Gradients) -> GradCheckReport {
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        max_entry_error: 0.0,
        worst: String::new(),
    };
    for ((name, a), (_, n)) in analytic.iter().zip(numeric.iter()) {
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for (&x, &y) in a.data().iter().zip(n.data()) {
            diff += (x - y) * (x - y);
            na += x * x;
            nn += y * y;
            report.max_entry_error = report.max_entry_error.max(relative_error(x, y));
        }
        let rel = diff.sqrt() / na.sqrt().max(nn.sqrt()).max(1e-8);
        if rel >= report.max_relative_error {
            report.max_relative_error = rel;
            report.worst = name.to_owned();
        }
    }
    report
}

/// Normalization is irrelevant to the check itself but shifts which paths
/// get exercised; exported so callers can sweep all settings.
pub const NORMS: [Norm; 3] = [Norm::None, Norm::Layer, Norm::Channel];

//! Recurrent cells: the tensorized RNN/LSTM updates, output extraction, and
//! the stacked LSTM baseline.

mod cell;
mod config;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use cell::{
    concat_input, extract_output, slstm_step, step, tlstm_step, tlstm_step_no_mem, trnn_step,
    LayerState,
};
pub(crate) use cell::{output_logits, register, tape_step, ParamNodes, TapeState};
pub use config::{depth_from, Norm, TlstmConfig, Variant};

use crate::error::Result;
use crate::params::ParameterSet;
use crate::tensor::Tensor;

/// Stable parameter names.
pub mod names {
    pub const WX: &str = "wx";
    pub const BX: &str = "bx";
    pub const WH: &str = "wh";
    pub const BH: &str = "bh";
    pub const W_LSTM: &str = "w_lstm";
    pub const B_LSTM: &str = "b_lstm";
    pub const WY: &str = "wy";
    pub const BY: &str = "by";
    pub const NORM_GAIN: &str = "norm_gain";
    pub const NORM_BIAS: &str = "norm_bias";
}

/// Forget-gate bias for freshly initialized models: 4 for image
/// classification, 1 otherwise.
pub fn forget_bias_for(image_task: bool) -> f64 {
    if image_task {
        4.0
    } else {
        1.0
    }
}

/// Hidden state and (for LSTM variants) memory cell.
///
/// Tensorized variants hold `[N, P, …, P, M]`; the stacked baseline stores
/// its layers along the grid axis, `[N, L, M]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CellState {
    pub h: Tensor,
    pub c: Option<Tensor>,
}

impl CellState {
    /// All-zero state for a batch of `n`.
    pub fn zeros(config: &TlstmConfig, n: usize) -> Self {
        let mut shape = vec![n];
        shape.extend(config.grid());
        shape.push(config.channels);
        Self {
            h: Tensor::zeros(shape.clone()),
            c: config.variant.has_memory_cell().then(|| Tensor::zeros(shape)),
        }
    }
}

fn glorot(shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::uniform(shape, -a, a, rng)
}

/// Parameters plus the architecture they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: TlstmConfig,
    pub params: ParameterSet,
}

impl Model {
    /// Glorot-uniform weights, zero biases, unit normalization gains, and the
    /// forget-gate slice of the gate bias set to `forget_bias`.
    pub fn init(config: TlstmConfig, seed: u64, forget_bias: f64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (r, m, s) = (config.input_size, config.channels, config.output_size);
        let mut params = ParameterSet::new();
        params.insert(names::WX, glorot(vec![r, m], r, m, &mut rng));
        params.insert(names::BX, Tensor::zeros([m]));

        if config.variant.is_tensorized() {
            let mo = config.conv_out_channels();
            let taps = config.kernel_taps();
            let mut shape = config.kernel_shape();
            shape.extend([m, mo]);
            params.insert(names::WH, glorot(shape, taps * m, taps * mo, &mut rng));
            let mut bias = Tensor::zeros([mo]);
            if config.variant.has_memory_cell() {
                bias.data_mut()[2 * m..3 * m].fill(forget_bias);
            }
            params.insert(names::BH, bias);
        } else {
            params.insert(names::W_LSTM, glorot(vec![2 * m, 4 * m], 2 * m, 4 * m, &mut rng));
            let mut bias = Tensor::zeros([4 * m]);
            bias.data_mut()[2 * m..3 * m].fill(forget_bias);
            params.insert(names::B_LSTM, bias);
        }

        params.insert(names::WY, glorot(vec![m, s], m, s, &mut rng));
        params.insert(names::BY, Tensor::zeros([s]));

        if config.norm != Norm::None {
            let mut shape = config.grid();
            shape.push(m);
            params.insert(names::NORM_GAIN, Tensor::full(shape.clone(), 1.0));
            params.insert(names::NORM_BIAS, Tensor::zeros(shape));
        }
        Ok(Self { config, params })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }
}

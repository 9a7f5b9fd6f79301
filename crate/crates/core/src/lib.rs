//! Tensorized recurrent networks.
//!
//! Hidden states are tensors with a grid of locations and a channel axis.
//! Each timestep mixes the previous hidden state with the input projection
//! through one convolution across the grid, so depth grows with the grid
//! size instead of with the parameter count. The LSTM variant adds a
//! per-location, input-dependent convolution over the memory cell and an
//! optional channel normalization.
//!
//! ```
//! use tlstm::model::{Model, TlstmConfig, Variant, Norm};
//! let config = TlstmConfig {
//!     dims: 2, tensor_size: 3, channels: 4, kernel: 3,
//!     variant: Variant::Tlstm, norm: Norm::Channel,
//!     input_size: 5, output_size: 5,
//! };
//! assert_eq!(config.depth().unwrap(), 3);
//! let model = Model::init(config, 7, 1.0).unwrap();
//! assert_eq!(model.parameter_count(), model.config.parameter_count());
//! ```

pub mod autodiff;
pub mod error;
pub mod model;
pub mod params;
pub mod sequence;
pub mod tasks;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{CellState, Model, Norm, TlstmConfig, Variant};
pub use params::{Gradients, ParameterSet};
pub use sequence::{forward_sequence, SequenceBatch};
pub use tensor::Tensor;

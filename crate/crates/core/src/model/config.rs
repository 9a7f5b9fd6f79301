use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cell family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Tensorized RNN: tanh of the cross-layer convolution.
    #[serde(rename = "trnn")]
    Trnn,
    /// Tensorized LSTM without the memory-cell convolution.
    #[serde(rename = "tlstm-no-mem")]
    TlstmNoMem,
    /// Full tensorized LSTM with the dynamic memory-cell convolution.
    #[serde(rename = "tlstm")]
    Tlstm,
    /// Stacked LSTM baseline whose layers share one parameter block.
    #[serde(rename = "slstm")]
    Slstm,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Trnn,
        Variant::TlstmNoMem,
        Variant::Tlstm,
        Variant::Slstm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Trnn => "trnn",
            Variant::TlstmNoMem => "tlstm-no-mem",
            Variant::Tlstm => "tlstm",
            Variant::Slstm => "slstm",
        }
    }

    pub fn is_tensorized(self) -> bool {
        !matches!(self, Variant::Slstm)
    }

    pub fn has_memory_cell(self) -> bool {
        !matches!(self, Variant::Trnn)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant `{s}` (expected trnn, tlstm-no-mem, tlstm or slstm)"
                ))
            })
    }
}

/// Normalization applied to the memory cell before the output nonlinearity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Norm {
    #[default]
    #[serde(rename = "none")]
    None,
    #[serde(rename = "ln")]
    Layer,
    #[serde(rename = "cn")]
    Channel,
}

impl Norm {
    pub fn as_str(self) -> &'static str {
        match self {
            Norm::None => "none",
            Norm::Layer => "ln",
            Norm::Channel => "cn",
        }
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Norm::None),
            "ln" => Ok(Norm::Layer),
            "cn" => Ok(Norm::Channel),
            _ => Err(Error::Config(format!(
                "unknown norm `{s}` (expected none, ln or cn)"
            ))),
        }
    }
}

/// Depth implied by tensor size `p` and kernel size `k`: the smallest `L`
/// for which the output at the far corner sees the current input but no
/// future one, `L = ceil(2P / (K - K mod 2))`.
pub fn depth_from(p: usize, k: usize) -> Result<usize> {
    if k < 2 {
        return Err(Error::InvalidKernel(k));
    }
    if p == 0 {
        return Err(Error::Config("tensor size must be at least 1".into()));
    }
    let reach = k - k % 2;
    Ok((2 * p).div_ceil(reach))
}

/// Architecture descriptor.
///
/// For tensorized variants the grid has `dims - 1` axes of size
/// `tensor_size`. For the stacked baseline `tensor_size` is the number of
/// stacked layers, and `dims`/`kernel` are ignored.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TlstmConfig {
    /// Tensor dimensionality `D` (grid axes plus the channel axis).
    pub dims: usize,
    /// `P`, per grid axis.
    pub tensor_size: usize,
    /// `M`.
    pub channels: usize,
    /// `K`, per grid axis.
    pub kernel: usize,
    pub variant: Variant,
    #[serde(default)]
    pub norm: Norm,
    /// `R`.
    pub input_size: usize,
    /// `S`.
    pub output_size: usize,
}

impl TlstmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.tensor_size == 0 || self.channels == 0 {
            return bad("tensor_size and channels must be positive".into());
        }
        if self.input_size == 0 || self.output_size == 0 {
            return bad("input_size and output_size must be positive".into());
        }
        if self.variant.is_tensorized() {
            if self.dims < 2 {
                return bad(format!("dims must be at least 2, got {}", self.dims));
            }
            depth_from(self.tensor_size, self.kernel)?;
        } else if self.norm != Norm::None {
            return bad("the stacked baseline does not support normalization".into());
        }
        Ok(())
    }

    /// Number of implicit (tensorized) or explicit (stacked) layers.
    pub fn depth(&self) -> Result<usize> {
        if self.variant.is_tensorized() {
            depth_from(self.tensor_size, self.kernel)
        } else {
            Ok(self.tensor_size)
        }
    }

    /// Timesteps between consuming `x_t` and emitting `y_t`.
    pub fn output_delay(&self) -> Result<usize> {
        if self.variant.is_tensorized() {
            Ok(self.depth()? - 1)
        } else {
            Ok(0)
        }
    }

    /// Grid shape `[P; D-1]` of the hidden state (layers for the baseline).
    pub fn grid(&self) -> Vec<usize> {
        if self.variant.is_tensorized() {
            vec![self.tensor_size; self.dims - 1]
        } else {
            vec![self.tensor_size]
        }
    }

    pub fn kernel_shape(&self) -> Vec<usize> {
        vec![self.kernel; self.dims - 1]
    }

    /// `⟨K⟩`, the number of taps in one dynamic memory-cell kernel.
    pub fn kernel_taps(&self) -> usize {
        self.kernel.pow((self.dims - 1) as u32)
    }

    /// Output channels of the cross-layer convolution, in gate order
    /// `g, i, f, o[, q]`.
    pub fn conv_out_channels(&self) -> usize {
        match self.variant {
            Variant::Trnn => self.channels,
            Variant::TlstmNoMem | Variant::Slstm => 4 * self.channels,
            Variant::Tlstm => 4 * self.channels + self.kernel_taps(),
        }
    }

    /// Closed-form parameter count.
    pub fn parameter_count(&self) -> usize {
        let (r, m, s) = (self.input_size, self.channels, self.output_size);
        let io = r * m + m + m * s + s;
        match self.variant {
            Variant::Slstm => io + 2 * m * 4 * m + 4 * m,
            _ => {
                let mo = self.conv_out_channels();
                let conv = self.kernel_taps() * m * mo + mo;
                let norm = match self.norm {
                    Norm::None => 0,
                    _ => 2 * self.tensor_size.pow((self.dims - 1) as u32) * m,
                };
                io + conv + norm
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_examples() {
        assert_eq!(depth_from(4, 3).unwrap(), 4);
        assert_eq!(depth_from(5, 2).unwrap(), 5);
        assert_eq!(depth_from(3, 4).unwrap(), 2);
        assert_eq!(depth_from(3, 5).unwrap(), 2);
        assert!(matches!(depth_from(3, 1), Err(Error::InvalidKernel(1))));
        assert!(depth_from(0, 3).is_err());
    }

    #[test]
    fn variant_and_norm_round_trip_through_strings() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(json, format!("\"{v}\""));
        }
        assert!("lstm".parse::<Variant>().is_err());
        assert_eq!("cn".parse::<Norm>().unwrap(), Norm::Channel);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let json = r#"{"dims":2,"tensor_size":3,"channels":4,"kernel":3,"variant":"tlstm",
                       "input_size":5,"output_size":5,"extra":1}"#;
        assert!(serde_json::from_str::<TlstmConfig>(json).is_err());
    }
}

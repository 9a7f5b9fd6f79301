use super::{names, CellState, Norm, TlstmConfig, Variant};
use crate::autodiff::{NodeId, NormKind, Tape};
use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::tensor::{softmax_last_axis, Tensor};

/// Tape handles for every parameter of a model.
pub(crate) struct ParamNodes {
    entries: Vec<(String, NodeId)>,
}

impl ParamNodes {
    pub fn get(&self, name: &str) -> Result<NodeId> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, id)| *id)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }
}

/// Records every parameter as a named leaf.
pub(crate) fn register(tape: &mut Tape, params: &ParameterSet) -> ParamNodes {
    ParamNodes {
        entries: params
            .iter()
            .map(|(n, t)| (n.to_string(), tape.param(n, t.clone())))
            .collect(),
    }
}

/// Recurrent state as tape nodes.
#[derive(Clone, Debug)]
pub(crate) enum TapeState {
    Grid { h: NodeId, c: Option<NodeId> },
    Layers(Vec<(NodeId, NodeId)>),
}

impl TapeState {
    pub fn from_values(tape: &mut Tape, config: &TlstmConfig, state: &CellState) -> Result<Self> {
        if config.variant.is_tensorized() {
            let h = tape.constant(state.h.clone());
            let c = match (&state.c, config.variant.has_memory_cell()) {
                (Some(c), true) => Some(tape.constant(c.clone())),
                (None, false) => None,
                _ => return Err(Error::Contract("memory cell presence does not match variant".into())),
            };
            Ok(TapeState::Grid { h, c })
        } else {
            let c = state
                .c
                .as_ref()
                .ok_or_else(|| Error::Contract("stacked state needs a memory cell".into()))?;
            let layers = split_layers(&state.h)?
                .into_iter()
                .zip(split_layers(c)?)
                .map(|(h, c)| (tape.constant(h), tape.constant(c)))
                .collect();
            Ok(TapeState::Layers(layers))
        }
    }

    /// Hidden node whose location means feed the trace (the memory cell when
    /// there is one).
    pub fn values(&self, tape: &Tape) -> Result<CellState> {
        match self {
            TapeState::Grid { h, c } => Ok(CellState {
                h: tape.value(*h).clone(),
                c: c.map(|c| tape.value(c).clone()),
            }),
            TapeState::Layers(layers) => {
                let hs: Vec<&Tensor> = layers.iter().map(|(h, _)| tape.value(*h)).collect();
                let cs: Vec<&Tensor> = layers.iter().map(|(_, c)| tape.value(*c)).collect();
                Ok(CellState {
                    h: stack_layers(&hs)?,
                    c: Some(stack_layers(&cs)?),
                })
            }
        }
    }
}

/// `[N, L, M]` → L tensors of `[N, M]`.
fn split_layers(t: &Tensor) -> Result<Vec<Tensor>> {
    let s = t.shape();
    if s.len() != 3 {
        return Err(Error::dim("split_layers", s, &[0, 0, 0]));
    }
    let (n, l, m) = (s[0], s[1], s[2]);
    (0..l)
        .map(|layer| {
            let mut data = Vec::with_capacity(n * m);
            for b in 0..n {
                data.extend_from_slice(&t.data()[(b * l + layer) * m..][..m]);
            }
            Tensor::new([n, m], data)
        })
        .collect()
}

fn stack_layers(layers: &[&Tensor]) -> Result<Tensor> {
    let (n, m) = (layers[0].shape()[0], layers[0].shape()[1]);
    let mut data = Vec::with_capacity(n * layers.len() * m);
    for b in 0..n {
        for t in layers {
            data.extend_from_slice(&t.data()[b * m..(b + 1) * m]);
        }
    }
    Tensor::new([n, layers.len(), m], data)
}

/// `g = tanh, i/f/o = sigmoid`, `c = g⊙i + c_prev⊙f`; returns `(c, o)`.
fn lstm_gates(
    tape: &mut Tape,
    a: NodeId,
    m: usize,
    c_prev: NodeId,
) -> Result<(NodeId, NodeId)> {
    let ag = tape.slice_channels(a, 0, m)?;
    let ai = tape.slice_channels(a, m, 2 * m)?;
    let af = tape.slice_channels(a, 2 * m, 3 * m)?;
    let ao = tape.slice_channels(a, 3 * m, 4 * m)?;
    let g = tape.tanh(ag);
    let i = tape.sigmoid(ai);
    let f = tape.sigmoid(af);
    let o = tape.sigmoid(ao);
    let gi = tape.mul(g, i)?;
    let cf = tape.mul(c_prev, f)?;
    let c = tape.add(gi, cf)?;
    Ok((c, o))
}

fn normalize(tape: &mut Tape, config: &TlstmConfig, p: &ParamNodes, z: NodeId) -> Result<NodeId> {
    let kind = match config.norm {
        Norm::None => return Ok(z),
        Norm::Channel => NormKind::Channel,
        Norm::Layer => NormKind::Layer,
    };
    let gain = p.get(names::NORM_GAIN)?;
    let bias = p.get(names::NORM_BIAS)?;
    tape.norm(kind, z, gain, bias)
}

/// One timestep on the tape. `x` is `[N, R]`.
pub(crate) fn tape_step(
    tape: &mut Tape,
    config: &TlstmConfig,
    p: &ParamNodes,
    x: NodeId,
    state: &TapeState,
) -> Result<TapeState> {
    let m = config.channels;
    let proj = tape.affine(x, p.get(names::WX)?, p.get(names::BX)?)?;
    match state {
        TapeState::Grid { h, c } => {
            let hcat = tape.concat_input(proj, *h)?;
            let a = tape.cross_layer_conv(hcat, p.get(names::WH)?, p.get(names::BH)?)?;
            match config.variant {
                Variant::Trnn => {
                    let z = normalize(tape, config, p, a)?;
                    Ok(TapeState::Grid {
                        h: tape.tanh(z),
                        c: None,
                    })
                }
                Variant::TlstmNoMem | Variant::Tlstm => {
                    let c_prev = c.ok_or_else(|| Error::Contract("missing memory cell".into()))?;
                    let c_in = if config.variant == Variant::Tlstm {
                        let aq = tape.slice_channels(a, 4 * m, 4 * m + config.kernel_taps())?;
                        let q = tape.softmax(aq);
                        tape.memory_cell_conv(c_prev, q, &config.kernel_shape())?
                    } else {
                        c_prev
                    };
                    let (c_new, o) = lstm_gates(tape, a, m, c_in)?;
                    let z = normalize(tape, config, p, c_new)?;
                    let t = tape.tanh(z);
                    let h_new = tape.mul(t, o)?;
                    Ok(TapeState::Grid {
                        h: h_new,
                        c: Some(c_new),
                    })
                }
                Variant::Slstm => Err(Error::Contract("grid state for stacked variant".into())),
            }
        }
        TapeState::Layers(layers) => {
            let (w, b) = (p.get(names::W_LSTM)?, p.get(names::B_LSTM)?);
            let mut below = proj;
            let mut next = Vec::with_capacity(layers.len());
            for &(h_prev, c_prev) in layers {
                let z = tape.concat_channels(&[below, h_prev])?;
                let a = tape.affine(z, w, b)?;
                let (c_new, o) = lstm_gates(tape, a, m, c_prev)?;
                let t = tape.tanh(c_new);
                let h_new = tape.mul(t, o)?;
                next.push((h_new, c_new));
                below = h_new;
            }
            Ok(TapeState::Layers(next))
        }
    }
}

/// Output logits `[N, S]` read from the far corner of the grid (the top
/// layer for the baseline).
pub(crate) fn output_logits(
    tape: &mut Tape,
    config: &TlstmConfig,
    p: &ParamNodes,
    state: &TapeState,
) -> Result<NodeId> {
    let h_out = match state {
        TapeState::Grid { h, .. } => {
            let corner = vec![config.tensor_size - 1; config.dims - 1];
            tape.location(*h, &corner)?
        }
        TapeState::Layers(layers) => layers.last().expect("at least one layer").0,
    };
    tape.affine(h_out, p.get(names::WY)?, p.get(names::BY)?)
}

/// Adds a leading axis of one when `t` has rank `unbatched_rank`.
fn batched(t: &Tensor, unbatched_rank: usize) -> Result<(Tensor, bool)> {
    if t.rank() == unbatched_rank {
        let mut shape = vec![1];
        shape.extend_from_slice(t.shape());
        Ok((t.clone().reshape(shape)?, true))
    } else if t.rank() == unbatched_rank + 1 {
        Ok((t.clone(), false))
    } else {
        Err(Error::dim("batch", t.shape(), &[unbatched_rank]))
    }
}

fn unbatched(t: Tensor, strip: bool) -> Result<Tensor> {
    if strip {
        let shape = t.shape()[1..].to_vec();
        t.reshape(shape)
    } else {
        Ok(t)
    }
}

/// The concatenated state for one step: the input projection at the corner
/// location, the previous hidden state shifted by one along every grid axis,
/// zeros elsewhere. Accepts `x: [R]`, `h_prev: [P, …, P, M]` or batched
/// forms of both.
pub fn concat_input(
    x: &Tensor,
    h_prev: &Tensor,
    params: &ParameterSet,
    config: &TlstmConfig,
) -> Result<Tensor> {
    let r = config.grid().len() + 1;
    let (x, strip) = batched(x, 1)?;
    let (h, _) = batched(h_prev, r)?;
    let mut tape = Tape::new();
    let xn = tape.constant(x);
    let hn = tape.constant(h);
    let wx = tape.constant(params.require(names::WX)?.clone());
    let bx = tape.constant(params.require(names::BX)?.clone());
    let proj = tape.affine(xn, wx, bx)?;
    let cat = tape.concat_input(proj, hn)?;
    unbatched(tape.value(cat).clone(), strip)
}

/// One timestep of whichever cell `config.variant` names. Shapes as in
/// [`concat_input`]; `state.c` must be present exactly for LSTM variants.
pub fn step(
    x: &Tensor,
    state: &CellState,
    params: &ParameterSet,
    config: &TlstmConfig,
) -> Result<CellState> {
    let r = config.grid().len() + 1;
    let (x, strip) = batched(x, 1)?;
    let h = batched(&state.h, r)?.0;
    let c = state.c.as_ref().map(|c| batched(c, r)).transpose()?.map(|p| p.0);
    let batched_state = CellState { h, c };

    let mut tape = Tape::new();
    let p = register(&mut tape, params);
    let xn = tape.constant(x);
    let s = TapeState::from_values(&mut tape, config, &batched_state)?;
    let next = tape_step(&mut tape, config, &p, xn, &s)?.values(&tape)?;
    Ok(CellState {
        h: unbatched(next.h, strip)?,
        c: next.c.map(|c| unbatched(c, strip)).transpose()?,
    })
}

fn require_variant(config: &TlstmConfig, want: Variant) -> Result<()> {
    if config.variant != want {
        return Err(Error::Contract(format!(
            "step for {want} called with a {} configuration",
            config.variant
        )));
    }
    Ok(())
}

/// Tensorized RNN update: `H = tanh(conv(concat(x, H_prev)))`.
pub fn trnn_step(
    x: &Tensor,
    state: &CellState,
    params: &ParameterSet,
    config: &TlstmConfig,
) -> Result<CellState> {
    require_variant(config, Variant::Trnn)?;
    step(x, state, params, config)
}

/// Tensorized LSTM update without the memory-cell convolution.
pub fn tlstm_step_no_mem(
    x: &Tensor,
    state: &CellState,
    params: &ParameterSet,
    config: &TlstmConfig,
) -> Result<CellState> {
    require_variant(config, Variant::TlstmNoMem)?;
    step(x, state, params, config)
}

/// Full tensorized LSTM update: the last `⟨K⟩` activation channels are
/// softmax-normalized into per-location kernels that convolve the previous
/// memory cell before the forget gate is applied.
pub fn tlstm_step(
    x: &Tensor,
    state: &CellState,
    params: &ParameterSet,
    config: &TlstmConfig,
) -> Result<CellState> {
    require_variant(config, Variant::Tlstm)?;
    step(x, state, params, config)
}

/// Class probabilities from the channel vector at the far grid corner.
pub fn extract_output(h: &Tensor, params: &ParameterSet, config: &TlstmConfig) -> Result<Tensor> {
    let (h, strip) = batched(h, config.grid().len() + 1)?;
    let mut tape = Tape::new();
    let p = register(&mut tape, params);
    let hn = tape.constant(h);
    let state = match config.variant {
        Variant::Slstm => {
            let layers = split_layers(tape.value(hn))?;
            let top = tape.constant(layers.last().expect("layers").clone());
            TapeState::Layers(vec![(top, top)])
        }
        _ => TapeState::Grid { h: hn, c: None },
    };
    let logits = output_logits(&mut tape, config, &p, &state)?;
    unbatched(softmax_last_axis(tape.value(logits)), strip)
}

/// Hidden and memory vectors of one stacked layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerState {
    pub h: Tensor,
    pub c: Tensor,
}

/// One timestep of the stacked baseline: layer 1 reads the projected input,
/// layer `l` reads layer `l - 1`'s new output, all with the same weights.
pub fn slstm_step(
    x: &Tensor,
    layers: &[LayerState],
    params: &ParameterSet,
    config: &TlstmConfig,
) -> Result<Vec<LayerState>> {
    require_variant(config, Variant::Slstm)?;
    if layers.len() != config.tensor_size {
        return Err(Error::Contract(format!(
            "expected {} layers, got {}",
            config.tensor_size,
            layers.len()
        )));
    }
    let (x, strip) = batched(x, 1)?;
    let mut tape = Tape::new();
    let p = register(&mut tape, params);
    let xn = tape.constant(x);
    let mut nodes = Vec::with_capacity(layers.len());
    for l in layers {
        let h = tape.constant(batched(&l.h, 1)?.0);
        let c = tape.constant(batched(&l.c, 1)?.0);
        nodes.push((h, c));
    }
    let TapeState::Layers(next) = tape_step(&mut tape, config, &p, xn, &TapeState::Layers(nodes))?
    else {
        unreachable!("stacked step yields layers")
    };
    next.into_iter()
        .map(|(h, c)| {
            Ok(LayerState {
                h: unbatched(tape.value(h).clone(), strip)?,
                c: unbatched(tape.value(c).clone(), strip)?,
            })
        })
        .collect()
}

use rand::Rng;

use super::CbmError;
use crate::autodiff::{Gate, Tape, Var};
use crate::optim::xavier_init;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How the representation and temporal outputs combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MergeKind {
    /// `o = o' ⊙ c` with `T = sigmoid(conv)`.
    Production,
    /// `o = o' + c` with `T = relu(conv)`.
    Addition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackConfig {
    pub in_channels: usize,
    /// Output channels of each layer, bottom first.
    pub channels: Vec<usize>,
    pub merge: MergeKind,
    /// Add `o_{i-2}` to `o_i` on layers 3, 5, 7, ... when shapes agree.
    pub shortcuts: bool,
    /// Replace the representation unit by constant ones.
    pub constant_bridge: bool,
    pub kernel_size: usize,
}

impl StackConfig {
    pub fn uniform(in_channels: usize, channels: usize, num_layers: usize) -> Self {
        Self {
            in_channels,
            channels: vec![channels; num_layers],
            merge: MergeKind::Production,
            shortcuts: false,
            constant_bridge: false,
            kernel_size: 3,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.channels.len()
    }

    pub fn padding(&self) -> usize {
        self.kernel_size / 2
    }

    /// Input channels of layer `i`.
    pub fn layer_input(&self, i: usize) -> usize {
        if i == 0 {
            self.in_channels
        } else {
            self.channels[i - 1]
        }
    }

    pub fn validate(&self) -> Result<(), CbmError> {
        if self.channels.is_empty() {
            return Err(CbmError::InvalidConfig("at least one layer is required".into()));
        }
        if self.in_channels == 0 || self.channels.contains(&0) {
            return Err(CbmError::InvalidConfig("channel counts must be positive".into()));
        }
        if self.kernel_size % 2 == 0 {
            return Err(CbmError::InvalidConfig(format!(
                "kernel size {} must be odd to preserve spatial size",
                self.kernel_size
            )));
        }
        Ok(())
    }
}

/// Parameters of one layer: `R` maps `C_in → C_out`, `T` maps
/// `C_out + C_in → C_out` over the channel concatenation `[c, o_below]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CbmLayerParams<T> {
    pub r_kernel: Tensor<T>,
    pub r_bias: Tensor<T>,
    pub t_kernel: Tensor<T>,
    pub t_bias: Tensor<T>,
}

impl<T: Scalar> CbmLayerParams<T> {
    /// Xavier-uniform kernels, zero biases.
    pub fn init(c_in: usize, c_out: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        Self {
            r_kernel: xavier_init(&[c_out, c_in, kernel, kernel], rng).expect("positive fan"),
            r_bias: Tensor::zeros(vec![c_out]),
            t_kernel: xavier_init(&[c_out, c_out + c_in, kernel, kernel], rng).expect("positive fan"),
            t_bias: Tensor::zeros(vec![c_out]),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.r_kernel.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.r_kernel.shape()[1]
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> LayerVars {
        LayerVars {
            r_kernel: tape.leaf(self.r_kernel.clone()),
            r_bias: tape.leaf(self.r_bias.clone()),
            t_kernel: tape.leaf(self.t_kernel.clone()),
            t_bias: tape.leaf(self.t_bias.clone()),
        }
    }

    pub fn tensors(&self) -> [&Tensor<T>; 4] {
        [&self.r_kernel, &self.r_bias, &self.t_kernel, &self.t_bias]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<T>; 4] {
        [&mut self.r_kernel, &mut self.r_bias, &mut self.t_kernel, &mut self.t_bias]
    }
}

/// Layer parameters recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub r_kernel: Var,
    pub r_bias: Var,
    pub t_kernel: Var,
    pub t_bias: Var,
}

impl LayerVars {
    pub fn vars(&self) -> [Var; 4] {
        [self.r_kernel, self.r_bias, self.t_kernel, self.t_bias]
    }
}

/// Per-layer memory `c_i`, each `[C_out, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CbmState<T> {
    pub layers: Vec<Tensor<T>>,
}

impl<T: Scalar> CbmState<T> {
    pub fn zeros(cfg: &StackConfig, height: usize, width: usize) -> Self {
        Self {
            layers: cfg
                .channels
                .iter()
                .map(|&c| Tensor::zeros(vec![c, height, width]))
                .collect(),
        }
    }

    /// Record the state as constants: no gradient ever flows back into it.
    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.layers.iter().map(|c| tape.constant(c.clone())).collect()
    }

    pub fn from_tape(tape: &Tape<T>, vars: &[Var]) -> Self {
        Self {
            layers: vars.iter().map(|&v| tape.value(v).clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CellOutput {
    /// Merged layer output `o_{i,t}`.
    pub output: Var,
    /// Temporal memory `c_{i,t}`.
    pub memory: Var,
    /// Representation unit output `o'_{i,t}`.
    pub representation: Var,
}

/// One cell update. `gate` controls only the `o_below → T` edge.
#[allow(clippy::too_many_arguments)]
pub fn cell_step<T: Scalar>(
    tape: &mut Tape<T>,
    below: Var,
    memory: Var,
    layer: &LayerVars,
    merge: MergeKind,
    constant_bridge: bool,
    padding: usize,
    gate: Gate,
) -> Result<CellOutput, CbmError> {
    let gated = tape.gated_edge(below, gate);
    let joined = tape.concat_channels(memory, gated)?;
    let pre = tape.conv2d(joined, layer.t_kernel, layer.t_bias, padding)?;
    let next = match merge {
        MergeKind::Production => tape.sigmoid(pre),
        MergeKind::Addition => tape.relu(pre),
    };
    let memory = tape.mark_step(next, memory);

    let representation = if constant_bridge {
        let ones = Tensor::ones(tape.shape(memory).to_vec());
        tape.constant(ones)
    } else {
        let r = tape.conv2d(below, layer.r_kernel, layer.r_bias, padding)?;
        tape.relu(r)
    };
    let output = match merge {
        MergeKind::Production => tape.mul(representation, memory)?,
        MergeKind::Addition => tape.add(representation, memory)?,
    };
    Ok(CellOutput {
        output,
        memory,
        representation,
    })
}

#[derive(Debug, Clone)]
pub struct StackStep {
    /// Top-layer output.
    pub output: Var,
    pub cells: Vec<CellOutput>,
}

impl StackStep {
    pub fn memories(&self) -> Vec<Var> {
        self.cells.iter().map(|c| c.memory).collect()
    }
}

/// Run every layer on one frame.
pub fn stack_step<T: Scalar>(
    tape: &mut Tape<T>,
    frame: Var,
    state: &[Var],
    layers: &[LayerVars],
    cfg: &StackConfig,
    gates: &[Gate],
) -> Result<StackStep, CbmError> {
    if state.len() != layers.len() {
        return Err(CbmError::LayerCountMismatch {
            state: state.len(),
            stack: layers.len(),
        });
    }
    if gates.len() != layers.len() {
        return Err(CbmError::InvalidConfig(format!(
            "{} gates for {} layers",
            gates.len(),
            layers.len()
        )));
    }
    let mut outputs: Vec<Var> = Vec::with_capacity(layers.len());
    let mut cells = Vec::with_capacity(layers.len());
    let mut below = frame;
    for (i, layer) in layers.iter().enumerate() {
        let mut cell = cell_step(
            tape,
            below,
            state[i],
            layer,
            cfg.merge,
            cfg.constant_bridge,
            cfg.padding(),
            gates[i],
        )?;
        if cfg.shortcuts && i >= 2 && i % 2 == 0 {
            let skip = outputs[i - 2];
            if tape.shape(skip) == tape.shape(cell.output) {
                cell.output = tape.add(cell.output, skip)?;
            }
        }
        outputs.push(cell.output);
        cells.push(cell);
        below = cell.output;
    }
    Ok(StackStep { output: below, cells })
}

/// One independent Bernoulli(`td_rate`) block decision per step and layer.
pub fn draw_gates(rng: &mut impl Rng, steps: usize, layers: usize, td_rate: f64) -> Result<Vec<Vec<Gate>>, CbmError> {
    if !(0.0..=1.0).contains(&td_rate) {
        return Err(CbmError::InvalidRate(td_rate));
    }
    Ok((0..steps)
        .map(|_| {
            (0..layers)
                .map(|_| if rng.gen_bool(td_rate) { Gate::Block } else { Gate::Pass })
                .collect()
        })
        .collect())
}

/// Unrolled clip: one entry per frame.
#[derive(Debug, Clone)]
pub struct ClipUnroll {
    pub steps: Vec<StackStep>,
    pub gates: Vec<Vec<Gate>>,
}

impl ClipUnroll {
    pub fn outputs(&self) -> Vec<Var> {
        self.steps.iter().map(|s| s.output).collect()
    }

    pub fn final_state(&self) -> Vec<Var> {
        self.steps.last().map(StackStep::memories).unwrap_or_default()
    }
}

/// Unroll the stack over `frames`, drawing fresh temporal-dropout gates.
pub fn unroll_clip<T: Scalar>(
    tape: &mut Tape<T>,
    frames: &[Var],
    init: &[Var],
    layers: &[LayerVars],
    cfg: &StackConfig,
    td_rate: f64,
    rng: &mut impl Rng,
) -> Result<ClipUnroll, CbmError> {
    if frames.is_empty() {
        return Err(CbmError::EmptyClip);
    }
    let gates = draw_gates(rng, frames.len(), layers.len(), td_rate)?;
    unroll_clip_with_gates(tape, frames, init, layers, cfg, gates)
}

/// Unroll with caller-supplied gates (`gates[step][layer]`).
pub fn unroll_clip_with_gates<T: Scalar>(
    tape: &mut Tape<T>,
    frames: &[Var],
    init: &[Var],
    layers: &[LayerVars],
    cfg: &StackConfig,
    gates: Vec<Vec<Gate>>,
) -> Result<ClipUnroll, CbmError> {
    if frames.is_empty() {
        return Err(CbmError::EmptyClip);
    }
    if gates.len() != frames.len() {
        return Err(CbmError::InvalidConfig(format!(
            "{} gate rows for {} frames",
            gates.len(),
            frames.len()
        )));
    }
    let mut state = init.to_vec();
    let mut steps = Vec::with_capacity(frames.len());
    for (&frame, row) in frames.iter().zip(&gates) {
        let step = stack_step(tape, frame, &state, layers, cfg, row)?;
        state = step.memories();
        steps.push(step);
    }
    Ok(ClipUnroll { steps, gates })
}

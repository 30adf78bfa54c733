//! A CBM stack with a linear per-step head over the flattened top-layer output.

use rand::Rng;

use crate::autodiff::{Gate, Tape, Var};
use crate::cbm::{stack_step, CbmError, CbmLayerParams, CbmState, LayerVars, StackConfig};
use crate::optim::xavier_init;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct CbmModel<T> {
    pub stack: StackConfig,
    pub height: usize,
    pub width: usize,
    pub layers: Vec<CbmLayerParams<T>>,
    /// `[outputs, C_top * H * W]`.
    pub head_weight: Tensor<T>,
    pub head_bias: Tensor<T>,
}

/// Model parameters recorded on a tape.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub layers: Vec<LayerVars>,
    pub head_weight: Var,
    pub head_bias: Var,
}

impl ModelVars {
    /// Same order as [`CbmModel::tensors`].
    pub fn all(&self) -> Vec<Var> {
        let mut v: Vec<Var> = self.layers.iter().flat_map(|l| l.vars()).collect();
        v.push(self.head_weight);
        v.push(self.head_bias);
        v
    }
}

/// Forward-only values of a full sequence.
#[derive(Debug, Clone)]
pub struct SequenceTrace<T> {
    pub head_outputs: Vec<Tensor<T>>,
    pub top_outputs: Vec<Tensor<T>>,
    /// `representations[t][layer]`, the `R` unit outputs.
    pub representations: Vec<Vec<Tensor<T>>>,
    /// `memories[t][layer]`, the `T` unit outputs.
    pub memories: Vec<Vec<Tensor<T>>>,
    pub final_state: CbmState<T>,
}

impl<T: Scalar> CbmModel<T> {
    pub fn new(
        stack: StackConfig,
        height: usize,
        width: usize,
        head_outputs: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, CbmError> {
        stack.validate()?;
        if height == 0 || width == 0 || head_outputs == 0 {
            return Err(CbmError::InvalidConfig("frame and head sizes must be positive".into()));
        }
        let layers = (0..stack.num_layers())
            .map(|i| CbmLayerParams::init(stack.layer_input(i), stack.channels[i], stack.kernel_size, rng))
            .collect();
        let features = stack.channels[stack.num_layers() - 1] * height * width;
        let head_weight = xavier_init(&[head_outputs, features], rng).expect("positive fan");
        Ok(Self {
            stack,
            height,
            width,
            layers,
            head_weight,
            head_bias: Tensor::zeros(vec![head_outputs]),
        })
    }

    pub fn head_outputs(&self) -> usize {
        self.head_weight.shape()[0]
    }

    pub fn frame_shape(&self) -> Vec<usize> {
        vec![self.stack.in_channels, self.height, self.width]
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut v: Vec<&Tensor<T>> = self.layers.iter().flat_map(|l| l.tensors()).collect();
        v.push(&self.head_weight);
        v.push(&self.head_bias);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v: Vec<&mut Tensor<T>> = self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect();
        v.push(&mut self.head_weight);
        v.push(&mut self.head_bias);
        v
    }

    /// Stable names matching [`CbmModel::tensors`].
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.layers.len() {
            for part in ["r_kernel", "r_bias", "t_kernel", "t_bias"] {
                names.push(format!("layer{i}.{part}"));
            }
        }
        names.push("head.weight".into());
        names.push("head.bias".into());
        names
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> ModelVars {
        ModelVars {
            layers: self.layers.iter().map(|l| l.bind(tape)).collect(),
            head_weight: tape.leaf(self.head_weight.clone()),
            head_bias: tape.leaf(self.head_bias.clone()),
        }
    }

    /// Gradients after `backward`, zeros for parameters the loss never reached.
    pub fn gradients(&self, tape: &Tape<T>, vars: &ModelVars) -> Vec<Tensor<T>> {
        vars.all()
            .into_iter()
            .zip(self.tensors())
            .map(|(v, p)| {
                tape.grad(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(p.shape().to_vec()))
            })
            .collect()
    }

    /// Apply the head to a top-layer output `[C, H, W]`.
    pub fn head(&self, tape: &mut Tape<T>, vars: &ModelVars, top: Var) -> Result<Var, CbmError> {
        let n = tape.value(top).len();
        let flat = tape.reshape(top, vec![n])?;
        Ok(tape.affine(flat, vars.head_weight, vars.head_bias)?)
    }

    pub fn zero_state(&self) -> CbmState<T> {
        CbmState::zeros(&self.stack, self.height, self.width)
    }

    /// Run a whole sequence from `init` with no truncation and no gating.
    pub fn forward_sequence(&self, frames: &[Tensor<T>], init: &CbmState<T>) -> Result<SequenceTrace<T>, CbmError> {
        let mut trace = SequenceTrace {
            head_outputs: Vec::with_capacity(frames.len()),
            top_outputs: Vec::with_capacity(frames.len()),
            representations: Vec::with_capacity(frames.len()),
            memories: Vec::with_capacity(frames.len()),
            final_state: init.clone(),
        };
        let gates = vec![Gate::Pass; self.layers.len()];
        // one short tape per frame keeps memory flat on long sequences
        for frame in frames {
            let mut tape = Tape::new();
            let vars = self.bind(&mut tape);
            let state = trace.final_state.bind(&mut tape);
            let x = tape.constant(frame.clone());
            let step = stack_step(&mut tape, x, &state, &vars.layers, &self.stack, &gates)?;
            let out = self.head(&mut tape, &vars, step.output)?;
            trace.head_outputs.push(tape.value(out).clone());
            trace.top_outputs.push(tape.value(step.output).clone());
            trace
                .representations
                .push(step.cells.iter().map(|c| tape.value(c.representation).clone()).collect());
            trace
                .memories
                .push(step.cells.iter().map(|c| tape.value(c.memory).clone()).collect());
            trace.final_state = CbmState::from_tape(&tape, &step.memories());
        }
        Ok(trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn names_tensors_and_vars_line_up() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = CbmModel::<f64>::new(StackConfig::uniform(1, 3, 3), 6, 6, 4, &mut rng).unwrap();
        assert_eq!(m.tensors().len(), m.tensor_names().len());
        let mut tape = Tape::new();
        let vars = m.bind(&mut tape);
        for (v, t) in vars.all().into_iter().zip(m.tensors()) {
            assert_eq!(tape.value(v), t);
        }
        assert_eq!(m.head_weight.shape(), &[4, 3 * 36]);
    }

    #[test]
    fn forward_sequence_matches_single_tape_unroll() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = CbmModel::<f64>::new(StackConfig::uniform(1, 2, 2), 5, 5, 1, &mut rng).unwrap();
        let frames: Vec<Tensor<f64>> = (0..4).map(|_| xavier_init(&[1, 5, 5], &mut rng).unwrap()).collect();
        let trace = m.forward_sequence(&frames, &m.zero_state()).unwrap();

        let mut tape = Tape::new();
        let vars = m.bind(&mut tape);
        let mut state = m.zero_state().bind(&mut tape);
        for (t, f) in frames.iter().enumerate() {
            let x = tape.constant(f.clone());
            let step = stack_step(&mut tape, x, &state, &vars.layers, &m.stack, &[Gate::Pass; 2]).unwrap();
            let out = m.head(&mut tape, &vars, step.output).unwrap();
            assert_eq!(tape.value(out), &trace.head_outputs[t]);
            state = step.memories();
        }
    }
}

use super::clips::Clip;
use super::registry::OverlapRegistry;
use super::SchemeError;
use crate::autodiff::{Tape, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Mean over the registered pairs of the MSE between the two clips' outputs at
/// the shared timestamp. `outputs[k][j]` is clip `k`'s output at frame
/// `clips[k].start + j`. An empty registry yields a constant zero.
pub fn coherence_loss<T: Scalar>(
    tape: &mut Tape<T>,
    registry: &OverlapRegistry,
    clips: &[Clip],
    outputs: &[Vec<Var>],
) -> Result<Var, SchemeError> {
    if registry.is_empty() {
        return Ok(tape.constant(Tensor::scalar(T::zero())));
    }
    let at = |k: usize, t: usize| -> Result<Var, SchemeError> {
        let clip = clips.get(k).ok_or(SchemeError::MissingOutput { clip: k, t })?;
        t.checked_sub(clip.start)
            .and_then(|j| outputs.get(k)?.get(j).copied())
            .ok_or(SchemeError::MissingOutput { clip: k, t })
    };
    let mut total: Option<Var> = None;
    for p in &registry.pairs {
        let (v, u) = (at(p.a, p.t)?, at(p.b, p.t)?);
        let d = tape.mse(v, u)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, d)?,
            None => d,
        });
    }
    let total = total.expect("non-empty registry");
    Ok(tape.scale(total, T::of(1.0 / registry.len() as f64)))
}

/// `Σ task_losses + λ · coherence`.
pub fn total_objective<T: Scalar>(
    tape: &mut Tape<T>,
    task_losses: &[Var],
    coherence: Var,
    lambda: f64,
) -> Result<Var, SchemeError> {
    let mut acc = tape.scale(coherence, T::of(lambda));
    for &l in task_losses {
        acc = tape.add(acc, l)?;
    }
    Ok(acc)
}

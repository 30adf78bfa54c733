use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::clips::{sample_clips, Clip, CoherenceConfig};
use super::objective::{coherence_loss, total_objective};
use super::registry::build_overlap_registry;
use super::store::{init_clip_state, StateStore};
use super::SchemeError;
use crate::autodiff::{Tape, Var};
use crate::cbm::unroll_clip;
use crate::model::{CbmModel, ModelVars};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-sequence supervision.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// One class for the whole sequence, scored at every frame.
    Class(usize),
    /// One integer per frame, regressed as `label / target_scale`.
    PerFrame(Vec<i64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence<T> {
    pub frames: Vec<Tensor<T>>,
    pub target: Target,
}

impl<T> Sequence<T> {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub coherence: CoherenceConfig,
    /// Sequences per wave; each wave ends in one optimizer step.
    pub batch_size: usize,
    pub weight_decay: f64,
    /// Divisor applied to per-frame integer targets before the MSE.
    pub target_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            coherence: CoherenceConfig::default(),
            batch_size: 8,
            weight_decay: 1e-5,
            target_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EpochMetrics {
    /// Mean task loss per clip.
    pub task_loss: f64,
    /// Mean over waves of `λ · coherence`.
    pub coherence_loss: f64,
    /// Mean over sequences with overlaps of the unweighted coherence term.
    pub overlap_discrepancy: f64,
    /// Mean L2 norm of the wave gradients.
    pub grad_norm: f64,
    /// Longest chain of recurrent steps on any tape.
    pub peak_unroll: usize,
    pub longest_clip: usize,
    pub waves: usize,
    pub clips: usize,
}

/// Everything the optimizer owns; the state store persists across epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer<T> {
    pub model: CbmModel<T>,
    pub adam: AdamState<T>,
    pub store: StateStore<T>,
    pub config: TrainConfig,
}

struct SequenceJob {
    index: usize,
    clips: Vec<Clip>,
    gate_seed: u64,
}

struct SequenceResult<T> {
    grads: Vec<Tensor<T>>,
    task_loss: f64,
    coherence: Option<f64>,
    peak_unroll: usize,
    writes: Vec<(usize, usize, Tensor<T>)>,
}

/// Per-clip task loss: mean over the clip's frames.
pub(crate) fn clip_task_loss<T: Scalar>(
    tape: &mut Tape<T>,
    model: &CbmModel<T>,
    vars: &ModelVars,
    outputs: &[Var],
    clip: &Clip,
    target: &Target,
    target_scale: f64,
) -> Result<Var, SchemeError> {
    let mut total: Option<Var> = None;
    for (j, &o) in outputs.iter().enumerate() {
        let pred = model.head(tape, vars, o)?;
        let l = match target {
            Target::Class(c) => tape.softmax_xent(pred, *c)?,
            Target::PerFrame(labels) => {
                let y = *labels
                    .get(clip.start + j)
                    .ok_or(SchemeError::MissingLabel { sequence: clip.sequence_id, t: clip.start + j })?;
                let y = tape.constant(Tensor::from_f64(vec![1], &[y as f64 / target_scale]).expect("one element"));
                tape.mse(pred, y)?
            }
        };
        total = Some(match total {
            Some(acc) => tape.add(acc, l)?,
            None => l,
        });
    }
    let total = total.ok_or(SchemeError::EmptySequence(clip.sequence_id))?;
    Ok(tape.scale(total, T::of(1.0 / outputs.len() as f64)))
}

/// Forward pass of every clip of one sequence on a shared tape.
pub(crate) struct SequenceForward<T> {
    pub tape: Tape<T>,
    pub vars: ModelVars,
    pub task_losses: Vec<Var>,
    pub coherence: Var,
    pub has_overlap: bool,
    pub memories: Vec<Vec<Vec<Var>>>,
}

pub(crate) fn forward_sequence_clips<T: Scalar>(
    model: &CbmModel<T>,
    store: &StateStore<T>,
    seq: &Sequence<T>,
    clips: &[Clip],
    td_rate: f64,
    gate_rng: &mut ChaCha8Rng,
    target_scale: f64,
) -> Result<SequenceForward<T>, SchemeError> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let mut task_losses = Vec::with_capacity(clips.len());
    let mut outputs = Vec::with_capacity(clips.len());
    let mut memories = Vec::with_capacity(clips.len());
    for clip in clips {
        let init = init_clip_state(clip, store, &model.stack, model.height, model.width).bind(&mut tape);
        let frames: Vec<Var> = seq.frames[clip.start..clip.end()]
            .iter()
            .map(|f| tape.constant(f.clone()))
            .collect();
        let unroll = unroll_clip(&mut tape, &frames, &init, &vars.layers, &model.stack, td_rate, gate_rng)?;
        let outs = unroll.outputs();
        task_losses.push(clip_task_loss(&mut tape, model, &vars, &outs, clip, &seq.target, target_scale)?);
        memories.push(unroll.steps.iter().map(|s| s.memories()).collect());
        outputs.push(outs);
    }
    let registry = build_overlap_registry(clips);
    let coherence = coherence_loss(&mut tape, &registry, clips, &outputs)?;
    Ok(SequenceForward {
        tape,
        vars,
        task_losses,
        coherence,
        has_overlap: !registry.is_empty(),
        memories,
    })
}

fn run_sequence<T: Scalar>(
    model: &CbmModel<T>,
    store: &StateStore<T>,
    seq: &Sequence<T>,
    job: &SequenceJob,
    td_rate: f64,
    cfg: &TrainConfig,
) -> Result<SequenceResult<T>, SchemeError> {
    let mut gate_rng = ChaCha8Rng::seed_from_u64(job.gate_seed);
    let mut fwd = forward_sequence_clips(model, store, seq, &job.clips, td_rate, &mut gate_rng, cfg.target_scale)?;
    let tape = &mut fwd.tape;

    let mut task_loss = 0.0;
    for (clip, &l) in job.clips.iter().zip(&fwd.task_losses) {
        let v = tape.value(l).item().map_or(f64::NAN, |x| x.as_f64());
        if !v.is_finite() {
            return Err(SchemeError::NonFiniteLoss { clip: *clip, value: v });
        }
        task_loss += v;
    }
    let coherence = tape.value(fwd.coherence).item().map_or(f64::NAN, |x| x.as_f64());
    if !coherence.is_finite() {
        return Err(SchemeError::NonFiniteLoss {
            clip: job.clips[0],
            value: coherence,
        });
    }
    let objective = total_objective(tape, &fwd.task_losses, fwd.coherence, cfg.coherence.lambda)?;
    tape.backward(objective)?;
    let grads = model.gradients(tape, &fwd.vars);

    let mut writes = Vec::new();
    for (clip, steps) in job.clips.iter().zip(&fwd.memories) {
        for (j, mems) in steps.iter().enumerate() {
            for (layer, &m) in mems.iter().enumerate() {
                writes.push((layer, clip.start + j, tape.value(m).clone()));
            }
        }
    }
    Ok(SequenceResult {
        grads,
        task_loss,
        coherence: fwd.has_overlap.then_some(coherence),
        peak_unroll: tape.max_span(),
        writes,
    })
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: CbmModel<T>, config: TrainConfig) -> Self {
        let adam = AdamState::new(model.tensors(), AdamConfig::default());
        Self {
            model,
            adam,
            store: StateStore::new(),
            config,
        }
    }

    /// One pass over `data` in shuffled order.
    ///
    /// Each wave takes `batch_size` sequences, samples their clips and runs
    /// all of them on the current parameters, reading initial states from the
    /// store as it stood when the wave began. Per-sequence objectives are
    /// averaged into one gradient and one Adam step. The clips' memories are
    /// then written back, sequence by sequence and clip by clip in start
    /// order, so a timestamp covered twice keeps the later clip's value.
    ///
    /// `rng` drives shuffling and clip sampling, `gate_rng` the temporal
    /// dropout gates. The result depends only on their states, not on how
    /// many threads run the wave.
    pub fn train_epoch(
        &mut self,
        data: &[Sequence<T>],
        td_rate: f64,
        lr: f64,
        rng: &mut impl Rng,
        gate_rng: &mut impl Rng,
    ) -> Result<EpochMetrics, SchemeError> {
        self.config.coherence.validate()?;
        if data.is_empty() {
            return Err(SchemeError::EmptyDataset);
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(rng);

        let mut m = EpochMetrics::default();
        let (mut coh_sum, mut coh_count) = (0.0, 0usize);
        for batch in order.chunks(self.config.batch_size.max(1)) {
            let mut jobs = Vec::with_capacity(batch.len());
            for &index in batch {
                let clips = sample_clips(index, data[index].len(), &self.config.coherence, rng)?;
                jobs.push(SequenceJob {
                    index,
                    clips,
                    gate_seed: gate_rng.gen(),
                });
            }
            let (model, store, cfg) = (&self.model, &self.store, &self.config);
            let results: Vec<Result<SequenceResult<T>, SchemeError>> = jobs
                .par_iter()
                .map(|job| run_sequence(model, store, &data[job.index], job, td_rate, cfg))
                .collect();

            let n = results.len();
            let mut grads: Option<Vec<Tensor<T>>> = None;
            let mut wave_coherence = 0.0;
            let mut commits = Vec::with_capacity(n);
            for (job, r) in jobs.iter().zip(results) {
                let r = r?;
                m.task_loss += r.task_loss;
                m.clips += job.clips.len();
                m.peak_unroll = m.peak_unroll.max(r.peak_unroll);
                m.longest_clip = m.longest_clip.max(job.clips.iter().map(|c| c.len).max().unwrap_or(0));
                if let Some(c) = r.coherence {
                    coh_sum += c;
                    coh_count += 1;
                    wave_coherence += c;
                }
                match grads.as_mut() {
                    None => grads = Some(r.grads),
                    Some(acc) => acc.iter_mut().zip(&r.grads).for_each(|(a, g)| a.add_assign(g)),
                }
                commits.push((job.index, r.writes));
            }
            let mut grads = grads.expect("non-empty batch");
            let inv = T::of(1.0 / n as f64);
            grads.iter_mut().for_each(|g| g.scale_inplace(inv));
            m.grad_norm += grads.iter().map(|g| g.sq_norm().as_f64()).sum::<f64>().sqrt();
            m.coherence_loss += self.config.coherence.lambda * wave_coherence / n as f64;

            let mut params = self.model.tensors_mut();
            adam_step(&mut params, &grads, &mut self.adam, lr, self.config.weight_decay)?;
            for (index, writes) in commits {
                for (layer, t, s) in writes {
                    self.store.insert(index, layer, t, s);
                }
            }
            m.waves += 1;
        }
        m.task_loss /= m.clips as f64;
        m.coherence_loss /= m.waves as f64;
        m.grad_norm /= m.waves as f64;
        m.overlap_discrepancy = if coh_count > 0 { coh_sum / coh_count as f64 } else { 0.0 };
        Ok(m)
    }
}

/// Boundary sensitivity of a trained model: run the clip scheme over `data`
/// twice without updating anything, the first pass only to fill a fresh
/// store, and return the mean coherence term of the second pass.
pub fn measure_overlap_discrepancy<T: Scalar>(
    model: &CbmModel<T>,
    data: &[Sequence<T>],
    cfg: &CoherenceConfig,
    rng: &mut impl Rng,
) -> Result<f64, SchemeError> {
    let mut store = StateStore::new();
    let (mut sum, mut count) = (0.0, 0usize);
    for pass in 0..2 {
        for (index, seq) in data.iter().enumerate() {
            let clips = sample_clips(index, seq.len(), cfg, rng)?;
            let mut gate_rng = ChaCha8Rng::seed_from_u64(0);
            let fwd = forward_sequence_clips(model, &store, seq, &clips, 0.0, &mut gate_rng, 1.0)?;
            if pass == 1 && fwd.has_overlap {
                sum += fwd.tape.value(fwd.coherence).item().map_or(f64::NAN, |x| x.as_f64());
                count += 1;
            }
            for (clip, steps) in clips.iter().zip(&fwd.memories) {
                for (j, mems) in steps.iter().enumerate() {
                    for (layer, &mv) in mems.iter().enumerate() {
                        store.insert(index, layer, clip.start + j, fwd.tape.value(mv).clone());
                    }
                }
            }
        }
    }
    Ok(if count > 0 { sum / count as f64 } else { 0.0 })
}

use super::TaskError;
use crate::model::CbmModel;
use crate::scalar::Scalar;
use crate::scheme::{Sequence, Target};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TaskMetrics {
    /// Fraction of sequences whose last-frame prediction is the right class.
    pub accuracy: Option<f64>,
    /// Fraction of frames whose rounded prediction equals the label.
    pub exact_match: Option<f64>,
    /// Mean absolute error over frames at or after the cat.
    pub mae: Option<f64>,
}

pub fn classification_metrics(predicted: &[usize], labels: &[usize]) -> TaskMetrics {
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    TaskMetrics {
        accuracy: Some(if labels.is_empty() { 0.0 } else { hits as f64 / labels.len() as f64 }),
        ..Default::default()
    }
}

/// `predicted[s][t]` are raw regression outputs already in label units.
pub fn distance_metrics(predicted: &[Vec<f64>], labels: &[Vec<i64>]) -> TaskMetrics {
    let (mut frames, mut exact, mut post, mut abs) = (0usize, 0usize, 0usize, 0.0);
    for (p, l) in predicted.iter().zip(labels) {
        for (&pv, &lv) in p.iter().zip(l) {
            frames += 1;
            if pv.round() == lv as f64 {
                exact += 1;
            }
            if lv >= 0 {
                post += 1;
                abs += (pv - lv as f64).abs();
            }
        }
    }
    TaskMetrics {
        exact_match: Some(if frames == 0 { 0.0 } else { exact as f64 / frames as f64 }),
        mae: Some(if post == 0 { 0.0 } else { abs / post as f64 }),
        ..Default::default()
    }
}

fn argmax<T: Scalar>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Whole-sequence inference from a zero state; the class is read at the last
/// frame.
pub fn evaluate_classification<T: Scalar>(model: &CbmModel<T>, data: &[Sequence<T>]) -> Result<TaskMetrics, TaskError> {
    let mut predicted = Vec::with_capacity(data.len());
    let mut labels = Vec::with_capacity(data.len());
    for (i, seq) in data.iter().enumerate() {
        let Target::Class(label) = seq.target else {
            return Err(TaskError::WrongTarget(i));
        };
        let trace = model.forward_sequence(&seq.frames, &model.zero_state())?;
        let last = trace.head_outputs.last().ok_or(TaskError::EmptySequence(i))?;
        predicted.push(argmax(last.data()));
        labels.push(label);
    }
    Ok(classification_metrics(&predicted, &labels))
}

/// Whole-sequence inference; outputs are multiplied back by `target_scale`
/// before rounding.
pub fn evaluate_distance<T: Scalar>(model: &CbmModel<T>, data: &[Sequence<T>], target_scale: f64) -> Result<TaskMetrics, TaskError> {
    let mut predicted = Vec::with_capacity(data.len());
    let mut labels = Vec::with_capacity(data.len());
    for (i, seq) in data.iter().enumerate() {
        let Target::PerFrame(l) = &seq.target else {
            return Err(TaskError::WrongTarget(i));
        };
        let trace = model.forward_sequence(&seq.frames, &model.zero_state())?;
        predicted.push(
            trace
                .head_outputs
                .iter()
                .map(|o| o.data()[0].as_f64() * target_scale)
                .collect(),
        );
        labels.push(l.clone());
    }
    Ok(distance_metrics(&predicted, &labels))
}

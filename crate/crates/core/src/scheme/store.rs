use std::collections::BTreeMap;

use super::clips::Clip;
use crate::cbm::{CbmState, StackConfig};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Latest memory value per `(sequence, layer, timestamp)`.
///
/// Holds plain tensors, so nothing read from here can carry a gradient back
/// to the clip that wrote it. Later writes replace earlier ones.
#[derive(Debug, Clone, PartialEq)]
pub struct StateStore<T> {
    states: BTreeMap<(usize, usize, usize), Tensor<T>>,
}

impl<T> Default for StateStore<T> {
    fn default() -> Self {
        Self {
            states: BTreeMap::new(),
        }
    }
}

impl<T: Scalar> StateStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, sequence: usize, layer: usize, t: usize) -> Option<&Tensor<T>> {
        self.states.get(&(sequence, layer, t))
    }

    pub fn insert(&mut self, sequence: usize, layer: usize, t: usize, state: Tensor<T>) {
        self.states.insert((sequence, layer, t), state);
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn clear(&mut self) {
        self.states.clear();
    }

    /// Entries in key order.
    pub fn iter(&self) -> impl Iterator<Item = (&(usize, usize, usize), &Tensor<T>)> {
        self.states.iter()
    }
}

/// Starting memory for `clip`: the stored state just before its first frame
/// for every layer that has one, zeros elsewhere.
pub fn init_clip_state<T: Scalar>(clip: &Clip, store: &StateStore<T>, stack: &StackConfig, height: usize, width: usize) -> CbmState<T> {
    let mut state = CbmState::zeros(stack, height, width);
    if let Some(prev) = clip.start.checked_sub(1) {
        for (layer, slot) in state.layers.iter_mut().enumerate() {
            if let Some(s) = store.get(clip.sequence_id, layer, prev) {
                *slot = s.clone();
            }
        }
    }
    state
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(start: usize) -> Clip {
        Clip {
            sequence_id: 2,
            start,
            len: 4,
        }
    }

    #[test]
    fn first_clip_starts_from_zeros() {
        let stack = StackConfig::uniform(1, 2, 2);
        let store = StateStore::<f64>::new();
        let s = init_clip_state(&clip(0), &store, &stack, 3, 3);
        assert!(s.layers.iter().all(|l| l.data().iter().all(|&v| v == 0.0)));
        assert!(store.get(2, 0, 7).is_none());
    }

    #[test]
    fn picks_up_latest_state_before_start() {
        let stack = StackConfig::uniform(1, 1, 2);
        let mut store = StateStore::<f64>::new();
        store.insert(2, 0, 7, Tensor::full(vec![1, 2, 2], 1.0));
        store.insert(2, 0, 7, Tensor::full(vec![1, 2, 2], 2.0));
        store.insert(2, 1, 7, Tensor::full(vec![1, 2, 2], 3.0));
        let s = init_clip_state(&clip(8), &store, &stack, 2, 2);
        assert_eq!(s.layers[0], Tensor::full(vec![1, 2, 2], 2.0));
        assert_eq!(s.layers[1], Tensor::full(vec![1, 2, 2], 3.0));
        // another sequence sees nothing
        let other = Clip { sequence_id: 3, ..clip(8) };
        assert_eq!(init_clip_state(&other, &store, &stack, 2, 2), CbmState::zeros(&stack, 2, 2));
    }
}

use std::collections::BTreeMap;

use super::CbmError;

/// Expected number of backward paths from the top-layer output at the last
/// step, grouped by path length, when each cross-layer temporal edge is
/// blocked independently with probability `td_rate`.
///
/// The unrolled graph has an output node `o(i,t)` for layers `0..=L` (layer
/// 0 is the frame) and a memory node `c(i,t)` for layers `1..=L`. Backward
/// edges:
///
/// * `o(i,t) → o(i-1,t)` through `R`, never gated, length 1;
/// * `o(i,t) → c(i,t)` through the merge, length 0 (same cell);
/// * `c(i,t) → c(i,t-1)` along the layer's own memory, length 1;
/// * `c(i,t) → o(i-1,t)` into `T` from below, gated, length 1.
///
/// Every node outside the source cell is a path end. A path's expected
/// contribution is `(1 - td_rate)^k` for its `k` gated edges; gates are
/// distinct per (layer, step) and no path crosses the same one twice.
pub fn expected_backprop_paths(
    num_layers: usize,
    num_steps: usize,
    td_rate: f64,
) -> Result<BTreeMap<usize, f64>, CbmError> {
    if !(0.0..=1.0).contains(&td_rate) {
        return Err(CbmError::InvalidRate(td_rate));
    }
    let mut totals = BTreeMap::new();
    if num_layers == 0 || num_steps == 0 {
        return Ok(totals);
    }
    let keep = 1.0 - td_rate;
    let max_len = num_layers + num_steps;
    // weights[node][len]; o-nodes for layers 0..=L, c-nodes for layers 1..=L
    let o_idx = |i: usize, t: usize| t * (num_layers + 1) + i;
    let c_idx = |i: usize, t: usize| t * num_layers + (i - 1);
    let mut o = vec![vec![0.0f64; max_len + 1]; (num_layers + 1) * num_steps];
    let mut c = vec![vec![0.0f64; max_len + 1]; num_layers * num_steps];
    o[o_idx(num_layers, num_steps - 1)][0] = 1.0;

    let add = |dst: &mut Vec<f64>, src: &[f64], shift: usize, w: f64| {
        for (len, &v) in src.iter().enumerate() {
            if v != 0.0 && len + shift < dst.len() {
                dst[len + shift] += v * w;
            }
        }
    };

    // later steps first; within a step, upper layers first; o before c
    for t in (0..num_steps).rev() {
        for i in (0..=num_layers).rev() {
            let from_o = o[o_idx(i, t)].clone();
            if i == 0 {
                continue;
            }
            add(&mut o[o_idx(i - 1, t)], &from_o, 1, 1.0);
            add(&mut c[c_idx(i, t)], &from_o, 0, 1.0);
            let from_c = c[c_idx(i, t)].clone();
            if t > 0 {
                add(&mut c[c_idx(i, t - 1)], &from_c, 1, 1.0);
            }
            add(&mut o[o_idx(i - 1, t)], &from_c, 1, keep);
        }
    }

    let source_cell = |i: usize, t: usize| i == num_layers && t == num_steps - 1;
    for t in 0..num_steps {
        for i in 0..=num_layers {
            if source_cell(i, t) {
                continue;
            }
            let mut ends = vec![&o[o_idx(i, t)]];
            if i > 0 {
                ends.push(&c[c_idx(i, t)]);
            }
            for weights in ends {
                for (len, &w) in weights.iter().enumerate() {
                    if w != 0.0 {
                        *totals.entry(len).or_insert(0.0) += w;
                    }
                }
            }
        }
    }
    Ok(totals)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cell() {
        // o(1,0) → o(0,0) via R, and via c(1,0) → o(0,0) gated; c(1,0) itself
        // is in the source cell
        let p = expected_backprop_paths(1, 1, 0.0).unwrap();
        assert_eq!(p, BTreeMap::from([(1, 2.0)]));
        let p = expected_backprop_paths(1, 1, 1.0).unwrap();
        assert_eq!(p, BTreeMap::from([(1, 1.0)]));
        let p = expected_backprop_paths(1, 1, 0.25).unwrap();
        assert_eq!(p, BTreeMap::from([(1, 1.75)]));
    }

    #[test]
    fn one_layer_two_steps_by_hand() {
        // from c(1,1): c(1,0) [len1], o(0,1) gated [len1]
        // from o(1,1): o(0,1) via R [len1]
        // from c(1,0): o(0,0) gated [len2]
        let p = expected_backprop_paths(1, 2, 0.5).unwrap();
        assert_eq!(p[&1], 1.0 + 0.5 + 1.0);
        assert_eq!(p[&2], 0.5);
    }

    #[test]
    fn full_blocking_leaves_representation_and_own_layer_paths() {
        let (layers, steps) = (3, 4);
        let p = expected_backprop_paths(layers, steps, 1.0).unwrap();
        // each lower layer j < L is reached by R once, plus its memory chain
        // of length `steps - 1` at each depth (and the source layer's chain)
        let mut expected = BTreeMap::new();
        for depth in 1..=layers {
            *expected.entry(depth).or_insert(0.0) += 1.0; // o(L - depth, last)
        }
        for depth in 0..layers {
            if depth > 0 {
                *expected.entry(depth).or_insert(0.0) += 1.0; // c at last step
            }
            for back in 1..steps {
                *expected.entry(depth + back).or_insert(0.0) += 1.0;
            }
        }
        assert_eq!(p, expected);
    }

    #[test]
    fn rate_must_be_probability() {
        assert!(expected_backprop_paths(2, 2, -0.1).is_err());
    }
}

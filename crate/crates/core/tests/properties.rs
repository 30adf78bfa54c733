use std::collections::BTreeSet;

use cbm_core::autodiff::{Gate, Tape};
use cbm_core::optim::{adam_step, AdamConfig, AdamState};
use cbm_core::scheme::{build_overlap_registry, sample_clips, Clip, CoherenceConfig};
use cbm_core::tasks::{catdog_labels, gen_moving_shapes, Direction, MovingShapeSample, MovingShapesConfig};
use cbm_core::Tensor64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn coherence_config() -> impl Strategy<Value = CoherenceConfig> {
    (2usize..=8, 0usize..=6, 0.0f64..0.6).prop_map(|(min, extra, rate)| CoherenceConfig {
        clip_len_min: min,
        clip_len_max: min + extra,
        overlap_rate: rate,
        ..Default::default()
    })
}

proptest! {
    #[test]
    fn clips_tile_the_sequence(len in 1usize..300, cfg in coherence_config(), seed in any::<u64>()) {
        let clips = sample_clips(3, len, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(clips[0].start, 0);
        prop_assert_eq!(clips.last().unwrap().end(), len);
        for c in &clips {
            prop_assert_eq!(c.sequence_id, 3);
            prop_assert!(c.len >= 1 && c.len <= cfg.clip_len_max);
            prop_assert!(c.end() <= len);
        }
        for w in clips.windows(2) {
            prop_assert!(w[1].start > w[0].start);
            // no gap between neighbours
            prop_assert!(w[1].start <= w[0].end());
        }
        for t in 0..len {
            prop_assert!(clips.iter().any(|c| c.contains(t)));
        }
    }

    #[test]
    fn registry_matches_brute_force(
        raw in prop::collection::vec((0usize..3, 0usize..40, 1usize..12), 0..12)
    ) {
        let clips: Vec<Clip> = raw.iter().map(|&(s, start, len)| Clip { sequence_id: s, start, len }).collect();
        let registry = build_overlap_registry(&clips);
        let mut expected = BTreeSet::new();
        for a in 0..clips.len() {
            for b in a + 1..clips.len() {
                if clips[a].sequence_id != clips[b].sequence_id {
                    continue;
                }
                for t in 0..60 {
                    if clips[a].contains(t) && clips[b].contains(t) {
                        expected.insert((a, b, t));
                    }
                }
            }
        }
        let got: BTreeSet<_> = registry.pairs.iter().map(|p| (p.a, p.b, p.t)).collect();
        prop_assert_eq!(got.len(), registry.len());
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn gates_never_change_the_forward_value(data in prop::collection::vec(-1e3f64..1e3, 1..40), block in any::<bool>()) {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor64::new(vec![data.len()], data.clone()).unwrap());
        let gate = if block { Gate::Block } else { Gate::Pass };
        let y = tape.gated_edge(x, gate);
        prop_assert_eq!(tape.value(y).data(), &data[..]);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        let g = tape.grad(x).map(|g| g.data().to_vec()).unwrap_or_else(|| vec![0.0; data.len()]);
        let want = if block { 0.0 } else { 1.0 };
        prop_assert!(g.iter().all(|&v| v == want));
    }

    #[test]
    fn first_adam_step_moves_by_lr_times_sign(
        grads in prop::collection::vec(prop_oneof![-10.0f64..-1e-3, 1e-3f64..10.0], 1..20),
        lr in 1e-4f64..1e-1,
    ) {
        let mut p = Tensor64::zeros(vec![grads.len()]);
        let g = Tensor64::new(vec![grads.len()], grads.clone()).unwrap();
        let mut state = AdamState::new([&p], AdamConfig::default());
        adam_step(&mut [&mut p], &[g], &mut state, lr, 0.0).unwrap();
        for (&pk, &gk) in p.data().iter().zip(&grads) {
            // m̂ = g and v̂ = g², so the step is lr · g / (|g| + eps)
            let want = -lr * gk / (gk.abs() + 1e-8);
            prop_assert!((pk - want).abs() <= 1e-12 * lr.max(1.0));
        }
    }

    #[test]
    fn catdog_labels_count_frames_since_cat(seq_len in 1usize..120, pos_frac in 0.0f64..1.0) {
        let pos = ((seq_len - 1) as f64 * pos_frac) as usize;
        let labels = catdog_labels(pos, seq_len);
        prop_assert_eq!(labels.len(), seq_len);
        for (t, &l) in labels.iter().enumerate() {
            let want = if t < pos { -1 } else { (t - pos) as i64 };
            prop_assert_eq!(l, want);
        }
    }

    #[test]
    fn noiseless_shapes_shift_circularly(seed in any::<u64>(), speed in 1usize..4, size in 5usize..20) {
        let cfg = MovingShapesConfig { seq_len: 6, image_size: size, speed, noise: 0.0 };
        let samples: Vec<MovingShapeSample<f64>> = gen_moving_shapes(4, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for s in &samples {
            let shift = match s.direction {
                Direction::Right => speed % size,
                Direction::Left => size - speed % size,
            };
            for w in s.frames.windows(2) {
                let (a, b) = (w[0].data(), w[1].data());
                for y in 0..size {
                    for x in 0..size {
                        prop_assert_eq!(b[y * size + (x + shift) % size], a[y * size + x]);
                    }
                }
            }
        }
    }
}

#[test]
fn shape_column_centroid_tracks_direction() {
    let cfg = MovingShapesConfig {
        seq_len: 4,
        image_size: 24,
        speed: 1,
        noise: 0.0,
    };
    let samples: Vec<MovingShapeSample<f64>> = gen_moving_shapes(40, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    for s in samples {
        // circular mean of occupied columns, on the unit circle
        let centroid = |f: &Tensor64| {
            let (mut cx, mut sx) = (0.0, 0.0);
            for (i, &v) in f.data().iter().enumerate() {
                let a = (i % 24) as f64 / 24.0 * std::f64::consts::TAU;
                cx += v * a.cos();
                sx += v * a.sin();
            }
            sx.atan2(cx)
        };
        let a0 = centroid(&s.frames[0]);
        let a1 = centroid(&s.frames[1]);
        let mut d = a1 - a0;
        if d > std::f64::consts::PI {
            d -= std::f64::consts::TAU;
        } else if d < -std::f64::consts::PI {
            d += std::f64::consts::TAU;
        }
        let step = std::f64::consts::TAU / 24.0;
        let want = match s.direction {
            Direction::Right => step,
            Direction::Left => -step,
        };
        assert!((d - want).abs() < 1e-9, "{:?}: moved {d}, expected {want}", s.direction);
    }
}

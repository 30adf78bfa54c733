use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TaskError;
use crate::scalar::Scalar;
use crate::scheme::{Sequence, Target};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct CatDogSequence<T> {
    /// `[1, H, W]` per frame.
    pub frames: Vec<Tensor<T>>,
    pub cat_position: usize,
    pub labels: Vec<i64>,
}

impl<T> CatDogSequence<T> {
    pub fn into_sequence(self) -> Sequence<T> {
        Sequence {
            frames: self.frames,
            target: Target::PerFrame(self.labels),
        }
    }
}

/// `−1` before the cat, then the distance to it (0 on the cat frame).
pub fn catdog_labels(cat_position: usize, seq_len: usize) -> Vec<i64> {
    (0..seq_len)
        .map(|t| if t < cat_position { -1 } else { (t - cat_position) as i64 })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CatDogConfig {
    pub seq_len: usize,
    /// Largest cat-to-frame distance that occurs.
    pub max_gap: usize,
    pub height: usize,
    pub width: usize,
    /// Amplitude of uniform per-pixel jitter.
    pub noise: f64,
}

impl Default for CatDogConfig {
    fn default() -> Self {
        Self {
            seq_len: 60,
            max_gap: 50,
            height: 8,
            width: 8,
            noise: 0.1,
        }
    }
}

/// The two binary rasters `(cat, dog)` for a frame size. Fixed for a given
/// size and differing in at least a quarter of their pixels.
pub fn glyphs(height: usize, width: usize) -> (Vec<f64>, Vec<f64>) {
    let n = height * width;
    let mut rng = ChaCha8Rng::seed_from_u64(0xCA7D06);
    loop {
        let mut draw = || (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
        let (cat, dog) = (draw(), draw());
        let differing = cat.iter().zip(&dog).filter(|(a, b)| a != b).count();
        if 4 * differing >= n && n > 0 {
            return (cat, dog);
        }
    }
}

/// `n` sequences with one cat frame each. The cat position is uniform over
/// `[seq_len − 1 − max_gap, seq_len − 1]`, so the last frame's distance is
/// uniform over `0..=max_gap`.
pub fn gen_catdog<T: Scalar>(n: usize, cfg: &CatDogConfig, rng: &mut impl Rng) -> Result<Vec<CatDogSequence<T>>, TaskError> {
    if cfg.seq_len < 2 {
        return Err(TaskError::InvalidConfig("cat & dog sequences need at least two frames".into()));
    }
    if cfg.max_gap >= cfg.seq_len {
        return Err(TaskError::InvalidConfig(format!(
            "max gap {} must be below the sequence length {}",
            cfg.max_gap, cfg.seq_len
        )));
    }
    if cfg.height == 0 || cfg.width == 0 {
        return Err(TaskError::InvalidConfig("empty frame".into()));
    }
    let (cat, dog) = glyphs(cfg.height, cfg.width);
    let lo = cfg.seq_len - 1 - cfg.max_gap;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let cat_position = rng.gen_range(lo..cfg.seq_len);
        let frames = (0..cfg.seq_len)
            .map(|t| {
                let glyph = if t == cat_position { &cat } else { &dog };
                let data: Vec<f64> = glyph
                    .iter()
                    .map(|&v| if cfg.noise > 0.0 { v + rng.gen_range(-cfg.noise..=cfg.noise) } else { v })
                    .collect();
                Tensor::from_f64(vec![1, cfg.height, cfg.width], &data).expect("frame size")
            })
            .collect();
        out.push(CatDogSequence {
            frames,
            cat_position,
            labels: catdog_labels(cat_position, cfg.seq_len),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_by_hand() {
        assert_eq!(catdog_labels(3, 8), vec![-1, -1, -1, 0, 1, 2, 3, 4]);
        assert_eq!(catdog_labels(0, 4), vec![0, 1, 2, 3]);
    }

    #[test]
    fn one_cat_per_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = CatDogConfig { noise: 0.0, ..Default::default() };
        let (cat, _) = glyphs(8, 8);
        let data: Vec<CatDogSequence<f64>> = gen_catdog(50, &cfg, &mut rng).unwrap();
        for s in &data {
            let cats: Vec<usize> = (0..s.frames.len()).filter(|&t| s.frames[t].data() == cat.as_slice()).collect();
            assert_eq!(cats, vec![s.cat_position]);
            assert!(s.cat_position >= 9);
        }
    }

    #[test]
    fn rejects_bad_lengths() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let short = CatDogConfig { seq_len: 1, max_gap: 0, ..Default::default() };
        assert!(gen_catdog::<f64>(1, &short, &mut rng).is_err());
        let gap = CatDogConfig { seq_len: 10, max_gap: 10, ..Default::default() };
        assert!(gen_catdog::<f64>(1, &gap, &mut rng).is_err());
    }
}

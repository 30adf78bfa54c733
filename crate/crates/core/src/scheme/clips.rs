use rand::Rng;

use super::SchemeError;

/// A contiguous window `[start, start + len)` of one sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Clip {
    pub sequence_id: usize,
    pub start: usize,
    pub len: usize,
}

impl Clip {
    pub fn end(&self) -> usize {
        self.start + self.len
    }

    pub fn contains(&self, t: usize) -> bool {
        self.start <= t && t < self.end()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoherenceConfig {
    /// Weight of the coherence term.
    pub lambda: f64,
    /// Target fraction of a clip shared with its successor.
    pub overlap_rate: f64,
    pub clip_len_min: usize,
    pub clip_len_max: usize,
}

impl Default for CoherenceConfig {
    fn default() -> Self {
        Self {
            lambda: 0.8,
            overlap_rate: 0.25,
            clip_len_min: 6,
            clip_len_max: 10,
        }
    }
}

impl CoherenceConfig {
    pub fn validate(&self) -> Result<(), SchemeError> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(SchemeError::InvalidConfig(format!("lambda {} must be finite and non-negative", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.overlap_rate) {
            return Err(SchemeError::InvalidConfig(format!("overlap rate {} outside [0, 1)", self.overlap_rate)));
        }
        if self.clip_len_min < 2 || self.clip_len_max < self.clip_len_min {
            return Err(SchemeError::InvalidConfig(format!(
                "clip lengths [{}, {}] need 2 <= min <= max",
                self.clip_len_min, self.clip_len_max
            )));
        }
        Ok(())
    }
}

/// Cover `[0, seq_len)` left to right with clips of random length.
///
/// Lengths are uniform in `[clip_len_min, clip_len_max]`. Each clip after the
/// first overlaps its predecessor by `round(overlap_rate · len)` frames, moved
/// by a jitter of −1, 0 or +1 and kept within `[1, len − 1]`; with
/// `overlap_rate == 0` the clips partition the sequence. A clip is shortened
/// when needed so that at least two frames remain for the next one, which
/// means the last clip can fall below `clip_len_min`. Sequences no longer
/// than `clip_len_min` come back as a single clip.
pub fn sample_clips(
    sequence_id: usize,
    seq_len: usize,
    cfg: &CoherenceConfig,
    rng: &mut impl Rng,
) -> Result<Vec<Clip>, SchemeError> {
    cfg.validate()?;
    if seq_len == 0 {
        return Err(SchemeError::EmptySequence(sequence_id));
    }
    let whole = |len| Clip {
        sequence_id,
        start: 0,
        len,
    };
    if seq_len <= cfg.clip_len_min {
        return Ok(vec![whole(seq_len)]);
    }
    let mut clips = Vec::new();
    let mut start = 0;
    loop {
        let remaining = seq_len - start;
        if remaining <= cfg.clip_len_max {
            clips.push(Clip {
                sequence_id,
                start,
                len: remaining,
            });
            return Ok(clips);
        }
        // remaining > clip_len_max >= 2, so a two-frame clip still leaves one
        let len = rng.gen_range(cfg.clip_len_min..=cfg.clip_len_max).min(remaining - 2).max(2);
        clips.push(Clip {
            sequence_id,
            start,
            len,
        });
        let overlap = if cfg.overlap_rate > 0.0 {
            let base = (cfg.overlap_rate * len as f64).round() as i64;
            (base + rng.gen_range(-1i64..=1)).clamp(1, len as i64 - 1) as usize
        } else {
            0
        };
        start += len - overlap;
    }
}

/// Fraction of each clip shared with its successor, one entry per adjacent
/// pair.
pub fn adjacent_overlap_fractions(clips: &[Clip]) -> Vec<f64> {
    clips
        .windows(2)
        .map(|w| w[0].end().saturating_sub(w[1].start) as f64 / w[0].len as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(min: usize, max: usize, rate: f64) -> CoherenceConfig {
        CoherenceConfig {
            lambda: 0.8,
            overlap_rate: rate,
            clip_len_min: min,
            clip_len_max: max,
        }
    }

    #[test]
    fn clip_spanning_whole_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let clips = sample_clips(3, 8, &cfg(8, 8, 0.25), &mut rng).unwrap();
        assert_eq!(clips, vec![Clip { sequence_id: 3, start: 0, len: 8 }]);
        let short = sample_clips(0, 5, &cfg(8, 10, 0.25), &mut rng).unwrap();
        assert_eq!(short, vec![Clip { sequence_id: 0, start: 0, len: 5 }]);
    }

    #[test]
    fn zero_overlap_partitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for len in 9..80 {
            let clips = sample_clips(0, len, &cfg(4, 9, 0.0), &mut rng).unwrap();
            let mut t = 0;
            for c in &clips {
                assert_eq!(c.start, t);
                assert!(c.len >= 2);
                t = c.end();
            }
            assert_eq!(t, len);
        }
    }

    #[test]
    fn adjacent_clips_overlap() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let clips = sample_clips(0, 100, &cfg(8, 12, 0.25), &mut rng).unwrap();
        assert!(clips.len() > 5);
        assert!(adjacent_overlap_fractions(&clips).iter().all(|&f| f > 0.0));
        assert_eq!(clips.last().unwrap().end(), 100);
    }

    #[test]
    fn bad_config_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_clips(0, 20, &cfg(1, 4, 0.25), &mut rng).is_err());
        assert!(sample_clips(0, 20, &cfg(5, 4, 0.25), &mut rng).is_err());
        assert!(sample_clips(0, 20, &cfg(4, 6, 1.0), &mut rng).is_err());
    }
}

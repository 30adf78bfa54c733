use super::clips::Clip;

/// Two clips that both cover timestamp `t`; `a < b` index the clip list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OverlapPair {
    pub a: usize,
    pub b: usize,
    pub t: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OverlapRegistry {
    pub pairs: Vec<OverlapPair>,
}

impl OverlapRegistry {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Every timestamp shared by two clips of the same sequence, each unordered
/// pair once.
pub fn build_overlap_registry(clips: &[Clip]) -> OverlapRegistry {
    let mut pairs = Vec::new();
    for (a, ca) in clips.iter().enumerate() {
        for (b, cb) in clips.iter().enumerate().skip(a + 1) {
            if ca.sequence_id != cb.sequence_id {
                continue;
            }
            for t in ca.start.max(cb.start)..ca.end().min(cb.end()) {
                pairs.push(OverlapPair { a, b, t });
            }
        }
    }
    OverlapRegistry { pairs }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(start: usize, len: usize) -> Clip {
        Clip {
            sequence_id: 0,
            start,
            len,
        }
    }

    #[test]
    fn interval_intersection() {
        let r = build_overlap_registry(&[clip(0, 10), clip(8, 8)]);
        assert_eq!(r.pairs, vec![OverlapPair { a: 0, b: 1, t: 8 }, OverlapPair { a: 0, b: 1, t: 9 }]);
        assert!(build_overlap_registry(&[clip(0, 4), clip(4, 4)]).is_empty());
    }

    #[test]
    fn three_way_overlap_gives_three_pairs() {
        let r = build_overlap_registry(&[clip(0, 6), clip(5, 3), clip(5, 2)]);
        let at5: Vec<_> = r.pairs.iter().filter(|p| p.t == 5).collect();
        assert_eq!(at5.len(), 3);
    }

    #[test]
    fn other_sequences_never_pair() {
        let other = Clip {
            sequence_id: 1,
            start: 0,
            len: 10,
        };
        assert!(build_overlap_registry(&[clip(0, 10), other]).is_empty());
    }
}

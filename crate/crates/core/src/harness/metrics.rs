use crate::lattice::LabelSequence;

/// Levenshtein distance between two token sequences.
pub fn edit_distance(a: &[usize], b: &[usize]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance over `max(1, |ref|)`.
pub fn token_error_rate(hyp: &LabelSequence, reference: &LabelSequence) -> f64 {
    edit_distance(hyp.as_slice(), reference.as_slice()) as f64 / reference.len().max(1) as f64
}

/// Corpus-level rate: total edits over total reference tokens.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CorpusErrorRate {
    pub edits: usize,
    pub reference_tokens: usize,
}

impl CorpusErrorRate {
    pub fn add(&mut self, hyp: &LabelSequence, reference: &LabelSequence) {
        self.edits += edit_distance(hyp.as_slice(), reference.as_slice());
        self.reference_tokens += reference.len();
    }

    pub fn rate(&self) -> f64 {
        self.edits as f64 / self.reference_tokens.max(1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(v: &[usize]) -> LabelSequence {
        LabelSequence(v.to_vec())
    }

    #[test]
    fn examples() {
        assert_eq!(token_error_rate(&seq(&[0, 1, 2]), &seq(&[0, 1, 2])), 0.0);
        assert!((token_error_rate(&seq(&[0, 7, 2]), &seq(&[0, 1, 2])) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(token_error_rate(&seq(&[0, 1]), &seq(&[])), 2.0);
        assert_eq!(token_error_rate(&seq(&[]), &seq(&[])), 0.0);
        assert_eq!(edit_distance(&[1, 2, 3, 4], &[2, 3, 5]), 2);
    }

    #[test]
    fn corpus_rate() {
        let mut c = CorpusErrorRate::default();
        c.add(&seq(&[0, 1]), &seq(&[0, 1, 2]));
        c.add(&seq(&[3]), &seq(&[4]));
        assert_eq!(c.edits, 2);
        assert!((c.rate() - 0.5).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn distance_is_a_metric(a in prop::collection::vec(0usize..4, 0..8), b in prop::collection::vec(0usize..4, 0..8), c in prop::collection::vec(0usize..4, 0..8)) {
            let ab = edit_distance(&a, &b);
            prop_assert_eq!(ab, edit_distance(&b, &a));
            prop_assert_eq!(edit_distance(&a, &a), 0);
            prop_assert!(ab <= a.len().max(b.len()));
            prop_assert!(ab >= a.len().abs_diff(b.len()));
            prop_assert!(edit_distance(&a, &c) <= ab + edit_distance(&b, &c));
        }
    }
}

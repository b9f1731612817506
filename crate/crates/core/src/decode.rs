//! Greedy and prefix beam search decoding, plus an exhaustive oracle.
//!
//! Ties are broken toward the lowest symbol index (greedy) or the
//! lexicographically smallest prefix (beam search and oracle).

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::ctc::ctc_loss;
use crate::error::{Error, Result};
use crate::lattice::{collapse_unchecked, Alignment, DistributionLattice, LabelSequence, Vocabulary};
use crate::logspace::{log_add, LOG_ZERO};

/// Beam width used when none is given.
pub const DEFAULT_BEAM: usize = 4;

/// Largest frame count accepted by [`decode_oracle`].
pub const ORACLE_MAX_FRAMES: usize = 5;
/// Largest `|V|` accepted by [`decode_oracle`].
pub const ORACLE_MAX_TOKENS: usize = 2;

/// Per-frame argmax path and its collapse.
pub fn greedy_decode(z: &DistributionLattice, vocab: &Vocabulary) -> Result<(LabelSequence, Alignment)> {
    z.check_vocab(vocab)?;
    let path: Vec<usize> = (0..z.frames()).map(|t| z.argmax(t)).collect();
    Ok((collapse_unchecked(&path, vocab), Alignment(path)))
}

#[derive(Clone, Copy, Debug)]
struct PrefixScore {
    blank: f64,
    non_blank: f64,
}

impl PrefixScore {
    const ZERO: Self = Self { blank: LOG_ZERO, non_blank: LOG_ZERO };

    fn total(&self) -> f64 {
        log_add(self.blank, self.non_blank)
    }
}

fn by_score_then_prefix(a: &(Vec<usize>, f64), b: &(Vec<usize>, f64)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(&b.0))
}

/// CTC prefix beam search. Each prefix keeps separate log-probabilities for
/// paths ending in blank and in its last label; the beam is pruned to the
/// `beam` best prefixes by their combined probability after every frame.
pub fn prefix_beam_decode(z: &DistributionLattice, vocab: &Vocabulary, beam: usize) -> Result<LabelSequence> {
    Ok(prefix_beam_search(z, vocab, beam)?.0)
}

/// Like [`prefix_beam_decode`], also returning the prefix's log-probability.
pub fn prefix_beam_search(z: &DistributionLattice, vocab: &Vocabulary, beam: usize) -> Result<(LabelSequence, f64)> {
    z.check_vocab(vocab)?;
    if beam == 0 {
        return Err(Error::invalid("beam must be >= 1"));
    }
    let blank = vocab.blank();
    let mut hyps: Vec<(Vec<usize>, PrefixScore)> = vec![(Vec::new(), PrefixScore { blank: 0.0, non_blank: LOG_ZERO })];

    for t in 0..z.frames() {
        let mut next: BTreeMap<Vec<usize>, PrefixScore> = BTreeMap::new();
        for (prefix, score) in &hyps {
            let total = score.total();
            let e = next.entry(prefix.clone()).or_insert(PrefixScore::ZERO);
            e.blank = log_add(e.blank, total + z.log_prob(t, blank));

            let last = prefix.last().copied();
            for k in 0..z.width() {
                let Some(label) = vocab.label_of(k) else { continue };
                let lp = z.log_prob(t, k);
                if Some(label) == last {
                    // repeated symbol without a blank stays on the same prefix
                    let e = next.entry(prefix.clone()).or_insert(PrefixScore::ZERO);
                    e.non_blank = log_add(e.non_blank, score.non_blank + lp);
                    let mut ext = prefix.clone();
                    ext.push(label);
                    let e = next.entry(ext).or_insert(PrefixScore::ZERO);
                    e.non_blank = log_add(e.non_blank, score.blank + lp);
                } else {
                    let mut ext = prefix.clone();
                    ext.push(label);
                    let e = next.entry(ext).or_insert(PrefixScore::ZERO);
                    e.non_blank = log_add(e.non_blank, total + lp);
                }
            }
        }
        let mut ranked: Vec<(Vec<usize>, f64)> = next.iter().map(|(p, s)| (p.clone(), s.total())).collect();
        ranked.sort_by(by_score_then_prefix);
        ranked.truncate(beam);
        hyps = ranked.into_iter().map(|(p, _)| {
            let s = next[&p];
            (p, s)
        }).collect();
    }

    let mut finals: Vec<(Vec<usize>, f64)> = hyps.into_iter().map(|(p, s)| (p, s.total())).collect();
    finals.sort_by(by_score_then_prefix);
    let (best, score) = finals.swap_remove(0);
    Ok((LabelSequence(best), score))
}

/// Exact maximum-posterior label sequence, by scoring every sequence of length
/// up to `T` with the forward algorithm.
pub fn decode_oracle(z: &DistributionLattice, vocab: &Vocabulary) -> Result<LabelSequence> {
    z.check_vocab(vocab)?;
    if z.frames() > ORACLE_MAX_FRAMES || vocab.len() > ORACLE_MAX_TOKENS {
        return Err(Error::Capacity(format!(
            "decode oracle limited to T <= {ORACLE_MAX_FRAMES} and |V| <= {ORACLE_MAX_TOKENS}"
        )));
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    let n = vocab.len();
    for len in 0..=z.frames() {
        for code in 0..n.pow(len as u32) {
            let mut seq = vec![0usize; len];
            let mut c = code;
            for slot in seq.iter_mut().rev() {
                *slot = c % n;
                c /= n;
            }
            let Ok(out) = ctc_loss(z, &LabelSequence(seq.clone()), vocab) else { continue };
            let cand = (seq, -out.loss);
            if best.as_ref().is_none_or(|b| by_score_then_prefix(&cand, b) == Ordering::Less) {
                best = Some(cand);
            }
        }
    }
    Ok(LabelSequence(best.map(|b| b.0).unwrap_or_default()))
}

//! CTC negative log-likelihood via log-space forward-backward, its gradient
//! with respect to logits, and a brute-force enumeration oracle.

use crate::error::{Error, Result};
use crate::lattice::{
    check_enumeration_cap, collapse_unchecked, for_each_path, softmax_rows, DistributionLattice,
    LabelSequence, LogitLattice, Vocabulary,
};
use crate::logspace::{log_add, LOG_ZERO};
use crate::matrix::Matrix;

/// Target sequence with blanks interleaved: `ε y1 ε y2 ... ε`, as `V'` indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExtendedTargets {
    sequence: Vec<usize>,
}

impl ExtendedTargets {
    pub fn new(y: &LabelSequence, vocab: &Vocabulary) -> Result<Self> {
        y.check(vocab)?;
        let blank = vocab.blank();
        let mut sequence = Vec::with_capacity(2 * y.len() + 1);
        sequence.push(blank);
        for &l in y.as_slice() {
            sequence.push(vocab.extended_index(l));
            sequence.push(blank);
        }
        Ok(Self { sequence })
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.sequence
    }

    pub fn len(&self) -> usize {
        self.sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequence.is_empty()
    }

    /// Whether state `s` may be entered directly from `s - 2`.
    #[inline]
    fn can_skip(&self, s: usize) -> bool {
        s >= 2 && self.sequence[s] != self.sequence[s - 2]
    }
}

/// Log-domain forward and backward variables.
///
/// `alpha[t][s]` includes the emission at frame `t`; `beta[t][s]` covers
/// frames `t+1..T` only, so `alpha[t][s] + beta[t][s]` is the log mass of
/// paths through state `s` at frame `t`.
#[derive(Clone, Debug)]
pub struct ForwardBackwardTable {
    pub alpha: Matrix,
    pub beta: Matrix,
    pub log_likelihood: f64,
}

impl ForwardBackwardTable {
    /// Log-likelihood read off the final alpha column.
    pub fn log_likelihood_from_alpha(&self) -> f64 {
        let t = self.alpha.rows() - 1;
        let s = self.alpha.cols();
        let mut ll = self.alpha.get(t, s - 1);
        if s >= 2 {
            ll = log_add(ll, self.alpha.get(t, s - 2));
        }
        ll
    }

    /// Log-likelihood read off the first beta column, given the first frame's
    /// emissions.
    pub fn log_likelihood_from_beta(&self, dist: &DistributionLattice, ext: &ExtendedTargets) -> f64 {
        let mut ll = LOG_ZERO;
        for s in 0..ext.len().min(2) {
            ll = log_add(ll, dist.log_prob(0, ext.as_slice()[s]) + self.beta.get(0, s));
        }
        ll
    }
}

#[derive(Clone, Debug)]
pub struct CtcLoss {
    pub loss: f64,
    pub table: ForwardBackwardTable,
}

/// Scalar loss plus its gradient with respect to pre-softmax logits.
#[derive(Clone, Debug)]
pub struct LossBundle {
    pub loss: f64,
    pub grad: Matrix,
}

fn check_feasible(frames: usize, y: &LabelSequence) -> Result<()> {
    let need = y.min_frames();
    if frames < need {
        return Err(Error::Infeasible(format!(
            "{frames} frames cannot carry {} labels with {} adjacent repeats (need {need})",
            y.len(),
            y.adjacent_repeats()
        )));
    }
    Ok(())
}

#[allow(clippy::needless_range_loop)]
fn forward_backward(dist: &DistributionLattice, ext: &ExtendedTargets) -> ForwardBackwardTable {
    let frames = dist.frames();
    let states = ext.len();
    let seq = ext.as_slice();
    let mut alpha = Matrix::filled(frames, states, LOG_ZERO);
    let mut beta = Matrix::filled(frames, states, LOG_ZERO);

    alpha.set(0, 0, dist.log_prob(0, seq[0]));
    if states > 1 {
        alpha.set(0, 1, dist.log_prob(0, seq[1]));
    }
    for t in 1..frames {
        for s in 0..states {
            let mut a = alpha.get(t - 1, s);
            if s >= 1 {
                a = log_add(a, alpha.get(t - 1, s - 1));
            }
            if ext.can_skip(s) {
                a = log_add(a, alpha.get(t - 1, s - 2));
            }
            if a != LOG_ZERO {
                alpha.set(t, s, a + dist.log_prob(t, seq[s]));
            }
        }
    }

    beta.set(frames - 1, states - 1, 0.0);
    if states > 1 {
        beta.set(frames - 1, states - 2, 0.0);
    }
    for t in (0..frames - 1).rev() {
        for s in 0..states {
            let next = |s2: usize| beta.get(t + 1, s2) + dist.log_prob(t + 1, seq[s2]);
            let mut b = next(s);
            if s + 1 < states {
                b = log_add(b, next(s + 1));
            }
            if s + 2 < states && ext.can_skip(s + 2) {
                b = log_add(b, next(s + 2));
            }
            beta.set(t, s, b);
        }
    }

    let mut table = ForwardBackwardTable { alpha, beta, log_likelihood: LOG_ZERO };
    table.log_likelihood = table.log_likelihood_from_alpha();
    table
}

/// `-log Σ_{π ∈ B⁻¹(y)} Π_t z_{t,π_t}`, computed with the forward-backward
/// recursion in log space.
pub fn ctc_loss(dist: &DistributionLattice, y: &LabelSequence, vocab: &Vocabulary) -> Result<CtcLoss> {
    dist.check_vocab(vocab)?;
    let ext = ExtendedTargets::new(y, vocab)?;
    check_feasible(dist.frames(), y)?;
    let table = forward_backward(dist, &ext);
    if table.log_likelihood == LOG_ZERO {
        return Err(Error::Infeasible("all alignments have zero probability".into()));
    }
    Ok(CtcLoss { loss: -table.log_likelihood, table })
}

/// Same quantity as [`ctc_loss`], by summing over all `|V'|^T` paths.
pub fn ctc_loss_oracle(dist: &DistributionLattice, y: &LabelSequence, vocab: &Vocabulary) -> Result<f64> {
    dist.check_vocab(vocab)?;
    y.check(vocab)?;
    check_enumeration_cap(dist.frames(), dist.width())?;
    let mut total = 0.0;
    let mut hits = 0usize;
    for_each_path(dist.frames(), dist.width(), |p| {
        if collapse_unchecked(p, vocab) == *y {
            hits += 1;
            total += p.iter().enumerate().map(|(t, &k)| dist.prob(t, k)).product::<f64>();
        }
    });
    if hits == 0 {
        return Err(Error::Infeasible("no path collapses to the target".into()));
    }
    Ok(-total.ln())
}

/// Per-frame posterior occupancy of each `V'` symbol given `y`.
pub fn symbol_posteriors(dist: &DistributionLattice, ext: &ExtendedTargets, table: &ForwardBackwardTable) -> Matrix {
    let mut post = Matrix::zeros(dist.frames(), dist.width());
    let ll = table.log_likelihood;
    for t in 0..dist.frames() {
        for (s, &k) in ext.as_slice().iter().enumerate() {
            let lg = table.alpha.get(t, s) + table.beta.get(t, s);
            if lg != LOG_ZERO {
                post.add_at(t, k, (lg - ll).exp());
            }
        }
    }
    post
}

/// CTC loss and its gradient with respect to the logits:
/// `∂L/∂logit[t][k] = z[t][k] − P(π_t = k | y)`.
pub fn ctc_grad(logits: &LogitLattice, y: &LabelSequence, vocab: &Vocabulary) -> Result<LossBundle> {
    let dist = softmax_rows(logits);
    ctc_grad_from_dist(&dist, y, vocab)
}

pub(crate) fn ctc_grad_from_dist(
    dist: &DistributionLattice,
    y: &LabelSequence,
    vocab: &Vocabulary,
) -> Result<LossBundle> {
    let CtcLoss { loss, table } = ctc_loss(dist, y, vocab)?;
    let ext = ExtendedTargets::new(y, vocab)?;
    let post = symbol_posteriors(dist, &ext, &table);
    let mut grad = dist.probs().clone();
    grad.add_scaled(&post, -1.0);
    Ok(LossBundle { loss, grad })
}

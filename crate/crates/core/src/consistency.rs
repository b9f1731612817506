//! Consistency regularization between two CTC branches.
//!
//! The regularizer is a frame-level bidirectional KL divergence where each
//! direction treats the other branch's distribution as a fixed target:
//!
//! ```text
//! L_CR = 1/2 Σ_t [ KL(sg(z_b,t) ‖ z_a,t) + KL(sg(z_a,t) ‖ z_b,t) ]
//! L    = 1/2 (L_CTC(a) + L_CTC(b)) + α L_CR
//! ```
//!
//! The frame sum is not normalized by `T` unless `normalize_by_frames` is set,
//! so the weight of the regularizer grows with sequence length.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentedView;
use crate::ctc::ctc_grad_from_dist;
use crate::error::{Error, Result};
use crate::lattice::{softmax_rows, DistributionLattice, LabelSequence, LogitLattice, Vocabulary};
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    StopGradient,
    FlowGradient,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    BidirectionalKl,
    HardLabelCe,
}

/// Which frames of a branch contribute to that branch's regularization term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameFilter {
    All,
    /// Skip frames covered by this branch's own time masks.
    ExcludeSelfMasked,
    /// Keep only frames covered by this branch's own time masks.
    ExcludeSelfUnmasked,
}

impl FrameFilter {
    #[inline]
    pub fn keeps(self, self_masked: bool) -> bool {
        match self {
            FrameFilter::All => true,
            FrameFilter::ExcludeSelfMasked => !self_masked,
            FrameFilter::ExcludeSelfUnmasked => self_masked,
        }
    }
}

macro_rules! string_enum {
    ($ty:ty { $($variant:ident => $name:literal),* $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$variant => $name),* })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok(Self::$variant),)*
                    _ => Err(Error::invalid(format!(
                        concat!("unknown ", stringify!($ty), " {:?}"), s
                    ))),
                }
            }
        }
    };
}

string_enum!(TargetMode { StopGradient => "stop_gradient", FlowGradient => "flow_gradient" });
string_enum!(Distance { BidirectionalKl => "bidirectional_kl", HardLabelCe => "hard_label_ce" });
string_enum!(FrameFilter {
    All => "all",
    ExcludeSelfMasked => "exclude_self_masked",
    ExcludeSelfUnmasked => "exclude_self_unmasked",
});

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrConfig {
    pub alpha: f64,
    pub target_mode: TargetMode,
    pub distance: Distance,
    pub frame_filter: FrameFilter,
    pub normalize_by_frames: bool,
}

impl Default for CrConfig {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            target_mode: TargetMode::StopGradient,
            distance: Distance::BidirectionalKl,
            frame_filter: FrameFilter::All,
            normalize_by_frames: false,
        }
    }
}

impl CrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("cr.alpha must be finite and >= 0"));
        }
        Ok(())
    }
}

/// One frame's `KL(target ‖ pred)` with gradients for the pred logits and,
/// when the target is not detached, for the target logits.
#[derive(Clone, Debug, PartialEq)]
pub struct KlTerm {
    pub value: f64,
    pub grad_pred: Vec<f64>,
    pub grad_target: Option<Vec<f64>>,
}

/// `KL(p ‖ q) = Σ p (log p − log q)` on one frame. Zero-probability target
/// entries contribute nothing.
pub fn kl_term(
    target: &[f64],
    target_log: &[f64],
    pred: &[f64],
    pred_log: &[f64],
    mode: TargetMode,
) -> KlTerm {
    let mut value = 0.0;
    let mut mass = 0.0;
    for (&p, (&lp, &lq)) in target.iter().zip(target_log.iter().zip(pred_log)) {
        if p > 0.0 {
            value += p * (lp - lq);
            mass += p;
        }
    }
    let grad_pred = pred.iter().zip(target).map(|(&q, &p)| q * mass - p).collect();
    let grad_target = match mode {
        TargetMode::StopGradient => None,
        TargetMode::FlowGradient => Some(
            target
                .iter()
                .zip(target_log.iter().zip(pred_log))
                .map(|(&p, (&lp, &lq))| if p > 0.0 { p * (lp - lq - value) } else { 0.0 })
                .collect(),
        ),
    };
    KlTerm { value, grad_pred, grad_target }
}

/// Regularizer value (before `α`) with per-branch logit gradients.
#[derive(Clone, Debug)]
pub struct CrOutput {
    pub loss: f64,
    /// Summed frame terms where branch a is the prediction.
    pub term_a: f64,
    /// Summed frame terms where branch b is the prediction.
    pub term_b: f64,
    pub grad_a: Matrix,
    pub grad_b: Matrix,
}

fn check_pair(za: &DistributionLattice, zb: &DistributionLattice, ma: &[bool], mb: &[bool]) -> Result<()> {
    if za.frames() != zb.frames() || za.width() != zb.width() {
        return Err(Error::invalid(format!(
            "branch shapes differ: {}x{} vs {}x{}",
            za.frames(),
            za.width(),
            zb.frames(),
            zb.width()
        )));
    }
    if ma.len() != za.frames() || mb.len() != za.frames() {
        return Err(Error::invalid("mask length does not match frame count"));
    }
    Ok(())
}

/// Consistency loss between two branches, dispatching on `cfg.distance`.
pub fn cr_loss(
    za: &DistributionLattice,
    zb: &DistributionLattice,
    masks_a: &[bool],
    masks_b: &[bool],
    cfg: &CrConfig,
) -> Result<CrOutput> {
    match cfg.distance {
        Distance::BidirectionalKl => kl_cr(za, zb, masks_a, masks_b, cfg),
        Distance::HardLabelCe => hard_label_cr(za, zb, masks_a, masks_b, cfg),
    }
}

fn kl_cr(
    za: &DistributionLattice,
    zb: &DistributionLattice,
    masks_a: &[bool],
    masks_b: &[bool],
    cfg: &CrConfig,
) -> Result<CrOutput> {
    check_pair(za, zb, masks_a, masks_b)?;
    let frames = za.frames();
    let scale = 0.5 / if cfg.normalize_by_frames { frames as f64 } else { 1.0 };
    let mut grad_a = Matrix::zeros(frames, za.width());
    let mut grad_b = Matrix::zeros(frames, za.width());
    let (mut term_a, mut term_b) = (0.0, 0.0);

    for t in 0..frames {
        let (pa, la) = (za.probs().row(t), za.log_probs().row(t));
        let (pb, lb) = (zb.probs().row(t), zb.log_probs().row(t));
        // branch a predicts, b is the target
        if cfg.frame_filter.keeps(masks_a[t]) {
            let term = kl_term(pb, lb, pa, la, cfg.target_mode);
            term_a += term.value;
            accumulate(grad_a.row_mut(t), &term.grad_pred, scale);
            if let Some(g) = &term.grad_target {
                accumulate(grad_b.row_mut(t), g, scale);
            }
        }
        if cfg.frame_filter.keeps(masks_b[t]) {
            let term = kl_term(pa, la, pb, lb, cfg.target_mode);
            term_b += term.value;
            accumulate(grad_b.row_mut(t), &term.grad_pred, scale);
            if let Some(g) = &term.grad_target {
                accumulate(grad_a.row_mut(t), g, scale);
            }
        }
    }
    Ok(CrOutput { loss: scale * (term_a + term_b), term_a, term_b, grad_a, grad_b })
}

#[inline]
fn accumulate(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

/// Hard-label variant: each branch is trained with cross-entropy against the
/// other branch's per-frame argmax (ties toward the lowest index). Targets are
/// indices, so no gradient reaches the target branch regardless of
/// `cfg.target_mode`.
pub fn hard_label_cr(
    za: &DistributionLattice,
    zb: &DistributionLattice,
    masks_a: &[bool],
    masks_b: &[bool],
    cfg: &CrConfig,
) -> Result<CrOutput> {
    check_pair(za, zb, masks_a, masks_b)?;
    let frames = za.frames();
    let scale = 0.5 / if cfg.normalize_by_frames { frames as f64 } else { 1.0 };
    let mut grad_a = Matrix::zeros(frames, za.width());
    let mut grad_b = Matrix::zeros(frames, za.width());
    let (mut term_a, mut term_b) = (0.0, 0.0);

    for t in 0..frames {
        for (pred, target, masked, grad, term) in [
            (za, zb, masks_a[t], &mut grad_a, &mut term_a),
            (zb, za, masks_b[t], &mut grad_b, &mut term_b),
        ] {
            if !cfg.frame_filter.keeps(masked) {
                continue;
            }
            let k = target.argmax(t);
            *term -= pred.log_prob(t, k);
            let row = grad.row_mut(t);
            for (j, g) in row.iter_mut().enumerate() {
                *g += scale * (pred.prob(t, j) - if j == k { 1.0 } else { 0.0 });
            }
        }
    }
    Ok(CrOutput { loss: scale * (term_a + term_b), term_a, term_b, grad_a, grad_b })
}

/// Full two-branch objective with logit gradients for each branch.
#[derive(Clone, Debug)]
pub struct CrTotal {
    pub loss: f64,
    pub ctc_a: f64,
    pub ctc_b: f64,
    pub cr: f64,
    pub grad_a: Matrix,
    pub grad_b: Matrix,
}

/// `1/2 (L_CTC(a) + L_CTC(b)) + α L_CR` from the two branches' logits.
pub fn total_loss_from_logits(
    logits_a: &LogitLattice,
    logits_b: &LogitLattice,
    masks_a: &[bool],
    masks_b: &[bool],
    y: &LabelSequence,
    vocab: &Vocabulary,
    cfg: &CrConfig,
) -> Result<CrTotal> {
    cfg.validate()?;
    let za = softmax_rows(logits_a);
    let zb = softmax_rows(logits_b);
    let ca = ctc_grad_from_dist(&za, y, vocab)?;
    let cb = ctc_grad_from_dist(&zb, y, vocab)?;
    let cr = cr_loss(&za, &zb, masks_a, masks_b, cfg)?;

    let mut grad_a = ca.grad;
    grad_a.scale(0.5);
    grad_a.add_scaled(&cr.grad_a, cfg.alpha);
    let mut grad_b = cb.grad;
    grad_b.scale(0.5);
    grad_b.add_scaled(&cr.grad_b, cfg.alpha);

    Ok(CrTotal {
        loss: 0.5 * (ca.loss + cb.loss) + cfg.alpha * cr.loss,
        ctc_a: ca.loss,
        ctc_b: cb.loss,
        cr: cr.loss,
        grad_a,
        grad_b,
    })
}

/// Runs `forward` on both views and evaluates the two-branch objective. Masks
/// are pooled when the encoder shortens the frame axis.
pub fn total_loss<F>(
    xa: &AugmentedView,
    xb: &AugmentedView,
    y: &LabelSequence,
    vocab: &Vocabulary,
    mut forward: F,
    cfg: &CrConfig,
) -> Result<CrTotal>
where
    F: FnMut(&AugmentedView) -> Result<LogitLattice>,
{
    let la = forward(xa)?;
    let lb = forward(xb)?;
    if la.frames() != lb.frames() {
        return Err(Error::invalid("branches produced different frame counts"));
    }
    let ma = pool_mask(&xa.time_masked, la.frames());
    let mb = pool_mask(&xb.time_masked, lb.frames());
    total_loss_from_logits(&la, &lb, &ma, &mb, y, vocab, cfg)
}

/// Shrinks a frame mask to `frames` entries; an output frame is masked when
/// any of its source frames is.
pub fn pool_mask(mask: &[bool], frames: usize) -> Vec<bool> {
    if mask.len() == frames || frames == 0 {
        return mask.to_vec();
    }
    let factor = mask.len().div_ceil(frames);
    (0..frames)
        .map(|i| mask[(i * factor).min(mask.len())..((i + 1) * factor).min(mask.len())].iter().any(|&m| m))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{assert_close_rel, fd_logit_grad, random_dist, random_logits};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dist(rows: &[[f64; 2]]) -> DistributionLattice {
        DistributionLattice::from_probs(Matrix::from_rows(rows)).unwrap()
    }

    fn kl(p: &[f64], q: &[f64]) -> f64 {
        p.iter().zip(q).map(|(a, b)| a * (a / b).ln()).sum()
    }

    #[test]
    fn identical_branches_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = random_dist(&mut rng, 6, 4);
        let m = vec![false; 6];
        let out = cr_loss(&z, &z, &m, &m, &CrConfig::default()).unwrap();
        assert!(out.loss.abs() < 1e-15);
        assert!(out.grad_a.max_abs() < 1e-15 && out.grad_b.max_abs() < 1e-15);
    }

    #[test]
    fn two_symbol_example() {
        let za = dist(&[[0.75, 0.25]]);
        let zb = dist(&[[0.5, 0.5]]);
        let m = [false];
        let out = cr_loss(&za, &zb, &m, &m, &CrConfig::default()).unwrap();
        let expect = 0.5 * (kl(&[0.5, 0.5], &[0.75, 0.25]) + kl(&[0.75, 0.25], &[0.5, 0.5]));
        // 0.5 * (0.1438410362258904 + 0.1308065...)
        assert!((out.loss - expect).abs() < 1e-15);
        assert!((kl(&[0.5, 0.5], &[0.75, 0.25]) - (0.5 * (0.5f64 / 0.75).ln() + 0.5 * 2f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn symmetric_in_branches() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let za = random_dist(&mut rng, 5, 3);
        let zb = random_dist(&mut rng, 5, 3);
        let m = vec![false; 5];
        let cfg = CrConfig::default();
        let ab = cr_loss(&za, &zb, &m, &m, &cfg).unwrap();
        let ba = cr_loss(&zb, &za, &m, &m, &cfg).unwrap();
        assert!((ab.loss - ba.loss).abs() < 1e-14);
        assert_eq!(ab.grad_a, ba.grad_b);
    }

    #[test]
    fn stop_gradient_leaves_target_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let za = random_dist(&mut rng, 4, 3);
        let zb = random_dist(&mut rng, 4, 3);
        for t in 0..4 {
            let term = kl_term(zb.probs().row(t), zb.log_probs().row(t), za.probs().row(t), za.log_probs().row(t), TargetMode::StopGradient);
            assert!(term.grad_target.is_none());
        }
        // With only branch a's filter passing, grad_b must be exactly zero.
        let cfg = CrConfig { frame_filter: FrameFilter::ExcludeSelfMasked, ..Default::default() };
        let out = cr_loss(&za, &zb, &[false; 4], &[true; 4], &cfg).unwrap();
        assert!(out.grad_b.as_slice().iter().all(|&g| g == 0.0));
        assert!(out.grad_a.max_abs() > 0.0);
    }

    #[test]
    fn kl_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let la = random_logits(&mut rng, 5, 4, 2.0);
        let lb = random_logits(&mut rng, 5, 4, 2.0);
        let ma = vec![true, false, false, true, false];
        let mb = vec![false, false, true, true, false];
        for mode in [TargetMode::StopGradient, TargetMode::FlowGradient] {
            for filter in [FrameFilter::All, FrameFilter::ExcludeSelfMasked] {
                let cfg = CrConfig { target_mode: mode, frame_filter: filter, ..Default::default() };
                let out = cr_loss(&softmax_rows(&la), &softmax_rows(&lb), &ma, &mb, &cfg).unwrap();
                let target = softmax_rows(&lb);
                let fa = fd_logit_grad(&la, 1e-5, |l| {
                    let pred = softmax_rows(l);
                    match mode {
                        TargetMode::FlowGradient => cr_loss(&pred, &target, &ma, &mb, &cfg).unwrap().loss,
                        // sg: only the term with branch a as prediction depends on a
                        TargetMode::StopGradient => (0..5)
                            .filter(|&t| filter.keeps(ma[t]))
                            .map(|t| 0.5 * kl(target.probs().row(t), pred.probs().row(t)))
                            .sum(),
                    }
                });
                assert_close_rel(&out.grad_a, &fa, 1e-5, 1e-9);
            }
        }
    }

    #[test]
    fn frame_filter_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let za = random_dist(&mut rng, 8, 3);
        let zb = random_dist(&mut rng, 8, 3);
        let ma: Vec<bool> = (0..8).map(|t| t % 3 == 0).collect();
        let mb: Vec<bool> = (0..8).map(|t| t % 2 == 0).collect();
        let run = |f| cr_loss(&za, &zb, &ma, &mb, &CrConfig { frame_filter: f, ..Default::default() }).unwrap();
        let all = run(FrameFilter::All);
        let unmasked = run(FrameFilter::ExcludeSelfMasked);
        let masked = run(FrameFilter::ExcludeSelfUnmasked);
        assert!((all.term_a - unmasked.term_a - masked.term_a).abs() < 1e-12);
        assert!((all.term_b - unmasked.term_b - masked.term_b).abs() < 1e-12);
        assert!((all.loss - unmasked.loss - masked.loss).abs() < 1e-12);
    }

    #[test]
    fn hard_label_examples() {
        let m = [false];
        // b nearly one-hot at symbol 1 -> a's term is -log z_a[1]
        let za = dist(&[[0.7, 0.3]]);
        let zb = dist(&[[0.01, 0.99]]);
        let out = hard_label_cr(&za, &zb, &m, &m, &CrConfig::default()).unwrap();
        assert!((out.term_a + 0.3f64.ln()).abs() < 1e-15);
        assert!((out.term_b + 0.01f64.ln()).abs() < 1e-15);

        let delta = 1e-6;
        let z = dist(&[[1.0 - delta, delta]]);
        let out = hard_label_cr(&z, &z, &m, &m, &CrConfig::default()).unwrap();
        assert!((out.loss - delta).abs() < 1e-9);

        // ties resolve toward the lowest index
        let tie = dist(&[[0.5, 0.5]]);
        let out = hard_label_cr(&za, &tie, &m, &m, &CrConfig::default()).unwrap();
        assert!((out.term_a + 0.7f64.ln()).abs() < 1e-15);
        let via_dispatch = cr_loss(&za, &tie, &m, &m, &CrConfig { distance: Distance::HardLabelCe, ..Default::default() }).unwrap();
        assert_eq!(via_dispatch.loss, out.loss);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let za = random_dist(&mut rng, 4, 3);
        let zb = random_dist(&mut rng, 5, 3);
        assert!(matches!(
            cr_loss(&za, &zb, &[false; 4], &[false; 5], &CrConfig::default()),
            Err(Error::InvalidInput(_))
        ));
        assert!(cr_loss(&za, &za, &[false; 3], &[false; 4], &CrConfig::default()).is_err());
    }

    #[test]
    fn identical_views_reduce_to_ctc() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let v = Vocabulary::new(["a", "b"]).unwrap();
        let logits = random_logits(&mut rng, 6, 3, 2.0);
        let y = LabelSequence(vec![1, 0]);
        let single = crate::ctc::ctc_grad(&logits, &y, &v).unwrap();
        for alpha in [0.0, 0.2, 5.0] {
            let cfg = CrConfig { alpha, ..Default::default() };
            let m = vec![false; 6];
            let tot = total_loss_from_logits(&logits, &logits, &m, &m, &y, &v, &cfg).unwrap();
            assert!((tot.loss - single.loss).abs() < 1e-12);
        }
    }

    #[test]
    fn total_loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let v = Vocabulary::new(["a", "b"]).unwrap();
        let la = random_logits(&mut rng, 5, 3, 1.5);
        let lb = random_logits(&mut rng, 5, 3, 1.5);
        let y = LabelSequence(vec![0, 1]);
        let m = vec![false; 5];
        let cfg = CrConfig { target_mode: TargetMode::FlowGradient, ..Default::default() };
        let out = total_loss_from_logits(&la, &lb, &m, &m, &y, &v, &cfg).unwrap();
        let fa = fd_logit_grad(&la, 1e-5, |l| total_loss_from_logits(l, &lb, &m, &m, &y, &v, &cfg).unwrap().loss);
        let fb = fd_logit_grad(&lb, 1e-5, |l| total_loss_from_logits(&la, l, &m, &m, &y, &v, &cfg).unwrap().loss);
        assert_close_rel(&out.grad_a, &fa, 1e-4, 1e-9);
        assert_close_rel(&out.grad_b, &fb, 1e-4, 1e-9);
    }

    #[test]
    fn pooled_masks() {
        let m = [false, true, false, false, false, false, true];
        assert_eq!(pool_mask(&m, 2), vec![true, true]);
        assert_eq!(pool_mask(&m, 4), vec![true, false, false, true]);
        assert_eq!(pool_mask(&m, 7), m.to_vec());
    }

    #[test]
    fn config_strings_round_trip() {
        for s in ["stop_gradient", "flow_gradient"] {
            assert_eq!(s.parse::<TargetMode>().unwrap().to_string(), s);
        }
        for s in ["all", "exclude_self_masked", "exclude_self_unmasked"] {
            assert_eq!(s.parse::<FrameFilter>().unwrap().to_string(), s);
        }
        assert!("kl".parse::<Distance>().is_err());
    }
}

//! Smoothness regularization: pull each frame distribution toward its
//! temporally smoothed version.
//!
//! `L' = L_CTC + β Σ_t KL(sg(z^s_t) ‖ z_t)` where `z^s` is `z` convolved along
//! time with a 3-tap kernel. At the sequence edges the kernel is truncated and
//! renormalized, so every smoothed row is still a distribution.

use serde::{Deserialize, Serialize};

use crate::consistency::{kl_term, TargetMode};
use crate::ctc::{ctc_grad_from_dist, LossBundle};
use crate::error::{Error, Result};
use crate::lattice::{softmax_rows, DistributionLattice, LabelSequence, LogitLattice, Vocabulary};
use crate::matrix::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SrConfig {
    pub kernel: [f64; 3],
    pub beta: f64,
}

impl Default for SrConfig {
    fn default() -> Self {
        Self { kernel: [0.25, 0.5, 0.25], beta: 0.2 }
    }
}

impl SrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel.iter().any(|&w| w.is_nan() || w < 0.0) {
            return Err(Error::invalid("sr.kernel weights must be >= 0"));
        }
        if (self.kernel.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("sr.kernel weights must sum to 1"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid("sr.beta must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Convolves each symbol's probability track with the kernel.
pub fn smooth_lattice(z: &DistributionLattice, cfg: &SrConfig) -> Result<DistributionLattice> {
    cfg.validate()?;
    let frames = z.frames();
    let width = z.width();
    let mut out = Matrix::zeros(frames, width);
    for t in 0..frames {
        let mut norm = 0.0;
        for (j, &w) in cfg.kernel.iter().enumerate() {
            let Some(src) = (t + j).checked_sub(1).filter(|&s| s < frames) else { continue };
            norm += w;
            for (o, &p) in out.row_mut(t).iter_mut().zip(z.probs().row(src)) {
                *o += w * p;
            }
        }
        if norm > 0.0 {
            out.row_mut(t).iter_mut().for_each(|v| *v /= norm);
        } else {
            // kernel has weight only on missing neighbours
            out.row_mut(t).copy_from_slice(z.probs().row(t));
        }
    }
    let mut logs = out;
    logs.as_mut_slice().iter_mut().for_each(|v| *v = v.ln());
    DistributionLattice::from_log_probs(logs, 1e-9)
}

/// Smoothness penalty `Σ_t KL(sg(z^s_t) ‖ z_t)` and its gradient with respect
/// to the logits of `z`.
pub fn sr_penalty(z: &DistributionLattice, cfg: &SrConfig) -> Result<(f64, Matrix)> {
    let zs = smooth_lattice(z, cfg)?;
    let mut grad = Matrix::zeros(z.frames(), z.width());
    let mut value = 0.0;
    for t in 0..z.frames() {
        let term = kl_term(
            zs.probs().row(t),
            zs.log_probs().row(t),
            z.probs().row(t),
            z.log_probs().row(t),
            TargetMode::StopGradient,
        );
        value += term.value;
        grad.row_mut(t).copy_from_slice(&term.grad_pred);
    }
    Ok((value, grad))
}

#[derive(Clone, Debug)]
pub struct SrTotal {
    pub loss: f64,
    pub ctc: f64,
    pub penalty: f64,
    pub grad: Matrix,
}

impl From<SrTotal> for LossBundle {
    fn from(t: SrTotal) -> Self {
        LossBundle { loss: t.loss, grad: t.grad }
    }
}

/// `L_CTC + β · penalty` with its logit gradient.
pub fn sr_total_loss_from_logits(
    logits: &LogitLattice,
    y: &LabelSequence,
    vocab: &Vocabulary,
    cfg: &SrConfig,
) -> Result<SrTotal> {
    let z = softmax_rows(logits);
    let ctc = ctc_grad_from_dist(&z, y, vocab)?;
    let (penalty, pgrad) = sr_penalty(&z, cfg)?;
    let mut grad = ctc.grad;
    grad.add_scaled(&pgrad, cfg.beta);
    Ok(SrTotal { loss: ctc.loss + cfg.beta * penalty, ctc: ctc.loss, penalty, grad })
}

/// Runs `forward` on `x` and evaluates the smoothness-regularized objective.
pub fn sr_total_loss<X, F>(x: &X, y: &LabelSequence, vocab: &Vocabulary, forward: F, cfg: &SrConfig) -> Result<SrTotal>
where
    X: ?Sized,
    F: FnOnce(&X) -> Result<LogitLattice>,
{
    let logits = forward(x)?;
    sr_total_loss_from_logits(&logits, y, vocab, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{assert_close_rel, fd_logit_grad, random_dist, random_logits};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn constant(frames: usize) -> DistributionLattice {
        let rows: Vec<[f64; 3]> = (0..frames).map(|_| [0.2, 0.5, 0.3]).collect();
        DistributionLattice::from_probs(Matrix::from_rows(&rows)).unwrap()
    }

    #[test]
    fn constant_lattice_unchanged() {
        let z = constant(6);
        let s = smooth_lattice(&z, &SrConfig::default()).unwrap();
        for t in 0..6 {
            for k in 0..3 {
                assert!((s.prob(t, k) - z.prob(t, k)).abs() < 1e-15);
            }
        }
        let (pen, grad) = sr_penalty(&z, &SrConfig::default()).unwrap();
        assert!(pen.abs() < 1e-15);
        assert!(grad.max_abs() < 1e-15);
    }

    #[test]
    fn single_frame_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = random_dist(&mut rng, 1, 4);
        let s = smooth_lattice(&z, &SrConfig::default()).unwrap();
        for k in 0..4 {
            assert!((s.prob(0, k) - z.prob(0, k)).abs() < 1e-15);
        }
    }

    #[test]
    fn interior_and_boundary_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = random_dist(&mut rng, 3, 4);
        let s = smooth_lattice(&z, &SrConfig::default()).unwrap();
        for k in 0..4 {
            let mid = 0.25 * z.prob(0, k) + 0.5 * z.prob(1, k) + 0.25 * z.prob(2, k);
            assert!((s.prob(1, k) - mid).abs() < 1e-15);
            let first = (0.5 * z.prob(0, k) + 0.25 * z.prob(1, k)) / 0.75;
            assert!((s.prob(0, k) - first).abs() < 1e-15);
        }
    }

    #[test]
    fn kernel_validation() {
        let z = constant(2);
        assert!(smooth_lattice(&z, &SrConfig { kernel: [0.5, 0.5, 0.5], beta: 0.2 }).is_err());
        assert!(smooth_lattice(&z, &SrConfig { kernel: [-0.5, 1.0, 0.5], beta: 0.2 }).is_err());
        assert!(SrConfig { beta: -1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn beta_zero_and_constant_reduce_to_ctc() {
        let v = Vocabulary::new(["a", "b"]).unwrap();
        let y = LabelSequence(vec![0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits = random_logits(&mut rng, 5, 3, 2.0);
        let ctc = crate::ctc::ctc_grad(&logits, &y, &v).unwrap();
        let out = sr_total_loss_from_logits(&logits, &y, &v, &SrConfig { beta: 0.0, ..Default::default() }).unwrap();
        assert_eq!(out.loss, ctc.loss);

        let flat = LogitLattice::from_rows(&[[0.1, 0.9, -0.3]; 4]).unwrap();
        let ctc = crate::ctc::ctc_grad(&flat, &y, &v).unwrap();
        let out = sr_total_loss(&flat, &y, &v, |l| Ok(l.clone()), &SrConfig::default()).unwrap();
        assert!((out.loss - ctc.loss).abs() < 1e-14);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let v = Vocabulary::new(["a", "b"]).unwrap();
        let y = LabelSequence(vec![1, 0]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let logits = random_logits(&mut rng, 5, 3, 2.0);
        let cfg = SrConfig::default();
        let out = sr_total_loss_from_logits(&logits, &y, &v, &cfg).unwrap();
        // stop-gradient: hold the smoothed target at the unperturbed lattice
        let zs = smooth_lattice(&softmax_rows(&logits), &cfg).unwrap();
        let fd = fd_logit_grad(&logits, 1e-5, |l| {
            let z = softmax_rows(l);
            let ctc = crate::ctc::ctc_loss(&z, &y, &v).unwrap().loss;
            let pen: f64 = (0..5)
                .map(|t| (0..3).map(|k| zs.prob(t, k) * (zs.log_prob(t, k) - z.log_prob(t, k))).sum::<f64>())
                .sum();
            ctc + cfg.beta * pen
        });
        assert_close_rel(&out.grad, &fd, 1e-4, 1e-9);
    }

    proptest! {
        #[test]
        fn smoothing_preserves_normalization(seed in 0u64..1000, frames in 1usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z = random_dist(&mut rng, frames, 5);
            let s = smooth_lattice(&z, &SrConfig::default()).unwrap();
            for t in 0..frames {
                prop_assert!((s.probs().row(t).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            let (pen, _) = sr_penalty(&z, &SrConfig::default()).unwrap();
            prop_assert!(pen >= -1e-15);
        }

        #[test]
        fn interior_shift_equivariance(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z = random_dist(&mut rng, 10, 3);
            // drop the first frame: interior rows of the shorter lattice shift by one
            let shifted = DistributionLattice::from_probs(Matrix::from_rows(
                &(1..10).map(|t| z.probs().row(t).to_vec()).collect::<Vec<_>>(),
            )).unwrap();
            let a = smooth_lattice(&z, &SrConfig::default()).unwrap();
            let b = smooth_lattice(&shifted, &SrConfig::default()).unwrap();
            for t in 2..9 {
                for k in 0..3 {
                    prop_assert!((a.prob(t, k) - b.prob(t - 1, k)).abs() < 1e-14);
                }
            }
        }
    }
}

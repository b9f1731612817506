use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::consistency::{total_loss_from_logits, CrConfig, TargetMode};
use crate::ctc::ctc_grad;
use crate::error::Result;
use crate::lattice::{softmax_rows, DistributionLattice, LabelSequence, LogitLattice, Vocabulary};
use crate::matrix::Matrix;
use crate::model::{backward, forward, EncoderConfig, Mode, ParameterSet, Tape};
use crate::smooth::{smooth_lattice, sr_total_loss_from_logits, SrConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckEntry {
    pub name: String,
    pub coordinates: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub step: f64,
    pub entries: Vec<GradcheckEntry>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect())
}

fn check_logits(
    name: &str,
    logits: &Matrix,
    grad: &Matrix,
    coords: &[(usize, usize)],
    h: f64,
    mut value: impl FnMut(&Matrix) -> Result<f64>,
) -> Result<GradcheckEntry> {
    let mut worst: f64 = 0.0;
    for &(t, k) in coords {
        let mut plus = logits.clone();
        plus.add_at(t, k, h);
        let mut minus = logits.clone();
        minus.add_at(t, k, -h);
        let numeric = (value(&plus)? - value(&minus)?) / (2.0 * h);
        worst = worst.max(rel_error(grad.get(t, k), numeric));
    }
    Ok(GradcheckEntry { name: name.to_string(), coordinates: coords.len(), max_rel_error: worst })
}

/// `Σ_t Σ_k target · (log target − log softmax(logits))` over kept frames,
/// with `target` held fixed.
fn frozen_kl(target: &DistributionLattice, logits: &Matrix, keep: &[bool]) -> Result<f64> {
    let pred = softmax_rows(&LogitLattice::new(logits.clone())?);
    let mut kl = 0.0;
    for (t, _) in keep.iter().enumerate().filter(|(_, &k)| k) {
        for k in 0..logits.cols() {
            kl += target.prob(t, k) * (target.log_prob(t, k) - pred.log_prob(t, k));
        }
    }
    Ok(kl)
}

/// Central-difference checks of every analytic gradient on seeded random
/// instances, at `coords` coordinates each. Under stop-gradient the numeric
/// side differentiates the objective with the detached targets frozen.
pub fn run_gradcheck(seed: u64, coords: usize, h: f64) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = Vocabulary::synthetic(3);
    let (frames, width) = (7, vocab.extended_len());
    let y = LabelSequence(vec![0, 1, 1]);
    let pick = |rng: &mut ChaCha8Rng| -> Vec<(usize, usize)> {
        (0..coords).map(|_| (rng.random_range(0..frames), rng.random_range(0..width))).collect()
    };
    let lat = |m: &Matrix| LogitLattice::new(m.clone());
    let ctc = |m: &Matrix| -> Result<f64> { Ok(ctc_grad(&lat(m)?, &y, &vocab)?.loss) };
    let mut entries = Vec::new();

    let z = random_matrix(&mut rng, frames, width, 2.0);
    let grad = ctc_grad(&lat(&z)?, &y, &vocab)?.grad;
    entries.push(check_logits("ctc_grad", &z, &grad, &pick(&mut rng), h, ctc)?);

    for mode in [TargetMode::StopGradient, TargetMode::FlowGradient] {
        let cfg = CrConfig { alpha: 0.3, target_mode: mode, ..CrConfig::default() };
        let za = random_matrix(&mut rng, frames, width, 2.0);
        let zb = random_matrix(&mut rng, frames, width, 2.0);
        let ma: Vec<bool> = (0..frames).map(|_| rng.random_bool(0.3)).collect();
        let mb: Vec<bool> = (0..frames).map(|_| rng.random_bool(0.3)).collect();
        let out = total_loss_from_logits(&lat(&za)?, &lat(&zb)?, &ma, &mb, &y, &vocab, &cfg)?;
        let name = format!("cr_total/{mode}");
        let c = pick(&mut rng);
        if mode == TargetMode::FlowGradient {
            entries.push(check_logits(&name, &za, &out.grad_a, &c, h, |m| {
                Ok(total_loss_from_logits(&lat(m)?, &lat(&zb)?, &ma, &mb, &y, &vocab, &cfg)?.loss)
            })?);
        } else {
            let target = softmax_rows(&lat(&zb)?);
            let keep: Vec<bool> = ma.iter().map(|&m| cfg.frame_filter.keeps(m)).collect();
            entries.push(check_logits(&name, &za, &out.grad_a, &c, h, |m| {
                Ok(0.5 * ctc(m)? + cfg.alpha * 0.5 * frozen_kl(&target, m, &keep)?)
            })?);
        }
    }

    let z = random_matrix(&mut rng, frames, width, 2.0);
    let sr = SrConfig { beta: 0.4, ..SrConfig::default() };
    let grad = sr_total_loss_from_logits(&lat(&z)?, &y, &vocab, &sr)?.grad;
    let smoothed = smooth_lattice(&softmax_rows(&lat(&z)?), &sr)?;
    let keep = vec![true; frames];
    entries.push(check_logits("sr_total", &z, &grad, &pick(&mut rng), h, |m| {
        Ok(ctc(m)? + sr.beta * frozen_kl(&smoothed, m, &keep)?)
    })?);

    entries.push(encoder_check(&mut rng, coords, h, &vocab, &y)?);
    Ok(GradcheckReport { step: h, entries })
}

fn encoder_check(rng: &mut ChaCha8Rng, coords: usize, h: f64, vocab: &Vocabulary, y: &LabelSequence) -> Result<GradcheckEntry> {
    let enc = EncoderConfig { hidden_dim: 6, layers: 2, context_radius: 1, ..EncoderConfig::new(4, vocab.extended_len()) };
    let params = enc.init(rng)?;
    let x = random_matrix(rng, 9, 4, 1.0);
    let mode = Mode::Train { seed: rng.random() };
    let loss = |p: &ParameterSet| -> Result<(f64, Matrix, Tape)> {
        let (logits, tape) = forward(&enc, p, &x, mode)?;
        let out = ctc_grad(&logits, y, vocab)?;
        Ok((out.loss, out.grad, tape))
    };
    let (_, upstream, tape) = loss(&params)?;
    let grads = backward(&enc, &params, &tape, &upstream)?;
    let mut worst: f64 = 0.0;
    for _ in 0..coords {
        let i = rng.random_range(0..params.num_values());
        let mut plus = params.clone();
        *plus.value_mut(i) += h;
        let mut minus = params.clone();
        *minus.value_mut(i) -= h;
        let numeric = (loss(&plus)?.0 - loss(&minus)?.0) / (2.0 * h);
        worst = worst.max(rel_error(grads.value(i), numeric));
    }
    Ok(GradcheckEntry { name: "encoder_backward".into(), coordinates: coords, max_rel_error: worst })
}

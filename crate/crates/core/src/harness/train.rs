use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ExperimentConfig, Objective};
use super::data::{generate_dataset, Dataset, Sample};
use super::metrics::CorpusErrorRate;
use super::record::{EvalSummary, RunRecord};
use crate::augment::{augment, make_views};
use crate::consistency::{pool_mask, total_loss_from_logits};
use crate::ctc::ctc_grad;
use crate::decode::{greedy_decode, prefix_beam_decode};
use crate::error::{Error, Result};
use crate::lattice::{softmax_rows, Vocabulary};
use crate::model::{backward, clip_global_norm, forward, Adam, EncoderConfig, Mode, Optimizer, ParameterSet, Sgd};
use crate::peak::PeakAccumulator;
use crate::smooth::sr_total_loss_from_logits;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub params: ParameterSet,
    pub loss_curve: Vec<f64>,
    pub steps: u64,
    pub skipped: usize,
}

/// Loss and parameter gradient for one utterance.
fn sample_step(
    cfg: &ExperimentConfig,
    enc: &EncoderConfig,
    params: &ParameterSet,
    vocab: &Vocabulary,
    sample: &Sample,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, ParameterSet)> {
    let y = &sample.labels;
    match cfg.objective {
        Objective::Ctc => {
            let view = augment(&sample.features, &cfg.augment, rng);
            let (logits, tape) = forward(enc, params, &view.features, Mode::Train { seed: rng.next_u64() })?;
            let out = ctc_grad(&logits, y, vocab)?;
            Ok((out.loss, backward(enc, params, &tape, &out.grad)?))
        }
        Objective::SrCtc => {
            let view = augment(&sample.features, &cfg.augment, rng);
            let (logits, tape) = forward(enc, params, &view.features, Mode::Train { seed: rng.next_u64() })?;
            let out = sr_total_loss_from_logits(&logits, y, vocab, &cfg.sr)?;
            Ok((out.loss, backward(enc, params, &tape, &out.grad)?))
        }
        Objective::CrCtc => {
            let (va, vb) = make_views(&sample.features, &cfg.augment, rng);
            let (la, ta) = forward(enc, params, &va.features, Mode::Train { seed: rng.next_u64() })?;
            let (lb, tb) = forward(enc, params, &vb.features, Mode::Train { seed: rng.next_u64() })?;
            let ma = pool_mask(&va.time_masked, la.frames());
            let mb = pool_mask(&vb.time_masked, lb.frames());
            let out = total_loss_from_logits(&la, &lb, &ma, &mb, y, vocab, &cfg.cr)?;
            let mut grads = backward(enc, params, &ta, &out.grad_a)?;
            grads.add_scaled(&backward(enc, params, &tb, &out.grad_b)?, 1.0)?;
            Ok((out.loss, grads))
        }
    }
}

/// Trains from a fresh initialization. `on_epoch` sees the epoch index and
/// its mean loss. Runs are bit-reproducible for a fixed config.
pub fn train(cfg: &ExperimentConfig, data: &Dataset, mut on_epoch: impl FnMut(usize, f64)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let enc = cfg.encoder_config();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut params = enc.init(&mut rng)?;
    let mut optimizer: Box<dyn Optimizer> = match cfg.train.optimizer.as_str() {
        "sgd" => Box::new(Sgd { lr: cfg.train.adam.lr }),
        _ => Box::new(Adam::new(cfg.train.adam)),
    };

    let batch_size = cfg.effective_batch_size();
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut loss_curve = Vec::new();
    let (mut steps, mut skipped) = (0u64, 0usize);

    for epoch in 0..cfg.effective_epochs() {
        order.shuffle(&mut rng);
        let (mut epoch_loss, mut epoch_count) = (0.0, 0usize);
        for batch in order.chunks(batch_size) {
            let mut acc: Option<ParameterSet> = None;
            let mut used = 0usize;
            for &i in batch {
                // one generator per utterance keeps the draws independent of
                // how many values earlier utterances consumed
                let mut sample_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
                match sample_step(cfg, &enc, &params, &data.vocab, &data.train[i], &mut sample_rng) {
                    Ok((loss, grads)) => {
                        epoch_loss += loss;
                        used += 1;
                        match &mut acc {
                            Some(a) => a.add_scaled(&grads, 1.0)?,
                            None => acc = Some(grads),
                        }
                    }
                    Err(Error::Infeasible(_)) => skipped += 1,
                    Err(e) => return Err(e),
                }
            }
            let Some(mut grads) = acc else { continue };
            grads.scale(1.0 / used as f64);
            if cfg.train.grad_clip > 0.0 {
                clip_global_norm(&mut grads, cfg.train.grad_clip);
            }
            optimizer.step(&mut params, &grads)?;
            steps += 1;
            epoch_count += used;
        }
        let mean = if epoch_count > 0 { epoch_loss / epoch_count as f64 } else { f64::NAN };
        on_epoch(epoch, mean);
        loss_curve.push(mean);
    }
    if !params.is_finite() {
        return Err(Error::invalid("training diverged to non-finite parameters"));
    }
    Ok(TrainOutcome { params, loss_curve, steps, skipped })
}

/// Deterministic evaluation with both decoders.
pub fn evaluate(
    enc: &EncoderConfig,
    params: &ParameterSet,
    samples: &[Sample],
    vocab: &Vocabulary,
    beam: usize,
) -> Result<EvalSummary> {
    let (mut greedy, mut prefix) = (CorpusErrorRate::default(), CorpusErrorRate::default());
    let mut peak = PeakAccumulator::default();
    for s in samples {
        let (logits, _) = forward(enc, params, &s.features, Mode::Eval)?;
        let z = softmax_rows(&logits);
        greedy.add(&greedy_decode(&z, vocab)?.0, &s.labels);
        prefix.add(&prefix_beam_decode(&z, vocab, beam)?, &s.labels);
        peak.add(&z, vocab)?;
    }
    Ok(EvalSummary {
        greedy_ter: greedy.rate(),
        prefix_ter: prefix.rate(),
        utterances: samples.len(),
        reference_tokens: greedy.reference_tokens,
        peak: peak.finish(),
    })
}

/// Generates the dataset, trains, and evaluates on dev and test.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(RunRecord, ParameterSet)> {
    let start = Instant::now();
    let data = generate_dataset(&cfg.task)?;
    let outcome = train(cfg, &data, |_, _| {})?;
    let enc = cfg.encoder_config();
    let dev = evaluate(&enc, &outcome.params, &data.dev, &data.vocab, cfg.eval_beam)?;
    let test = evaluate(&enc, &outcome.params, &data.test, &data.vocab, cfg.eval_beam)?;
    let record = RunRecord {
        objective: cfg.objective,
        seed: cfg.train.seed,
        config: cfg.to_map(),
        loss_curve: outcome.loss_curve,
        steps: outcome.steps,
        skipped: outcome.skipped,
        dev,
        test,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    Ok((record, outcome.params))
}

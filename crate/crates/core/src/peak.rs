//! Peakedness statistics along the greedy alignment.
//!
//! A run of identical consecutive non-blank frames counts as one emission whose
//! duration is the run length; the same token separated by a blank starts a
//! new emission. Emit probabilities are per-frame maxima, averaged separately
//! over blank and non-blank frames.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::decode::greedy_decode;
use crate::error::Result;
use crate::lattice::{DistributionLattice, Vocabulary};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PeakStats {
    /// Mean frames per non-blank emission; 0 when nothing was emitted.
    pub mean_nonblank_duration: f64,
    pub mean_blank_emit_prob: f64,
    pub mean_nonblank_emit_prob: f64,
    pub emissions: usize,
    pub nonblank_frames: usize,
    pub blank_frames: usize,
}

/// Sums that combine across utterances before averaging.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PeakAccumulator {
    emissions: usize,
    nonblank_frames: usize,
    blank_frames: usize,
    blank_prob_sum: f64,
    nonblank_prob_sum: f64,
}

impl PeakAccumulator {
    pub fn add(&mut self, z: &DistributionLattice, vocab: &Vocabulary) -> Result<()> {
        let (_, path) = greedy_decode(z, vocab)?;
        let blank = vocab.blank();
        let mut prev = None;
        for (t, &k) in path.as_slice().iter().enumerate() {
            let p = z.prob(t, k);
            if k == blank {
                self.blank_frames += 1;
                self.blank_prob_sum += p;
            } else {
                self.nonblank_frames += 1;
                self.nonblank_prob_sum += p;
                if prev != Some(k) {
                    self.emissions += 1;
                }
            }
            prev = Some(k);
        }
        Ok(())
    }

    pub fn finish(&self) -> PeakStats {
        let mean = |sum: f64, n: usize| if n == 0 { 0.0 } else { sum / n as f64 };
        PeakStats {
            mean_nonblank_duration: mean(self.nonblank_frames as f64, self.emissions),
            mean_blank_emit_prob: mean(self.blank_prob_sum, self.blank_frames),
            mean_nonblank_emit_prob: mean(self.nonblank_prob_sum, self.nonblank_frames),
            emissions: self.emissions,
            nonblank_frames: self.nonblank_frames,
            blank_frames: self.blank_frames,
        }
    }
}

pub fn peak_stats(z: &DistributionLattice, vocab: &Vocabulary) -> Result<PeakStats> {
    let mut acc = PeakAccumulator::default();
    acc.add(z, vocab)?;
    Ok(acc.finish())
}

impl PeakStats {
    pub const CSV_HEADER: &'static str =
        "mean_nonblank_duration,mean_blank_emit_prob,mean_nonblank_emit_prob,emissions,nonblank_frames,blank_frames";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.mean_nonblank_duration,
            self.mean_blank_emit_prob,
            self.mean_nonblank_emit_prob,
            self.emissions,
            self.nonblank_frames,
            self.blank_frames
        )
    }
}

/// One row per frame: `frame,symbol,token,is_blank,prob` for the argmax
/// symbol. Blank frames carry the token `<blank>` and `is_blank = 1`.
pub fn emit_plot_data<W: Write>(z: &DistributionLattice, vocab: &Vocabulary, mut out: W) -> Result<()> {
    let (_, path) = greedy_decode(z, vocab)?;
    writeln!(out, "frame,symbol,token,is_blank,prob")?;
    for (t, &k) in path.as_slice().iter().enumerate() {
        let is_blank = k == vocab.blank();
        writeln!(out, "{t},{k},{},{},{}", vocab.symbol_name(k), u8::from(is_blank), z.prob(t, k))?;
    }
    Ok(())
}

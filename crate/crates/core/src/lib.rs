//! Connectionist Temporal Classification with consistency and smoothness
//! regularization.
//!
//! Numerical core ([`ctc`], [`consistency`], [`smooth`]), augmentation
//! ([`augment`]), decoding ([`decode`]), peakedness analytics ([`peak`]), a
//! small trainable encoder ([`model`]) and the synthetic-benchmark harness
//! ([`harness`]).
//!
//! The blank token sits at index 0 of the extended vocabulary unless a
//! [`Vocabulary`] is built with an explicit blank index.

pub mod augment;
pub mod consistency;
pub mod ctc;
pub mod decode;
mod error;
pub mod harness;
pub mod lattice;
pub mod logspace;
mod matrix;
pub mod model;
pub mod peak;
pub mod smooth;

#[cfg(test)]
mod testutil;

pub use augment::{AugmentedView, FeatureMatrix, SpecAugmentConfig};
pub use consistency::{CrConfig, Distance, FrameFilter, TargetMode};
pub use ctc::{ctc_grad, ctc_loss, ctc_loss_oracle, LossBundle};
pub use decode::{decode_oracle, greedy_decode, prefix_beam_decode};
pub use error::{Error, Result};
pub use lattice::{softmax_rows, Alignment, DistributionLattice, LabelSequence, LogitLattice, Vocabulary};
pub use matrix::Matrix;
pub use peak::{peak_stats, PeakStats};
pub use smooth::SrConfig;

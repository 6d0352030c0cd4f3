//! Channel-aware pseudo-labels for mixed-bandwidth speech pretraining.
//!
//! Wide-band (16 kHz) and narrow-band (8 kHz) utterances are turned into
//! frame-level cluster IDs with k-means, either over the pooled data or with
//! one codebook per channel whose ID ranges are kept disjoint by an offset.
//! The crate also builds the decoder targets (run-length-collapsed IDs) and
//! span masks, and provides the loss kernels used in pretraining and
//! finetuning.
//!
//! | module | contents |
//! |---|---|
//! | [`audio`] | WAV I/O, 2:1 resampling, synthetic signals |
//! | [`dsp`] | power spectra, log-mel features, band energy, spectrograms |
//! | [`clustering`] | k-means, codebooks, pooling with ID offset |
//! | [`labeling`] | run-length collapse, boundary tokens, span masks, MI |
//! | [`losses`] | masked prediction, sequence, CTC, weighted combiners |
//! | [`pipeline`] | manifests, configuration and end-to-end labeling runs |
//! | [`corpus`] | synthetic two-channel corpora for tests and demos |
//! | [`fmx`] | the FMX1 binary matrix format |
//! | [`cli`] | the `bandmix` command-line front end |
//!
//! Runnable walkthroughs live in the crate's `examples/` directory.

pub mod audio;
pub mod cli;
pub mod clustering;
pub mod corpus;
pub mod dsp;
pub mod error;
pub mod fmx;
pub mod labeling;
pub mod losses;
pub mod matrix;
pub mod pipeline;

pub use audio::{AudioBuffer, ChannelTag};
pub use clustering::{Codebook, CodebookChannel, KMeansParams, Offset, PooledCodebook};
pub use dsp::{FeatureMatrix, MelFilterbankConfig};
pub use error::{Error, Result};
pub use labeling::{FrameLabelSequence, MaskPlan, TargetSequence, Vocabulary};
pub use losses::{LogitMatrix, LossBreakdown};
pub use matrix::Matrix;

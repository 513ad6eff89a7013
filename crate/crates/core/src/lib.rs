//! Continual neural topic modeling over timestamped document streams.
//!
//! The model is a Dirichlet variational autoencoder trained one time slice at
//! a time. Each slice learns an amortized encoder and a local perturbation of
//! a shared global topic matrix; after the slice is fitted, the global matrix
//! absorbs the local topics through a decaying running average, so topics
//! discovered early are retained while new ones can still emerge.
//!
//! Crate layout mirrors the pipeline:
//!
//! - [`corpus`]: tokenization, vocabulary pruning, bag-of-words vectors,
//!   time slicing and train/val/test splits.
//! - [`model`]: the Dirichlet-VAE core: encoder, reparameterized sampling,
//!   closed-form KL, product-of-experts decoder, exact reverse-mode
//!   gradients, Adam.
//! - [`continual`]: the per-slice training loop and the running-average
//!   global update, plus a synthetic-stream generator for verification.
//! - [`eval`]: temporal NPMI coherence, topic redundancy/diversity/quality,
//!   temporal smoothness, predictive perplexity and Welch's t-test.
//! - [`config`]: the run configuration shared by the CLI and the library.

pub mod config;
pub mod continual;
pub mod corpus;
pub mod eval;
pub mod model;

pub use config::RunConfig;
pub use continual::{ModelTimeline, RhoSchedule, ScheduleParams, SliceTrainConfig};
pub use corpus::{BowVector, RawDocument, Split, TimeSlice, Vocabulary};
pub use eval::MetricReport;
pub use model::{EncoderParams, PriorConcentration, TopicMatrix, TopicRole};

/// Version string stamped into every artifact this crate writes.
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

//! Proxy-model evaluation with frontier-weighted negative log-likelihood.
//!
//! The crate covers the whole path from a benchmark file to a dataset
//! ranking: acquiring reasoning traces from a frontier model, aligning the
//! frontier's per-token confidences onto an arbitrary proxy tokenizer,
//! scoring the weighted NLL (plus the usual baseline metrics), fitting
//! proxy-to-target curves with k-fold cross-validation, and ranking
//! pre-training datasets.

pub mod alignment;
pub mod curvefit;
mod error;
pub mod parallel;
pub mod providers;
pub mod ranking;
pub mod scoring;
pub mod store;
pub mod trace;

pub use alignment::{LetterProbSequence, TokenSpan, WeightVector};
pub use curvefit::{FamilyKind, FitPoint, FitReport, FittedCurve};
pub use error::{Error, Result};
pub use providers::{ProviderHandle, ProviderKind, ProxyTokenNLL, TokenLogprobRow};
pub use ranking::{ComputePoint, DatasetScore};
pub use scoring::{LabelVariant, Orientation, ScoreRecord, WeightedScore};
pub use trace::{BenchmarkItem, TracedExample};

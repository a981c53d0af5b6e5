//! Sequential 1-bit mean estimation under threshold queries.
//!
//! A learner observes one bit per fresh sample, chosen through a threshold,
//! interval or Gray-code query, and must output an `(eps, delta)`-accurate
//! estimate of the mean of a distribution with a bounded `k`-th central moment.
//!
//! - [`distributions`]: fixtures with exact samplers and analytic oracles.
//! - [`channel`]: the bit-only learner/agent protocol and transcript accounting.
//! - [`localization`]: median bisection and Gray-code localizers.
//! - [`refine`]: cutoff, dyadic regions, randomized thresholds, median of means.
//! - [`variants`]: anytime, unknown-scale, two-stage and multivariate estimators.
//! - [`hardness`]: lower-bound instances, their verifiers, a non-adaptive baseline.
//! - [`harness`]: seeded experiment runners and CSV output.

pub mod channel;
pub mod distributions;
pub mod error;
pub mod hardness;
pub mod harness;
pub mod localization;
pub mod refine;
pub mod variants;

pub use channel::{
    Agent, Batch, Channel, FeedbackMode, Phase, Query, SamplingMode, Transcript, VectorAgent,
    VectorDistribution,
};
pub use distributions::{validate_family, Distribution, FamilyParams, FamilyVerdict};
pub use error::{Error, Result};
pub use localization::{LocalizationResult, Localizer};
pub use refine::{
    AllocationProfile, CostBreakdown, EstimateReport, Estimator, RefinementPlan, TargetSpec,
};

//! Propensity-score-weighted moderation analysis.
//!
//! The crate walks the full workflow for a binary treatment, a binary
//! moderator and a binary outcome observed with survey weights:
//!
//! 1. [`overlap`]: covariate overlap across treatment groups within each
//!    moderator level.
//! 2. [`ps`]: boosted propensity scores, stopped where covariate balance is
//!    best, turned into ATE and composite weights.
//! 3. [`balance`]: weighted SMD and KS diagnostics before and after weighting.
//! 4. [`outcome`]: doubly robust weighted logistic outcome model, sandwich
//!    variance, moderated risk differences and the interaction test.
//! 5. [`sensitivity`]: simulated omitted confounders over an
//!    (effect size, correlation) grid.
//!
//! [`pipeline`] chains the steps and writes every table and plot.

pub mod balance;
pub mod demo;
pub mod error;
pub mod outcome;
pub mod overlap;
pub mod pipeline;
pub mod plot;
pub mod ps;
pub mod sensitivity;
pub mod tabular;

pub use error::{Error, ErrorKind, Result};

//! Adversarial representation learning for private, fair tabular classification.
//!
//! A generator rewrites each record, a predictor classifies the rewritten
//! record under a demographic-parity penalty, and a discriminator tries to
//! recover the sensitive attribute from it. The generator is trained on a
//! weighted composite of the prediction, fairness and fooling losses whose
//! weights can be adapted online by [`coeff`].

pub mod attack;
pub mod coeff;
pub mod data;
pub mod dp;
pub mod error;
pub mod experiment;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod run;
pub mod trainer;

pub use error::{PfaError, Result};

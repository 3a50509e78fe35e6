//! In-context linear regression with softmax attention: prompt sampling,
//! the attention forward pass, closed-form losses, Monte-Carlo estimation,
//! gradient-based fitting and a reproducible experiment runner.

// `!(x > 0.0)` is used on purpose so NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod optimizer;
pub mod rng;
pub mod scenario;
pub mod theory;

pub use attention::{GeneralHeads, Head, Predictor, SingleHeadParams, TwoHeadParams};
pub use error::{Error, Result};
pub use estimator::{mc_loss, LossEstimate};
pub use scenario::{Prompt, ScenarioConfig, Variant};
pub use theory::TheoryValue;

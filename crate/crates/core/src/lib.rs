//! Causal mediation analysis for censored and truncated survival outcomes
//! under parametric accelerated failure time (AFT) models.
//!
//! The natural indirect effect can be estimated two ways: the product of the
//! mediator-model exposure coefficient and the outcome-model mediator
//! coefficient, or the difference between the exposure coefficients of a
//! mediator-free (reduced) AFT model and the full model. Without censoring the
//! two agree; with censoring the reduced model's residual law is a convolution
//! that standard AFT families cannot represent, and the difference estimator
//! loses consistency unless both residual laws are normal. This crate fits the
//! models, computes both estimators, runs the Monte Carlo studies that expose
//! the discrepancy and evaluates the limiting expected score by quadrature.

pub mod aft;
pub mod cli;
pub mod distributions;
pub mod manifest;
pub mod mediation;
pub mod quadrature;
pub mod rng;
pub mod score_oracle;
pub mod simulate;
pub mod special;
pub mod survdata;

pub use aft::{AftFit, AftSpec, LinearFit, TimeScale};
pub use distributions::{ErrorLaw, StandardLaw};
pub use mediation::{Contrast, MediationEstimates};
pub use survdata::{Dataset, Subject, SurvivalOutcome};

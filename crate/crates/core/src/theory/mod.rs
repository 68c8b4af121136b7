//! Executable versions of the approximation results.
//!
//! Each verifier evaluates the quantity a bound controls, exactly where the
//! setting is finite, and returns it next to the bound:
//!
//! - [`bounds`]: the log-ratio integral estimate and the loss-gap bound for
//!   a similarity `log h` with `h` close to exp-PMI.
//! - [`finite_z`]: kernel mean embeddings that reproduce exp-PMI of a finite
//!   latent model up to cross-anchor kernel leakage.
//! - [`quadrature`]: Monte-Carlo discretization of a kernel mean embedding
//!   and its mean-square identity.
//! - [`clip_limit`]: adversarial search for CLIP embeddings on the
//!   two-mixture model.
//! - [`two_mixture`]: the explicit two-point KME construction for the
//!   two-mixture model.

pub mod anchors;
pub mod bounds;
pub mod clip_limit;
pub mod finite_z;
pub mod quadrature;
pub mod two_mixture;

pub use anchors::place_anchors;
pub use bounds::{lemma8_check, perturbed_positive_table, thm3_check, LogRatioCheck, LossGapCheck};
pub use clip_limit::{clip_max_error, thm6_adversarial_check, ClipLimitConfig, ClipLimitReport};
pub use finite_z::{thm4_construct, thm4_sigma_for, FiniteZConstruction};
pub use quadrature::{thm5_sweep, thm5_trial, DiscreteMeasure, DiscretizationTrial, QuadratureSweep};
pub use two_mixture::{thm7_construct, thm7_sigma_limit, Thm7Construction};

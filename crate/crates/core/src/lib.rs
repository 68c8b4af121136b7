//! Kernel mean embedding similarities for contrastive learning.
//!
//! The crate evaluates three similarity functions over embeddings in the
//! reproducing kernel Hilbert space of a Gaussian kernel:
//!
//! | Similarity | Form |
//! |------------|------|
//! | KME        | `log <h(x), h(y)>_H` for weighted point-set embeddings |
//! | CLIP       | `g(x)·g(y) / tau` for unit vectors |
//! | WPSE       | `<h(x), h(y)>_H` without the logarithm |
//!
//! Alongside the similarities it provides exact oracles on finite latent
//! variable models (joint tables, pointwise mutual information, mutual
//! information), the symmetric contrastive loss in its minibatch and
//! population forms, constructive checks of the approximation results that
//! relate the three similarities to exp-PMI, a small trainer with analytic
//! gradients, and retrieval metrics.
//!
//! ```rust
//! use kme_core::kernel::KernelSpec;
//! use kme_core::embedding::{kme_similarity, PointSetEmbedding};
//!
//! let kernel = KernelSpec::gaussian(1.0).unwrap();
//! let a = PointSetEmbedding::new(vec![vec![1.0, 0.0]], vec![1.0]).unwrap();
//! let s = kme_similarity(&a, &a, &kernel).unwrap();
//! assert!(s.abs() < 1e-15);
//! ```
//!
//! With the default `parallel` feature, independent trials, restarts and
//! sweep points run on the rayon pool. Results are merged in index order, so
//! output is identical with the feature disabled.

pub mod embedding;
pub mod error;
pub mod eval;
pub mod kernel;
pub mod loss;
pub mod matrix;
pub mod par;
pub mod report;
pub mod rng;
pub mod synthetic;
pub mod theory;
pub mod train;

pub use error::{Error, Result};
pub use matrix::Matrix;

//! Bias-invariant self-expressive subspace clustering.
//!
//! A key network and a query network embed every sample; the product of the
//! two embeddings, soft-thresholded, gives the coefficients with which each
//! point is reconstructed from the others. Two adversarial heads try to read
//! a nuisance attribute off the embeddings and the networks are trained to
//! defeat them. The coefficients then feed a spectral clustering step.
//!
//! ```
//! use invsen::datagen::{generate, DataGenConfig};
//! use invsen::trainer::{fit, TrainConfig};
//!
//! let data = generate(&DataGenConfig {
//!     n_per_cluster: 10,
//!     ambient_dim: 12,
//!     subspace_rank: 2,
//!     ..DataGenConfig::default()
//! })?;
//! let config = TrainConfig {
//!     epochs: 2,
//!     batch_size: 15,
//!     ..TrainConfig::default()
//! };
//! let state = fit(config, &data)?;
//! assert_eq!(state.history.len(), 2);
//! # Ok::<(), invsen::Error>(())
//! ```

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod cluster;
pub mod datagen;
pub mod debias;
mod error;
pub mod evalmetrics;
pub mod numkit;
pub mod sennet;
pub mod trainer;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/self-expression.md")]
    mod self_expression {}
    #[doc = include_str!("../../../book/src/debiasing.md")]
    mod debiasing {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/clustering.md")]
    mod clustering {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}

//! Numerical core for diffusion-based causal negative sampling in
//! collaborative filtering.
//!
//! Everything in this crate is `no_std` + `alloc`: interaction corpora and
//! out-of-distribution splits, a confounded synthetic data generator,
//! LightGCN propagation, a DDPM-style denoiser over item embeddings, the
//! environment-posterior regularizer, negative samplers, the joint loss with
//! hand-derived gradients, the training loop and ranking metrics.
//!
//! File formats, timing and the command line live in the `cnsdiff` crate.
//!
//! # Modules
//!
//! - [`corpus`]: datasets, splits, popularity buckets, synthetic generator
//! - [`encoder`]: embedding tables, normalized graph, propagation
//! - [`diffusion`]: noise schedule, denoiser network, forward/reverse process
//! - [`causal`]: environment proxies, posterior head, causal regularizer
//! - [`sampler`]: random / popularity / DNS baselines and the diffusion path
//! - [`objectives`]: BPR, contrastive alignment, joint loss and gradients
//! - [`trainer`]: configuration, optimizers, epoch loop, model selection
//! - [`eval`]: Recall/NDCG, false-hard-negative ratio, grouped reports
//! - [`gradcheck`]: central finite-difference checking of the joint loss

#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod causal;
pub mod corpus;
pub mod diffusion;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod math;
pub mod objectives;
pub mod optim;
pub mod rng;
pub mod sampler;
pub mod trainer;

pub use error::{Error, Result};

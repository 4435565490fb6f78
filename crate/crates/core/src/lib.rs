//! Adversarial entropic-regularized optimal transport on bipartite networks.
//!
//! A dispatcher moves capacity-limited resources from source nodes to target
//! nodes, trading a linear revenue against an entropic spreading term. An
//! adversary with a private per-target type (minor or major offender)
//! perturbs the dispatcher's perceived revenue and pays a punishment that
//! grows with the resources it faces.
//!
//! * [`model`]: network, plans, beliefs, adversary strategies.
//! * [`ot`]: adversary-free regularized transport by dual pricing, and the
//!   unregularized baseline.
//! * [`game`]: static Bayesian equilibrium by alternating best responses,
//!   with a coordinate-wise deviation certificate.
//! * [`dynamic`]: stage-by-stage play with thresholded actions and belief
//!   updates.
//! * [`distributed`]: the same equilibrium computed by simulated per-node
//!   agents under a seeded asynchronous schedule, with a replayable log.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod distributed;
pub mod dynamic;
pub mod error;
pub mod game;
pub mod model;
pub mod ot;

pub use error::{Error, Result};

//! Low-rank estimation and certified ranking for task-specific pairwise
//! preference data.
//!
//! Comparisons `(task, model_a, model_b, outcome)` are modelled with a BTL link
//! on a task-by-model score matrix that is assumed approximately low rank.
//! The crate provides
//!
//! * a nuclear-norm penalized initializer ([`convex`]) and a split-sample
//!   row/column refinement ([`refine`]) for entrywise-accurate scores,
//! * an independent per-task BTL baseline ([`btl`]),
//! * cross-fitted one-step estimators for linear score contrasts together with
//!   their influence functions ([`tangent`]),
//! * multiplier-bootstrap rank bands and top-K certificates ([`certify`]),
//! * top-K recovery metrics ([`metrics`]) and a synthetic data generator
//!   ([`synth`]).
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod btl;
pub mod certify;
pub mod convex;
mod error;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod refine;
pub mod rng;
pub mod split;
pub mod synth;
pub mod tangent;

pub use error::{Error, Result};
pub use model::{
    btl_loss, btl_prob, fisher_weight, recenter_rows, true_rank, ComparisonDataset,
    ComparisonRecord, FactoredScores, ScoreMatrix, TaskModelIndex,
};
pub use nalgebra::{DMatrix, DVector};

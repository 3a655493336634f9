//! Local robustness verification for feed-forward ReLU classifiers.
//!
//! Input boxes are propagated as star sets through dense, convolutional and
//! ReLU layers. [`verifier::verify_query`] tries random counterexamples first,
//! then a relaxed and an approximate reachability pass; [`verifier::verify_exact`]
//! splits every ReLU and is complete on small networks.

// `!(a <= b)` is how NaN gets rejected in validation code.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod bench;
pub mod data;
pub mod falsifier;
pub mod linalg;
pub mod lp;
pub mod metrics;
pub mod network;
pub mod preprocess;
pub mod specgen;
pub mod star;
pub mod trainer;
pub mod verifier;
pub mod vnnlib;

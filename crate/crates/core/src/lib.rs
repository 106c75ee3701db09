//! Forward-backward greedy selection of sparse features for smooth convex
//! objectives.
//!
//! The engine in [`foba`] alternates a forward step (add the best feature
//! by objective reduction or by gradient magnitude) with a backward sweep
//! (drop features whose removal costs less than half of the gain that
//! admitted the most recent one). Objectives plug in through
//! [`objectives::Objective`]; least squares, L2-regularized logistic
//! regression and a linear-chain CRF are provided.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod crf;
pub mod datagen;
pub mod error;
pub mod foba;
pub mod objectives;
pub mod solver;
pub mod types;

pub use error::{Error, Result};
pub use objectives::{LeastSquaresProblem, LogisticL2Problem, Objective};
pub use types::{set_difference, sparsify, DenseVector, Rng, SupportSet};

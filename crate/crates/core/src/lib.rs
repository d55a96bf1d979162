//! Exact off-policy evaluation laboratory for emphatic TD on finite MDPs.
//!
//! The crate computes the emphatic weightings `f` and `m`, the λ-return
//! transition matrix `P_λ`, weighted projections onto a linear feature span,
//! exact contraction moduli of the projected Bellman operators, and runs the
//! stochastic ETD(0), ETD(λ) and off-policy TD(0) learners against the exact
//! projected fixed point.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audit;
pub mod emphasis;
pub mod error;
pub mod learner;
pub mod mdp;
pub mod numfmt;
pub mod operators;

pub use emphasis::{
    beta, emphasis_bundle, emphasis_vector, followon_vector, kappa, plambda, EmphasisBundle, InterestVector,
};
pub use error::{EtdError, Result};
pub use mdp::{
    importance_ratios, induced_chain, stationary_distribution, true_value, FeatureMap, InducedChain, Policy,
    StateDistribution, TabularMdp,
};
pub use nalgebra::{DMatrix, DVector};

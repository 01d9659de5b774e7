//! Convolutional Fenchel-Young losses.
//!
//! Convex, smooth surrogate losses for arbitrary discrete target losses whose
//! target regret is bounded linearly by the surrogate regret. The crate
//! provides the target-loss decompositions, base negentropies, solvers for the
//! inner simplex problem, the loss itself, prediction links, and a harness that
//! checks the regret bounds and regularity properties on small instances.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conv_conjugate;
pub mod error;
pub mod fy_loss;
pub mod harness;
mod linalg;
pub mod links;
pub mod negentropy;
pub mod target_loss;

pub use conv_conjugate::{
    caratheodory_sparsify, conv_conjugate_grad, solve_box_hamming, solve_pi_generic,
    solve_pi_multiclass_shannon, BoxSolution, PiSolution, SolveMethod,
};
pub use error::{Error, Result};
pub use fy_loss::{ConvFYLoss, RegretDecomposition};
pub use links::{
    fast_multiclass_link, hamming_threshold_link, pi_argmax_link, probability_estimate, randomized_link,
    sparsified_link, LinkKind, LinkResult, ProbabilityEstimate,
};
pub use negentropy::{simplex_project, EntropyKind, Negentropy};
pub use target_loss::{ClassDistribution, DecomposedTargetLoss, LabelEncoding, LossFamily};

//! Prediction links and the probability estimator.
//!
//! Deterministic links break ties toward the lowest index.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::conv_conjugate::{caratheodory_sparsify, conv_conjugate_grad, PiSolution};
use crate::error::{invalid, Result};
use crate::fy_loss::ConvFYLoss;
use crate::linalg::argmax_first;
use crate::target_loss::{bits_to_index, DecomposedTargetLoss, LabelEncoding};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    PiArgmax,
    Sparsified,
    Randomized,
    FastMulticlass,
    HammingThreshold,
}

#[derive(Debug, Clone, Serialize)]
pub struct LinkResult {
    /// 0-based prediction index.
    pub prediction: usize,
    /// Simplex weights the decision was read from. The shortcut links never
    /// materialize them.
    pub pi_used: Option<Vec<f64>>,
    pub link_kind: LinkKind,
}

/// Lowest-index argmax of `π`.
pub fn pi_argmax_link(solution: &PiSolution) -> LinkResult {
    LinkResult {
        prediction: argmax_first(&solution.pi),
        pi_used: Some(solution.pi.clone()),
        link_kind: LinkKind::PiArgmax,
    }
}

/// Argmax of the raw scores. For the 0-1 loss with the Shannon negentropy the
/// argmax set of θ equals the argmax set of the unique minimizer `π`, so this
/// skips the solver entirely.
pub fn fast_multiclass_link(theta: &[f64]) -> LinkResult {
    LinkResult {
        prediction: argmax_first(theta),
        pi_used: None,
        link_kind: LinkKind::FastMulticlass,
    }
}

/// Sparsifies `π` to at most `affdim(L) + 1` nonzeros, then takes its argmax.
pub fn sparsified_link(loss: &DecomposedTargetLoss, solution: &PiSolution) -> Result<LinkResult> {
    let sparse = caratheodory_sparsify(loss, &solution.pi)?;
    Ok(LinkResult {
        prediction: argmax_first(&sparse),
        pi_used: Some(sparse),
        link_kind: LinkKind::Sparsified,
    })
}

/// Draws `t` with probability `π_t` from a generator seeded with `seed`.
pub fn randomized_link(solution: &PiSolution, seed: u64) -> LinkResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LinkResult {
        prediction: sample_index(&solution.pi, &mut rng),
        pi_used: Some(solution.pi.clone()),
        link_kind: LinkKind::Randomized,
    }
}

pub(crate) fn sample_index<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last_positive = i;
            acc += w;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Coordinate-wise threshold of the box optimum: bit `i` is set iff `ν*_i > 0.5`.
/// Returns the index of that bit-vector in lexicographic order.
pub fn hamming_threshold_link(nu_star: &[f64]) -> Result<LinkResult> {
    if let Some(i) = nu_star.iter().position(|v| !(-1e-12..=1.0 + 1e-12).contains(v)) {
        return Err(invalid(format!(
            "nu_star[{i}] = {} is outside [0, 1]",
            nu_star[i]
        )));
    }
    let bits: Vec<u8> = nu_star.iter().map(|&v| u8::from(v > 0.5)).collect();
    Ok(LinkResult {
        prediction: bits_to_index(&bits),
        pi_used: None,
        link_kind: LinkKind::HammingThreshold,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbabilityEstimate {
    /// Estimate of `E_{y∼η}[ρ(y)]`.
    pub mean_rho_estimate: Vec<f64>,
    /// Class probabilities for one-hot encodings, per-bit marginals
    /// `(1 − estimate)/2` for signed-bit encodings.
    pub decoded: Option<Vec<f64>>,
}

/// `∇Ω*(θ + Lπ)` as an estimate of `E_{y∼η}[ρ(y)]`, consistent at the
/// surrogate risk minimizer.
pub fn probability_estimate(fy: &ConvFYLoss, theta: &[f64]) -> Result<ProbabilityEstimate> {
    let sol = fy.solve(theta)?;
    let est = conv_conjugate_grad(fy.omega(), &sol);
    let decoded = match fy.target().encoding() {
        LabelEncoding::OneHot => est.clone(),
        LabelEncoding::SignedBits => est.iter().map(|e| (1.0 - e) / 2.0).collect(),
    };
    Ok(ProbabilityEstimate {
        mean_rho_estimate: est,
        decoded: Some(decoded),
    })
}

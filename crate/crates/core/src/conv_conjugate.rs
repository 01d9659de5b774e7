//! The infimal-convolution problem behind the conjugate of a convolutional
//! negentropy:
//!
//! ```text
//! Ω_T*(θ) = min_{π ∈ Δ^N} Ω*(θ + L π)
//! ```
//!
//! Three solvers are provided:
//!
//! * [`solve_pi_multiclass_shannon`]: closed form for the 0-1 loss with the
//!   Shannon negentropy. The minimizer is unique and is obtained by sorting θ
//!   and thresholding, in `O(K log K)`.
//! * [`solve_pi_generic`]: projected gradient over `Δ^N` with Armijo backtracking,
//!   stopped on the Frank-Wolfe gap, followed by Newton refinement on the
//!   identified face.
//! * [`solve_box_hamming`]: the equivalent box-constrained problem
//!   `min_{ν ∈ [0,1]^ϱ} Ω*(θ + ν)` for the Hamming loss.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{check_finite, invalid, Error, Result};
use crate::linalg::{dot, kernel_vector, mat_t_vec, mat_vec};
use crate::negentropy::{log_sum_exp, simplex_project, simplex_threshold, softmax, EntropyKind, Negentropy};
use crate::target_loss::{DecomposedTargetLoss, LabelEncoding, LossFamily};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const MAX_ITERATIONS: usize = 100_000;

const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1e-30;
const KERNEL_TOL: f64 = 1e-10;

/// Objective differences below this (relative) level are rounding noise.
fn noise(f: f64) -> f64 {
    8.0 * f64::EPSILON * (1.0 + f.abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    /// Sort-and-threshold closed form (0-1 loss, Shannon).
    SortThreshold,
    ProjectedGradient,
    BoxForm,
}

/// A minimizer `π` of `Ω*(θ + Lπ)` over the simplex, with diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct PiSolution {
    pub pi: Vec<f64>,
    /// `z = θ + Lπ`.
    pub perturbed_point: Vec<f64>,
    /// `Ω*(z)`, which equals `Ω_T*(θ)` at a minimizer.
    pub objective: f64,
    pub method: SolveMethod,
    pub iterations: usize,
    /// `|min_t ⟨∇Ω*(z), ℓ^ρ(t)⟩ − ⟨∇Ω*(z), Lπ⟩|`, zero at an exact minimizer.
    pub stationarity_gap: f64,
    /// Threshold `τ` of the sort-and-threshold solver.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

/// Result of the box-form solver: the optimal point of the box and the
/// product-form simplex weights that reproduce it.
#[derive(Debug, Clone, Serialize)]
pub struct BoxSolution {
    pub nu_star: Vec<f64>,
    pub solution: PiSolution,
}

/// Checks that `omega` is a valid base negentropy for `loss`: dimensions agree,
/// and the Shannon negentropy (whose domain is the simplex) is only paired with
/// one-hot label encodings.
pub fn check_compatible(loss: &DecomposedTargetLoss, omega: &Negentropy) -> Result<()> {
    if omega.dim() != loss.rho_dim() {
        return Err(invalid(format!(
            "negentropy dimension {} does not match encoding dimension {}",
            omega.dim(),
            loss.rho_dim()
        )));
    }
    if omega.kind() == EntropyKind::Shannon && loss.encoding() != LabelEncoding::OneHot {
        return Err(Error::DomainViolation(format!(
            "the Shannon negentropy needs a one-hot label encoding; {} is not one-hot",
            loss.name()
        )));
    }
    Ok(())
}

/// Unique minimizer of `ln⟨exp(θ + 1 − π), 1⟩` over `Δ^K`.
///
/// Sort θ descending, take the largest `n` with `1 + n·θ_[n] > Σ_{i≤n} θ_[i]`,
/// set `τ = (Σ_{i≤n} θ_[i] − 1)/n` and `π_i = max(θ_i − τ, 0)`.
pub fn solve_pi_multiclass_shannon(theta: &[f64]) -> PiSolution {
    let (tau, _) = simplex_threshold(theta);
    let pi: Vec<f64> = theta.iter().map(|&t| (t - tau).max(0.0)).collect();
    let z: Vec<f64> = theta.iter().zip(&pi).map(|(t, p)| t + 1.0 - p).collect();
    let g = softmax(&z);
    // For ℓ^ρ(t) = 1 − e_t the gap reduces to max_t g_t − ⟨g, π⟩.
    let gmax = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let gap = (gmax - dot(&g, &pi)).abs();
    PiSolution {
        objective: log_sum_exp(&z),
        pi,
        perturbed_point: z,
        method: SolveMethod::SortThreshold,
        iterations: 0,
        stationarity_gap: gap,
        threshold: Some(tau),
    }
}

struct Problem<'a> {
    l: &'a DMatrix<f64>,
    omega: &'a Negentropy,
    theta: &'a [f64],
}

impl Problem<'_> {
    fn point(&self, pi: &[f64]) -> Vec<f64> {
        let lp = mat_vec(self.l, pi);
        self.theta.iter().zip(lp).map(|(t, v)| t + v).collect()
    }

    fn value(&self, pi: &[f64]) -> f64 {
        self.omega.conjugate(&self.point(pi))
    }

    /// `(z, Ω*(z), ∇Ω*(z), ∇_π)`.
    fn eval(&self, pi: &[f64]) -> (Vec<f64>, f64, Vec<f64>, Vec<f64>) {
        let z = self.point(pi);
        let f = self.omega.conjugate(&z);
        let gz = self.omega.conjugate_grad(&z);
        let gp = mat_t_vec(self.l, &gz);
        (z, f, gz, gp)
    }
}

/// Frank-Wolfe gap over the simplex, `⟨g, π⟩ − min_t g_t`.
fn simplex_fw_gap(grad: &[f64], pi: &[f64]) -> f64 {
    let m = grad.iter().cloned().fold(f64::INFINITY, f64::min);
    (dot(grad, pi) - m).max(0.0)
}

fn finish(problem: &Problem, pi: Vec<f64>, method: SolveMethod, iterations: usize) -> PiSolution {
    let (z, f, _, gp) = problem.eval(&pi);
    PiSolution {
        stationarity_gap: simplex_fw_gap(&gp, &pi),
        pi,
        perturbed_point: z,
        objective: f,
        method,
        iterations,
        threshold: None,
    }
}

/// Minimizes `Ω*(θ + Lπ)` over `Δ^N` for an arbitrary decomposed loss.
///
/// Projected gradient from the uniform point, Armijo backtracking by halving,
/// stopped once the Frank-Wolfe gap is at most `tol`. Whenever the gap is small
/// the iterate is refined by Newton steps restricted to its support, which
/// brings the objective to working precision.
pub fn solve_pi_generic(
    loss: &DecomposedTargetLoss,
    omega: &Negentropy,
    theta: &[f64],
    tol: f64,
) -> Result<PiSolution> {
    check_compatible(loss, omega)?;
    check_theta(loss, theta)?;
    if tol <= 0.0 || !tol.is_finite() {
        return Err(invalid(format!("tolerance must be positive, got {tol}")));
    }
    let problem = Problem {
        l: loss.loss_matrix(),
        omega,
        theta,
    };
    let n = loss.num_predictions();
    let mut pi = vec![1.0 / n as f64; n];
    let mut step = 1.0;
    let mut last_polish_gap = f64::INFINITY;

    for it in 0..MAX_ITERATIONS {
        let (_, f, _, gp) = problem.eval(&pi);
        let gap = simplex_fw_gap(&gp, &pi);
        if gap <= tol {
            let pi = face_newton(&problem, pi).0;
            return Ok(finish(&problem, pi, SolveMethod::ProjectedGradient, it));
        }
        // Refine on the current face once the gap has dropped well below its
        // value at the previous attempt.
        if gap < 1e-3 && gap < 0.1 * last_polish_gap {
            last_polish_gap = gap;
            let (cand, improved) = face_newton(&problem, pi.clone());
            if improved {
                pi = cand;
                continue;
            }
        }

        let mut moved = false;
        while step >= MIN_STEP {
            let trial: Vec<f64> = pi.iter().zip(&gp).map(|(p, g)| p - step * g).collect();
            let cand = simplex_project(&trial);
            let decrease: f64 = gp
                .iter()
                .zip(cand.iter().zip(&pi))
                .map(|(g, (c, p))| g * (c - p))
                .sum();
            if decrease >= 0.0 {
                step *= 0.5;
                continue;
            }
            let fc = problem.value(&cand);
            if fc <= f + ARMIJO * decrease {
                pi = cand;
                step = (step * 2.0).min(1e12);
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            // No descent step exists at working precision; accept the refined
            // point if it certifies optimality, otherwise report failure.
            let (cand, _) = face_newton(&problem, pi.clone());
            let sol = finish(&problem, cand, SolveMethod::ProjectedGradient, it);
            if sol.stationarity_gap <= tol {
                return Ok(sol);
            }
            return Err(Error::ConvergenceFailure {
                iterations: it,
                gap: sol.stationarity_gap,
                last_iterate: sol.pi,
            });
        }
    }
    let sol = finish(&problem, pi, SolveMethod::ProjectedGradient, MAX_ITERATIONS);
    if sol.stationarity_gap <= tol {
        return Ok(sol);
    }
    Err(Error::ConvergenceFailure {
        iterations: MAX_ITERATIONS,
        gap: sol.stationarity_gap,
        last_iterate: sol.pi,
    })
}

/// Newton iterations on `{π_S : Σ π_S = 1}` where `S` is the support of `π`,
/// optionally enlarged by the Frank-Wolfe vertex, keeping `π ≥ 0` by a ratio
/// test. Returns the refined point and whether it improved.
fn face_newton(problem: &Problem, mut pi: Vec<f64>) -> (Vec<f64>, bool) {
    let mut improved = false;
    let (_, mut f, _, mut gp) = problem.eval(&pi);
    let mut gap = simplex_fw_gap(&gp, &pi);
    for _ in 0..50 {
        let base: Vec<usize> = (0..pi.len()).filter(|&i| pi[i] > 0.0).collect();
        let entering = argmin(&gp).filter(|&j| pi[j] == 0.0 && gap > 0.0);
        let mut step = None;
        if let Some(j) = entering {
            let mut s = base.clone();
            s.push(j);
            if let Some(d) = newton_direction(problem, &pi, &gp, &s) {
                if d[s.len() - 1] > 0.0 {
                    step = Some((s, d));
                }
            }
        }
        if step.is_none() && base.len() > 1 {
            step = newton_direction(problem, &pi, &gp, &base).map(|d| (base, d));
        }
        let Some((support, d)) = step else {
            break;
        };
        // Centering both factors keeps the slope free of cancellation.
        let m = support.iter().map(|&i| gp[i]).sum::<f64>() / support.len() as f64;
        let slope: f64 = support.iter().zip(&d).map(|(&i, dj)| (gp[i] - m) * dj).sum();
        if !(slope < 0.0) {
            break;
        }
        let mut alpha_max = f64::INFINITY;
        let mut blocking = None;
        for (j, &i) in support.iter().enumerate() {
            if d[j] < 0.0 {
                let r = pi[i] / -d[j];
                if r < alpha_max {
                    alpha_max = r;
                    blocking = Some(i);
                }
            }
        }
        let mut alpha = alpha_max.min(1.0);
        let mut accepted = None;
        for _ in 0..60 {
            let mut cand = pi.clone();
            for (j, &i) in support.iter().enumerate() {
                cand[i] = (cand[i] + alpha * d[j]).max(0.0);
            }
            if alpha == alpha_max {
                if let Some(b) = blocking {
                    cand[b] = 0.0;
                }
            }
            normalize(&mut cand);
            let (_, fc, _, gc) = problem.eval(&cand);
            let gap_c = simplex_fw_gap(&gc, &cand);
            // Near the optimum objective changes vanish below rounding, so a
            // smaller gap at an unchanged objective also counts as progress.
            if fc <= f + ARMIJO * alpha * slope || (fc <= f + noise(f) && gap_c < gap) {
                accepted = Some((cand, fc, gc, gap_c));
                break;
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((c, fc, gc, gap_c)) => {
                pi = c;
                f = fc;
                gp = gc;
                gap = gap_c;
                improved = true;
                if gap == 0.0 {
                    break;
                }
            }
            None => break,
        }
    }
    (pi, improved)
}

fn argmin(v: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in v.iter().enumerate() {
        if best.is_none_or(|b| x < v[b]) {
            best = Some(i);
        }
    }
    best
}

/// Newton direction for the objective restricted to `{π_S : Σ π_S = 1}`,
/// computed in the null-space basis `d = (w, −Σ w)`.
fn newton_direction(problem: &Problem, pi: &[f64], gp: &[f64], support: &[usize]) -> Option<Vec<f64>> {
    let s = support.len();
    if s < 2 {
        return None;
    }
    let z = problem.point(pi);
    let hz = problem.omega.conjugate_hessian(&z);
    let last = support[s - 1];
    // Columns L_j − L_last span the directions that keep the sum fixed.
    let lz = DMatrix::from_fn(problem.l.nrows(), s - 1, |i, j| {
        problem.l[(i, support[j])] - problem.l[(i, last)]
    });
    let h = lz.transpose() * hz * &lz;
    let rhs = DVector::from_fn(s - 1, |j, _| gp[last] - gp[support[j]]);
    let svd = h.svd(true, true);
    let smax = svd.singular_values.max();
    if !(smax > 0.0) {
        return None;
    }
    let w = svd.solve(&rhs, 1e-12 * smax).ok()?;
    let mut d: Vec<f64> = w.iter().copied().collect();
    d.push(-w.sum());
    d.iter().all(|x| x.is_finite()).then_some(d)
}

fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
}

fn check_theta(loss: &DecomposedTargetLoss, theta: &[f64]) -> Result<()> {
    if theta.len() != loss.rho_dim() {
        return Err(invalid(format!(
            "score has {} entries, encoding dimension is {}",
            theta.len(),
            loss.rho_dim()
        )));
    }
    check_finite("theta", theta)
}

/// Minimizes `Ω*(θ + ν)` over the box `[0,1]^ϱ`, the convex hull of the Hamming
/// loss columns, and lifts the optimum to the product-form weights
/// `π_t = Π_i ν_i^{ν(t)_i} (1 − ν_i)^{1 − ν(t)_i}`, for which `Lπ = ν`.
pub fn solve_box_hamming(
    loss: &DecomposedTargetLoss,
    omega: &Negentropy,
    theta: &[f64],
    tol: f64,
) -> Result<BoxSolution> {
    if *loss.family() != LossFamily::Hamming {
        return Err(invalid(format!(
            "box-form solver needs a Hamming loss, got {}",
            loss.name()
        )));
    }
    check_compatible(loss, omega)?;
    check_theta(loss, theta)?;
    let d = theta.len();
    let objective = |nu: &[f64]| {
        let z: Vec<f64> = theta.iter().zip(nu).map(|(t, v)| t + v).collect();
        omega.conjugate(&z)
    };
    let box_gap = |g: &[f64], nu: &[f64]| (dot(g, nu) - g.iter().map(|&x| x.min(0.0)).sum::<f64>()).max(0.0);
    let mut nu = vec![0.5; d];
    let mut step = 1.0;
    let mut iterations = 0;
    loop {
        let z: Vec<f64> = theta.iter().zip(&nu).map(|(t, v)| t + v).collect();
        let f = omega.conjugate(&z);
        let g = omega.conjugate_grad(&z);
        let gap = box_gap(&g, &nu);
        if gap <= tol {
            break;
        }
        if iterations == MAX_ITERATIONS {
            return Err(Error::ConvergenceFailure {
                iterations,
                gap,
                last_iterate: nu,
            });
        }
        iterations += 1;
        let mut moved = false;
        while step >= MIN_STEP {
            let cand: Vec<f64> = nu
                .iter()
                .zip(&g)
                .map(|(v, gi)| (v - step * gi).clamp(0.0, 1.0))
                .collect();
            let decrease: f64 = g
                .iter()
                .zip(cand.iter().zip(&nu))
                .map(|(gi, (c, v))| gi * (c - v))
                .sum();
            if decrease < 0.0 && objective(&cand) <= f + ARMIJO * decrease + noise(f) {
                nu = cand;
                moved = true;
                step = (step * 2.0).min(1e12);
                break;
            }
            step *= 0.5;
        }
        if !moved {
            return Err(Error::ConvergenceFailure {
                iterations,
                gap,
                last_iterate: nu,
            });
        }
    }

    let n = loss.num_predictions();
    let pi: Vec<f64> = (0..n)
        .map(|t| {
            (0..d)
                .map(|i| {
                    if (t >> (d - 1 - i)) & 1 == 1 {
                        nu[i]
                    } else {
                        1.0 - nu[i]
                    }
                })
                .product()
        })
        .collect();
    let z: Vec<f64> = theta.iter().zip(&nu).map(|(t, v)| t + v).collect();
    let g = omega.conjugate_grad(&z);
    let solution = PiSolution {
        objective: omega.conjugate(&z),
        stationarity_gap: box_gap(&g, &nu),
        pi,
        perturbed_point: z,
        method: SolveMethod::BoxForm,
        iterations,
        threshold: None,
    };
    Ok(BoxSolution {
        nu_star: nu,
        solution,
    })
}

/// Gradient of `Ω_T*` at θ: `∇Ω*(θ + Lπ)` for any minimizer `π`.
pub fn conv_conjugate_grad(omega: &Negentropy, solution: &PiSolution) -> Vec<f64> {
    omega.conjugate_grad(&solution.perturbed_point)
}

/// Replaces `π` by weights with at most `affdim(L) + 1` nonzeros and the same
/// image `Lπ`.
///
/// While the support is too large, a kernel vector `d` of the support columns
/// stacked over a row of ones is found, and `π` moves along `d` until the first
/// coordinate (lowest index on ties) reaches zero.
pub fn caratheodory_sparsify(loss: &DecomposedTargetLoss, pi: &[f64]) -> Result<Vec<f64>> {
    if pi.len() != loss.num_predictions() {
        return Err(invalid(format!(
            "weights have {} entries, loss has N={}",
            pi.len(),
            loss.num_predictions()
        )));
    }
    check_finite("pi", pi)?;
    let sum: f64 = pi.iter().sum();
    if pi.iter().any(|&p| p < -1e-12) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::DomainViolation("weights are not on the simplex".into()));
    }
    let bound = loss.affine_dimension() + 1;
    let l = loss.loss_matrix();
    let rows = l.nrows();
    let mut out: Vec<f64> = pi.iter().map(|&p| p.max(0.0)).collect();

    loop {
        let support: Vec<usize> = (0..out.len()).filter(|&i| out[i] > 0.0).collect();
        if support.len() <= bound {
            break;
        }
        let a = DMatrix::from_fn(rows + 1, support.len(), |i, j| {
            if i < rows {
                l[(i, support[j])]
            } else {
                1.0
            }
        });
        let mut d = kernel_vector(&a, KERNEL_TOL).ok_or_else(|| {
            Error::Internal(format!(
                "no kernel vector for support of size {} > {bound}",
                support.len()
            ))
        })?;
        if d.iter().all(|&x| x >= 0.0) {
            d.iter_mut().for_each(|x| *x = -*x);
        }
        let mut gamma = f64::INFINITY;
        let mut binding = None;
        for (j, &i) in support.iter().enumerate() {
            if d[j] < 0.0 {
                let r = out[i] / -d[j];
                if r < gamma {
                    gamma = r;
                    binding = Some(i);
                }
            }
        }
        let binding = binding.ok_or_else(|| Error::Internal("kernel vector has no negative entry".into()))?;
        for (j, &i) in support.iter().enumerate() {
            out[i] = (out[i] + gamma * d[j]).max(0.0);
        }
        out[binding] = 0.0;
    }
    normalize(&mut out);
    Ok(out)
}

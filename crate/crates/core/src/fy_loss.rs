//! Convolutional Fenchel-Young loss
//!
//! ```text
//! L(θ, y) = Ω_T*(θ) + Ω_T(ρ(y)) − ⟨θ, ρ(y)⟩,   Ω_T = Ω + T,
//! Ω_T*(θ) = min_{π ∈ Δ^N} Ω*(θ + Lπ).
//! ```
//!
//! Surrogate Bayes risk and regret are evaluated in closed form:
//! the Bayes risk is `E_η[Ω_T(ρ(y))] − Ω_T(μ)` with `μ = E_η[ρ(y)]`, so the
//! regret is `Ω_T*(θ) − ⟨θ, μ⟩ + Ω_T(μ)`. For any feasible `π` that regret
//! splits into a Fenchel-Young term at `z = θ + Lπ` plus the `π`-mixture of
//! target regrets.

use serde::Serialize;

use crate::conv_conjugate::{
    check_compatible, conv_conjugate_grad, solve_box_hamming, solve_pi_generic, solve_pi_multiclass_shannon,
    PiSolution, DEFAULT_TOL,
};
use crate::error::{invalid, Result};
use crate::linalg::dot;
use crate::negentropy::{EntropyKind, Negentropy};
use crate::target_loss::{ClassDistribution, DecomposedTargetLoss, LossFamily};

#[derive(Debug, Clone)]
pub struct ConvFYLoss {
    loss: DecomposedTargetLoss,
    omega: Negentropy,
    solver_tol: f64,
    /// `Ω_T(ρ(y))` for every label.
    omega_t_at_labels: Vec<f64>,
}

/// The two nonnegative parts of the surrogate regret at a given `π`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegretDecomposition {
    /// `Ω*(z) − ⟨z, μ⟩ + Ω(μ)`.
    pub fy_term: f64,
    /// `Σ_t π_t Regret_ℓ(t, η)`.
    pub mixture_term: f64,
}

impl ConvFYLoss {
    pub fn new(loss: DecomposedTargetLoss, omega: Negentropy) -> Result<Self> {
        Self::with_tol(loss, omega, DEFAULT_TOL)
    }

    pub fn with_tol(loss: DecomposedTargetLoss, omega: Negentropy, solver_tol: f64) -> Result<Self> {
        check_compatible(&loss, &omega)?;
        if !(solver_tol > 0.0) {
            return Err(invalid(format!(
                "solver tolerance must be positive, got {solver_tol}"
            )));
        }
        let mut this = Self {
            loss,
            omega,
            solver_tol,
            omega_t_at_labels: Vec::new(),
        };
        this.omega_t_at_labels = (0..this.loss.num_classes())
            .map(|y| this.omega_t_value(this.loss.rho(y)))
            .collect::<Result<_>>()?;
        Ok(this)
    }

    pub fn target(&self) -> &DecomposedTargetLoss {
        &self.loss
    }

    pub fn omega(&self) -> &Negentropy {
        &self.omega
    }

    pub fn solver_tol(&self) -> f64 {
        self.solver_tol
    }

    /// Whether `solve` takes the sort-and-threshold route.
    pub fn is_multiclass_shannon(&self) -> bool {
        self.loss.family() == &LossFamily::ZeroOne && self.omega.kind() == EntropyKind::Shannon
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.loss.rho_dim() {
            return Err(invalid(format!(
                "score has {} entries, encoding dimension is {}",
                theta.len(),
                self.loss.rho_dim()
            )));
        }
        crate::error::check_finite("theta", theta)
    }

    fn check_label(&self, y: usize) -> Result<()> {
        if y >= self.loss.num_classes() {
            return Err(invalid(format!(
                "label {y} out of range (K={})",
                self.loss.num_classes()
            )));
        }
        Ok(())
    }

    /// A member of `Π(θ)`. Dispatches to the closed form for (0-1, Shannon), to
    /// the box form for (Hamming, squared norm), and to the generic solver
    /// otherwise.
    pub fn solve(&self, theta: &[f64]) -> Result<PiSolution> {
        self.check_theta(theta)?;
        match (self.loss.family(), self.omega.kind()) {
            (LossFamily::ZeroOne, EntropyKind::Shannon) => Ok(solve_pi_multiclass_shannon(theta)),
            (LossFamily::Hamming, EntropyKind::SquaredNorm) => {
                Ok(solve_box_hamming(&self.loss, &self.omega, theta, self.solver_tol)?.solution)
            }
            _ => solve_pi_generic(&self.loss, &self.omega, theta, self.solver_tol),
        }
    }

    /// `Ω_T*(θ)`.
    pub fn conjugate_value(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.solve(theta)?.objective)
    }

    /// `∇Ω_T*(θ)`.
    pub fn conjugate_grad(&self, theta: &[f64]) -> Result<Vec<f64>> {
        Ok(conv_conjugate_grad(&self.omega, &self.solve(theta)?))
    }

    /// `Ω_T(p) = Ω(p) + T(p)`.
    pub fn omega_t_value(&self, p: &[f64]) -> Result<f64> {
        Ok(self.omega.value(p)? + self.loss.transformed_bayes_negative(p)?)
    }

    pub fn loss_value(&self, theta: &[f64], y: usize) -> Result<f64> {
        self.check_label(y)?;
        let sol = self.solve(theta)?;
        Ok(self.loss_value_at(&sol, theta, y))
    }

    fn loss_value_at(&self, sol: &PiSolution, theta: &[f64], y: usize) -> f64 {
        sol.objective + self.omega_t_at_labels[y] - dot(theta, self.loss.rho(y))
    }

    /// `∇Ω*(θ + Lπ) − ρ(y)`.
    pub fn loss_grad(&self, theta: &[f64], y: usize) -> Result<Vec<f64>> {
        Ok(self.loss_value_and_grad(theta, y)?.1)
    }

    pub fn loss_value_and_grad(&self, theta: &[f64], y: usize) -> Result<(f64, Vec<f64>)> {
        self.check_label(y)?;
        let sol = self.solve(theta)?;
        let g = conv_conjugate_grad(&self.omega, &sol);
        let grad = g.iter().zip(self.loss.rho(y)).map(|(a, b)| a - b).collect();
        Ok((self.loss_value_at(&sol, theta, y), grad))
    }

    /// `E_{y∼η}[L(θ, y)]`.
    pub fn surrogate_risk(&self, theta: &[f64], eta: &ClassDistribution) -> Result<f64> {
        let mu = self.loss.mean_embedding(eta)?;
        let sol = self.solve(theta)?;
        Ok(sol.objective - dot(theta, &mu) + dot(eta.as_slice(), &self.omega_t_at_labels))
    }

    /// Closed-form Bayes surrogate risk `E_η[Ω_T(ρ(y))] − Ω_T(E_η[ρ(y)])`.
    pub fn surrogate_bayes_risk(&self, eta: &ClassDistribution) -> Result<f64> {
        let mu = self.loss.mean_embedding(eta)?;
        Ok(dot(eta.as_slice(), &self.omega_t_at_labels) - self.omega_t_value(&mu)?)
    }

    /// Closed-form surrogate regret `Ω_T*(θ) − ⟨θ, μ⟩ + Ω_T(μ)`.
    pub fn surrogate_regret(&self, theta: &[f64], eta: &ClassDistribution) -> Result<f64> {
        let sol = self.solve(theta)?;
        self.surrogate_regret_at(&sol, theta, eta)
    }

    /// Surrogate regret using an already computed member of `Π(θ)`.
    pub fn surrogate_regret_at(
        &self,
        sol: &PiSolution,
        theta: &[f64],
        eta: &ClassDistribution,
    ) -> Result<f64> {
        let mu = self.loss.mean_embedding(eta)?;
        Ok(sol.objective - dot(theta, &mu) + self.omega_t_value(&mu)?)
    }

    /// Splits the surrogate regret at `π = sol.pi` into the Fenchel-Young term
    /// at the perturbed point and the mixture of target regrets.
    pub fn regret_decomposition(
        &self,
        eta: &ClassDistribution,
        sol: &PiSolution,
    ) -> Result<RegretDecomposition> {
        let mu = self.loss.mean_embedding(eta)?;
        let z = &sol.perturbed_point;
        let fy_term = self.omega.conjugate(z) - dot(z, &mu) + self.omega.value(&mu)?;
        let regrets = self.loss.target_regrets(eta)?;
        let mixture_term = dot(&sol.pi, &regrets);
        Ok(RegretDecomposition {
            fy_term,
            mixture_term,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const LN2: f64 = std::f64::consts::LN_2;

    fn mc_shannon(k: usize) -> ConvFYLoss {
        ConvFYLoss::new(
            DecomposedTargetLoss::make_zero_one(k).unwrap(),
            Negentropy::shannon(k),
        )
        .unwrap()
    }

    fn mc_sq(k: usize) -> ConvFYLoss {
        ConvFYLoss::new(
            DecomposedTargetLoss::make_zero_one(k).unwrap(),
            Negentropy::squared_norm(k),
        )
        .unwrap()
    }

    fn random_eta(rng: &mut ChaCha8Rng, k: usize) -> ClassDistribution {
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let mut v: Vec<f64> = raw.iter().map(|x| x / s).collect();
        let drift = 1.0 - v.iter().sum::<f64>();
        v[0] += drift;
        ClassDistribution::new(v).unwrap()
    }

    #[test]
    fn omega_t_examples() {
        let f = mc_shannon(2);
        assert_eq!(f.omega_t_value(&[1.0, 0.0]).unwrap(), 0.0);
        assert!((f.omega_t_value(&[0.5, 0.5]).unwrap() - (-LN2 - 0.5)).abs() < 1e-15);
        let h = ConvFYLoss::new(
            DecomposedTargetLoss::make_hamming(1).unwrap(),
            Negentropy::squared_norm(1),
        )
        .unwrap();
        assert_eq!(h.omega_t_value(&[1.0]).unwrap(), 0.5);
        assert!(f.omega_t_value(&[0.7, 0.7]).is_err());
    }

    #[test]
    fn loss_value_examples() {
        let f = mc_shannon(2);
        assert!((f.loss_value(&[0.0, 0.0], 0).unwrap() - (LN2 + 0.5)).abs() < 1e-14);
        assert!((LN2 + 0.5 - 1.193147).abs() < 1e-6);
        let mut th = vec![-10.0; 4];
        th[2] = 10.0;
        assert!(mc_shannon(4).loss_value(&th, 2).unwrap() < 0.01);
        assert!((mc_sq(2).loss_value(&[0.0, 0.0], 0).unwrap() - 0.75).abs() < 1e-12);
        assert!(f.loss_value(&[0.0, 0.0], 2).is_err());
    }

    #[test]
    fn loss_grad_example() {
        let g = mc_shannon(2).loss_grad(&[0.0, 0.0], 0).unwrap();
        assert!(max_abs_diff(&g, &[-0.5, 0.5]) < 1e-15);
    }

    #[test]
    fn loss_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let h = 1e-5;
        for f in [mc_shannon(3), mc_sq(4)] {
            for _ in 0..100 {
                let k = f.target().num_classes();
                let th: Vec<f64> = (0..k).map(|_| rng.random_range(-5.0..5.0)).collect();
                let y = rng.random_range(0..k);
                let g = f.loss_grad(&th, y).unwrap();
                let fd: Vec<f64> = (0..k)
                    .map(|i| {
                        let mut a = th.clone();
                        let mut b = th.clone();
                        a[i] += h;
                        b[i] -= h;
                        (f.loss_value(&a, y).unwrap() - f.loss_value(&b, y).unwrap()) / (2.0 * h)
                    })
                    .collect();
                let scale = crate::linalg::norm2(&g).max(1e-8);
                assert!(crate::linalg::norm2(&crate::linalg::sub(&g, &fd)) / scale <= 1e-5);
            }
        }
    }

    #[test]
    fn bayes_risk_examples() {
        let f = mc_shannon(2);
        let u = ClassDistribution::uniform(2);
        assert!((f.surrogate_bayes_risk(&u).unwrap() - (LN2 + 0.5)).abs() < 1e-15);
        for y in 0..2 {
            let pm = ClassDistribution::point_mass(2, y);
            assert_eq!(f.surrogate_bayes_risk(&pm).unwrap(), 0.0);
        }
    }

    /// Minimizes the surrogate risk by gradient descent with backtracking, the
    /// oracle for the closed-form Bayes risk.
    fn minimize_risk(f: &ConvFYLoss, eta: &ClassDistribution) -> f64 {
        let mu = f.target().mean_embedding(eta).unwrap();
        let mut th = vec![0.0; mu.len()];
        let mut r = f.surrogate_risk(&th, eta).unwrap();
        let mut lr = 1.0;
        for _ in 0..5000 {
            let g: Vec<f64> = f
                .conjugate_grad(&th)
                .unwrap()
                .iter()
                .zip(&mu)
                .map(|(a, b)| a - b)
                .collect();
            let gn2: f64 = g.iter().map(|x| x * x).sum();
            if gn2.sqrt() < 1e-10 {
                break;
            }
            loop {
                let cand: Vec<f64> = th.iter().zip(&g).map(|(t, gi)| t - lr * gi).collect();
                let rc = f.surrogate_risk(&cand, eta).unwrap();
                if rc <= r - 0.5 * lr * gn2 {
                    th = cand;
                    r = rc;
                    lr *= 2.0;
                    break;
                }
                lr *= 0.5;
            }
        }
        r
    }

    #[test]
    fn bayes_risk_matches_numerical_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for f in [mc_shannon(3), mc_sq(3)] {
            for _ in 0..5 {
                let eta = random_eta(&mut rng, 3);
                let closed = f.surrogate_bayes_risk(&eta).unwrap();
                let numeric = minimize_risk(&f, &eta);
                assert!((closed - numeric).abs() <= 1e-5, "{closed} vs {numeric}");
            }
        }
    }

    #[test]
    fn surrogate_regret_examples() {
        let f = mc_shannon(2);
        let u = ClassDistribution::uniform(2);
        assert!(f.surrogate_regret(&[0.0, 0.0], &u).unwrap().abs() < 1e-15);
        assert!(f.surrogate_regret(&[5.0, -5.0], &u).unwrap() > 0.1);

        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for f in [mc_shannon(4), mc_sq(4)] {
            for _ in 0..200 {
                let th: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
                let eta = random_eta(&mut rng, 4);
                let reg = f.surrogate_regret(&th, &eta).unwrap();
                let via_risk = f.surrogate_risk(&th, &eta).unwrap() - f.surrogate_bayes_risk(&eta).unwrap();
                assert!((reg - via_risk).abs() <= 1e-10);
                assert!(reg >= -1e-10);
            }
        }
    }

    #[test]
    fn decomposition_examples() {
        let f = mc_shannon(2);
        let u = ClassDistribution::uniform(2);
        let sol = f.solve(&[0.0, 0.0]).unwrap();
        let d = f.regret_decomposition(&u, &sol).unwrap();
        assert!(d.fy_term.abs() < 1e-15 && d.mixture_term.abs() < 1e-15);

        let e1 = ClassDistribution::point_mass(2, 0);
        let d = f.regret_decomposition(&e1, &sol).unwrap();
        assert!((d.mixture_term - 0.5).abs() < 1e-15);
    }

    #[test]
    fn decomposition_sums_to_regret() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for f in [mc_shannon(4), mc_sq(4)] {
            for _ in 0..1000 {
                let th: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
                let eta = random_eta(&mut rng, 4);
                let sol = f.solve(&th).unwrap();
                let d = f.regret_decomposition(&eta, &sol).unwrap();
                let reg = f.surrogate_regret_at(&sol, &th, &eta).unwrap();
                assert!((d.fy_term + d.mixture_term - reg).abs() <= 1e-8);
                assert!(d.fy_term >= -1e-10 && d.mixture_term >= 0.0);
                assert!(d.mixture_term <= reg + 1e-9);
            }
        }
    }

    #[test]
    fn rejects_incompatible_pairs() {
        assert!(ConvFYLoss::new(
            DecomposedTargetLoss::make_hamming(2).unwrap(),
            Negentropy::shannon(2)
        )
        .is_err());
        assert!(ConvFYLoss::new(
            DecomposedTargetLoss::make_zero_one(3).unwrap(),
            Negentropy::shannon(2)
        )
        .is_err());
    }
}

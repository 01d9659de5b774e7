//! Base negentropies and their conjugates.
//!
//! Two generators are supported:
//!
//! | kind           | Ω(p)            | dom(Ω)   | Ω*(θ)             | ∇Ω*(θ)     |
//! |----------------|-----------------|----------|-------------------|------------|
//! | `Shannon`      | ⟨p, ln p⟩       | simplex  | log-sum-exp(θ)    | softmax(θ) |
//! | `SquaredNorm`  | ½‖p‖²           | ℝ^d      | ½‖θ‖²             | θ          |
//!
//! Both are 1-strongly convex on their domain w.r.t. the 2-norm, so both
//! conjugates are 1-smooth.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when deciding whether a point lies on the simplex.
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyKind {
    Shannon,
    SquaredNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    FullSpace,
    ProbabilitySimplex,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Negentropy {
    dim: usize,
    kind: EntropyKind,
}

impl Negentropy {
    pub fn new(kind: EntropyKind, dim: usize) -> Self {
        Self { dim, kind }
    }

    pub fn shannon(dim: usize) -> Self {
        Self::new(EntropyKind::Shannon, dim)
    }

    pub fn squared_norm(dim: usize) -> Self {
        Self::new(EntropyKind::SquaredNorm, dim)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> EntropyKind {
        self.kind
    }

    /// Strong-convexity modulus on `dom(Ω)` w.r.t. the 2-norm.
    pub fn strong_convexity_modulus(&self) -> f64 {
        1.0
    }

    pub fn domain(&self) -> DomainKind {
        match self.kind {
            EntropyKind::Shannon => DomainKind::ProbabilitySimplex,
            EntropyKind::SquaredNorm => DomainKind::FullSpace,
        }
    }

    fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::InvalidArgument(format!(
                "expected a vector of length {}, got {}",
                self.dim,
                v.len()
            )));
        }
        Ok(())
    }

    pub fn value(&self, p: &[f64]) -> Result<f64> {
        self.check_dim(p)?;
        match self.kind {
            EntropyKind::Shannon => shannon_value(p),
            EntropyKind::SquaredNorm => Ok(squared_norm_value(p)),
        }
    }

    pub fn conjugate(&self, theta: &[f64]) -> f64 {
        debug_assert_eq!(theta.len(), self.dim);
        match self.kind {
            EntropyKind::Shannon => log_sum_exp(theta),
            EntropyKind::SquaredNorm => squared_norm_value(theta),
        }
    }

    pub fn conjugate_grad(&self, theta: &[f64]) -> Vec<f64> {
        debug_assert_eq!(theta.len(), self.dim);
        match self.kind {
            EntropyKind::Shannon => softmax(theta),
            EntropyKind::SquaredNorm => theta.to_vec(),
        }
    }

    /// Hessian of the conjugate: `diag(s) − s sᵀ` for Shannon, identity otherwise.
    pub fn conjugate_hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        match self.kind {
            EntropyKind::Shannon => {
                let s = softmax(theta);
                DMatrix::from_fn(self.dim, self.dim, |i, j| {
                    let d = if i == j { s[i] } else { 0.0 };
                    d - s[i] * s[j]
                })
            }
            EntropyKind::SquaredNorm => DMatrix::identity(self.dim, self.dim),
        }
    }

    /// `Ω(p) + Ω*(θ) − ⟨θ, p⟩`, nonnegative by the Fenchel-Young inequality.
    pub fn fenchel_young_gap(&self, theta: &[f64], p: &[f64]) -> Result<f64> {
        let inner: f64 = theta.iter().zip(p).map(|(a, b)| a * b).sum();
        Ok(self.value(p)? + self.conjugate(theta) - inner)
    }
}

/// `Σ p_i ln p_i` on the simplex, with `0 ln 0 = 0`.
pub fn shannon_value(p: &[f64]) -> Result<f64> {
    let sum: f64 = p.iter().sum();
    if p.iter().any(|&x| !x.is_finite() || x < -SIMPLEX_TOL) || (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::DomainViolation(format!(
            "Shannon negentropy is only defined on the simplex (sum={sum})"
        )));
    }
    Ok(p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum())
}

/// `ln Σ exp(θ_i)`, shifted by the max so large inputs do not overflow.
pub fn log_sum_exp(theta: &[f64]) -> f64 {
    let m = theta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + theta.iter().map(|&t| (t - m).exp()).sum::<f64>().ln()
}

pub fn softmax(theta: &[f64]) -> Vec<f64> {
    let m = theta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = theta.iter().map(|&t| (t - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

pub fn squared_norm_value(p: &[f64]) -> f64 {
    0.5 * p.iter().map(|x| x * x).sum::<f64>()
}

/// Euclidean projection onto the probability simplex (sort and threshold).
///
/// Finds the unique `τ` with `Σ max(v_i − τ, 0) = 1` and returns `max(v − τ, 0)`.
pub fn simplex_project(v: &[f64]) -> Vec<f64> {
    let tau = simplex_threshold(v).0;
    v.iter().map(|&x| (x - tau).max(0.0)).collect()
}

/// Threshold `τ` and support size `n` of the simplex projection of `v`.
///
/// The support size is the largest `k` with `1 + k·v_[k] > Σ_{i≤k} v_[i]` over the
/// descending (stable) sort; the strict comparison is evaluated without slack.
pub fn simplex_threshold(v: &[f64]) -> (f64, usize) {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut n = 1;
    let mut sum_n = sorted[0];
    for (k, &x) in sorted.iter().enumerate() {
        cumsum += x;
        if 1.0 + (k + 1) as f64 * x > cumsum {
            n = k + 1;
            sum_n = cumsum;
        }
    }
    ((sum_n - 1.0) / n as f64, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn shannon_value_examples() {
        assert!(close(shannon_value(&[0.5, 0.5]).unwrap(), -(2f64.ln()), 1e-15));
        assert_eq!(shannon_value(&[1.0, 0.0]).unwrap(), 0.0);
        let v = 0.75 * 0.75f64.ln() + 0.25 * 0.25f64.ln();
        assert!(close(shannon_value(&[0.75, 0.25]).unwrap(), v, 1e-15));
        assert!(close(v, -0.562335, 1e-6));
        assert!(matches!(
            shannon_value(&[0.6, 0.6]),
            Err(Error::DomainViolation(_))
        ));
        assert!(shannon_value(&[1.2, -0.2]).is_err());
    }

    #[test]
    fn log_sum_exp_examples() {
        assert!(close(log_sum_exp(&[0.0; 5]), 5f64.ln(), 1e-15));
        let big = log_sum_exp(&[1000.0, 0.0]);
        assert!(big.is_finite() && close(big, 1000.0, 1e-12));
        assert!(close(log_sum_exp(&[1.0, 1.0]), 1.0 + 2f64.ln(), 1e-15));
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0; 4]), vec![0.25; 4]);
        let s = softmax(&[3f64.ln(), 0.0]);
        assert!(close(s[0], 0.75, 1e-15) && close(s[1], 0.25, 1e-15));
        let s = softmax(&[1000.0, -1000.0, 0.0]);
        assert!(close(s.iter().sum(), 1.0, 1e-12));
    }

    #[test]
    fn squared_norm_examples() {
        let q = Negentropy::squared_norm(2);
        assert_eq!(q.value(&[3.0, 4.0]).unwrap(), 12.5);
        assert_eq!(q.conjugate_grad(&[1.5, -2.0]), vec![1.5, -2.0]);
        assert_eq!(q.fenchel_young_gap(&[1.5, -2.0], &[1.5, -2.0]).unwrap(), 0.0);
    }

    #[test]
    fn simplex_project_examples() {
        let p = simplex_project(&[0.5, 0.3]);
        assert!(close(p[0], 0.6, 1e-15) && close(p[1], 0.4, 1e-15));
        let q = simplex_project(&[0.2, 0.3, 0.5]);
        assert!(q.iter().zip([0.2, 0.3, 0.5]).all(|(a, b)| close(*a, b, 1e-15)));
        assert_eq!(simplex_project(&[2.0, 0.0]), vec![1.0, 0.0]);
    }

    #[test]
    fn conjugate_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        for kind in [EntropyKind::Shannon, EntropyKind::SquaredNorm] {
            for _ in 0..100 {
                let d = rng.random_range(2..7);
                let om = Negentropy::new(kind, d);
                let th: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
                let g = om.conjugate_grad(&th);
                for i in 0..d {
                    let mut a = th.clone();
                    let mut b = th.clone();
                    a[i] += h;
                    b[i] -= h;
                    let fd = (om.conjugate(&a) - om.conjugate(&b)) / (2.0 * h);
                    assert!(close(fd, g[i], 1e-6), "{kind:?} {fd} vs {}", g[i]);
                }
            }
        }
    }

    #[test]
    fn conjugate_grads_are_one_lipschitz() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for kind in [EntropyKind::Shannon, EntropyKind::SquaredNorm] {
            for _ in 0..100 {
                let d = rng.random_range(2..7);
                let om = Negentropy::new(kind, d);
                let a: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
                let b: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
                let ga = om.conjugate_grad(&a);
                let gb = om.conjugate_grad(&b);
                let lhs = crate::linalg::norm2(&crate::linalg::sub(&ga, &gb));
                let rhs = crate::linalg::norm2(&crate::linalg::sub(&a, &b));
                assert!(lhs <= rhs / om.strong_convexity_modulus() + 1e-12);
            }
        }
    }

    #[test]
    fn shannon_biconjugate_on_grid() {
        // sup over a θ grid of ⟨θ,p⟩ − Ω*(θ) approaches Ω(p) from below.
        // Ω* is shift invariant along 1, so fixing θ_2 = 0 loses nothing.
        for p0 in [0.1, 0.3, 0.5, 0.8] {
            let p = [p0, 1.0 - p0];
            let omega = shannon_value(&p).unwrap();
            let mut best = f64::NEG_INFINITY;
            let mut t = -6.0;
            while t <= 6.0 {
                let th = [t, 0.0];
                best = best.max(th[0] * p[0] - log_sum_exp(&th));
                t += 1e-2;
            }
            let gap = omega - best;
            assert!((-1e-12..=1e-3).contains(&gap), "p={p0}: gap {gap}");
        }
    }

    #[test]
    fn fenchel_young_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..200 {
            let d = rng.random_range(2..6);
            let th: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
            let raw: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
            let s: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|x| x / s).collect();
            for om in [Negentropy::shannon(d), Negentropy::squared_norm(d)] {
                assert!(om.fenchel_young_gap(&th, &p).unwrap() >= -1e-12);
            }
            assert!(Negentropy::shannon(d).conjugate_grad(&th).iter().sum::<f64>() - 1.0 < 1e-12);
        }
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        let om = Negentropy::shannon(3);
        let th = [0.3, -1.2, 2.0];
        let hess = om.conjugate_hessian(&th);
        let h = 1e-6;
        for j in 0..3 {
            let mut a = th;
            let mut b = th;
            a[j] += h;
            b[j] -= h;
            let ga = om.conjugate_grad(&a);
            let gb = om.conjugate_grad(&b);
            for i in 0..3 {
                assert!(close((ga[i] - gb[i]) / (2.0 * h), hess[(i, j)], 1e-8));
            }
        }
    }
}

//! Verification campaigns: regret bounds, gradient checks, property suites,
//! Fisher consistency and a synthetic training run.
//!
//! Every campaign is reproducible from its seed. Trial `i` draws from a ChaCha8
//! stream selected by `i`, so results do not depend on scheduling when the
//! `parallel` feature runs trials on several threads.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::conv_conjugate::{caratheodory_sparsify, conv_conjugate_grad, PiSolution, DEFAULT_TOL};
use crate::error::{invalid, Error, Result};
use crate::fy_loss::ConvFYLoss;
use crate::linalg::{argmax_first, dot, norm2, sub};
use crate::links::{pi_argmax_link, probability_estimate};
use crate::negentropy::{EntropyKind, Negentropy};
use crate::target_loss::{ClassDistribution, DecomposedTargetLoss, LabelEncoding};

/// Scores are drawn uniformly from `[−THETA_RANGE, THETA_RANGE]`.
pub const THETA_RANGE: f64 = 5.0;
/// Additive slack on every bound inequality.
pub const BOUND_SLACK: f64 = 1e-9;
pub const GRAD_CHECK_STEP: f64 = 1e-5;
pub const GRAD_CHECK_TOL: f64 = 1e-4;
/// Floor on the denominator of the relative gradient error. Below it the
/// error is effectively absolute, which keeps exact zero gradients (common for
/// the squared norm) from turning rounding noise into large ratios.
pub const GRAD_CHECK_FLOOR: f64 = 1e-4;
pub const FISHER_GRAD_TOL: f64 = 1e-8;
pub const FISHER_ERROR_TOL: f64 = 1e-3;
/// Smallest class probability of the distributions used by the Fisher check.
pub const FISHER_ETA_FLOOR: f64 = 0.01;

/// A target loss named on the command line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TaskSpec {
    Multiclass(usize),
    Hamming(usize),
    TopK(usize, usize),
    Matrix(PathBuf),
}

impl TaskSpec {
    pub fn build(&self) -> Result<DecomposedTargetLoss> {
        match self {
            TaskSpec::Multiclass(k) => DecomposedTargetLoss::make_zero_one(*k),
            TaskSpec::Hamming(d) => DecomposedTargetLoss::make_hamming(*d),
            TaskSpec::TopK(k, s) => DecomposedTargetLoss::make_top_k(*k, *s),
            TaskSpec::Matrix(path) => DecomposedTargetLoss::from_csv_path(path),
        }
    }
}

impl FromStr for TaskSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let usage = || {
            invalid(format!(
                "unknown task '{s}'; expected multiclass:K, hamming:D, topk:K:k or matrix:FILE"
            ))
        };
        let num = |v: &str| v.parse::<usize>().map_err(|_| usage());
        let (head, rest) = s.split_once(':').ok_or_else(usage)?;
        match head {
            "multiclass" => Ok(TaskSpec::Multiclass(num(rest)?)),
            "hamming" => Ok(TaskSpec::Hamming(num(rest)?)),
            "topk" => {
                let (k, s) = rest.split_once(':').ok_or_else(usage)?;
                Ok(TaskSpec::TopK(num(k)?, num(s)?))
            }
            "matrix" if !rest.is_empty() => Ok(TaskSpec::Matrix(PathBuf::from(rest))),
            _ => Err(usage()),
        }
    }
}

impl fmt::Display for TaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskSpec::Multiclass(k) => write!(f, "multiclass:{k}"),
            TaskSpec::Hamming(d) => write!(f, "hamming:{d}"),
            TaskSpec::TopK(k, s) => write!(f, "topk:{k}:{s}"),
            TaskSpec::Matrix(p) => write!(f, "matrix:{}", p.display()),
        }
    }
}

/// Which prediction rule a regret campaign checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkChoice {
    /// `argmax π`, constant `N`.
    Argmax,
    /// Argmax of the sparsified `π`, constant `affdim + 1`.
    Sparse,
    /// Expected regret of sampling `t ∼ π`, constant 1.
    Random,
}

impl FromStr for LinkChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "argmax" => Ok(LinkChoice::Argmax),
            "sparse" => Ok(LinkChoice::Sparse),
            "random" => Ok(LinkChoice::Random),
            _ => Err(invalid(format!(
                "unknown link '{s}'; expected argmax, sparse or random"
            ))),
        }
    }
}

pub fn parse_entropy(s: &str) -> Result<EntropyKind> {
    match s {
        "shannon" => Ok(EntropyKind::Shannon),
        "sqnorm" | "squared_norm" => Ok(EntropyKind::SquaredNorm),
        _ => Err(invalid(format!(
            "unknown entropy '{s}'; expected shannon or sqnorm"
        ))),
    }
}

pub fn build_loss(task: &TaskSpec, entropy: EntropyKind, solver_tol: f64) -> Result<ConvFYLoss> {
    let loss = task.build()?;
    let omega = Negentropy::new(entropy, loss.rho_dim());
    ConvFYLoss::with_tol(loss, omega, solver_tol)
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// Runs `f` on every trial index and returns the results in index order.
fn map_trials<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

pub fn sample_theta<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|_| rng.random_range(-THETA_RANGE..=THETA_RANGE))
        .collect()
}

/// Uniform draw from the simplex by normalizing i.i.d. exponentials.
pub fn sample_eta<R: Rng>(rng: &mut R, k: usize) -> ClassDistribution {
    let e: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    normalized(e)
}

/// Uniform draw from the simplex, mixed with the uniform distribution so that
/// every entry is at least `floor`.
pub fn sample_interior_eta<R: Rng>(rng: &mut R, k: usize, floor: f64) -> ClassDistribution {
    let base = sample_eta(rng, k);
    let w = 1.0 - floor * k as f64;
    normalized(base.as_slice().iter().map(|p| floor + w * p).collect())
}

fn normalized(mut v: Vec<f64>) -> ClassDistribution {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    ClassDistribution::new(v).expect("normalized nonnegative weights")
}

#[derive(Debug, Clone)]
pub struct VerifyConfig {
    pub task: TaskSpec,
    pub entropy: EntropyKind,
    pub trials: usize,
    pub seed: u64,
    pub link: LinkChoice,
    pub solver_tol: f64,
}

impl VerifyConfig {
    pub fn new(task: TaskSpec, entropy: EntropyKind, link: LinkChoice, trials: usize, seed: u64) -> Self {
        Self {
            task,
            entropy,
            trials,
            seed,
            link,
            solver_tol: DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RegretRecord {
    pub trial: usize,
    pub surrogate_regret: f64,
    pub target_regret: f64,
    pub bound_constant: f64,
    /// `target_regret / (bound_constant · surrogate_regret)`; `None` for 0/0.
    pub ratio: Option<f64>,
    pub violated: bool,
    /// Nonzeros of the sparsified weights.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub support_size: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegretReport {
    pub task: String,
    pub entropy: EntropyKind,
    pub link: LinkChoice,
    pub trials: usize,
    pub seed: u64,
    pub violations: usize,
    /// Maximum defined ratio, `None` when every ratio was 0/0.
    pub max_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub records: Option<Vec<RegretRecord>>,
}

impl RegretReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Values this small on both sides of a ratio count as 0/0.
const ZERO_REGRET: f64 = 1e-12;

fn regret_ratio(target: f64, scaled_surrogate: f64) -> Option<f64> {
    if target.abs() <= ZERO_REGRET && scaled_surrogate.abs() <= ZERO_REGRET {
        None
    } else if scaled_surrogate <= 0.0 {
        Some(f64::INFINITY)
    } else {
        Some(target / scaled_surrogate)
    }
}

/// One regret-bound record for the score `theta` under `eta`.
pub fn regret_record(
    fy: &ConvFYLoss,
    link: LinkChoice,
    theta: &[f64],
    eta: &ClassDistribution,
    trial: usize,
) -> Result<RegretRecord> {
    let loss = fy.target();
    let sol = fy.solve(theta)?;
    let surrogate = fy.surrogate_regret_at(&sol, theta, eta)?;
    let regrets = loss.target_regrets(eta)?;
    let (target, constant, support) = match link {
        LinkChoice::Argmax => {
            let t = pi_argmax_link(&sol).prediction;
            (regrets[t], loss.num_predictions() as f64, None)
        }
        LinkChoice::Sparse => {
            let sparse = caratheodory_sparsify(loss, &sol.pi)?;
            let nnz = sparse.iter().filter(|&&p| p > 0.0).count();
            (
                regrets[argmax_first(&sparse)],
                (loss.affine_dimension() + 1) as f64,
                Some(nnz),
            )
        }
        LinkChoice::Random => (dot(&sol.pi, &regrets), 1.0, None),
    };
    let support_ok = support.is_none_or(|s| s as f64 <= constant);
    Ok(RegretRecord {
        trial,
        surrogate_regret: surrogate,
        target_regret: target,
        bound_constant: constant,
        ratio: regret_ratio(target, constant * surrogate),
        violated: target > constant * surrogate + BOUND_SLACK || !support_ok,
        support_size: support,
    })
}

/// Checks the linear regret bound of the chosen link on random `(θ, η)`.
pub fn verify_bounds(config: &VerifyConfig) -> Result<RegretReport> {
    if config.trials == 0 {
        return Err(invalid("trials must be at least 1"));
    }
    let fy = build_loss(&config.task, config.entropy, config.solver_tol)?;
    let records = map_trials(config.trials, |i| {
        let mut rng = trial_rng(config.seed, i);
        let theta = sample_theta(&mut rng, fy.target().rho_dim());
        let eta = sample_eta(&mut rng, fy.target().num_classes());
        regret_record(&fy, config.link, &theta, &eta, i)
    })?;
    let violations = records.iter().filter(|r| r.violated).count();
    let max_ratio = records
        .iter()
        .filter_map(|r| r.ratio)
        .fold(None, |m: Option<f64>, r| Some(m.map_or(r, |m| m.max(r))));
    Ok(RegretReport {
        task: config.task.to_string(),
        entropy: config.entropy,
        link: config.link,
        trials: config.trials,
        seed: config.seed,
        violations,
        max_ratio,
        records: Some(records),
    })
}

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub task: TaskSpec,
    pub entropy: EntropyKind,
    pub samples: usize,
    pub seed: u64,
    pub step: f64,
    pub solver_tol: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub task: String,
    pub entropy: EntropyKind,
    pub samples: usize,
    pub seed: u64,
    pub step: f64,
    pub max_rel_error: f64,
    pub threshold: f64,
    pub passed: bool,
    /// Score and label of the sample with the largest error.
    pub worst_theta: Vec<f64>,
    pub worst_label: usize,
}

/// Relative error between an analytic gradient and a finite-difference one.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    norm2(&sub(analytic, numeric)) / norm2(analytic).max(norm2(numeric)).max(GRAD_CHECK_FLOOR)
}

/// Central finite differences of `loss_value` against `loss_grad`.
pub fn grad_check(config: &GradCheckConfig) -> Result<GradCheckReport> {
    if !(config.step > 0.0) {
        return Err(invalid(format!("step must be positive, got {}", config.step)));
    }
    if config.samples == 0 {
        return Err(invalid("samples must be at least 1"));
    }
    let fy = build_loss(&config.task, config.entropy, config.solver_tol)?;
    let h = config.step;
    let errors = map_trials(config.samples, |i| {
        let mut rng = trial_rng(config.seed, i);
        let theta = sample_theta(&mut rng, fy.target().rho_dim());
        let y = rng.random_range(0..fy.target().num_classes());
        let g = fy.loss_grad(&theta, y)?;
        let mut fd = vec![0.0; theta.len()];
        for j in 0..theta.len() {
            let mut a = theta.clone();
            let mut b = theta.clone();
            a[j] += h;
            b[j] -= h;
            fd[j] = (fy.loss_value(&a, y)? - fy.loss_value(&b, y)?) / (2.0 * h);
        }
        Ok((relative_error(&g, &fd), theta, y))
    })?;
    let (max_rel_error, worst_theta, worst_label) =
        errors
            .into_iter()
            .fold((f64::NEG_INFINITY, Vec::new(), 0), |acc, e| {
                if e.0 > acc.0 {
                    e
                } else {
                    acc
                }
            });
    Ok(GradCheckReport {
        task: config.task.to_string(),
        entropy: config.entropy,
        samples: config.samples,
        seed: config.seed,
        step: h,
        max_rel_error,
        threshold: GRAD_CHECK_TOL,
        passed: max_rel_error <= GRAD_CHECK_TOL,
        worst_theta,
        worst_label,
    })
}

#[derive(Debug, Clone)]
pub struct PropertyConfig {
    pub task: TaskSpec,
    pub entropy: EntropyKind,
    pub samples: usize,
    pub seed: u64,
    pub solver_tol: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub checks: usize,
    pub failures: usize,
    /// Largest value of the suite statistic. Passing requires it to stay at
    /// or below `limit`.
    pub worst: f64,
    pub limit: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PropertyReport {
    pub task: String,
    pub entropy: EntropyKind,
    pub samples: usize,
    pub seed: u64,
    pub passed: bool,
    pub suites: Vec<SuiteResult>,
}

pub const CONVEXITY_SLACK: f64 = 1e-9;
pub const LIPSCHITZ_SLACK: f64 = 1e-8;
pub const NONNEGATIVITY_SLACK: f64 = 1e-10;
pub const IDENTITY_TOL: f64 = 1e-8;
pub const VERTEX_SLACK: f64 = 1e-8;

const SUITES: [&str; 7] = [
    "midpoint_convexity",
    "lipschitz_gradient",
    "nonnegativity",
    "decomposition_identity",
    "fy_term_nonnegative",
    "mixture_lower_bound",
    "vertex_dominance",
];

/// Per-sample suite statistics, in `SUITES` order.
fn property_sample(fy: &ConvFYLoss, seed: u64, i: usize) -> Result<[f64; 7]> {
    let loss = fy.target();
    let dim = loss.rho_dim();
    let mut rng = trial_rng(seed, i);
    let a = sample_theta(&mut rng, dim);
    // Alternate between independent pairs and nearby pairs, which probe the
    // smoothness constant where it is attained.
    let b: Vec<f64> = if i.is_multiple_of(2) {
        sample_theta(&mut rng, dim)
    } else {
        let r = 10f64.powf(rng.random_range(-2.0..0.0));
        a.iter().map(|x| x + r * rng.random_range(-1.0..1.0)).collect()
    };
    let y = rng.random_range(0..loss.num_classes());
    let eta = sample_eta(&mut rng, loss.num_classes());

    let sol_a = fy.solve(&a)?;
    let (la, ga) = fy.loss_value_and_grad(&a, y)?;
    let (lb, gb) = fy.loss_value_and_grad(&b, y)?;
    let m: Vec<f64> = a.iter().zip(&b).map(|(x, z)| 0.5 * (x + z)).collect();
    let lm = fy.loss_value(&m, y)?;
    let convexity = lm - 0.5 * (la + lb);

    let dn = norm2(&sub(&a, &b));
    let lipschitz = if dn > 0.0 { norm2(&sub(&ga, &gb)) / dn } else { 0.0 };

    let surrogate = fy.surrogate_regret_at(&sol_a, &a, &eta)?;
    let dec = fy.regret_decomposition(&eta, &sol_a)?;
    let identity = (dec.fy_term + dec.mixture_term - surrogate).abs();

    let omega = fy.omega();
    let best_vertex = (0..loss.num_predictions())
        .map(|t| {
            let z: Vec<f64> = a.iter().zip(loss.loss_column(t)).map(|(x, l)| x + l).collect();
            omega.conjugate(&z)
        })
        .fold(f64::INFINITY, f64::min);

    Ok([
        convexity,
        lipschitz,
        -la,
        identity,
        -dec.fy_term,
        dec.mixture_term - surrogate,
        sol_a.objective - best_vertex,
    ])
}

/// Midpoint convexity, gradient Lipschitz constant, nonnegativity, the regret
/// decomposition and vertex dominance on random samples.
pub fn property_check(config: &PropertyConfig) -> Result<PropertyReport> {
    if config.samples == 0 {
        return Err(invalid("samples must be at least 1"));
    }
    let fy = build_loss(&config.task, config.entropy, config.solver_tol)?;
    let lip_limit = 1.0 / fy.omega().strong_convexity_modulus() + LIPSCHITZ_SLACK;
    let limits = [
        CONVEXITY_SLACK,
        lip_limit,
        NONNEGATIVITY_SLACK,
        IDENTITY_TOL,
        NONNEGATIVITY_SLACK,
        BOUND_SLACK,
        VERTEX_SLACK,
    ];
    let stats = map_trials(config.samples, |i| property_sample(&fy, config.seed, i))?;
    let suites: Vec<SuiteResult> = SUITES
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let worst = stats.iter().map(|s| s[k]).fold(f64::NEG_INFINITY, f64::max);
            let failures = stats.iter().filter(|s| !(s[k] <= limits[k])).count();
            SuiteResult {
                name: name.to_string(),
                checks: stats.len(),
                failures,
                worst,
                limit: limits[k],
                passed: failures == 0,
            }
        })
        .collect();
    Ok(PropertyReport {
        task: config.task.to_string(),
        entropy: config.entropy,
        samples: config.samples,
        seed: config.seed,
        passed: suites.iter().all(|s| s.passed),
        suites,
    })
}

#[derive(Debug, Clone)]
pub struct FisherConfig {
    pub task: TaskSpec,
    pub entropy: EntropyKind,
    pub eta_samples: usize,
    pub seed: u64,
    pub gd_steps: usize,
    pub gd_lr: f64,
    pub solver_tol: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FisherRecord {
    pub eta: Vec<f64>,
    pub steps: usize,
    pub grad_norm: f64,
    pub converged: bool,
    /// `‖estimate − E_η[ρ(y)]‖_∞`.
    pub error: f64,
    /// Error of the decoded per-bit marginals, signed-bit encodings only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub marginal_error: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FisherReport {
    pub task: String,
    pub entropy: EntropyKind,
    pub eta_samples: usize,
    pub seed: u64,
    pub max_error: f64,
    pub failures: usize,
    pub passed: bool,
    pub records: Vec<FisherRecord>,
}

#[derive(Debug, Clone)]
pub struct RiskMinimum {
    pub theta: Vec<f64>,
    pub steps: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

/// Gradient descent with backtracking on `θ ↦ Ω_T*(θ) − ⟨θ, μ⟩`, which is the
/// surrogate risk up to a constant, started at `θ = 0`.
pub fn minimize_surrogate_risk(
    fy: &ConvFYLoss,
    eta: &ClassDistribution,
    max_steps: usize,
    lr: f64,
    grad_tol: f64,
) -> Result<RiskMinimum> {
    let mu = fy.target().mean_embedding(eta)?;
    let eval = |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
        let sol = fy.solve(theta)?;
        let grad = sub(&conv_conjugate_grad(fy.omega(), &sol), &mu);
        Ok((sol.objective - dot(theta, &mu), grad))
    };
    let mut theta = vec![0.0; mu.len()];
    let (mut f, mut grad) = eval(&theta)?;
    let mut gn = norm2(&grad);
    let mut step = lr;
    let mut steps = 0;
    while gn > grad_tol && steps < max_steps {
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - step * g).collect();
            let (fc, gc) = eval(&cand)?;
            let gcn = norm2(&gc);
            let noise = 8.0 * f64::EPSILON * (1.0 + f.abs());
            if fc <= f - 1e-4 * step * gn * gn || (fc <= f + noise && gcn < gn) {
                accepted = Some((cand, fc, gc, gcn));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, fc, gc, gcn)) = accepted else {
            break;
        };
        theta = cand;
        f = fc;
        grad = gc;
        gn = gcn;
        steps += 1;
        step *= 2.0;
    }
    Ok(RiskMinimum {
        theta,
        steps,
        grad_norm: gn,
        converged: gn <= grad_tol,
    })
}

/// Compares the probability estimate at the numerical risk minimizer with the
/// true mean embedding, for random interior class distributions.
pub fn fisher_check(config: &FisherConfig) -> Result<FisherReport> {
    if config.eta_samples == 0 {
        return Err(invalid("eta_samples must be at least 1"));
    }
    if !(config.gd_lr > 0.0) {
        return Err(invalid(format!(
            "learning rate must be positive, got {}",
            config.gd_lr
        )));
    }
    let fy = build_loss(&config.task, config.entropy, config.solver_tol)?;
    let k = fy.target().num_classes();
    if FISHER_ETA_FLOOR * k as f64 >= 1.0 {
        return Err(invalid(format!(
            "{k} classes leave no room above the probability floor"
        )));
    }
    let records = map_trials(config.eta_samples, |i| {
        let mut rng = trial_rng(config.seed, i);
        let eta = sample_interior_eta(&mut rng, k, FISHER_ETA_FLOOR);
        fisher_record(&fy, &eta, config.gd_steps, config.gd_lr)
    })?;
    let max_error = records
        .iter()
        .map(|r| r.error.max(r.marginal_error.unwrap_or(0.0)))
        .fold(0.0, f64::max);
    let failures = records
        .iter()
        .filter(|r| !r.converged || !(r.error.max(r.marginal_error.unwrap_or(0.0)) <= FISHER_ERROR_TOL))
        .count();
    Ok(FisherReport {
        task: config.task.to_string(),
        entropy: config.entropy,
        eta_samples: config.eta_samples,
        seed: config.seed,
        max_error,
        failures,
        passed: failures == 0,
        records,
    })
}

pub fn fisher_record(
    fy: &ConvFYLoss,
    eta: &ClassDistribution,
    gd_steps: usize,
    gd_lr: f64,
) -> Result<FisherRecord> {
    let min = minimize_surrogate_risk(fy, eta, gd_steps, gd_lr, FISHER_GRAD_TOL)?;
    let est = probability_estimate(fy, &min.theta)?;
    let mu = fy.target().mean_embedding(eta)?;
    let error = est
        .mean_rho_estimate
        .iter()
        .zip(&mu)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let marginal_error = match (fy.target().encoding(), &est.decoded) {
        (LabelEncoding::SignedBits, Some(decoded)) => Some(
            decoded
                .iter()
                .zip(&mu)
                .map(|(d, m)| (d - (1.0 - m) / 2.0).abs())
                .fold(0.0, f64::max),
        ),
        _ => None,
    };
    Ok(FisherRecord {
        eta: eta.as_slice().to_vec(),
        steps: min.steps,
        grad_norm: min.grad_norm,
        converged: min.converged,
        error,
        marginal_error,
    })
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub task: TaskSpec,
    pub entropy: EntropyKind,
    pub n_samples: usize,
    pub n_features: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub solver_tol: f64,
}

/// One row of the training trace. Row 0 is the untrained model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epoch: usize,
    pub mean_surrogate_regret: f64,
    pub mean_target_regret: f64,
    pub grad_norm: f64,
}

pub const TRACE_HEADER: &str = "epoch,mean_surrogate_regret,mean_target_regret,grad_norm";

struct Sample {
    x: Vec<f64>,
    eta: ClassDistribution,
    label: usize,
}

/// Conditional class distribution at `x`: a softmax over classes for one-hot
/// encodings and independent logistic bits for signed-bit encodings.
fn conditional(loss: &DecomposedTargetLoss, w_star: &[Vec<f64>], x: &[f64]) -> ClassDistribution {
    let scores: Vec<f64> = w_star.iter().map(|w| dot(w, x)).collect();
    match loss.encoding() {
        LabelEncoding::OneHot => normalized(crate::negentropy::softmax(&scores)),
        LabelEncoding::SignedBits => {
            let p1: Vec<f64> = scores.iter().map(|s| 1.0 / (1.0 + (-s).exp())).collect();
            normalized(
                (0..loss.num_classes())
                    .map(|y| {
                        let bits = loss.bits(y).expect("signed-bit loss");
                        bits.iter()
                            .zip(&p1)
                            .map(|(&b, p)| if b == 1 { *p } else { 1.0 - p })
                            .product()
                    })
                    .collect(),
            )
        }
    }
}

fn generate(loss: &DecomposedTargetLoss, config: &TrainConfig) -> Vec<Sample> {
    let mut rng = trial_rng(config.seed, 0);
    let rows = match loss.encoding() {
        LabelEncoding::OneHot => loss.num_classes(),
        LabelEncoding::SignedBits => loss.rho_dim(),
    };
    let w_star: Vec<Vec<f64>> = (0..rows)
        .map(|_| {
            (0..config.n_features)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect()
        })
        .collect();
    (0..config.n_samples)
        .map(|_| {
            let x: Vec<f64> = (0..config.n_features)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let eta = conditional(loss, &w_star, &x);
            let label = crate::links::sample_index(eta.as_slice(), &mut rng);
            Sample { x, eta, label }
        })
        .collect()
}

/// Trains a linear model `θ = W x` by full-batch gradient descent on the
/// convolutional Fenchel-Young loss over synthetic data with a known
/// conditional distribution, logging both regrets at every epoch.
pub fn train_synthetic(config: &TrainConfig) -> Result<Vec<TrainTrace>> {
    if config.n_samples == 0 || config.n_features == 0 {
        return Err(invalid("sample and feature counts must be positive"));
    }
    if !(config.lr >= 0.0) || !config.lr.is_finite() {
        return Err(invalid(format!(
            "learning rate must be finite and nonnegative, got {}",
            config.lr
        )));
    }
    let fy = build_loss(&config.task, config.entropy, config.solver_tol)?;
    let data = generate(fy.target(), config);
    let dim = fy.target().rho_dim();
    let d = config.n_features;
    let n = data.len() as f64;
    let mut w = vec![0.0; dim * d];
    let mut trace = Vec::with_capacity(config.epochs + 1);

    for epoch in 0..=config.epochs {
        let per_sample = map_trials(data.len(), |i| {
            let s = &data[i];
            let theta: Vec<f64> = (0..dim).map(|r| dot(&w[r * d..(r + 1) * d], &s.x)).collect();
            let sol: PiSolution = fy.solve(&theta)?;
            let surrogate = fy.surrogate_regret_at(&sol, &theta, &s.eta)?;
            let t = pi_argmax_link(&sol).prediction;
            let target = fy.target().target_regret(t, &s.eta)?;
            let grad = sub(&conv_conjugate_grad(fy.omega(), &sol), fy.target().rho(s.label));
            Ok((surrogate, target, grad))
        })?;
        let mut gw = vec![0.0; dim * d];
        let (mut sur, mut tar) = (0.0, 0.0);
        for (s, (surrogate, target, grad)) in data.iter().zip(&per_sample) {
            sur += surrogate;
            tar += target;
            for r in 0..dim {
                for c in 0..d {
                    gw[r * d + c] += grad[r] * s.x[c] / n;
                }
            }
        }
        trace.push(TrainTrace {
            epoch,
            mean_surrogate_regret: sur / n,
            mean_target_regret: tar / n,
            grad_norm: norm2(&gw),
        });
        if epoch < config.epochs {
            w.iter_mut().zip(&gw).for_each(|(wi, gi)| *wi -= config.lr * gi);
        }
    }
    Ok(trace)
}

pub fn write_trace(path: impl AsRef<Path>, trace: &[TrainTrace]) -> Result<()> {
    write_trace_to(std::fs::File::create(path)?, trace)
}

pub fn write_trace_to<W: std::io::Write>(writer: W, trace: &[TrainTrace]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for row in trace {
        wtr.serialize(row)?;
    }
    wtr.flush()?;
    Ok(())
}

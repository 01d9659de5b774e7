//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export returns a JSON string. The `*_json` functions hold the logic
//! and are plain Rust so they can be tested natively.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use convfy::harness::{self, LinkChoice, TaskSpec, VerifyConfig};
use convfy::{caratheodory_sparsify, conv_conjugate_grad, ConvFYLoss, DecomposedTargetLoss, SolveMethod};

pub const MAX_TRIALS: usize = 5000;
pub const MAX_POINTS: usize = 2000;

fn load(task: &str, entropy: &str) -> Result<ConvFYLoss, String> {
    let task: TaskSpec = task.parse().map_err(|e: convfy::Error| e.to_string())?;
    if matches!(task, TaskSpec::Matrix(_)) {
        return Err("matrix tasks need a file and are not available in the browser".into());
    }
    let entropy = harness::parse_entropy(entropy).map_err(|e| e.to_string())?;
    harness::build_loss(&task, entropy, convfy::conv_conjugate::DEFAULT_TOL).map_err(|e| e.to_string())
}

/// Human-readable name of prediction `t`.
fn prediction_label(loss: &DecomposedTargetLoss, t: usize) -> String {
    if let Some(bits) = loss.bits(t) {
        bits.iter().map(|b| b.to_string()).collect()
    } else if let Some(set) = loss.subset(t) {
        let items: Vec<String> = set.iter().map(|c| (c + 1).to_string()).collect();
        format!("{{{}}}", items.join(","))
    } else {
        (t + 1).to_string()
    }
}

#[derive(Serialize)]
struct SolveView {
    predictions: Vec<String>,
    pi: Vec<f64>,
    sparse_pi: Vec<f64>,
    perturbed_point: Vec<f64>,
    gradient: Vec<f64>,
    objective: f64,
    method: SolveMethod,
    threshold: Option<f64>,
    affine_dimension: usize,
    /// 1-based.
    argmax_pi: usize,
    argmax_sparse: usize,
}

fn first_argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn solve_json(task: &str, entropy: &str, theta: &[f64]) -> Result<String, String> {
    let fy = load(task, entropy)?;
    let sol = fy.solve(theta).map_err(|e| e.to_string())?;
    let loss = fy.target();
    let sparse_pi = caratheodory_sparsify(loss, &sol.pi).map_err(|e| e.to_string())?;
    let view = SolveView {
        predictions: (0..loss.num_predictions())
            .map(|t| prediction_label(loss, t))
            .collect(),
        gradient: conv_conjugate_grad(fy.omega(), &sol),
        argmax_pi: first_argmax(&sol.pi) + 1,
        argmax_sparse: first_argmax(&sparse_pi) + 1,
        pi: sol.pi,
        sparse_pi,
        perturbed_point: sol.perturbed_point,
        objective: sol.objective,
        method: sol.method,
        threshold: sol.threshold,
        affine_dimension: loss.affine_dimension(),
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct CurveView {
    x: Vec<f64>,
    loss: Vec<f64>,
    grad: Vec<f64>,
    support: Vec<usize>,
    prediction: Vec<usize>,
}

/// The loss `L(θ + s e_coord, label)` for `s` on a grid over `[lo, hi]`, with
/// the matching gradient coordinate, support size of `π` and argmax prediction.
#[allow(clippy::too_many_arguments)]
pub fn loss_curve_json(
    task: &str,
    entropy: &str,
    theta: &[f64],
    coord: usize,
    label: usize,
    lo: f64,
    hi: f64,
    points: usize,
) -> Result<String, String> {
    let fy = load(task, entropy)?;
    if coord >= theta.len() {
        return Err(format!("coordinate {coord} out of range"));
    }
    if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) || !(2..=MAX_POINTS).contains(&points) {
        return Err(format!("need lo < hi and 2..={MAX_POINTS} points"));
    }
    let mut view = CurveView {
        x: Vec::with_capacity(points),
        loss: Vec::with_capacity(points),
        grad: Vec::with_capacity(points),
        support: Vec::with_capacity(points),
        prediction: Vec::with_capacity(points),
    };
    let mut th = theta.to_vec();
    for i in 0..points {
        let s = lo + (hi - lo) * i as f64 / (points - 1) as f64;
        th[coord] = s;
        let (value, grad) = fy.loss_value_and_grad(&th, label).map_err(|e| e.to_string())?;
        let sol = fy.solve(&th).map_err(|e| e.to_string())?;
        view.x.push(s);
        view.loss.push(value);
        view.grad.push(grad[coord]);
        view.support.push(sol.pi.iter().filter(|&&p| p > 1e-12).count());
        view.prediction.push(first_argmax(&sol.pi) + 1);
    }
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct ScatterView {
    bound_constant: f64,
    violations: usize,
    max_ratio: Option<f64>,
    surrogate: Vec<f64>,
    target: Vec<f64>,
}

/// Surrogate and target regret of random `(θ, η)` pairs for a link.
pub fn regret_scatter_json(
    task: &str,
    entropy: &str,
    link: &str,
    trials: usize,
    seed: u64,
) -> Result<String, String> {
    if trials == 0 || trials > MAX_TRIALS {
        return Err(format!("trials must be in 1..={MAX_TRIALS}"));
    }
    let kind = load(task, entropy)?.omega().kind();
    let spec: TaskSpec = task.parse().map_err(|e: convfy::Error| e.to_string())?;
    let link: LinkChoice = link.parse().map_err(|e: convfy::Error| e.to_string())?;
    let config = VerifyConfig::new(spec, kind, link, trials, seed);
    let report = harness::verify_bounds(&config).map_err(|e| e.to_string())?;
    let records = report.records.unwrap_or_default();
    let view = ScatterView {
        bound_constant: records.first().map_or(1.0, |r| r.bound_constant),
        violations: report.violations,
        max_ratio: report.max_ratio,
        surrogate: records.iter().map(|r| r.surrogate_regret).collect(),
        target: records.iter().map(|r| r.target_regret).collect(),
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn solve(task: &str, entropy: &str, theta: Vec<f64>) -> Result<String, JsError> {
    solve_json(task, entropy, &theta).map_err(|e| JsError::new(&e))
}

/// `label` is 1-based.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn loss_curve(
    task: &str,
    entropy: &str,
    theta: Vec<f64>,
    coord: usize,
    label: usize,
    lo: f64,
    hi: f64,
    points: usize,
) -> Result<String, JsError> {
    let label = label
        .checked_sub(1)
        .ok_or_else(|| JsError::new("labels start at 1"))?;
    loss_curve_json(task, entropy, &theta, coord, label, lo, hi, points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn regret_scatter(
    task: &str,
    entropy: &str,
    link: &str,
    trials: usize,
    seed: u64,
) -> Result<String, JsError> {
    regret_scatter_json(task, entropy, link, trials, seed).map_err(|e| JsError::new(&e))
}

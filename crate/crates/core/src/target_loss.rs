//! Discrete target losses in decomposed form.
//!
//! A target loss `ℓ(t, y)` over predictions `t ∈ [N]` and labels `y ∈ [K]` is
//! stored as `ℓ(t, y) = ⟨ρ(y), ℓ^ρ(t)⟩ + c(y)` with a label encoding matrix
//! `rho` (ϱ×K), a loss matrix `loss_matrix` (ϱ×N) and a remainder `c`.
//!
//! Labels and predictions are 0-based indices into the enumeration order fixed
//! by each constructor: lexicographic over bit-vectors for Hamming and over
//! sorted subsets for top-k.

use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{check_finite, invalid, Error, Result};
use crate::linalg::{dot, mat_vec, numerical_rank};

/// Largest Hamming encoding dimension we are willing to enumerate.
pub const MAX_HAMMING_DIM: usize = 16;
/// Largest prediction space held densely.
pub const MAX_PREDICTIONS: usize = 1 << 20;

const AFFINE_RANK_TOL: f64 = 1e-9;

/// How labels are embedded; decides which base negentropies apply and how
/// probability estimates are decoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelEncoding {
    /// `ρ(y) = e_y`, so the convex hull of the encodings is the simplex.
    OneHot,
    /// `ρ(y) = 1 − 2ν(y)` for a bit-vector `ν(y)`.
    SignedBits,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossFamily {
    ZeroOne,
    Hamming,
    TopK { k: usize },
    Matrix,
}

#[derive(Debug, Clone)]
pub struct DecomposedTargetLoss {
    name: String,
    family: LossFamily,
    encoding: LabelEncoding,
    rho: DMatrix<f64>,
    loss_matrix: DMatrix<f64>,
    c: Vec<f64>,
}

/// A validated distribution over the label set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassDistribution(Vec<f64>);

impl ClassDistribution {
    pub const SUM_TOL: f64 = 1e-12;

    pub fn new(eta: Vec<f64>) -> Result<Self> {
        check_finite("eta", &eta)?;
        if eta.is_empty() {
            return Err(invalid("class distribution is empty"));
        }
        if let Some(i) = eta.iter().position(|&x| x < 0.0) {
            return Err(invalid(format!("eta[{i}] is negative")));
        }
        let s: f64 = eta.iter().sum();
        if (s - 1.0).abs() > Self::SUM_TOL {
            return Err(invalid(format!("eta sums to {s}, not 1")));
        }
        Ok(Self(eta))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn point_mass(k: usize, y: usize) -> Self {
        let mut v = vec![0.0; k];
        v[y] = 1.0;
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl DecomposedTargetLoss {
    /// Multiclass 0-1 loss: `ρ(y) = e_y`, `ℓ^ρ(t) = 1 − e_t`.
    pub fn make_zero_one(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(invalid(format!("0-1 loss needs K >= 2, got {k}")));
        }
        Ok(Self {
            name: format!("multiclass:{k}"),
            family: LossFamily::ZeroOne,
            encoding: LabelEncoding::OneHot,
            rho: DMatrix::identity(k, k),
            loss_matrix: DMatrix::from_fn(k, k, |i, j| if i == j { 0.0 } else { 1.0 }),
            c: vec![0.0; k],
        })
    }

    /// Hamming loss over `2^rho_dim` bit-vector labels.
    ///
    /// Decomposition: `ρ(y) = 1 − 2ν(y)`, `ℓ^ρ(t) = ν(t)`, `c(y) = 1ᵀν(y)`.
    pub fn make_hamming(rho_dim: usize) -> Result<Self> {
        if rho_dim == 0 {
            return Err(invalid("Hamming loss needs at least one bit"));
        }
        if rho_dim > MAX_HAMMING_DIM {
            return Err(Error::ResourceLimit(format!(
                "Hamming dimension {rho_dim} exceeds {MAX_HAMMING_DIM} (2^{rho_dim} labels)"
            )));
        }
        let n = 1usize << rho_dim;
        let nu = DMatrix::from_fn(rho_dim, n, |i, t| bit(t, i, rho_dim) as f64);
        Ok(Self {
            name: format!("hamming:{rho_dim}"),
            family: LossFamily::Hamming,
            encoding: LabelEncoding::SignedBits,
            rho: nu.map(|b| 1.0 - 2.0 * b),
            c: (0..n).map(|y| y.count_ones() as f64).collect(),
            loss_matrix: nu,
        })
    }

    /// Top-k loss: predictions are the k-subsets of `[K]`, loss 1 when the label
    /// is not in the predicted subset.
    pub fn make_top_k(num_classes: usize, k: usize) -> Result<Self> {
        if k == 0 || k >= num_classes {
            return Err(invalid(format!(
                "top-k needs 1 <= k < K, got k={k}, K={num_classes}"
            )));
        }
        let n = binomial(num_classes, k);
        if n > MAX_PREDICTIONS as u128 {
            return Err(Error::ResourceLimit(format!(
                "C({num_classes},{k}) = {n} predictions is too many"
            )));
        }
        let subsets = k_subsets(num_classes, k);
        let mut loss_matrix = DMatrix::from_element(num_classes, subsets.len(), 1.0);
        for (t, s) in subsets.iter().enumerate() {
            for &y in s {
                loss_matrix[(y, t)] = 0.0;
            }
        }
        Ok(Self {
            name: format!("topk:{num_classes}:{k}"),
            family: LossFamily::TopK { k },
            encoding: LabelEncoding::OneHot,
            rho: DMatrix::identity(num_classes, num_classes),
            loss_matrix,
            c: vec![0.0; num_classes],
        })
    }

    /// Trivial decomposition of a raw `K×N` loss table (`raw[(y, t)] = ℓ(t, y)`).
    pub fn from_matrix(raw: &DMatrix<f64>) -> Result<Self> {
        let (k, n) = raw.shape();
        if k == 0 || n == 0 {
            return Err(invalid("loss matrix is empty"));
        }
        if let Some(i) = raw.iter().position(|x| !x.is_finite()) {
            return Err(invalid(format!(
                "loss matrix entry ({}, {}) is not finite",
                i % k,
                i / k
            )));
        }
        Ok(Self {
            name: format!("matrix:{k}x{n}"),
            family: LossFamily::Matrix,
            encoding: LabelEncoding::OneHot,
            rho: DMatrix::identity(k, k),
            loss_matrix: raw.clone(),
            c: vec![0.0; k],
        })
    }

    /// Reads a `K×N` loss table from CSV (one row per label). A header row is
    /// skipped when its first field does not parse as a number.
    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file)
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(|f| f.parse::<f64>()).collect();
            match parsed {
                Ok(row) => rows.push(row),
                Err(_) if line == 0 => continue,
                Err(e) => return Err(invalid(format!("CSV line {}: {e}", line + 1))),
            }
        }
        let k = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(invalid("CSV rows have different lengths"));
        }
        let raw = DMatrix::from_fn(k, n, |y, t| rows[y][t]);
        Self::from_matrix(&raw)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn family(&self) -> &LossFamily {
        &self.family
    }

    pub fn encoding(&self) -> LabelEncoding {
        self.encoding
    }

    /// K, the number of labels.
    pub fn num_classes(&self) -> usize {
        self.rho.ncols()
    }

    /// N, the number of predictions.
    pub fn num_predictions(&self) -> usize {
        self.loss_matrix.ncols()
    }

    /// ϱ, the encoding dimension.
    pub fn rho_dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn rho_matrix(&self) -> &DMatrix<f64> {
        &self.rho
    }

    pub fn loss_matrix(&self) -> &DMatrix<f64> {
        &self.loss_matrix
    }

    pub fn remainder(&self) -> &[f64] {
        &self.c
    }

    pub fn rho(&self, y: usize) -> &[f64] {
        column(&self.rho, y)
    }

    pub fn loss_column(&self, t: usize) -> &[f64] {
        column(&self.loss_matrix, t)
    }

    /// Reconstructed `ℓ(t, y)`.
    pub fn loss(&self, t: usize, y: usize) -> f64 {
        dot(self.rho(y), self.loss_column(t)) + self.c[y]
    }

    /// Bits `ν(t)` of a Hamming label or prediction.
    pub fn bits(&self, t: usize) -> Option<Vec<u8>> {
        (self.family == LossFamily::Hamming).then(|| {
            let d = self.rho_dim();
            (0..d).map(|i| bit(t, i, d)).collect()
        })
    }

    /// The k-subset behind a top-k prediction (0-based class indices).
    pub fn subset(&self, t: usize) -> Option<Vec<usize>> {
        match self.family {
            LossFamily::TopK { .. } => Some(
                (0..self.num_classes())
                    .filter(|&y| self.loss_matrix[(y, t)] == 0.0)
                    .collect(),
            ),
            _ => None,
        }
    }

    fn check_eta(&self, eta: &ClassDistribution) -> Result<()> {
        if eta.len() != self.num_classes() {
            return Err(invalid(format!(
                "distribution has {} entries, loss has K={}",
                eta.len(),
                self.num_classes()
            )));
        }
        Ok(())
    }

    fn check_prediction(&self, t: usize) -> Result<()> {
        if t >= self.num_predictions() {
            return Err(invalid(format!(
                "prediction {t} out of range (N={})",
                self.num_predictions()
            )));
        }
        Ok(())
    }

    /// `E_{y∼η}[ρ(y)]`.
    pub fn mean_embedding(&self, eta: &ClassDistribution) -> Result<Vec<f64>> {
        self.check_eta(eta)?;
        Ok(mat_vec(&self.rho, eta.as_slice()))
    }

    /// Risk of every prediction, `R(t, η) = ⟨E[ρ], ℓ^ρ(t)⟩ + E[c]`.
    pub fn target_risks(&self, eta: &ClassDistribution) -> Result<Vec<f64>> {
        let mu = self.mean_embedding(eta)?;
        let ec = dot(eta.as_slice(), &self.c);
        Ok((0..self.num_predictions())
            .map(|t| dot(&mu, self.loss_column(t)) + ec)
            .collect())
    }

    pub fn bayes_risk(&self, eta: &ClassDistribution) -> Result<f64> {
        Ok(self.target_risks(eta)?.into_iter().fold(f64::INFINITY, f64::min))
    }

    /// Regret of every prediction under `η`.
    pub fn target_regrets(&self, eta: &ClassDistribution) -> Result<Vec<f64>> {
        // Differences of ⟨μ, ℓ^ρ(t)⟩ so the E[c] term cancels exactly.
        let mu = self.mean_embedding(eta)?;
        let scores: Vec<f64> = (0..self.num_predictions())
            .map(|t| dot(&mu, self.loss_column(t)))
            .collect();
        let best = scores.iter().cloned().fold(f64::INFINITY, f64::min);
        Ok(scores.into_iter().map(|s| (s - best).max(0.0)).collect())
    }

    pub fn target_regret(&self, t: usize, eta: &ClassDistribution) -> Result<f64> {
        self.check_prediction(t)?;
        Ok(self.target_regrets(eta)?[t])
    }

    /// `T(p) = −min_t ⟨p, ℓ^ρ(t)⟩`, the negated transformed Bayes risk.
    pub fn transformed_bayes_negative(&self, p: &[f64]) -> Result<f64> {
        if p.len() != self.rho_dim() {
            return Err(invalid(format!(
                "point has {} entries, encoding dimension is {}",
                p.len(),
                self.rho_dim()
            )));
        }
        check_finite("p", p)?;
        let m = (0..self.num_predictions())
            .map(|t| dot(p, self.loss_column(t)))
            .fold(f64::INFINITY, f64::min);
        Ok(-m)
    }

    /// Dimension of the affine hull of the loss-matrix columns.
    pub fn affine_dimension(&self) -> usize {
        let n = self.num_predictions();
        if n <= 1 {
            return 0;
        }
        let base = self.loss_matrix.column(0).clone_owned();
        let diffs = DMatrix::from_fn(self.rho_dim(), n - 1, |i, j| {
            self.loss_matrix[(i, j + 1)] - base[i]
        });
        numerical_rank(&diffs, AFFINE_RANK_TOL)
    }
}

fn column(m: &DMatrix<f64>, j: usize) -> &[f64] {
    let r = m.nrows();
    &m.as_slice()[j * r..(j + 1) * r]
}

/// Bit `i` of label `t` with `ν_1` as the most significant bit, which makes the
/// natural index order lexicographic over bit-vectors.
fn bit(t: usize, i: usize, d: usize) -> u8 {
    ((t >> (d - 1 - i)) & 1) as u8
}

/// Index of a bit-vector in the lexicographic enumeration.
pub fn bits_to_index(bits: &[u8]) -> usize {
    bits.iter().fold(0, |acc, &b| (acc << 1) | (b as usize & 1))
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

fn k_subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    loop {
        out.push(cur.clone());
        // advance to the next subset in lexicographic order
        let mut i = k;
        while i > 0 && cur[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        cur[i - 1] += 1;
        for j in i..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

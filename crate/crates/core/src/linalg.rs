//! Small dense helpers shared by the solvers.

use nalgebra::DMatrix;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

#[cfg(test)]
pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

#[cfg(test)]
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Index of the first maximal entry (ties go to the lowest index).
pub fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `m * x` for a column-major dense matrix.
pub fn mat_vec(m: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(m.ncols(), x.len());
    let mut out = vec![0.0; m.nrows()];
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        for (o, &mij) in out.iter_mut().zip(m.column(j).iter()) {
            *o += mij * xj;
        }
    }
    out
}

/// `m^T * y`.
pub fn mat_t_vec(m: &DMatrix<f64>, y: &[f64]) -> Vec<f64> {
    debug_assert_eq!(m.nrows(), y.len());
    (0..m.ncols())
        .map(|j| m.column(j).iter().zip(y).map(|(a, b)| a * b).sum())
        .collect()
}

/// Numerical rank with singular values below `rel_tol * sigma_max` treated as zero.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    // SVD of the short side is cheaper and has the same singular values.
    let sv = if m.nrows() <= m.ncols() {
        m.transpose().singular_values()
    } else {
        m.singular_values()
    };
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// A nonzero vector in the kernel of `a`, found by Gauss-Jordan elimination with
/// partial pivoting. Returns `None` when `a` has full column rank at tolerance `tol`
/// (relative to the largest entry).
pub fn kernel_vector(a: &DMatrix<f64>, tol: f64) -> Option<Vec<f64>> {
    let (rows, cols) = a.shape();
    let mut r = a.clone();
    let scale = r.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    let eps = tol * scale;
    let mut pivot_cols = Vec::with_capacity(rows.min(cols));
    let mut row = 0;
    for col in 0..cols {
        if row == rows {
            break;
        }
        let (p, pval) = (row..rows)
            .map(|i| (i, r[(i, col)].abs()))
            .fold((row, -1.0), |b, c| if c.1 > b.1 { c } else { b });
        if pval <= eps {
            continue;
        }
        r.swap_rows(row, p);
        let inv = 1.0 / r[(row, col)];
        for j in col..cols {
            r[(row, j)] *= inv;
        }
        for i in 0..rows {
            if i != row {
                let f = r[(i, col)];
                if f != 0.0 {
                    for j in col..cols {
                        r[(i, j)] -= f * r[(row, j)];
                    }
                }
            }
        }
        pivot_cols.push(col);
        row += 1;
    }
    let free = (0..cols).find(|c| !pivot_cols.contains(c))?;
    let mut d = vec![0.0; cols];
    d[free] = 1.0;
    for (i, &pc) in pivot_cols.iter().enumerate() {
        d[pc] = -r[(i, free)];
    }
    Some(d)
}

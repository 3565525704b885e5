//! Least-squares fitting and cross-validated scoring of term shapes.
//!
//! Fits solve column-equilibrated normal equations by Gaussian elimination —
//! the systems are tiny (intercept plus at most a handful of terms). Model
//! quality is leave-one-config-out SMAPE: refit without each configuration,
//! predict it, and average `2|y − ŷ| / (|y| + |ŷ|)`. That penalizes models
//! which only work by memorizing the point they were shown.

use std::collections::BTreeMap;

use super::space::TermShape;

/// One configuration's aggregated measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPoint {
    pub config: BTreeMap<String, f64>,
    pub y: f64,
}

/// Coefficients for a fixed set of shapes, with the cross-validation score.
#[derive(Debug, Clone, PartialEq)]
pub struct Fitted {
    pub intercept: f64,
    pub coeffs: Vec<f64>,
    pub cv_smape: f64,
}

/// Median of a sample; the rep aggregator. Empty input is a caller bug.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty sample");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Symmetric absolute percentage error of one prediction, in [0, 2].
pub fn smape(y: f64, pred: f64) -> f64 {
    let denom = y.abs() + pred.abs();
    if denom == 0.0 {
        return 0.0;
    }
    2.0 * (y - pred).abs() / denom
}

/// Fit `shapes` (plus an intercept) to the points. Returns `None` when any
/// shape cannot be evaluated, the system is singular, or a leave-one-out fold
/// cannot be solved.
pub fn fit_shapes(shapes: &[TermShape], points: &[DataPoint]) -> Option<Fitted> {
    let n = points.len();
    let cols = shapes.len() + 1;
    if n < cols + 1 {
        // Too few configurations to both fit and cross-validate.
        return None;
    }
    // Design matrix: intercept column, then one column per shape.
    let mut matrix = Vec::with_capacity(n);
    for p in points {
        let mut row = Vec::with_capacity(cols);
        row.push(1.0);
        for s in shapes {
            row.push(s.eval(&p.config)?);
        }
        matrix.push(row);
    }
    let y: Vec<f64> = points.iter().map(|p| p.y).collect();

    // Leave-one-config-out score.
    let mut total = 0.0;
    for held in 0..n {
        let sub_rows: Vec<&[f64]> = matrix
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != held)
            .map(|(_, r)| r.as_slice())
            .collect();
        let sub_y: Vec<f64> = y
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != held)
            .map(|(_, v)| *v)
            .collect();
        let beta = solve_lstsq(&sub_rows, &sub_y)?;
        let pred: f64 = matrix[held].iter().zip(&beta).map(|(x, b)| x * b).sum();
        total += smape(y[held], pred);
    }
    let cv_smape = total / n as f64;

    let all_rows: Vec<&[f64]> = matrix.iter().map(|r| r.as_slice()).collect();
    let beta = solve_lstsq(&all_rows, &y)?;
    Some(Fitted {
        intercept: beta[0],
        coeffs: beta[1..].to_vec(),
        cv_smape,
    })
}

/// Ordinary least squares via equilibrated normal equations.
fn solve_lstsq(rows: &[&[f64]], y: &[f64]) -> Option<Vec<f64>> {
    let n = rows.len();
    let cols = rows[0].len();
    if n < cols {
        return None;
    }
    // Scale each column to unit max magnitude; a zero column is degenerate.
    let mut scale = vec![0.0f64; cols];
    for row in rows {
        for (j, &x) in row.iter().enumerate() {
            scale[j] = scale[j].max(x.abs());
        }
    }
    if scale.iter().any(|&s| s == 0.0 || !s.is_finite()) {
        return None;
    }

    // Normal equations A β' = b with A = X'ᵀX', b = X'ᵀy on scaled columns.
    let mut a = vec![vec![0.0f64; cols]; cols];
    let mut b = vec![0.0f64; cols];
    for (row, &yi) in rows.iter().zip(y) {
        for j in 0..cols {
            let xj = row[j] / scale[j];
            b[j] += xj * yi;
            for k in j..cols {
                a[j][k] += xj * row[k] / scale[k];
            }
        }
    }
    for j in 0..cols {
        for k in 0..j {
            a[j][k] = a[k][j];
        }
    }

    // Gaussian elimination with partial pivoting.
    let mut idx: Vec<usize> = (0..cols).collect();
    for col in 0..cols {
        let (piv, piv_abs) = (col..cols)
            .map(|r| (r, a[idx[r]][col].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))?;
        if piv_abs < 1e-12 {
            return None;
        }
        idx.swap(col, piv);
        let prow = idx[col];
        for r in (col + 1)..cols {
            let row = idx[r];
            let f = a[row][col] / a[prow][col];
            for c in col..cols {
                a[row][c] -= f * a[prow][c];
            }
            b[row] -= f * b[prow];
        }
    }
    let mut beta = vec![0.0f64; cols];
    for col in (0..cols).rev() {
        let row = idx[col];
        let mut v = b[row];
        for c in (col + 1)..cols {
            v -= a[row][c] * beta[c];
        }
        beta[col] = v / a[row][col];
    }
    if beta.iter().any(|v| !v.is_finite()) {
        return None;
    }
    // Undo column scaling.
    for (bv, s) in beta.iter_mut().zip(&scale) {
        *bv /= s;
    }
    Some(beta)
}

//! Thin helpers over nalgebra for the small dense systems used throughout.

use nalgebra::{DMatrix, DVector};

/// Matrix whose j-th column is `cols[j]`.
pub fn from_columns(cols: &[Vec<f64>]) -> DMatrix<f64> {
    let n = cols.first().map_or(0, Vec::len);
    DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i])
}

pub fn det_columns(cols: &[Vec<f64>]) -> f64 {
    from_columns(cols).determinant()
}

/// Solves `a x = b`; `None` when `a` is numerically singular.
pub fn solve(a: &DMatrix<f64>, b: &[f64]) -> Option<Vec<f64>> {
    let lu = a.clone().lu();
    lu.solve(&DVector::from_column_slice(b))
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .map(|x| x.iter().copied().collect())
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    norm2(&sub(a, b))
}

/// Operator 2-norm.
pub fn op_norm(a: &DMatrix<f64>) -> f64 {
    a.clone().singular_values().iter().fold(0.0, |m: f64, s| m.max(*s))
}

/// Least-squares slope and intercept of `y` against `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Fits `y ≈ C x^α` in log-log space, returning `(α, C)`.
pub fn power_law_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let (slope, intercept) = linear_fit(&lx, &ly);
    (slope, intercept.exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_law_recovers_exponent() {
        let x = [1e-4, 1e-3, 1e-2];
        let y: Vec<f64> = x.iter().map(|t: &f64| 1.5 * t.sqrt()).collect();
        let (a, c) = power_law_fit(&x, &y);
        assert!((a - 0.5).abs() < 1e-12);
        assert!((c - 1.5).abs() < 1e-12);
    }

    #[test]
    fn determinant_and_solve() {
        let cols = vec![vec![1.0, 0.0], vec![0.0, 0.5]];
        assert!((det_columns(&cols) - 0.5).abs() < 1e-15);
        let x = solve(&from_columns(&cols), &[0.0, 1.0]).unwrap();
        assert!((x[1] - 2.0).abs() < 1e-15);
        assert!(solve(&from_columns(&[vec![1.0, 0.0], vec![2.0, 0.0]]), &[1.0, 1.0]).is_none());
    }
}

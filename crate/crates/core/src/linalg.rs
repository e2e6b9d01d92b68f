use nalgebra::{DMatrix, DVector};

/// Dense systems at or below this size are solved directly.
pub(crate) const DIRECT_SOLVE_LIMIT: usize = 64;

/// Solves `A x = b` for a row-major `n x n` matrix `A`.
pub(crate) fn solve(n: usize, a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    let m = DMatrix::from_row_slice(n, n, a);
    let rhs = DVector::from_column_slice(b);
    m.lu().solve(&rhs).map(|x| x.iter().copied().collect())
}

/// Solves `(I - c M) x = b` where `M` is row-major.
pub(crate) fn solve_resolvent(n: usize, m: &[f64], c: f64, b: &[f64]) -> Option<Vec<f64>> {
    let mut a = vec![0.0; n * n];
    for r in 0..n {
        for k in 0..n {
            a[r * n + k] = if r == k { 1.0 } else { 0.0 } - c * m[r * n + k];
        }
    }
    solve(n, &a, b)
}

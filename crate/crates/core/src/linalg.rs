//! Small dense helpers on top of nalgebra. Everything here works on the
//! k×k and 2n×2n matrices the integrator produces, so no attempt is made
//! at blocking or reuse of factorizations.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Relative singular-value threshold used for numerical rank.
pub const RANK_TOL: f64 = 1e-10;

/// Condition number above which a multiplier matrix counts as singular.
pub const MAX_CONDITION: f64 = 1e12;

pub fn inf_norm(v: &Vector) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn mat_inf_norm(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn all_finite(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Singular values in descending order; all NaN for non-finite input.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    if m.iter().any(|v| !v.is_finite()) {
        return vec![f64::NAN; m.nrows().min(m.ncols())];
    }
    let mut s: Vec<f64> = m
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn numerical_rank(m: &Matrix) -> usize {
    let s = singular_values(m);
    match s.first() {
        Some(&max) if max > 0.0 => s.iter().filter(|&&v| v > RANK_TOL * max).count(),
        _ => 0,
    }
}

/// Ratio of extreme singular values; infinite for singular input.
pub fn condition_number(m: &Matrix) -> f64 {
    let s = singular_values(m);
    match (s.first(), s.last()) {
        (Some(&max), Some(&min)) if min > 0.0 => max / min,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 1.0,
    }
}

/// Cholesky-based positive-definiteness test on the symmetric part.
pub fn is_spd(m: &Matrix) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let sym = (m + m.transpose()) * 0.5;
    match sym.cholesky() {
        Some(chol) => chol
            .l()
            .diagonal()
            .iter()
            .all(|d| *d > 0.0 && d.is_finite()),
        None => false,
    }
}

/// Solve a small square system by LU with partial pivoting, refusing
/// matrices whose condition exceeds [`MAX_CONDITION`].
pub fn solve(a: &Matrix, b: &Vector, what: &str) -> Result<Vector> {
    if a.nrows() == 0 {
        return Ok(Vector::zeros(0));
    }
    let cond = condition_number(a);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::Assumption(format!(
            "{what} is singular to working precision (condition {cond:.3e})"
        )));
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Assumption(format!("{what} is singular")))
}

/// Canonical symplectic matrix `[[0, I], [-I, 0]]` of size 2n.
pub fn canonical_j(n: usize) -> Matrix {
    let mut j = Matrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        j[(i, n + i)] = 1.0;
        j[(n + i, i)] = -1.0;
    }
    j
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_of_rank_deficient_matrix() {
        let m = Matrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        assert_eq!(numerical_rank(&m), 1);
        assert_eq!(numerical_rank(&Matrix::identity(3, 3)), 3);
        assert_eq!(numerical_rank(&Matrix::zeros(2, 2)), 0);
    }

    #[test]
    fn spd_detects_zero_eigenvalue() {
        assert!(is_spd(&Matrix::identity(3, 3)));
        assert!(!is_spd(&Matrix::from_diagonal(&Vector::from_vec(vec![
            1.0, 0.0
        ]))));
        assert!(!is_spd(&Matrix::from_diagonal(&Vector::from_vec(vec![
            1.0, -2.0
        ]))));
    }

    #[test]
    fn solve_rejects_singular() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let b = Vector::from_vec(vec![1.0, 1.0]);
        assert!(matches!(solve(&a, &b, "test"), Err(Error::Assumption(_))));
    }

    #[test]
    fn solve_small_system() {
        let a = Matrix::from_row_slice(2, 2, &[7.2, -3.6, -3.6, 2.4]);
        let b = Vector::from_vec(vec![11.772, 0.0]);
        let x = solve(&a, &b, "test").unwrap();
        assert!((x[0] - 6.54).abs() < 1e-12);
        assert!((x[1] - 9.81).abs() < 1e-12);
    }

    #[test]
    fn empty_system_solves_to_empty() {
        let x = solve(&Matrix::zeros(0, 0), &Vector::zeros(0), "empty").unwrap();
        assert_eq!(x.len(), 0);
        assert_eq!(inf_norm(&x), 0.0);
    }

    #[test]
    fn canonical_j_squares_to_minus_identity() {
        let j = canonical_j(3);
        assert_eq!(&j * &j, -Matrix::identity(6, 6));
    }
}

//! Small dense symmetric solves for the weighted normal equations.
//!
//! Designs here are tiny (p rarely above a dozen), so a pivoted Cholesky
//! factorization is all that is needed. Pivoting doubles as the rank check:
//! any diagonal that falls below `rel_tol` times the leading pivot marks the
//! remaining columns as collinear.

use crate::num::Scalar;
use ndarray::{Array1, Array2};

/// Outcome of a pivoted Cholesky factorization attempt.
pub enum SymSolve<F> {
    Solution(Array1<F>),
    /// Indices (into the matrix) of the columns that could not be pivoted.
    RankDeficient(Vec<usize>),
}

/// Solve `a x = b` for symmetric positive semidefinite `a` using a
/// diagonally pivoted Cholesky factorization.
pub fn solve_sym_psd<F: Scalar>(a: &Array2<F>, b: &Array1<F>, rel_tol: F) -> SymSolve<F> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n);
    assert_eq!(b.len(), n);

    // Factor a permuted copy in place; `perm[k]` is the original index
    // eliminated at step k. The L factor accumulates in the lower triangle
    // and the trailing block is kept symmetric so full row/column swaps stay
    // valid.
    let mut m = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut threshold = F::zero();

    for k in 0..n {
        let mut piv = k;
        for j in (k + 1)..n {
            if m[[j, j]] > m[[piv, piv]] {
                piv = j;
            }
        }
        if piv != k {
            for j in 0..n {
                m.swap([k, j], [piv, j]);
            }
            for i in 0..n {
                m.swap([i, k], [i, piv]);
            }
            perm.swap(k, piv);
        }
        let d = m[[k, k]];
        if k == 0 {
            threshold = rel_tol * d.max(F::zero());
        }
        if !d.is_finite() || !(d > threshold) {
            return SymSolve::RankDeficient(perm[k..].to_vec());
        }
        let l = d.sqrt();
        m[[k, k]] = l;
        for i in (k + 1)..n {
            m[[i, k]] /= l;
        }
        for j in (k + 1)..n {
            for i in j..n {
                let update = m[[i, k]] * m[[j, k]];
                m[[i, j]] -= update;
                if i != j {
                    m[[j, i]] -= update;
                }
            }
        }
    }

    // Forward/back substitution on the permuted right-hand side.
    let mut y = Array1::zeros(n);
    for k in 0..n {
        let mut s = b[perm[k]];
        for j in 0..k {
            s -= m[[k, j]] * y[j];
        }
        y[k] = s / m[[k, k]];
    }
    let mut xp = Array1::zeros(n);
    for k in (0..n).rev() {
        let mut s = y[k];
        for j in (k + 1)..n {
            s -= m[[j, k]] * xp[j];
        }
        xp[k] = s / m[[k, k]];
    }
    let mut x = Array1::zeros(n);
    for k in 0..n {
        x[perm[k]] = xp[k];
    }
    SymSolve::Solution(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn solve(a: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
        match solve_sym_psd(a, b, 1e-12) {
            SymSolve::Solution(x) => x,
            SymSolve::RankDeficient(cols) => panic!("unexpected rank deficiency: {cols:?}"),
        }
    }

    #[test]
    fn solves_identity() {
        let a = Array2::eye(3);
        let b = array![1.0, 2.0, 3.0];
        assert_relative_eq!(solve(&a, &b), b, max_relative = 1e-14);
    }

    #[test]
    fn solves_spd_system() {
        let a = array![[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]];
        let x_true = array![1.0, -2.0, 0.5];
        let b = a.dot(&x_true);
        assert_relative_eq!(solve(&a, &b), x_true, max_relative = 1e-12);
    }

    #[test]
    fn solves_permutation_stressed_system() {
        // Strongly unequal scales force pivoting away from natural order.
        let a = array![
            [1e-8, 1e-5, 0.0],
            [1e-5, 50.0, 2.0],
            [0.0, 2.0, 3.0]
        ];
        let x_true = array![1.0, -0.5, 2.0];
        let b = a.dot(&x_true);
        assert_relative_eq!(solve(&a, &b), x_true, max_relative = 1e-6);
    }

    #[test]
    fn detects_singularity() {
        // Second column is twice the first.
        let a = array![[1.0, 2.0], [2.0, 4.0]];
        let b = array![1.0, 2.0];
        match solve_sym_psd(&a, &b, 1e-10) {
            SymSolve::RankDeficient(cols) => assert_eq!(cols.len(), 1),
            SymSolve::Solution(_) => panic!("expected rank deficiency"),
        }
    }

    #[test]
    fn detects_zero_column() {
        let a = array![[1.0, 0.0], [0.0, 0.0]];
        let b = array![1.0, 0.0];
        match solve_sym_psd(&a, &b, 1e-10) {
            SymSolve::RankDeficient(cols) => assert_eq!(cols, vec![1]),
            SymSolve::Solution(_) => panic!("expected rank deficiency"),
        }
    }
}

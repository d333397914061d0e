//! Small dense linear-algebra helpers (SVD/LU via nalgebra) used by the
//! analysis oracles and the DEQ implicit solve.

use crate::tensor::Tensor;
use nalgebra::{DMatrix, DVector};

pub fn to_dmatrix(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
}

pub fn from_dmatrix(m: &DMatrix<f64>) -> Tensor {
    let (r, c) = m.shape();
    let mut data = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            data.push(m[(i, j)]);
        }
    }
    Tensor::new(vec![r, c], data).expect("well-formed matrix")
}

/// Singular values in descending order.
pub fn singular_values(t: &Tensor) -> Vec<f64> {
    let svd = to_dmatrix(t).svd(false, false);
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

/// Orthonormal basis (as rows) of the row space of `v`, keeping directions
/// whose singular value exceeds `rel_tol` times the largest.
pub fn rowspace_basis(v: &Tensor, rel_tol: f64) -> Tensor {
    let svd = to_dmatrix(v).svd(false, true);
    let vt = svd.v_t.expect("requested v_t");
    let smax = svd.singular_values.iter().copied().fold(0.0f64, f64::max);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if smax > 0.0 && s > rel_tol * smax {
            rows.push(vt.row(i).iter().copied().collect());
        }
    }
    if rows.is_empty() {
        return Tensor::zeros(&[1, v.cols()]);
    }
    let d = v.cols();
    let data: Vec<f64> = rows.concat();
    Tensor::new(vec![data.len() / d, d], data).expect("basis rows")
}

/// Project the rows of `y` onto the span of the orthonormal `basis` rows.
pub fn project_rows(y: &Tensor, basis: &Tensor) -> Tensor {
    // y·Bᵀ·B
    let coeff = crate::tensor::matmul_tb(y, basis).expect("shape");
    crate::tensor::matmul(&coeff, basis).expect("shape")
}

/// Solve the square system a·x = b by LU; `None` when numerically singular.
pub fn solve(a: &Tensor, b: &[f64]) -> Option<Vec<f64>> {
    let lu = to_dmatrix(a).lu();
    lu.solve(&DVector::from_column_slice(b))
        .map(|x| x.iter().copied().collect())
}

/// Minimum-norm least-squares solution of a·x = b via SVD.
pub fn lstsq(a: &Tensor, b: &[f64]) -> Vec<f64> {
    let svd = to_dmatrix(a).svd(true, true);
    let x = svd
        .solve(&DVector::from_column_slice(b), 1e-12)
        .expect("svd solve");
    x.iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svd_of_orthonormal_rows_is_ones() {
        let t = Tensor::new(vec![2, 3], vec![1., 0., 0., 0., 1., 0.]).unwrap();
        let s = singular_values(&t);
        assert!((s[0] - 1.0).abs() < 1e-12 && (s[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rowspace_projection_reproduces_rows_in_span() {
        let v = Tensor::new(vec![2, 4], vec![1., 2., 0., -1., 0., 1., 1., 1.]).unwrap();
        let basis = rowspace_basis(&v, 1e-10);
        let proj = project_rows(&v, &basis);
        for (a, b) in proj.data().iter().zip(v.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn rank_deficient_rowspace_detected() {
        // second row is a multiple of the first
        let v = Tensor::new(vec![2, 3], vec![1., 1., 0., 2., 2., 0.]).unwrap();
        let basis = rowspace_basis(&v, 1e-10);
        assert_eq!(basis.rows(), 1);
    }

    #[test]
    fn lu_solve_and_singular_fallback() {
        let a = Tensor::new(vec![2, 2], vec![2., 0., 0., 4.]).unwrap();
        let x = solve(&a, &[2.0, 8.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 2.0).abs() < 1e-12);

        let sing = Tensor::new(vec![2, 2], vec![1., 1., 1., 1.]).unwrap();
        assert!(solve(&sing, &[1.0, 1.0]).is_none());
        let ls = lstsq(&sing, &[2.0, 2.0]);
        // minimum-norm solution: (1, 1)
        assert!((ls[0] - 1.0).abs() < 1e-9 && (ls[1] - 1.0).abs() < 1e-9);
    }
}

//! Small dense helpers around the standard complex structure `J`.

use nalgebra::{DMatrix, DVector};

pub type Point = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// `J` applied blockwise: `(x, y) -> (-y, x)` for each coordinate pair.
pub fn j_apply(v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(v.len());
    for k in (0..v.len()).step_by(2) {
        out[k] = -v[k + 1];
        out[k + 1] = v[k];
    }
    out
}

/// `-J v`, i.e. `J^{-1} v`: `(x, y) -> (y, -x)`.
pub fn j_inv_apply(v: &DVector<f64>) -> DVector<f64> {
    -j_apply(v)
}

pub fn j_matrix(dim: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(dim, dim);
    for k in (0..dim).step_by(2) {
        j[(k, k + 1)] = -1.0;
        j[(k + 1, k)] = 1.0;
    }
    j
}

/// Largest singular value.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 2 && m.ncols() == 2 {
        let (s_max, _) = singular_values_2x2(m);
        return s_max;
    }
    m.singular_values().iter().cloned().fold(0.0, f64::max)
}

/// Smallest singular value.
pub fn min_singular(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 2 && m.ncols() == 2 {
        let (_, s_min) = singular_values_2x2(m);
        return s_min;
    }
    m.singular_values().iter().cloned().fold(f64::INFINITY, f64::min)
}

fn singular_values_2x2(m: &DMatrix<f64>) -> (f64, f64) {
    let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
    let s1 = (a + d).hypot(c - b);
    let s2 = (a - d).hypot(c + b);
    let big = 0.5 * (s1 + s2);
    let small = 0.5 * (s1 - s2).abs();
    (big, small)
}

/// Operator norm of `M^T J M - J`.
pub fn symplectic_defect(m: &DMatrix<f64>) -> f64 {
    let j = j_matrix(m.nrows());
    op_norm(&(m.transpose() * &j * m - j))
}

/// Unit right-singular vector for the smallest singular value.
pub fn min_singular_direction(m: &DMatrix<f64>) -> DVector<f64> {
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("requested v_t");
    let (k, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
    vt.row(k).transpose()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn j_squares_to_minus_identity() {
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(j_apply(&j_apply(&v)), -v.clone());
        assert_eq!(j_matrix(4) * &v, j_apply(&v));
    }

    #[test]
    fn two_by_two_singular_values_match_svd() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 2.0, -0.7]);
        let sv = m.clone().singular_values();
        assert!((op_norm(&m) - sv.max()).abs() < 1e-14);
        assert!((min_singular(&m) - sv.min()).abs() < 1e-14);
    }

    #[test]
    fn defect_of_scaling() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        assert!((symplectic_defect(&m) - 1.0).abs() < 1e-15);
        let shear = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 1.0]);
        assert!(symplectic_defect(&shear) < 1e-15);
    }
}

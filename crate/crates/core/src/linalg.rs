//! Dense real-matrix primitives and the tolerance policy shared by every
//! other module.
//!
//! Matrices are `nalgebra::DMatrix<f64>`. Everything here is a pure function
//! of its inputs.

use nalgebra::{DMatrix, SymmetricEigen, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// Dense real matrix used for every matrix-valued quantity in the crate.
pub type Mat = DMatrix<f64>;

/// Default cap on the number of elements a single dense result may hold.
pub const DEFAULT_ELEMENT_BUDGET: usize = 1 << 24;

/// Numerical thresholds used to turn exact-arithmetic statements into
/// floating-point checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToleranceConfig {
    /// Relative singular-value cutoff for numerical rank.
    pub rank_rel_tol: f64,
    /// Relative eigenvalue zero band (relative to the spectral scale).
    pub eig_zero_tol: f64,
    /// Gradient-norm threshold for criticality.
    pub grad_crit_tol: f64,
    /// Base finite-difference step, scaled by `1 + |entry|` per parameter.
    pub fd_step: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        Self {
            rank_rel_tol: 1e-10,
            eig_zero_tol: 1e-8,
            grad_crit_tol: 1e-8,
            fd_step: 1e-5,
        }
    }
}

impl ToleranceConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("rank_rel_tol", self.rank_rel_tol),
            ("eig_zero_tol", self.eig_zero_tol),
            ("grad_crit_tol", self.grad_crit_tol),
            ("fd_step", self.fd_step),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must lie in (0, 1), got {v}"
                )));
            }
        }
        Ok(())
    }
}

pub fn is_finite(m: &Mat) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn ensure_finite(m: &Mat, context: &'static str) -> Result<()> {
    if is_finite(m) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{context}: matrix has non-finite entries")))
    }
}

pub fn frobenius(m: &Mat) -> f64 {
    m.norm()
}

/// Largest absolute entry; zero for an empty matrix.
pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Singular values in descending order.
pub fn singular_values(m: &Mat) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

fn rank_cutoff(sigma_max: f64, rows: usize, cols: usize, rel_tol: f64) -> f64 {
    rel_tol * sigma_max * rows.max(cols) as f64
}

/// Numerical rank: singular values above `rank_rel_tol * σ_max * max(rows, cols)`.
pub fn rank_tol(m: &Mat, cfg: &ToleranceConfig) -> usize {
    rank_with(m, cfg.rank_rel_tol)
}

pub fn rank_with(m: &Mat, rel_tol: f64) -> usize {
    let s = singular_values(m);
    let Some(&smax) = s.first() else { return 0 };
    if smax == 0.0 {
        return 0;
    }
    let cut = rank_cutoff(smax, m.nrows(), m.ncols(), rel_tol);
    s.iter().filter(|&&v| v > cut).count()
}

/// Moore-Penrose pseudoinverse with the default rank cutoff.
///
/// The zero matrix maps to the (transposed-shape) zero matrix.
pub fn pseudoinverse(m: &Mat) -> Mat {
    pseudoinverse_with(m, ToleranceConfig::default().rank_rel_tol)
}

pub fn pseudoinverse_with(m: &Mat, rel_tol: f64) -> Mat {
    let (r, c) = m.shape();
    if m.is_empty() {
        return Mat::zeros(c, r);
    }
    let svd = SVD::new(m.clone(), true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let smax = svd.singular_values.iter().fold(0.0_f64, |a, &b| a.max(b));
    if smax == 0.0 {
        return Mat::zeros(c, r);
    }
    let cut = rank_cutoff(smax, r, c, rel_tol);
    let mut out = Mat::zeros(c, r);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cut {
            // out += v_i (1/s) u_iᵀ
            let v = vt.row(i).transpose();
            let ui = u.column(i);
            out += (v / s) * ui.transpose();
        }
    }
    out
}

/// Kronecker product with the default element budget.
pub fn kron(a: &Mat, b: &Mat) -> Result<Mat> {
    kron_with_budget(a, b, DEFAULT_ELEMENT_BUDGET)
}

/// Kronecker product: block `(i, j)` of the result is `a[(i, j)] * b`.
pub fn kron_with_budget(a: &Mat, b: &Mat, budget: usize) -> Result<Mat> {
    let rows = a.nrows().checked_mul(b.nrows());
    let cols = a.ncols().checked_mul(b.ncols());
    let total = rows.zip(cols).and_then(|(r, c)| r.checked_mul(c));
    let (rows, cols) = match (rows, cols, total) {
        (Some(r), Some(c), Some(t)) if t <= budget => (r, c),
        _ => {
            return Err(Error::Budget {
                requested: total.unwrap_or(usize::MAX),
                budget,
            })
        }
    };
    let (br, bc) = b.shape();
    let mut out = Mat::zeros(rows, cols);
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            let s = a[(i, j)];
            if s == 0.0 {
                continue;
            }
            out.view_mut((i * br, j * bc), (br, bc)).zip_apply(b, |o, v| *o = s * v);
        }
    }
    Ok(out)
}

/// Eigendecomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEig {
    /// Eigenvalues, non-increasing.
    pub values: Vec<f64>,
    /// Orthogonal matrix whose columns are the matching eigenvectors.
    pub vectors: Mat,
}

/// Symmetric eigendecomposition, values reported in descending order.
///
/// The input is symmetrized by averaging with its transpose first. Ties keep
/// the order produced by the underlying solver (stable sort).
pub fn sym_eig(m: &Mat) -> Result<SymEig> {
    if !m.is_square() {
        return Err(shape_err("sym_eig", "square matrix", format!("{}x{}", m.nrows(), m.ncols())));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(SymEig { values: Vec::new(), vectors: Mat::zeros(0, 0) });
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = Mat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(SymEig { values, vectors })
}

/// Extreme eigenvalues `(min, max)` of a symmetric matrix.
pub fn eig_extremes(m: &Mat) -> Result<(f64, f64)> {
    let e = sym_eig(m)?;
    match (e.values.last(), e.values.first()) {
        (Some(&lo), Some(&hi)) => Ok((lo, hi)),
        _ => Ok((0.0, 0.0)),
    }
}

/// Orthonormal basis (as columns) of the null space of `m`.
pub fn null_space(m: &Mat, rel_tol: f64) -> Mat {
    let (r, c) = m.shape();
    if c == 0 {
        return Mat::zeros(0, 0);
    }
    // Pad with zero rows so the SVD returns a full right basis.
    let padded = if r < c {
        let mut p = Mat::zeros(c, c);
        p.view_mut((0, 0), (r, c)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = SVD::new(padded, false, true);
    let vt = svd.v_t.expect("v_t requested");
    let smax = svd.singular_values.iter().fold(0.0_f64, |a, &b| a.max(b));
    let cut = if smax == 0.0 { 0.0 } else { rank_cutoff(smax, r, c, rel_tol) };
    let cols: Vec<_> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| smax == 0.0 || s <= cut)
        .map(|(i, _)| vt.row(i).transpose())
        .collect();
    if cols.is_empty() {
        Mat::zeros(c, 0)
    } else {
        Mat::from_columns(&cols)
    }
}

/// Orthonormal basis (as columns) of the column space of `m`.
pub fn range_basis(m: &Mat, rel_tol: f64) -> Mat {
    let (r, c) = m.shape();
    if m.is_empty() {
        return Mat::zeros(r, 0);
    }
    let svd = SVD::new(m.clone(), true, false);
    let u = svd.u.expect("u requested");
    let smax = svd.singular_values.iter().fold(0.0_f64, |a, &b| a.max(b));
    if smax == 0.0 {
        return Mat::zeros(r, 0);
    }
    let cut = rank_cutoff(smax, r, c, rel_tol);
    let cols: Vec<_> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > cut)
        .map(|(i, _)| u.column(i).into_owned())
        .collect();
    Mat::from_columns(&cols)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pseudoinverse_identity_and_zero() {
        let i3 = Mat::identity(3, 3);
        assert!((pseudoinverse(&i3) - &i3).norm() < 1e-14);
        let z = Mat::zeros(2, 3);
        let pz = pseudoinverse(&z);
        assert_eq!(pz.shape(), (3, 2));
        assert_eq!(pz.norm(), 0.0);
    }

    #[test]
    fn kron_small_cases() {
        let i6 = kron(&Mat::identity(2, 2), &Mat::identity(3, 3)).unwrap();
        assert_eq!(i6, Mat::identity(6, 6));
        let a = Mat::from_row_slice(1, 2, &[1.0, 2.0]);
        let b = Mat::from_row_slice(2, 1, &[3.0, 4.0]);
        let k = kron(&a, &b).unwrap();
        assert_eq!(k, Mat::from_row_slice(2, 2, &[3.0, 6.0, 4.0, 8.0]));
    }

    #[test]
    fn kron_budget_is_enforced() {
        let a = Mat::zeros(10, 10);
        let err = kron_with_budget(&a, &a, 9_999).unwrap_err();
        assert!(matches!(err, Error::Budget { requested: 10_000, budget: 9_999 }));
    }

    #[test]
    fn rank_edge_cases() {
        let cfg = ToleranceConfig::default();
        assert_eq!(rank_tol(&Mat::identity(4, 4), &cfg), 4);
        assert_eq!(rank_tol(&Mat::zeros(3, 5), &cfg), 0);
        let u = nalgebra::DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let v = nalgebra::DVector::from_vec(vec![0.3, 4.0]);
        assert_eq!(rank_tol(&(&u * v.transpose()), &cfg), 1);
    }

    #[test]
    fn sym_eig_diag_and_zero() {
        let d = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 4.0]));
        let e = sym_eig(&d).unwrap();
        assert_eq!(e.values, vec![4.0, 1.0]);
        assert!((e.vectors[(1, 0)].abs() - 1.0).abs() < 1e-14);
        assert!((e.vectors[(0, 1)].abs() - 1.0).abs() < 1e-14);

        let z = sym_eig(&Mat::zeros(3, 3)).unwrap();
        assert_eq!(z.values, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn sym_eig_rejects_non_square() {
        assert!(matches!(sym_eig(&Mat::zeros(2, 3)), Err(Error::Shape { .. })));
    }

    #[test]
    fn null_space_of_wide_and_square() {
        let a = Mat::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        let n = null_space(&a, 1e-10);
        assert_eq!(n.ncols(), 2);
        assert!((&a * &n).norm() < 1e-14);
        assert_eq!(null_space(&Mat::identity(3, 3), 1e-10).ncols(), 0);
        assert_eq!(null_space(&Mat::zeros(2, 2), 1e-10).ncols(), 2);
    }

    #[test]
    fn tolerance_validation() {
        assert!(ToleranceConfig::default().validate().is_ok());
        let bad = ToleranceConfig { fd_step: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ToleranceConfig { eig_zero_tol: 1.5, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}

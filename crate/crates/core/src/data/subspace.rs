use crate::autodiff::Matrix;
use crate::error::{Error, Result};

/// Orthonormal basis of the column span; errors when rank deficient.
fn orthonormal_basis(a: &Matrix, which: &str) -> Result<Matrix> {
    let k = a.ncols();
    if k == 0 || a.nrows() < k {
        return Err(Error::invalid(format!("{which} must have at least as many rows as columns")));
    }
    let svd = a.clone().svd(true, false);
    let s = &svd.singular_values;
    let smax = s.max();
    let smin = s.min();
    if !(smax > 0.0) || smin <= smax * 1e-10 {
        return Err(Error::invalid(format!("{which} is rank deficient")));
    }
    let u = svd.u.expect("requested");
    let order: Vec<usize> = (0..k).collect();
    Ok(u.select_columns(order.iter()))
}

/// Sine of the largest principal angle between the column spans of `a` and
/// `b` (both `T x K`, full column rank). Computed as the spectral norm of the
/// component of `b`'s basis orthogonal to `a`, which stays accurate for small
/// angles.
pub fn subspace_distance(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op: "subspace_distance",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let qa = orthonormal_basis(a, "first factor matrix")?;
    let qb = orthonormal_basis(b, "second factor matrix")?;
    let resid = &qb - &qa * (qa.transpose() * &qb);
    let s = resid.singular_values();
    Ok(s.max().clamp(0.0, 1.0))
}
